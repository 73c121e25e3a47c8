// Observer UI: instruction screen -> one trial at a time -> completion.
// Keyboard "s" = same, "d" = different; large buttons as fallback. No
// correctness feedback, no statistics, no labels anywhere client-side.

import { PsyClient, type TrialView } from "./api.js";
import { decodePng, inflateWithDecompressionStream } from "./png.js";
import { fittingZoom, renderStimulus, type Canvas2DLike } from "./render.js";
import { SessionController } from "./session.js";

const CANVAS_W = 640;
const CANVAS_H = 480;

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text = "",
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  if (text) node.textContent = text;
  return node;
}

class App {
  private readonly root: HTMLElement;
  private readonly client: PsyClient;
  private controller: SessionController | null = null;
  private canvas: HTMLCanvasElement | null = null;
  private progress: HTMLElement | null = null;
  private buttons: HTMLButtonElement[] = [];

  constructor(root: HTMLElement, baseUrl: string) {
    this.root = root;
    this.client = new PsyClient(baseUrl);
    document.addEventListener("keydown", (ev) => {
      if (ev.key === "s") void this.judge("same");
      if (ev.key === "d") void this.judge("different");
    });
  }

  async showInstructions(): Promise<void> {
    this.root.replaceChildren();
    const box = el("div", { class: "panel" });
    box.append(
      el("h1", {}, "Same or different?"),
      el(
        "p",
        {},
        "Each screen shows one image containing two marked target patches. " +
          "Decide whether the two patches are physically identical or different, " +
          "then press S (same) or D (different), or use the buttons.",
      ),
      el(
        "p",
        { class: "note" },
        "Please run this study in a dim room on a monitor set to sRGB. " +
          "Images are shown pixel-exact at integer zoom; do not change browser zoom.",
      ),
    );
    const form = el("div", { class: "panel" });
    const observer = el("input", { placeholder: "observer id", id: "observer" });
    const select = el("select", { id: "set" });
    try {
      for (const s of await this.client.listSets()) {
        const opt = el("option", { value: s.id }, `${s.id} (${s.size} trials)`);
        select.append(opt);
      }
    } catch {
      box.append(el("p", { class: "error" }, "Study service unreachable; reload to retry."));
    }
    const start = el("button", {}, "Begin");
    start.addEventListener("click", () => {
      if (observer.value.trim()) void this.startSession(select.value, observer.value.trim());
    });
    form.append(observer, select, start);
    this.root.append(box, form);
  }

  private async startSession(setId: string, observerId: string): Promise<void> {
    const seed = (Date.now() ^ (Math.random() * 0xffffffff)) >>> 0;
    this.controller = new SessionController(this.client, setId, observerId, seed, {
      onTrial: (view, image) => void this.showTrial(view, image),
      onComplete: (sessionId) => this.showCompletion(sessionId),
      onError: (message, retriable) => this.showError(message, retriable),
    });
    this.buildTrialScreen();
    await this.controller.start();
  }

  private buildTrialScreen(): void {
    this.root.replaceChildren();
    this.progress = el("div", { class: "progress" }, "loading…");
    this.canvas = el("canvas", { width: String(CANVAS_W), height: String(CANVAS_H) });
    const same = el("button", { class: "judge" }, "Same (S)");
    const diff = el("button", { class: "judge" }, "Different (D)");
    same.addEventListener("click", () => void this.judge("same"));
    diff.addEventListener("click", () => void this.judge("different"));
    this.buttons = [same, diff];
    const row = el("div", { class: "buttons" });
    row.append(same, diff);
    this.root.append(this.progress, this.canvas, row);
  }

  private async showTrial(view: TrialView, imageBytes: Uint8Array): Promise<void> {
    if (!this.canvas || !this.progress) return;
    const img = await decodePng(imageBytes, inflateWithDecompressionStream);
    const zoom = fittingZoom(img.width, img.height, CANVAS_W, CANVAS_H);
    const ctx = this.canvas.getContext("2d");
    if (!ctx) throw new Error("no 2d context");
    renderStimulus(ctx as unknown as Canvas2DLike, CANVAS_W, CANVAS_H, img, zoom);
    this.progress.textContent = `trial ${view.trial_index + 1} / ${view.n_trials} (zoom ${zoom}×)`;
    for (const b of this.buttons) b.disabled = false;
  }

  private async judge(judgment: "same" | "different"): Promise<void> {
    if (!this.controller || this.controller.state !== "trial") return;
    for (const b of this.buttons) b.disabled = true; // one in-flight response
    await this.controller.submit(judgment);
  }

  private showCompletion(sessionId: string): void {
    this.root.replaceChildren();
    const box = el("div", { class: "panel" });
    box.append(
      el("h1", {}, "Done, thank you!"),
      el("p", {}, `Your session id: ${sessionId}`),
      el("p", { class: "note" }, "You can close this window now."),
    );
    this.root.append(box);
  }

  private showError(message: string, retriable: boolean): void {
    this.root.replaceChildren();
    const box = el("div", { class: "panel error" });
    box.append(el("h1", {}, "Connection problem"), el("p", {}, message));
    if (retriable && this.controller) {
      const retry = el("button", {}, "Retry");
      retry.addEventListener("click", () => {
        this.buildTrialScreen();
        void this.controller?.resync();
      });
      box.append(retry);
    }
    this.root.append(box);
  }
}

const rootEl = document.getElementById("app");
if (rootEl) {
  const app = new App(rootEl, "");
  void app.showInstructions();
}
