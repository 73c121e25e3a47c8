// Session state machine, UI-free. Strictly request/ack sequential: a single
// response may be in flight, the UI advances only on server acknowledgment,
// and a conflict resyncs to the server's notion of the next trial. Trial
// order lives entirely on the server.

import { ApiError, PsyClient, type Judgment, type TrialView } from "./api.js";

export type SessionState = "idle" | "loading" | "trial" | "submitting" | "complete" | "error";

export interface SessionEvents {
  onTrial?: (view: TrialView, image: Uint8Array) => void;
  onComplete?: (sessionId: string) => void;
  onError?: (message: string, retriable: boolean) => void;
}

export class SessionController {
  state: SessionState = "idle";
  sessionId: string | null = null; // held in memory only
  nTrials = 0;
  current: TrialView | null = null;
  private trialShownAt = 0;

  constructor(
    private readonly client: PsyClient,
    private readonly setId: string,
    private readonly observerId: string,
    private readonly seed: number,
    private readonly events: SessionEvents = {},
    private readonly now: () => number = () => Date.now(),
  ) {}

  get remaining(): number {
    return this.current ? this.current.remaining : 0;
  }

  get answered(): number {
    return this.current ? this.current.trial_index : this.nTrials;
  }

  async start(): Promise<void> {
    if (this.state !== "idle" && this.state !== "error") return;
    this.state = "loading";
    try {
      if (this.sessionId === null) {
        const info = await this.client.createSession(this.setId, this.observerId, this.seed);
        this.sessionId = info.session_id;
        this.nTrials = info.n_trials;
      }
      await this.loadNext();
    } catch (err) {
      this.fail(err);
    }
  }

  /** Submit the displayed trial's judgment. Returns false when ignored
   * (nothing displayed or a response already in flight). */
  async submit(judgment: Judgment): Promise<boolean> {
    if (this.state !== "trial" || !this.current || !this.sessionId) return false;
    const view = this.current;
    this.state = "submitting";
    const rtMs = Math.max(0, this.now() - this.trialShownAt);
    try {
      const ack = await this.client.submitResponse(this.sessionId, view.trial_index, judgment, rtMs);
      if (ack.remaining === 0) {
        this.complete();
      } else {
        await this.loadNext();
      }
      return true;
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        // server disagrees about the next trial: resync to its state
        try {
          await this.loadNext();
          return false;
        } catch (inner) {
          this.fail(inner);
          return false;
        }
      }
      this.fail(err);
      return false;
    }
  }

  /** Reload the server-reported next trial (also the reconnect path). */
  async resync(): Promise<void> {
    if (!this.sessionId || this.state === "complete") return;
    this.state = "loading";
    try {
      await this.loadNext();
    } catch (err) {
      this.fail(err);
    }
  }

  private async loadNext(): Promise<void> {
    if (!this.sessionId) throw new Error("no session");
    try {
      const view = await this.client.nextTrial(this.sessionId);
      const image = await this.client.fetchImage(view.image_url);
      this.current = view;
      this.state = "trial";
      this.trialShownAt = this.now();
      this.events.onTrial?.(view, image);
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.complete(); // session already complete
        return;
      }
      throw err;
    }
  }

  private complete(): void {
    this.state = "complete";
    this.current = null;
    if (this.sessionId) this.events.onComplete?.(this.sessionId);
  }

  private fail(err: unknown): void {
    this.state = "error";
    const message = err instanceof Error ? err.message : String(err);
    const retriable = !(err instanceof ApiError) || err.status >= 500;
    this.events.onError?.(message, retriable);
  }
}
