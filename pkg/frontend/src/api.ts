// Thin typed client over the study service's HTTP API. The client never
// requests illusion/control labels; the only endpoints it touches are the
// session flow and the static stimulus images.

export interface SetInfo {
  id: string;
  size: number;
}

export interface SessionInfo {
  session_id: string;
  set: string;
  observer: string;
  n_trials: number;
  remaining: number;
}

export interface TrialView {
  trial_index: number;
  image_url: string;
  remaining: number;
  n_trials: number;
}

export interface SubmitAck {
  ok: boolean;
  remaining: number;
  status: "open" | "complete";
}

export type Judgment = "same" | "different";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

async function parseError(res: Response): Promise<ApiError> {
  let detail = res.statusText;
  try {
    const body = (await res.json()) as { detail?: string; error?: string };
    detail = body.detail ?? body.error ?? detail;
  } catch {
    // non-JSON error body; keep the status text
  }
  return new ApiError(res.status, detail);
}

export class PsyClient {
  constructor(
    readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async getJson<T>(path: string): Promise<T> {
    const res = await this.fetchFn(this.baseUrl + path);
    if (!res.ok) throw await parseError(res);
    return (await res.json()) as T;
  }

  private async postJson<T>(path: string, body: unknown): Promise<T> {
    const res = await this.fetchFn(this.baseUrl + path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!res.ok) throw await parseError(res);
    return (await res.json()) as T;
  }

  listSets(): Promise<SetInfo[]> {
    return this.getJson("/sets");
  }

  createSession(set: string, observer: string, seed: number): Promise<SessionInfo> {
    return this.postJson("/sessions", { set, observer, seed });
  }

  nextTrial(sessionId: string): Promise<TrialView> {
    return this.getJson(`/sessions/${sessionId}/next`);
  }

  submitResponse(sessionId: string, trialIndex: number, judgment: Judgment, rtMs: number): Promise<SubmitAck> {
    return this.postJson(`/sessions/${sessionId}/responses`, {
      trial_index: trialIndex,
      judgment,
      rt_ms: rtMs,
    });
  }

  async fetchImage(imageUrl: string): Promise<Uint8Array> {
    const res = await this.fetchFn(this.baseUrl + imageUrl);
    if (!res.ok) throw await parseError(res);
    return new Uint8Array(await res.arrayBuffer());
  }
}
