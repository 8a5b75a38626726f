import type { RoundEvent, SessionHandle } from "./types.js";

export class ConflictError extends Error {}

export interface SubmitResult {
  round: number;
}

type FetchLike = typeof fetch;

/** Thin REST/WS client; the UI touches session state through this only. */
export class ApiClient {
  constructor(
    private readonly base: string,
    private readonly fetchImpl: FetchLike = globalThis.fetch.bind(globalThis),
  ) {}

  private async request(path: string, init?: RequestInit): Promise<Response> {
    const resp = await this.fetchImpl(`${this.base}${path}`, init);
    if (resp.status === 409) {
      const body = await resp.json().catch(() => ({ detail: "conflict" }));
      throw new ConflictError(body.detail ?? "conflict");
    }
    if (!resp.ok) {
      const text = await resp.text().catch(() => "");
      throw new Error(`${resp.status} ${resp.statusText}: ${text}`);
    }
    return resp;
  }

  async createSessionFromPath(
    path: string, objects: number, config: Record<string, unknown> = {},
  ): Promise<string> {
    const resp = await this.request("/sessions", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ path, objects, config }),
    });
    return (await resp.json()).id as string;
  }

  async getSession(id: string): Promise<SessionHandle> {
    return (await this.request(`/sessions/${id}`)).json();
  }

  async listSessions(): Promise<SessionHandle[]> {
    return (await this.request("/sessions")).json();
  }

  async submitScribbles(id: string, scribbleJson: string): Promise<SubmitResult> {
    const resp = await this.request(`/sessions/${id}/scribbles`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: scribbleJson,
    });
    return resp.json();
  }

  async masksManifest(id: string, round: number): Promise<{
    round: number;
    files: string[];
    provenance: { annotated_frame: number; served_by_round: (number | null)[] };
  }> {
    return (await this.request(`/sessions/${id}/rounds/${round}/masks`)).json();
  }

  async maskBytes(id: string, round: number, frame: number): Promise<ArrayBuffer> {
    const resp = await this.request(
      `/sessions/${id}/rounds/${round}/masks?frame=${frame}`);
    return resp.arrayBuffer();
  }

  maskUrl(id: string, round: number, frame: number): string {
    return `${this.base}/sessions/${id}/rounds/${round}/masks?frame=${frame}`;
  }

  frameUrl(id: string, frame: number): string {
    return `${this.base}/sessions/${id}/frames/${frame}`;
  }

  async metrics(id: string): Promise<{
    encoder_invocations: number;
    frames: number;
    rounds_completed: number;
    state: string;
  }> {
    return (await this.request(`/sessions/${id}/metrics`)).json();
  }

  async waitForState(
    id: string, states: string[], timeoutMs = 120_000, pollMs = 150,
  ): Promise<SessionHandle> {
    const deadline = Date.now() + timeoutMs;
    for (;;) {
      const handle = await this.getSession(id);
      if (states.includes(handle.state)) return handle;
      if (handle.state === "error") {
        throw new Error(`session failed: ${handle.error}`);
      }
      if (Date.now() > deadline) throw new Error(`timed out waiting for ${states}`);
      await new Promise((resolve) => setTimeout(resolve, pollMs));
    }
  }

  /**
   * Subscribe to round progress over WebSocket. A factory is injectable so
   * tests (and WS-less runtimes) can substitute a fake; callers without
   * WebSocket support fall back to polling via waitForState.
   */
  events(
    id: string,
    onEvent: (event: RoundEvent) => void,
    socketFactory?: (url: string) => WebSocket,
  ): () => void {
    const url = this.base.replace(/^http/, "ws") + `/sessions/${id}/events`;
    const factory = socketFactory
      ?? ((u: string) => new (globalThis as { WebSocket: typeof WebSocket }).WebSocket(u));
    const socket = factory(url);
    socket.onmessage = (msg: MessageEvent) => {
      onEvent(JSON.parse(String(msg.data)) as RoundEvent);
    };
    return () => socket.close();
  }
}
