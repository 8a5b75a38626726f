import { ApiClient, ConflictError } from "./api.js";
import { scribblesToJson } from "./serialize.js";
import type { CanvasStroke, RoundEvent, SessionHandle, ViewState } from "./types.js";

export interface TimelineEntry {
  round: number;
  annotatedFrame: number;
}

export interface RoundProgress {
  round: number;
  framesDone: number;
  total: number;
  running: boolean;
}

/**
 * Client-side annotation state: strokes being drawn, the submission flow,
 * and the per-round timeline. A rejected submission (conflict) keeps every
 * drawn stroke so the user can simply retry.
 */
export class AnnotationStore {
  readonly view: ViewState = {
    frame: 0, round: 0, overlayOpacity: 0.5, errorHighlight: false,
  };
  strokes: CanvasStroke[] = [];
  notice: string | null = null;
  progress: RoundProgress = { round: 0, framesDone: 0, total: 0, running: false };
  timeline: TimelineEntry[] = [];
  session: SessionHandle | null = null;

  constructor(
    private readonly api: ApiClient,
    readonly sessionId: string,
  ) {}

  async refresh(): Promise<SessionHandle> {
    this.session = await this.api.getSession(this.sessionId);
    this.view.round = this.session.round;
    return this.session;
  }

  addStroke(stroke: CanvasStroke): void {
    if (stroke.points.length < 2) return; // a tap is not a stroke
    this.strokes.push(stroke);
  }

  clearStrokes(): void {
    this.strokes = [];
  }

  canSubmit(): boolean {
    return this.strokes.length > 0 && !this.progress.running;
  }

  /** Serialize the drawn strokes and run one round against the service. */
  async submitRound(): Promise<number | null> {
    if (this.strokes.length === 0) {
      this.notice = "draw at least one stroke first";
      return null;
    }
    const payload = scribblesToJson(this.view.frame, this.strokes);
    try {
      const { round } = await this.api.submitScribbles(this.sessionId, payload);
      this.progress = {
        round, framesDone: 0,
        total: this.session?.frames ?? 0, running: true,
      };
      this.notice = null;
      return round;
    } catch (err) {
      if (err instanceof ConflictError) {
        // non-destructive: the strokes stay for resubmission
        this.notice = "a round is still running; strokes kept, try again";
        return null;
      }
      throw err;
    }
  }

  onEvent(event: RoundEvent): void {
    if (event.state === "error") {
      this.notice = event.error ?? "round failed";
      this.progress.running = false;
      return;
    }
    if (event.done && event.round !== undefined) {
      this.completeRound(event.round);
      return;
    }
    if (event.frame !== undefined) {
      this.progress.framesDone += 1;
    }
  }

  completeRound(round: number, annotatedFrame?: number): void {
    this.progress = { ...this.progress, running: false };
    this.view.round = round;
    this.strokes = []; // accepted: the round owns them now
    this.timeline.push({
      round,
      annotatedFrame: annotatedFrame ?? this.view.frame,
    });
  }

  /** Wait (by polling) for the submitted round to finish; WS-free fallback. */
  async waitRoundComplete(round: number, timeoutMs = 300_000): Promise<void> {
    const handle = await this.api.waitForState(
      this.sessionId, ["ready"], timeoutMs);
    if (handle.round >= round && this.progress.running) {
      this.completeRound(handle.round);
    }
  }

  selectRound(round: number): void {
    if (round >= 1 && round <= (this.session?.round ?? 0)) {
      this.view.round = round;
    }
  }

  selectFrame(frame: number): void {
    if (frame >= 0 && frame < (this.session?.frames ?? 0)) {
      this.view.frame = frame;
    }
  }

  maskUrl(frame: number): string | null {
    if (this.view.round < 1) return null;
    return this.api.maskUrl(this.sessionId, this.view.round, frame);
  }

  frameUrl(frame: number): string {
    return this.api.frameUrl(this.sessionId, frame);
  }
}
