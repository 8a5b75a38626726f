export type Polarity = "pos" | "neg";

/** One drawn polyline; serializes 1:1 into the service's scribble schema. */
export interface CanvasStroke {
  object: number;
  polarity: Polarity;
  radius: number;
  points: [number, number][]; // image coordinates, integer pixels
}

export interface ViewState {
  frame: number;
  round: number;
  overlayOpacity: number;
  errorHighlight: boolean;
}

export interface SessionHandle {
  id: string;
  state: "created" | "encoding" | "ready" | "propagating" | "error";
  round: number;
  frames: number;
  height: number;
  width: number;
  objects: number;
  error: string | null;
  progress: { round: number; frames_done: number; total: number };
}

export interface RoundEvent {
  round?: number;
  frame?: number;
  done?: boolean;
  state?: string;
  error?: string;
}

// Okabe-Ito palette: distinguishable under common color-vision deficiencies.
// Index 0 (background) gets a desaturated gray so it reads as "not an object".
const PALETTE = [
  "#888888", "#E69F00", "#56B4E9", "#009E73",
  "#F0E442", "#0072B2", "#D55E00", "#CC79A7",
];

export function colorFor(object: number): string {
  return PALETTE[object % PALETTE.length];
}
