import type { CanvasStroke } from "./types.js";

/**
 * Client-side preview rasterization. Mirrors the engine's rule exactly:
 * integer stepping along the major axis with round-half-up, then Chebyshev
 * dilation by the brush radius, clipped to the frame.
 */
export function lineCells(
  x0: number, y0: number, x1: number, y1: number,
): [number, number][] {
  const steps = Math.max(Math.abs(x1 - x0), Math.abs(y1 - y0));
  if (steps === 0) return [[x0, y0]];
  const cells: [number, number][] = [];
  for (let i = 0; i <= steps; i++) {
    const t = i / steps;
    cells.push([
      Math.floor(x0 + t * (x1 - x0) + 0.5),
      Math.floor(y0 + t * (y1 - y0) + 0.5),
    ]);
  }
  return cells;
}

export function rasterizeStroke(
  stroke: CanvasStroke, height: number, width: number,
): Set<number> {
  const line = new Set<number>();
  const pts = stroke.points;
  for (let i = 0; i + 1 < pts.length; i++) {
    for (const [x, y] of lineCells(pts[i][0], pts[i][1], pts[i + 1][0], pts[i + 1][1])) {
      if (x >= 0 && x < width && y >= 0 && y < height) line.add(y * width + x);
    }
  }
  const r = stroke.radius;
  if (r === 0) return line;
  const dilated = new Set<number>();
  for (const cell of line) {
    const cy = Math.floor(cell / width);
    const cx = cell % width;
    for (let y = Math.max(0, cy - r); y <= Math.min(height - 1, cy + r); y++) {
      for (let x = Math.max(0, cx - r); x <= Math.min(width - 1, cx + r); x++) {
        dilated.add(y * width + x);
      }
    }
  }
  return dilated;
}

/** Union of stroke footprints per (object, polarity), as sorted [y, x] lists. */
export function rasterizeStrokes(
  strokes: CanvasStroke[], height: number, width: number,
): Map<string, [number, number][]> {
  const channels = new Map<string, Set<number>>();
  for (const stroke of strokes) {
    const key = `${stroke.object}/${stroke.polarity}`;
    let set = channels.get(key);
    if (!set) {
      set = new Set<number>();
      channels.set(key, set);
    }
    for (const cell of rasterizeStroke(stroke, height, width)) set.add(cell);
  }
  const out = new Map<string, [number, number][]>();
  for (const [key, set] of channels) {
    const cells = [...set].sort((a, b) => a - b)
      .map((c) => [Math.floor(c / width), c % width] as [number, number]);
    out.set(key, cells);
  }
  return out;
}
