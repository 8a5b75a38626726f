import type { CanvasStroke } from "./types.js";

/**
 * Canonical scribble JSON. Key order and the absence of whitespace are part
 * of the wire format: the bytes must match the engine's serializer exactly.
 */
export function scribblesToJson(frame: number, strokes: CanvasStroke[]): string {
  const payload = {
    frame,
    strokes: strokes.map((s) => ({
      object: s.object,
      polarity: s.polarity,
      radius: s.radius,
      points: s.points.map(([x, y]) => [x, y]),
    })),
  };
  return JSON.stringify(payload);
}

function perpendicularDistance(
  p: [number, number], a: [number, number], b: [number, number],
): number {
  const vx = b[0] - a[0];
  const vy = b[1] - a[1];
  const len2 = vx * vx + vy * vy;
  if (len2 === 0) return Math.hypot(p[0] - a[0], p[1] - a[1]);
  const t = Math.max(0, Math.min(1, ((p[0] - a[0]) * vx + (p[1] - a[1]) * vy) / len2));
  return Math.hypot(p[0] - (a[0] + t * vx), p[1] - (a[1] + t * vy));
}

/**
 * Douglas-Peucker polyline simplification. Every dropped point stays within
 * `maxDeviation` pixels of the simplified line, keeping payloads bounded
 * while the drawn shape is visually unchanged.
 */
export function simplifyPolyline(
  points: [number, number][], maxDeviation = 1.0,
): [number, number][] {
  if (points.length <= 2) return points.slice();
  let worst = 0;
  let worstIndex = 0;
  const first = points[0];
  const last = points[points.length - 1];
  for (let i = 1; i < points.length - 1; i++) {
    const d = perpendicularDistance(points[i], first, last);
    if (d > worst) {
      worst = d;
      worstIndex = i;
    }
  }
  if (worst <= maxDeviation) return [first, last];
  const left = simplifyPolyline(points.slice(0, worstIndex + 1), maxDeviation);
  const right = simplifyPolyline(points.slice(worstIndex), maxDeviation);
  return left.slice(0, -1).concat(right);
}

/** Snap a pointer-event coordinate onto the integer pixel grid, clamped. */
export function snapPoint(
  x: number, y: number, width: number, height: number,
): [number, number] {
  const cx = Math.min(width - 1, Math.max(0, Math.round(x)));
  const cy = Math.min(height - 1, Math.max(0, Math.round(y)));
  return [cx, cy];
}
