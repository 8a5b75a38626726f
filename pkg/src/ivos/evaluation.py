"""Metrics, benchmark records, synthetic desk-scale corpora, and reports."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import FrameSequence, LabelMask, ceil_div, load_frames, load_mask_png, \
    save_frames, save_mask_png, upsample_map
from .errors import ContractViolation, ValidationError


def jaccard(pred: LabelMask, gt: LabelMask, object_id: int) -> float:
    """Intersection over union of one object's cells; 1.0 when both are empty."""
    if pred.grid.shape != gt.grid.shape:
        raise ContractViolation(
            f"mask shapes differ: {pred.grid.shape} vs {gt.grid.shape}"
        )
    p = pred.grid == object_id
    g = gt.grid == object_id
    union = int(np.count_nonzero(p | g))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(p & g)) / union


@dataclass(frozen=True)
class RoundCurve:
    """Mean Jaccard as a function of an increasing interaction budget."""

    points: tuple[tuple[float, float], ...]

    def __post_init__(self):
        pts = tuple((float(b), float(j)) for b, j in self.points)
        budgets = [b for b, _ in pts]
        if any(b2 <= b1 for b1, b2 in zip(budgets, budgets[1:])):
            raise ContractViolation("budgets must be strictly increasing")
        if any(not 0.0 <= j <= 1.0 for _, j in pts):
            raise ContractViolation("J values must lie in [0, 1]")
        object.__setattr__(self, "points", pts)


def auc(curve: RoundCurve) -> float:
    """Trapezoidal area under the curve, normalized by the budget span."""
    pts = curve.points
    if len(pts) < 2:
        raise ContractViolation("AUC needs at least two curve points")
    area = sum(
        (b2 - b1) * (j1 + j2) / 2.0
        for (b1, j1), (b2, j2) in zip(pts[:-1], pts[1:])
    )
    return area / (pts[-1][0] - pts[0][0])


def j_at_budget(curve: RoundCurve, budget: float) -> float:
    """Linear interpolation, clamped to the first/last point outside the span."""
    pts = curve.points
    if budget <= pts[0][0]:
        return pts[0][1]
    if budget >= pts[-1][0]:
        return pts[-1][1]
    for (b1, j1), (b2, j2) in zip(pts[:-1], pts[1:]):
        if b1 <= budget <= b2:
            t = (budget - b1) / (b2 - b1)
            return j1 + t * (j2 - j1)
    raise AssertionError("unreachable")


# ---------------------------------------------------------------------------
# benchmark records


@dataclass(frozen=True)
class BenchmarkRecord:
    video: str
    round_index: int
    frame: int
    object_id: int
    jaccard: float
    annotated_frame: int
    millis: float


def write_records_csv(records: list[BenchmarkRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["video", "round", "frame", "object", "jaccard", "annotated_frame", "millis"]
        )
        for r in records:
            writer.writerow([
                r.video, r.round_index, r.frame, r.object_id,
                f"{r.jaccard:.9f}", r.annotated_frame, f"{r.millis:.3f}",
            ])


def read_records_csv(path: str | Path) -> list[BenchmarkRecord]:
    records = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            records.append(BenchmarkRecord(
                video=row["video"],
                round_index=int(row["round"]),
                frame=int(row["frame"]),
                object_id=int(row["object"]),
                jaccard=float(row["jaccard"]),
                annotated_frame=int(row["annotated_frame"]),
                millis=float(row["millis"]),
            ))
    return records


def curve_from_records(records: list[BenchmarkRecord],
                       axis: str = "round") -> RoundCurve:
    """Mean J per budget point: objects averaged per frame, frames per video,
    then videos.

    The default budget axis is the round index; ``axis="seconds"`` uses the
    cumulative mean per-round wall time from the timing column instead.
    """
    if not records:
        raise ValidationError("no benchmark records")
    if axis not in ("round", "seconds"):
        raise ValidationError(f"unknown budget axis {axis!r}")
    per_round: dict[int, dict[str, dict[int, list[float]]]] = {}
    round_millis: dict[int, dict[str, float]] = {}
    for r in records:
        per_round.setdefault(r.round_index, {}) \
            .setdefault(r.video, {}).setdefault(r.frame, []).append(r.jaccard)
        round_millis.setdefault(r.round_index, {})[r.video] = r.millis
    points = []
    elapsed = 0.0
    for rnd in sorted(per_round):
        video_means = []
        for frames in per_round[rnd].values():
            frame_means = [float(np.mean(js)) for js in frames.values()]
            video_means.append(float(np.mean(frame_means)))
        mean_j = float(np.mean(video_means))
        if axis == "seconds":
            elapsed += float(np.mean(list(round_millis[rnd].values()))) / 1000.0
            points.append((elapsed, mean_j))
        else:
            points.append((float(rnd), mean_j))
    return RoundCurve(tuple(points))


# ---------------------------------------------------------------------------
# synthetic corpus


@dataclass(frozen=True)
class VideoSample:
    """Frames plus exact ground-truth label masks."""

    name: str
    frames: FrameSequence
    gt: np.ndarray  # (n, H, W) int32
    object_count: int  # including background

    def gt_mask(self, t: int) -> LabelMask:
        return LabelMask(self.gt[t])


def _convex_polygon(rng: np.random.Generator, scale: float) -> np.ndarray:
    """Vertices of a rotated, anisotropically scaled regular polygon (convex)."""
    sides = int(rng.integers(3, 8))
    a = scale * rng.uniform(0.7, 1.3)
    b = scale * rng.uniform(0.7, 1.3)
    phase = rng.uniform(0, 2 * np.pi)
    angles = phase + np.arange(sides) * 2 * np.pi / sides
    return np.stack([a * np.cos(angles), b * np.sin(angles)], axis=1)


def _fill_polygon(vertices: np.ndarray, height: int, width: int) -> np.ndarray:
    """Half-plane rasterization of a convex polygon; cell centers inside."""
    ys, xs = np.mgrid[0:height, 0:width]
    area2 = 0.0
    n = len(vertices)
    for i in range(n):
        x1, y1 = vertices[i]
        x2, y2 = vertices[(i + 1) % n]
        area2 += x1 * y2 - x2 * y1
    sign = 1.0 if area2 >= 0 else -1.0
    inside = np.ones((height, width), dtype=bool)
    for i in range(n):
        x1, y1 = vertices[i]
        x2, y2 = vertices[(i + 1) % n]
        cross = (x2 - x1) * (ys - y1) - (y2 - y1) * (xs - x1)
        inside &= sign * cross >= 0
    return inside


def generate_synthetic_video(seed: int, n_frames: int, height: int, width: int,
                             objects: int, max_speed: float = 2.5,
                             max_spin: float = 0.12,
                             name: str | None = None,
                             with_layers: bool = False):
    """Colored convex polygons drifting and spinning over a textured background.

    Ground truth follows painter's order: higher object ids are drawn later
    and occlude lower ones. Fully deterministic for a given seed. With
    ``with_layers`` the per-object unoccluded regions are returned alongside
    the sample as a (n, objects, H, W) bool stack.
    """
    if objects < 1:
        raise ContractViolation(f"need at least one object, got {objects}")
    if min(n_frames, height, width) < 1:
        raise ContractViolation(f"degenerate dims {(n_frames, height, width)}")
    rng = np.random.default_rng(seed)

    coarse = rng.uniform(70, 180, size=(ceil_div(height, 8), ceil_div(width, 8), 3))
    background = np.stack(
        [upsample_map(coarse[..., c], 8, "bilinear")[:height, :width] for c in range(3)],
        axis=2,
    )

    scale = 0.16 * min(height, width)
    shapes, centers, velocities, spins, colors = [], [], [], [], []
    margin = scale * 1.4
    for o in range(objects):
        shapes.append(_convex_polygon(rng, scale))
        centers.append(np.array([
            rng.uniform(margin, width - margin) if width > 2 * margin else width / 2,
            rng.uniform(margin, height - margin) if height > 2 * margin else height / 2,
        ]))
        speed = rng.uniform(0.3, 1.0) * max_speed
        theta = rng.uniform(0, 2 * np.pi)
        velocities.append(np.array([np.cos(theta), np.sin(theta)]) * speed)
        spins.append(rng.uniform(-1, 1) * max_spin)
        hue = (o / objects + rng.uniform(0, 0.5 / objects)) % 1.0
        colors.append(_hue_to_rgb(hue))

    frames = np.empty((n_frames, height, width, 3), dtype=np.uint8)
    gt = np.zeros((n_frames, height, width), dtype=np.int32)
    layers = np.zeros((n_frames, objects, height, width), dtype=bool)
    angle = np.zeros(objects)
    for t in range(n_frames):
        img = background + rng.uniform(-6, 6, size=(height, width, 3))
        labels = np.zeros((height, width), dtype=np.int32)
        for o in range(objects):
            c, s = np.cos(angle[o]), np.sin(angle[o])
            rot = np.array([[c, -s], [s, c]])
            verts = shapes[o] @ rot.T + centers[o]
            mask = _fill_polygon(verts, height, width)
            layers[t, o] = mask
            labels[mask] = o + 1
            img[mask] = colors[o] + rng.uniform(-10, 10, size=3)
        frames[t] = np.clip(img, 0, 255).astype(np.uint8)
        gt[t] = labels
        for o in range(objects):
            centers[o] += velocities[o]
            angle[o] += spins[o]
            for axis, limit in ((0, width), (1, height)):
                if centers[o][axis] < margin or centers[o][axis] > limit - margin:
                    velocities[o][axis] = -velocities[o][axis]
                    centers[o][axis] = np.clip(centers[o][axis], margin, limit - margin)
    sample = VideoSample(
        name=name or f"synthetic-{seed}",
        frames=FrameSequence(frames),
        gt=gt,
        object_count=objects + 1,
    )
    if with_layers:
        return sample, layers
    return sample


def _hue_to_rgb(hue: float) -> np.ndarray:
    i = int(hue * 6) % 6
    f = hue * 6 - int(hue * 6)
    q, t = 255 * (1 - f), 255 * f
    table = {
        0: (255, t, 0), 1: (q, 255, 0), 2: (0, 255, t),
        3: (0, q, 255), 4: (t, 0, 255), 5: (255, 0, q),
    }
    return np.array(table[i], dtype=np.float64)


def make_corpus(seed: int, videos: int, frames: int, height: int, width: int,
                objects: int, **kwargs) -> list[VideoSample]:
    return [
        generate_synthetic_video(
            seed + 1000 * i, frames, height, width, objects,
            name=f"video{i:02d}", **kwargs,
        )
        for i in range(videos)
    ]


def save_corpus(corpus: list[VideoSample], directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = []
    for video in corpus:
        vdir = directory / video.name
        save_frames(video.frames, vdir / "frames")
        (vdir / "gt").mkdir(parents=True, exist_ok=True)
        for t in range(video.frames.n):
            save_mask_png(LabelMask(video.gt[t]), vdir / "gt" / f"{t:05d}.png")
        manifest.append({"name": video.name, "objects": video.object_count})
    (directory / "corpus.json").write_text(json.dumps({"videos": manifest}, indent=2))


def load_corpus(directory: str | Path) -> list[VideoSample]:
    directory = Path(directory)
    manifest = json.loads((directory / "corpus.json").read_text())
    corpus = []
    for entry in manifest["videos"]:
        vdir = directory / entry["name"]
        frames = load_frames(vdir / "frames")
        gt = np.stack([
            load_mask_png(vdir / "gt" / f"{t:05d}.png").grid
            for t in range(frames.n)
        ])
        corpus.append(VideoSample(entry["name"], frames, gt, entry["objects"]))
    return corpus


# ---------------------------------------------------------------------------
# reporting

_PALETTE = ["#1b6ca8", "#d1495b", "#2e933c", "#8a4fff", "#e07b39", "#5f6b7a"]


def report(runs: dict[str, list[BenchmarkRecord]], out_dir: str | Path) -> dict[str, Path]:
    """Write one curve CSV per labeled run plus a combined J-vs-round SVG."""
    if not runs:
        raise ValidationError("no runs to report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs: dict[str, Path] = {}
    curves = {}
    for label, records in runs.items():
        curve = curve_from_records(records)
        curves[label] = curve
        path = out_dir / f"curve_{label}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["round", "mean_jaccard"])
            for b, j in curve.points:
                writer.writerow([int(b), f"{j:.9f}"])
        outputs[label] = path
    svg_path = out_dir / "j_vs_round.svg"
    svg_path.write_text(_curves_svg(curves))
    outputs["svg"] = svg_path
    return outputs


def _curves_svg(curves: dict[str, RoundCurve], width: int = 640, height: int = 420) -> str:
    pad = 50.0
    all_budgets = [b for c in curves.values() for b, _ in c.points]
    b_min, b_max = min(all_budgets), max(all_budgets)
    span = max(b_max - b_min, 1e-9)

    def px(b: float) -> float:
        return pad + (b - b_min) / span * (width - 2 * pad)

    def py(j: float) -> float:
        return height - pad - j * (height - 2 * pad)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" '
        f'stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="{height - 12}" text-anchor="middle" '
        f'font-size="13">interaction round</text>',
        f'<text x="16" y="{height / 2:.1f}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 16 {height / 2:.1f})">mean Jaccard</text>',
    ]
    for tick in np.linspace(0.0, 1.0, 6):
        y = py(tick)
        parts.append(
            f'<text x="{pad - 8:.1f}" y="{y + 4:.1f}" text-anchor="end" '
            f'font-size="11">{tick:.1f}</text>'
        )
    for i, (label, curve) in enumerate(sorted(curves.items())):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{px(b):.2f},{py(j):.2f}" for b, j in curve.points)
        data = ";".join(f"{b:g}:{j:.9f}" for b, j in curve.points)
        parts.append(
            f'<polyline class="curve" data-label="{label}" data-points="{data}" '
            f'points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{width - pad + 4:.1f}" y="{pad + 16 * i + 10:.1f}" '
            f'font-size="12" fill="{color}">{label}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts)
