"""Simulated annotator: pick the worst frame, scribble inside its error regions.

Positive strokes trace the morphological skeleton of the largest
false-negative component per object; negative strokes do the same for false
positives. The first round has no predictions, so positives are sampled from
the ground-truth regions directly.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from skimage.morphology import skeletonize

from .core import LabelMask, ScribbleSet, ScribbleStroke, _line_cells
from .errors import ContractViolation
from .evaluation import BenchmarkRecord, VideoSample, jaccard
from .session import Pipeline


@dataclass(frozen=True)
class RobotConfig:
    seed: int = 0
    min_region_cells: int = 10
    max_strokes_per_round: int = 8
    stroke_subsample_step: int = 4
    brush_radius: int = 0

    def __post_init__(self):
        if min(self.min_region_cells, self.max_strokes_per_round,
               self.stroke_subsample_step) < 1 or self.brush_radius < 0:
            raise ContractViolation("robot config values must be positive")


def worst_frame(pred_masks: list[LabelMask], gt_masks: list[LabelMask],
                object_count: int) -> int:
    """Frame with the lowest mean Jaccard over foreground objects; ties go low."""
    if len(pred_masks) != len(gt_masks):
        raise ContractViolation("prediction and ground-truth counts differ")
    best_t, best_j = 0, None
    for t, (pred, gt) in enumerate(zip(pred_masks, gt_masks)):
        js = [jaccard(pred, gt, o) for o in range(1, object_count)]
        mean_j = float(np.mean(js))
        if best_j is None or mean_j < best_j:
            best_t, best_j = t, mean_j
    return best_t


def _largest_component(mask: np.ndarray, min_cells: int) -> np.ndarray | None:
    """Largest 4-connected component of a bool grid, or None below threshold."""
    labeled, count = ndimage.label(mask)  # default structure = 4-connectivity
    if count == 0:
        return None
    sizes = ndimage.sum_labels(np.ones_like(labeled), labeled, range(1, count + 1))
    best = int(np.argmax(sizes)) + 1
    if sizes[best - 1] < min_cells:
        return None
    return labeled == best


def _skeleton_longest_path(region: np.ndarray) -> list[tuple[int, int]]:
    """Double-BFS diameter path over the 8-connected skeleton of a region."""
    skel = skeletonize(region)
    points = np.argwhere(skel)
    if len(points) == 0:
        points = np.argwhere(region)
        if len(points) == 0:
            return []
        r, c = points[len(points) // 2]
        return [(int(r), int(c))]
    index = {(int(r), int(c)): i for i, (r, c) in enumerate(points)}

    def bfs(start: tuple[int, int]) -> tuple[tuple[int, int], dict]:
        parents = {start: None}
        frontier = [start]
        last = start
        while frontier:
            nxt = []
            for (r, c) in frontier:
                for dr in (-1, 0, 1):
                    for dc in (-1, 0, 1):
                        if dr == dc == 0:
                            continue
                        q = (r + dr, c + dc)
                        if q in index and q not in parents:
                            parents[q] = (r, c)
                            nxt.append(q)
            if nxt:
                last = nxt[-1]
            frontier = nxt
        return last, parents

    start = tuple(int(v) for v in points[0])
    far, _ = bfs(start)
    end, parents = bfs(far)
    path = []
    node = end
    while node is not None:
        path.append(node)
        node = parents[node]
    return path


def _region_stroke(region: np.ndarray, object_id: int, polarity: str,
                   cfg: RobotConfig) -> ScribbleStroke | None:
    path = _skeleton_longest_path(region)
    if not path:
        return None
    sampled = path[:: cfg.stroke_subsample_step]
    if sampled[-1] != path[-1]:
        sampled.append(path[-1])
    # subsampling must not let straight segments leave the region; where they
    # would, fall back to the dense 8-connected path cells for that span
    safe = [sampled[0]]
    for i in range(1, len(sampled)):
        a, b = safe[-1], sampled[i]
        cells = _line_cells((a[1], a[0]), (b[1], b[0]))
        if all(region[y, x] for x, y in cells):
            safe.append(b)
        else:
            ia = path.index(a)
            ib = path.index(b)
            step = 1 if ib >= ia else -1
            safe.extend(path[ia + step: ib + step: step])
    points = tuple((int(c), int(r)) for r, c in safe)
    if len(points) == 1:
        points = points + points
    return ScribbleStroke(object_id, polarity, points, cfg.brush_radius)


def synthesize_scribbles(pred: LabelMask | None, gt: LabelMask, frame_index: int,
                         object_count: int, cfg: RobotConfig) -> ScribbleSet:
    """Scribbles on the error regions of one frame (ground truth when pred is None).

    Every emitted positive point satisfies gt == o and, given predictions,
    pred != o; every negative point satisfies pred == o and gt != o.
    """
    candidates: list[tuple[int, ScribbleStroke]] = []
    for o in range(1, object_count):
        gt_o = gt.binary(o)
        if pred is None:
            fn = gt_o
            fp = np.zeros_like(gt_o)
        else:
            if pred.grid.shape != gt.grid.shape:
                raise ContractViolation("prediction and ground truth misaligned")
            pred_o = pred.binary(o)
            fn = gt_o & ~pred_o
            fp = pred_o & ~gt_o
        for grid, polarity in ((fn, "pos"), (fp, "neg")):
            region = _largest_component(grid, cfg.min_region_cells)
            if region is None:
                continue
            stroke = _region_stroke(region, o, polarity, cfg)
            if stroke is not None:
                candidates.append((int(region.sum()), stroke))
    candidates.sort(key=lambda item: -item[0])
    strokes = tuple(s for _, s in candidates[: cfg.max_strokes_per_round])
    return ScribbleSet(frame_index, strokes)


# ---------------------------------------------------------------------------
# benchmark driver


@dataclass
class BenchmarkResult:
    records: list[BenchmarkRecord] = field(default_factory=list)

    def rounds(self) -> list[int]:
        return sorted({r.round_index for r in self.records})


def run_benchmark(pipeline: Pipeline, videos: list[VideoSample], rounds: int,
                  cfg: RobotConfig = RobotConfig()) -> BenchmarkResult:
    """Drive multi-round sessions over a corpus with the robot as the annotator."""
    result = BenchmarkResult()
    for video in videos:
        session = pipeline.new_session(video.frames, video.object_count)
        gt_masks = [video.gt_mask(t) for t in range(video.frames.n)]
        pred_masks: list[LabelMask] | None = None
        for round_index in range(1, rounds + 1):
            started = time.perf_counter()
            if pred_masks is None:
                t_target = 0
                scribbles = synthesize_scribbles(
                    None, gt_masks[t_target], t_target, video.object_count, cfg)
            else:
                t_target = worst_frame(pred_masks, gt_masks, video.object_count)
                scribbles = synthesize_scribbles(
                    pred_masks[t_target], gt_masks[t_target], t_target,
                    video.object_count, cfg)
            if len(scribbles) == 0:
                if pred_masks is None:  # nothing annotatable at all
                    empty = LabelMask(np.zeros(
                        (video.frames.height, video.frames.width), dtype=np.int32))
                    pred_masks = [empty] * video.frames.n
            else:
                outcome = session.round(scribbles)
                pred_masks = list(outcome.masks)
            millis = (time.perf_counter() - started) * 1000.0
            for t in range(video.frames.n):
                for o in range(1, video.object_count):
                    result.records.append(BenchmarkRecord(
                        video=video.name,
                        round_index=round_index,
                        frame=t,
                        object_id=o,
                        jaccard=jaccard(pred_masks[t], gt_masks[t], o),
                        annotated_frame=t_target,
                        millis=millis,
                    ))
    return result
