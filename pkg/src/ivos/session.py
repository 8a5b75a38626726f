"""The round-based interactive segmentation state machine.

A session encodes every frame exactly once at start. Each round then runs the
interaction branch on the annotated frame (scribble channels through the
interaction head, augmented maps folded into the global memory) and
propagates bidirectionally outward, reading and writing both memories along
the way. In "distance" decision mode the trainable heads are replaced by an
argmin-over-aggregated-distance rule so the full loop runs untrained.
"""
from __future__ import annotations

import math

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import (
    BACKGROUND, FrameSequence, LabelMask, RES_STRIDE, ScribbleSet,
    ScribbleStroke, rasterize_scribbles, to_stride_grid, upsample_map,
)
from .embedding import EmbeddingField
from .errors import ContractViolation, ValidationError
from .heads import (
    HeadConfig, HeadParams, interaction_forward, propagation_forward,
    softmax_objects,
)
from .matching import MatchConfig, PixelSet, augmented_map, global_map, local_map
from .memory import ForgettingConfig, GlobalMapMemory, LocalMapMemory

DECISION_HEADS = "heads"
DECISION_DISTANCE = "distance"


@dataclass(frozen=True)
class SessionConfig:
    match: MatchConfig = MatchConfig()
    forget: ForgettingConfig = ForgettingConfig()
    head: HeadConfig = HeadConfig()
    roi_margin: float = 0.5
    decision: str = DECISION_DISTANCE
    aggregate_global: bool = True  # False reproduces the no-global-memory ablation

    def __post_init__(self):
        if self.decision not in (DECISION_HEADS, DECISION_DISTANCE):
            raise ContractViolation(f"unknown decision mode {self.decision!r}")
        if self.roi_margin < 0:
            raise ContractViolation("roi_margin must be >= 0")


@dataclass(frozen=True)
class RoundResult:
    round_index: int
    annotated_frame: int
    masks: tuple[LabelMask, ...]  # full resolution, one per frame
    stride_masks: np.ndarray      # (n, h, w) int32 at embedding resolution
    provenance: tuple[int | None, ...]  # local-memory round that served each frame


def apply_rough_roi(scribbles: ScribbleSet, height: int, width: int,
                    margin_fraction: float) -> ScribbleSet:
    """First-round rule: everything outside the enlarged positive bounding box
    becomes background annotation, emitted as per-row background strokes."""
    pos_points = [
        (x, y, s.brush_radius)
        for s in scribbles.strokes if s.polarity == "pos"
        for (x, y) in s.points
    ]
    if not pos_points:
        raise ContractViolation("rough ROI needs at least one positive stroke")
    # the box must contain the strokes' full footprint, radius included
    x0 = min(x - r for x, _, r in pos_points)
    x1 = max(x + r for x, _, r in pos_points)
    y0 = min(y - r for _, y, r in pos_points)
    y1 = max(y + r for _, y, r in pos_points)
    dx = math.floor(margin_fraction * (x1 - x0 + 1) + 0.5)
    dy = math.floor(margin_fraction * (y1 - y0 + 1) + 0.5)
    x0, x1 = max(0, x0 - dx), min(width - 1, x1 + dx)
    y0, y1 = max(0, y0 - dy), min(height - 1, y1 + dy)

    extra: list[ScribbleStroke] = []

    def row_stroke(xa: int, xb: int, y: int) -> None:
        extra.append(ScribbleStroke(BACKGROUND, "pos", ((xa, y), (xb, y)), 0))

    for y in range(height):
        if y < y0 or y > y1:
            row_stroke(0, width - 1, y)
        else:
            if x0 >= 1:
                row_stroke(0, x0 - 1, y)
            if x1 <= width - 2:
                row_stroke(x1 + 1, width - 1, y)
    return ScribbleSet(scribbles.frame_index, scribbles.strokes + tuple(extra))


class Session:
    """One video's interactive segmentation state across rounds."""

    def __init__(self, frames: FrameSequence, provider, object_count: int,
                 config: SessionConfig,
                 propagation_params: HeadParams | None = None,
                 interaction_params: HeadParams | None = None):
        if object_count < 2:
            raise ValidationError("need at least one object besides background")
        if config.decision == DECISION_HEADS and (
                propagation_params is None or interaction_params is None):
            raise ValidationError("heads decision mode requires trained head parameters")
        self.frames = frames
        self.provider = provider
        self.object_count = object_count
        self.config = config
        self.propagation_params = propagation_params
        self.interaction_params = interaction_params
        self.encoder_invocations = 0
        self.embeddings: list[EmbeddingField] = []
        for t in range(frames.n):
            self.embeddings.append(provider.encode(frames.frame(t), t))
            self.encoder_invocations += 1
        h, w = self.embeddings[0].shape
        self.grid_shape = (h, w)
        self.stride = self.embeddings[0].stride
        self.global_mem = GlobalMapMemory(frames.n, object_count, h, w)
        self.local_mem = LocalMapMemory(config.forget)
        self.round_index = 0
        self.annotated_history: list[int] = []
        self.stride_masks: dict[int, np.ndarray] = {}
        self.full_masks: dict[int, list[LabelMask]] = {}
        self.round_scribbles: dict[int, ScribbleSet] = {}
        self._pending: _PendingRound | None = None

    # -- public entry points ------------------------------------------------

    def round(self, scribbles: ScribbleSet,
              progress: Callable[[int], None] | None = None) -> RoundResult:
        self.run_interaction(scribbles)
        return self.propagate_round(progress)

    def run_interaction(self, scribbles: ScribbleSet) -> LabelMask:
        """Segment the annotated frame and fold its augmented maps into memory."""
        if self._pending is not None:
            raise ContractViolation("previous round was never propagated")
        if not 0 <= scribbles.frame_index < self.frames.n:
            raise ValidationError(f"frame {scribbles.frame_index} out of range")
        if len(scribbles) == 0:
            raise ValidationError("scribble set is empty")
        for s in scribbles.strokes:
            if s.object_id >= self.object_count:
                raise ValidationError(
                    f"stroke references object {s.object_id}, session has "
                    f"{self.object_count}"
                )
        r = self.round_index + 1
        if r == 1:
            scribbles = apply_rough_roi(
                scribbles, self.frames.height, self.frames.width,
                self.config.roi_margin,
            )
        t_hat = scribbles.frame_index
        channels = rasterize_scribbles(scribbles, self.frames.height, self.frames.width)

        O = self.object_count
        h, w = self.grid_shape
        pos = np.zeros((O, h, w))
        neg = np.zeros((O, h, w))
        bg_extra = np.zeros((h, w), dtype=bool)
        for o, ch in channels.items():
            pos[o] = to_stride_grid(ch["pos"], self.stride)
            neg[o] = to_stride_grid(ch["neg"], self.stride)
            if o != BACKGROUND:
                # negative strokes double as background evidence
                bg_extra |= to_stride_grid(ch["neg"], self.stride)

        pixel_sets: list[PixelSet] = []
        for o in range(O):
            evidence = pos[o].astype(bool)
            if o == BACKGROUND:
                evidence = evidence | bg_extra
            pixel_sets.append(PixelSet.from_binary(evidence, t_hat, o, "scribble"))

        write_global = self.config.aggregate_global or r == 1
        amaps: list[np.ndarray | None] = [None] * O
        for o in range(O):
            if len(pixel_sets[o]):
                amap = augmented_map(self.embeddings[t_hat], pixel_sets[o],
                                     self.config.match)
                amaps[o] = amap.grid
                if write_global:
                    self.global_mem.write(t_hat, r, amap)

        prev_mask = self._previous_round_mask(t_hat)
        values = np.empty((O, h, w))
        if self.config.decision == DECISION_HEADS:
            for o in range(O):
                values[o] = interaction_forward(
                    self.interaction_params, self.embeddings[t_hat],
                    pos[o], neg[o], (prev_mask == o).astype(np.float64),
                )
        else:
            # fresh augmented evidence still counts when aggregation is ablated
            for o in range(O):
                best = self.global_mem.read(t_hat, o).grid
                if amaps[o] is not None:
                    best = np.minimum(best, amaps[o])
                values[o] = -best

        stride_mask = values.argmax(axis=0).astype(np.int32)
        self.round_index = r
        self.annotated_history.append(t_hat)
        self.local_mem.record_annotated_frame(r, t_hat)
        self.round_scribbles[r] = scribbles
        self._pending = _PendingRound(
            round_index=r, annotated_frame=t_hat, pixel_sets=pixel_sets,
            interaction_mask=stride_mask, interaction_values=values,
        )
        return LabelMask(stride_mask, RES_STRIDE)

    def propagate_round(self,
                        progress: Callable[[int], None] | None = None) -> RoundResult:
        """Propagate the pending interaction outward over all other frames."""
        if self._pending is None:
            raise ContractViolation("run_interaction must precede propagation")
        pending = self._pending
        self._pending = None
        r, t_hat = pending.round_index, pending.annotated_frame
        n = self.frames.n
        O = self.object_count
        h, w = self.grid_shape

        stride_masks = np.zeros((n, h, w), dtype=np.int32)
        full_masks: list[LabelMask | None] = [None] * n
        provenance: list[int | None] = [None] * n

        stride_masks[t_hat] = pending.interaction_mask
        full_masks[t_hat] = self._to_full_mask(pending.interaction_values)
        if progress:
            progress(t_hat)

        for direction in (range(t_hat + 1, n), range(t_hat - 1, -1, -1)):
            prev_t = t_hat
            prev_mask = pending.interaction_mask
            for t in direction:
                values = np.empty((O, h, w))
                serving: set[int] = set()
                for o in range(O):
                    if len(pending.pixel_sets[o]) and (
                            self.config.aggregate_global or r == 1):
                        gmap = global_map(
                            self.embeddings[t], self.embeddings[t_hat],
                            pending.pixel_sets[o],
                        )
                        self.global_mem.write(t, r, gmap)
                    g_read = self.global_mem.read(t, o).grid

                    prev_pixels = PixelSet.from_binary(
                        prev_mask == o, prev_t, o, "mask")
                    fresh = local_map(
                        self.embeddings[t], self.embeddings[prev_t],
                        prev_pixels, self.config.match,
                    )
                    self.local_mem.write(t, r, o, fresh)
                    hit = self.local_mem.read(t, r, o)
                    if hit is None:
                        served, served_round = fresh.grid, r
                    else:
                        served, served_round = hit
                    serving.add(served_round)

                    if self.config.decision == DECISION_HEADS:
                        values[o] = propagation_forward(
                            self.propagation_params, self.embeddings[t],
                            g_read, served, (prev_mask == o).astype(np.float64),
                        )
                    else:
                        values[o] = -np.minimum(g_read, served)
                stride_masks[t] = values.argmax(axis=0)
                full_masks[t] = self._to_full_mask(values)
                provenance[t] = max(serving)
                prev_t = t
                prev_mask = stride_masks[t]
                if progress:
                    progress(t)

        self.stride_masks[r] = stride_masks
        self.full_masks[r] = list(full_masks)  # type: ignore[arg-type]
        return RoundResult(
            round_index=r,
            annotated_frame=t_hat,
            masks=tuple(full_masks),  # type: ignore[arg-type]
            stride_masks=stride_masks,
            provenance=tuple(provenance),
        )

    # -- helpers ------------------------------------------------------------

    def _previous_round_mask(self, t_hat: int) -> np.ndarray:
        if self.round_index == 0:
            return np.full(self.grid_shape, BACKGROUND, dtype=np.int32)
        return self.stride_masks[self.round_index][t_hat]

    def _to_full_mask(self, values: np.ndarray) -> LabelMask:
        H, W = self.frames.height, self.frames.width
        up = np.stack([
            upsample_map(values[o], self.stride, "bilinear")[:H, :W]
            for o in range(self.object_count)
        ])
        return LabelMask(up.argmax(axis=0).astype(np.int32))


@dataclass
class _PendingRound:
    round_index: int
    annotated_frame: int
    pixel_sets: list[PixelSet]
    interaction_mask: np.ndarray
    interaction_values: np.ndarray


@dataclass
class Pipeline:
    """Everything needed to open sessions: provider, config, trained heads."""

    provider: object
    config: SessionConfig = SessionConfig()
    propagation_params: HeadParams | None = None
    interaction_params: HeadParams | None = None

    def new_session(self, frames: FrameSequence, object_count: int) -> Session:
        return Session(
            frames, self.provider, object_count, self.config,
            self.propagation_params, self.interaction_params,
        )
