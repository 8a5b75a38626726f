"""Two-stage head training on three-frame batches and synthesized rounds.

Stage 1 trains the propagation head: a random reference frame plays the
scribbled frame (its ground-truth mask is used directly), an adjacent pair
plays previous/current. Stage 2 freezes everything but the interaction head
and runs three-round circles of robot-synthesized scribbles, with the
background-filled mask standing in for the missing previous round in round 1.
"""
from __future__ import annotations

import logging

import numpy as np

from .core import (
    LabelMask, downsample_labels, rasterize_scribbles, to_stride_grid,
    upsample_map,
)
from .embedding import EmbeddingField
from .errors import EmptyReferenceError
from .evaluation import VideoSample
from .heads import (
    HeadParams, LossSchedule, bootstrapped_ce_loss, head_backward, head_forward,
    sgd_step, softmax_objects,
)
from .matching import MatchConfig, PixelSet, global_map, local_map
from .robot import RobotConfig, synthesize_scribbles
from .session import apply_rough_roi

logger = logging.getLogger(__name__)

Trace = list[tuple[int, float, float]]


class _EmbeddingCache:
    def __init__(self, provider):
        self.provider = provider
        self._fields: dict[tuple[str, int], EmbeddingField] = {}

    def get(self, video: VideoSample, t: int) -> EmbeddingField:
        key = (video.name, t)
        if key not in self._fields:
            self._fields[key] = self.provider.encode(video.frames.frame(t), t)
        return self._fields[key]


def _eligible(corpus: list[VideoSample]) -> list[VideoSample]:
    usable = []
    for video in corpus:
        if video.frames.n < 3:
            logger.warning("skipping %s: only %d frames", video.name, video.frames.n)
            continue
        usable.append(video)
    if not usable:
        raise EmptyReferenceError("no video in the corpus has three frames")
    return usable


def _stack_batch(field: EmbeddingField, extras_per_object: list[list[np.ndarray]]) -> np.ndarray:
    emb = np.moveaxis(field.grid.astype(np.float64), 2, 0)
    batch = []
    for extras in extras_per_object:
        planes = [emb] + [np.asarray(e, dtype=np.float64)[None] for e in extras]
        batch.append(np.concatenate(planes, axis=0))
    return np.stack(batch)


def train_stage1(params: HeadParams, corpus: list[VideoSample], steps: int,
                 provider, match_cfg: MatchConfig = MatchConfig(),
                 schedule: LossSchedule = LossSchedule(),
                 lr: float = 0.05, seed: int = 0,
                 min_ref_density: float = 0.05) -> tuple[HeadParams, Trace]:
    """SGD over random (reference, previous, current) frame triples.

    Reference pixel sets come from the reference frame's ground-truth mask.
    Each step keeps a random fraction of them (density drawn log-uniformly
    down to ``min_ref_density``) so the head sees global maps ranging from
    scribble-sparse to fully dense, matching what memory aggregation serves
    across interaction rounds.
    """
    rng = np.random.default_rng(seed)
    videos = _eligible(corpus)
    cache = _EmbeddingCache(provider)
    trace: Trace = []
    for step in range(steps):
        video = videos[rng.integers(len(videos))]
        n = video.frames.n
        ref_t = int(rng.integers(n))
        cur_t = int(rng.integers(1, n))
        prev_t = cur_t - 1
        stride = cache.get(video, 0).stride
        gt_ref = downsample_labels(video.gt[ref_t], stride)
        gt_prev = downsample_labels(video.gt[prev_t], stride)
        gt_cur = downsample_labels(video.gt[cur_t], stride)

        emb_ref = cache.get(video, ref_t)
        emb_prev = cache.get(video, prev_t)
        emb_cur = cache.get(video, cur_t)

        density = float(np.exp(rng.uniform(np.log(min_ref_density), 0.0)))
        extras = []
        for o in range(video.object_count):
            ref_cells = np.argwhere(gt_ref == o)
            if len(ref_cells):
                keep = max(1, int(round(density * len(ref_cells))))
                chosen = ref_cells[rng.choice(len(ref_cells), keep, replace=False)]
                g = global_map(emb_cur, emb_ref, PixelSet(ref_t, o, chosen, "mask")).grid
            else:
                g = np.ones(emb_cur.shape)
            prev_set = PixelSet.from_binary(gt_prev == o, prev_t, o, "mask")
            l = local_map(emb_cur, emb_prev, prev_set, match_cfg).grid
            extras.append([g, l, (gt_prev == o).astype(np.float64)])

        x = _stack_batch(emb_cur, extras)
        logits, cache_fw = head_forward(params, x, want_cache=True)
        probs = softmax_objects(logits)
        fraction = schedule.fraction_at(step)
        loss, dlogits = bootstrapped_ce_loss(probs, gt_cur, fraction)
        grads = head_backward(params, cache_fw, dlogits)
        sgd_step(params, grads, lr)
        trace.append((step, loss, fraction))
    return params, trace


def train_stage2(params: HeadParams, corpus: list[VideoSample], steps: int,
                 provider, robot_cfg: RobotConfig = RobotConfig(),
                 schedule: LossSchedule = LossSchedule(),
                 lr: float = 0.05, seed: int = 0,
                 roi_margin: float = 0.5) -> tuple[HeadParams, Trace]:
    """Round-based interaction-head training, three rounds per circle."""
    rng = np.random.default_rng(seed)
    videos = _eligible(corpus)
    cache = _EmbeddingCache(provider)
    trace: Trace = []
    step = 0
    while step < steps:
        video = videos[rng.integers(len(videos))]
        t = int(rng.integers(video.frames.n))
        field = cache.get(video, t)
        stride = field.stride
        h, w = field.shape
        H, W = video.frames.height, video.frames.width
        O = video.object_count
        gt_full = video.gt_mask(t)
        gt_stride = downsample_labels(video.gt[t], stride)

        prev_round_mask = np.full((h, w), 0, dtype=np.int32)
        pred_full: LabelMask | None = None
        for _ in range(3):
            scr = synthesize_scribbles(pred_full, gt_full, t, O, robot_cfg)
            if len(scr) == 0:
                break
            if pred_full is None:
                scr = apply_rough_roi(scr, H, W, roi_margin)
            channels = rasterize_scribbles(scr, H, W)
            extras = []
            for o in range(O):
                if o in channels:
                    pos = to_stride_grid(channels[o]["pos"], stride).astype(np.float64)
                    neg = to_stride_grid(channels[o]["neg"], stride).astype(np.float64)
                else:
                    pos = np.zeros((h, w))
                    neg = np.zeros((h, w))
                extras.append([pos, neg, (prev_round_mask == o).astype(np.float64)])

            x = _stack_batch(field, extras)
            logits, cache_fw = head_forward(params, x, want_cache=True)
            probs = softmax_objects(logits)
            fraction = schedule.fraction_at(step)
            loss, dlogits = bootstrapped_ce_loss(probs, gt_stride, fraction)
            grads = head_backward(params, cache_fw, dlogits)
            sgd_step(params, grads, lr)
            trace.append((step, loss, fraction))
            step += 1

            prev_round_mask = logits.argmax(axis=0).astype(np.int32)
            full_vals = np.stack([
                upsample_map(logits[o], stride, "bilinear")[:H, :W]
                for o in range(O)
            ])
            pred_full = LabelMask(full_vals.argmax(axis=0).astype(np.int32))
            if step >= steps:
                break
    return params, trace
