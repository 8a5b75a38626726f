"""Distance-map kernels: global (exhaustive), local (windowed), and the
scribble-augmenting windowed map.

All three reduce to "per output cell, the minimum pixel distance to some set
of reference cells", differing in which field the references come from and
whether a Chebyshev window restricts the candidates. The squash that turns
squared norms into [0,1) distances is monotone, so every kernel minimizes the
raw squared norm first and squashes once; this is exactly equal (bit for bit)
to squashing each pair and then minimizing.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ScalarMap, ceil_div
from .embedding import EmbeddingField, squash_sq_distances
from .errors import ContractViolation, EmptyReferenceError

_ROW_CHUNK = 4096  # bounds the (cells x refs) distance block


@dataclass(frozen=True)
class PixelSet:
    """Reference cells at embedding resolution for one object on one frame."""

    frame_index: int
    object_id: int
    cells: np.ndarray  # (m, 2) int64 rows, cols
    origin: str = "scribble"  # "scribble" | "mask"

    def __post_init__(self):
        c = np.asarray(self.cells, dtype=np.int64).reshape(-1, 2)
        object.__setattr__(self, "cells", c)

    def __len__(self) -> int:
        return self.cells.shape[0]

    @classmethod
    def from_binary(cls, grid: np.ndarray, frame_index: int, object_id: int,
                    origin: str = "scribble") -> "PixelSet":
        rows, cols = np.nonzero(np.asarray(grid, dtype=bool))
        return cls(frame_index, object_id, np.stack([rows, cols], axis=1), origin)


@dataclass(frozen=True)
class MatchConfig:
    """window: Chebyshev radius in embedding cells; local_downsample: decimation
    factor applied to the local map only."""

    window: int = 12
    local_downsample: int = 2

    def __post_init__(self):
        if self.window < 1:
            raise ContractViolation(f"window must be >= 1, got {self.window}")
        if self.local_downsample < 1:
            raise ContractViolation(
                f"local_downsample must be >= 1, got {self.local_downsample}"
            )


def _check_aligned(a: EmbeddingField, b: EmbeddingField) -> None:
    if a.dim != b.dim or a.stride != b.stride or a.shape != b.shape:
        raise ContractViolation(
            f"fields disagree: {a.shape}xD{a.dim}/s{a.stride} vs "
            f"{b.shape}xD{b.dim}/s{b.stride}"
        )


def _check_cells(cells: np.ndarray, shape: tuple[int, int]) -> None:
    if len(cells) == 0:
        return
    h, w = shape
    if cells[:, 0].min() < 0 or cells[:, 0].max() >= h \
            or cells[:, 1].min() < 0 or cells[:, 1].max() >= w:
        raise ContractViolation(f"reference cells outside {h}x{w} grid")


def _min_sq_distances(current: np.ndarray, refs: np.ndarray,
                      window: int | None, ref_cells: np.ndarray) -> np.ndarray:
    """Per-cell min squared norm to the refs, inf where the window is empty."""
    h, w, d = current.shape
    cur = current.reshape(-1, d).astype(np.float64)
    refs = refs.astype(np.float64)
    out = np.empty(h * w, dtype=np.float64)
    if window is not None:
        rows = np.repeat(np.arange(h), w)
        cols = np.tile(np.arange(w), h)
    for start in range(0, h * w, _ROW_CHUNK):
        stop = min(start + _ROW_CHUNK, h * w)
        diff = cur[start:stop, None, :] - refs[None, :, :]
        sq = (diff ** 2).sum(axis=-1)
        if window is not None:
            in_win = (
                (np.abs(rows[start:stop, None] - ref_cells[None, :, 0]) <= window)
                & (np.abs(cols[start:stop, None] - ref_cells[None, :, 1]) <= window)
            )
            sq = np.where(in_win, sq, np.inf)
        out[start:stop] = sq.min(axis=1)
    return out.reshape(h, w)


def global_map(current: EmbeddingField, reference: EmbeddingField,
               ref_pixels: PixelSet) -> ScalarMap:
    """Exhaustive nearest-reference distance map over the whole grid."""
    _check_aligned(current, reference)
    if len(ref_pixels) == 0:
        raise EmptyReferenceError(
            f"no reference pixels for object {ref_pixels.object_id}"
        )
    _check_cells(ref_pixels.cells, reference.shape)
    refs = reference.grid[ref_pixels.cells[:, 0], ref_pixels.cells[:, 1]]
    sq = _min_sq_distances(current.grid, refs, None, ref_pixels.cells)
    return ScalarMap(squash_sq_distances(sq), ref_pixels.object_id)


def _windowed_map(field: np.ndarray, ref_field: np.ndarray, cells: np.ndarray,
                  window: int) -> np.ndarray:
    if len(cells) == 0:
        return np.ones(field.shape[:2], dtype=np.float64)
    refs = ref_field[cells[:, 0], cells[:, 1]]
    sq = _min_sq_distances(field, refs, window, cells)
    out = np.asarray(squash_sq_distances(sq))
    out[~np.isfinite(sq)] = 1.0
    return out


def _decimate_cells(cells: np.ndarray, factor: int) -> np.ndarray:
    if len(cells) == 0:
        return cells
    return np.unique(cells // factor, axis=0)


def local_map(current: EmbeddingField, previous: EmbeddingField,
              prev_pixels: PixelSet, cfg: MatchConfig) -> ScalarMap:
    """Windowed nearest-neighbor distance to the previous frame's object cells.

    Cells whose window holds no reference are exactly 1. With downsampling
    the search runs on the decimated grid (effective radius ceil(k/f)) and is
    nearest-upsampled back to embedding resolution.
    """
    _check_aligned(current, previous)
    _check_cells(prev_pixels.cells, previous.shape)
    f = cfg.local_downsample
    if f == 1:
        grid = _windowed_map(current.grid, previous.grid, prev_pixels.cells, cfg.window)
        return ScalarMap(grid, prev_pixels.object_id)
    h, w = current.shape
    small = _windowed_map(
        current.grid[::f, ::f],
        previous.grid[::f, ::f],
        _decimate_cells(prev_pixels.cells, f),
        ceil_div(cfg.window, f),
    )
    grid = np.repeat(np.repeat(small, f, axis=0), f, axis=1)[:h, :w]
    return ScalarMap(grid, prev_pixels.object_id)


def augmented_map(field: EmbeddingField, scribble_pixels: PixelSet,
                  cfg: MatchConfig) -> ScalarMap:
    """Spread sparse scribble evidence over the interactive frame.

    Same windowed-minimum rule as the local map, against the frame's own
    scribbled cells, always at full embedding resolution.
    """
    _check_cells(scribble_pixels.cells, field.shape)
    grid = _windowed_map(field.grid, field.grid, scribble_pixels.cells, cfg.window)
    return ScalarMap(grid, scribble_pixels.object_id)
