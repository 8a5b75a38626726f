"""Per-frame pixel embedding fields, the normalized pixel distance, and the
embedding file format.

Distances between embedding vectors use the squashed squared Euclidean norm
1 - 2 / (1 + exp(||e_p - e_q||^2)), which maps [0, inf) onto [0, 1). In double
precision the squash saturates to exactly 1.0 once the squared norm exceeds
~38; callers that need strict-inequality behavior must keep norms below that.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ceil_div
from .errors import ContractViolation, FormatError

MAGIC = b"MAEF"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHIIII")


@dataclass(frozen=True)
class EmbeddingField:
    """A (h, w, D) float32 grid of embedding vectors at a given stride."""

    grid: np.ndarray
    stride: int
    frame_index: int = 0

    def __post_init__(self):
        g = np.ascontiguousarray(self.grid, dtype=np.float32)
        if g.ndim != 3:
            raise ContractViolation(f"embedding grid must be (h, w, D), got {g.shape}")
        if not np.isfinite(g).all():
            raise ContractViolation("embedding grid holds non-finite values")
        if self.stride < 1:
            raise ContractViolation(f"stride must be >= 1, got {self.stride}")
        object.__setattr__(self, "grid", g)

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape[:2]

    @property
    def dim(self) -> int:
        return self.grid.shape[2]


def squash_sq_distances(sq: np.ndarray | float) -> np.ndarray | float:
    """Map squared embedding norms to distances in [0, 1)."""
    with np.errstate(over="ignore"):
        return 1.0 - 2.0 / (1.0 + np.exp(np.asarray(sq, dtype=np.float64)))


def pixel_distance(e_p: np.ndarray, e_q: np.ndarray) -> float:
    """Normalized distance between two embedding vectors.

    Symmetric, zero iff the vectors are equal, and monotone in the squared
    Euclidean norm.
    """
    a = np.asarray(e_p, dtype=np.float64)
    b = np.asarray(e_q, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ContractViolation(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(squash_sq_distances(np.sum((a - b) ** 2)))


# ---------------------------------------------------------------------------
# providers

_RAW_FEATURES = 14  # mean RGB (3) + cell center x,y (2) + 3x3 gradient magnitudes (9)


class FeatureEncoder:
    """Deterministic hand-crafted embedding provider.

    Per stride cell: mean RGB, normalized cell-center coordinates, and the
    3x3 neighborhood of per-cell intensity gradient magnitudes, pushed
    through a fixed seeded linear projection and L2-normalized to ``gain``.
    Stands in for a learned backbone so the whole pipeline runs untrained.
    """

    def __init__(self, dim: int = 100, stride: int = 4, seed: int = 0, gain: float = 2.0):
        self.dim = dim
        self.stride = stride
        self.seed = seed
        self.gain = gain
        rng = np.random.default_rng(seed)
        self._projection = rng.standard_normal((_RAW_FEATURES, dim)) / np.sqrt(_RAW_FEATURES)

    def encode(self, frame: np.ndarray, frame_index: int = 0) -> EmbeddingField:
        frame = np.asarray(frame)
        if frame.ndim != 3 or frame.shape[2] != 3:
            raise ContractViolation(f"frame must be (H, W, 3), got {frame.shape}")
        H, W = frame.shape[:2]
        s = self.stride
        h, w = ceil_div(H, s), ceil_div(W, s)

        rgb = frame.astype(np.float64) / 255.0
        pad_h, pad_w = h * s - H, w * s - W
        rgb = np.pad(rgb, ((0, pad_h), (0, pad_w), (0, 0)), mode="edge")
        cell_rgb = rgb.reshape(h, s, w, s, 3).mean(axis=(1, 3))

        ys = (np.arange(h) + 0.5) / h
        xs = (np.arange(w) + 0.5) / w
        coord_y = np.broadcast_to(ys[:, None], (h, w))
        coord_x = np.broadcast_to(xs[None, :], (h, w))

        intensity = cell_rgb.mean(axis=2)
        gy = np.gradient(intensity, axis=0)
        gx = np.gradient(intensity, axis=1)
        grad = np.sqrt(gx * gx + gy * gy)
        padded = np.pad(grad, 1, mode="edge")
        neighborhood = np.stack(
            [padded[1 + dy: 1 + dy + h, 1 + dx: 1 + dx + w]
             for dy in (-1, 0, 1) for dx in (-1, 0, 1)],
            axis=2,
        )

        raw = np.concatenate(
            [cell_rgb, coord_x[..., None], coord_y[..., None], neighborhood], axis=2
        )
        projected = raw @ self._projection
        norms = np.linalg.norm(projected, axis=2, keepdims=True)
        scale = np.where(norms > 1e-12, self.gain / np.maximum(norms, 1e-12), 0.0)
        return EmbeddingField(projected * scale, stride=s, frame_index=frame_index)


def encode_frame(provider, frame: np.ndarray, frame_index: int = 0) -> EmbeddingField:
    """Run a provider on one frame; stride and dimension come from its config."""
    return provider.encode(frame, frame_index)


class FileEmbeddingProvider:
    """Serves precomputed fields from <index:05d>.maef files in a directory."""

    def __init__(self, directory: str | Path, stride: int = 4, dim: int | None = None):
        self.directory = Path(directory)
        self.stride = stride
        self.dim = dim

    def encode(self, frame: np.ndarray, frame_index: int = 0) -> EmbeddingField:
        path = self.directory / f"{frame_index:05d}.maef"
        if not path.exists():
            raise FormatError(f"no embedding file for frame {frame_index} at {path}")
        field = load_embeddings(path)
        if self.dim is None:
            self.dim = field.dim
        return EmbeddingField(field.grid, field.stride, frame_index)


# ---------------------------------------------------------------------------
# embedding file format


def save_embeddings(field: EmbeddingField, path: str | Path) -> None:
    h, w, d = field.grid.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, h, w, d, field.stride))
        fh.write(field.grid.astype("<f4").tobytes(order="C"))


def load_embeddings(path: str | Path) -> EmbeddingField:
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise FormatError(f"{path}: truncated header")
        magic, version, h, w, d, stride = _HEADER.unpack(header)
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        payload = fh.read(h * w * d * 4 + 1)
    if len(payload) != h * w * d * 4:
        raise FormatError(f"{path}: payload size mismatch for dims {(h, w, d)}")
    grid = np.frombuffer(payload, dtype="<f4").reshape(h, w, d).copy()
    return EmbeddingField(grid, stride=stride)


def save_scalar_map(grid: np.ndarray, path: str | Path, stride: int = 1) -> None:
    """Scalar-map persistence reuses the embedding format with D=1."""
    g = np.asarray(grid, dtype=np.float32)[..., None]
    save_embeddings(EmbeddingField(g, stride=stride), path)


def load_scalar_map(path: str | Path) -> np.ndarray:
    field = load_embeddings(path)
    if field.dim != 1:
        raise FormatError(f"{path}: expected scalar-map payload (D=1), got D={field.dim}")
    return field.grid[..., 0].astype(np.float64)
