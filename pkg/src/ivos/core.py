"""Raster and annotation primitives: frames, masks, scalar maps, scribbles.

Everything here is resolution bookkeeping. Full resolution means image pixels;
stride resolution means the embedding grid (ceil(H/stride) x ceil(W/stride)).
All values are immutable after construction and safe to share across threads.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ValidationError

BACKGROUND = 0

RES_FULL = "full"
RES_STRIDE = "stride"
RES_LOCAL = "local"


@dataclass(frozen=True)
class FrameSequence:
    """An ordered stack of RGB frames, shape (n, H, W, 3) uint8."""

    frames: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.frames)
        if f.ndim != 4 or f.shape[0] < 1 or f.shape[3] != 3 or f.dtype != np.uint8:
            raise ValidationError(
                f"frames must be (n>=1, H, W, 3) uint8, got {f.shape} {f.dtype}"
            )
        object.__setattr__(self, "frames", f)

    @property
    def n(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    def frame(self, t: int) -> np.ndarray:
        return self.frames[t]


@dataclass(frozen=True)
class ScribbleStroke:
    """One polyline annotation: (x, y) points at full resolution.

    ``object_id`` is the object the stroke talks about; polarity "pos" marks
    pixels of that object, "neg" marks pixels that are not it. Negative
    strokes double as positive background evidence downstream.
    """

    object_id: int
    polarity: str
    points: tuple[tuple[int, int], ...]
    brush_radius: int = 0

    def __post_init__(self):
        if self.polarity not in ("pos", "neg"):
            raise ValidationError(f"polarity must be 'pos' or 'neg', got {self.polarity!r}")
        if self.object_id < 0:
            raise ValidationError(f"object id must be >= 0, got {self.object_id}")
        if len(self.points) < 2:
            raise ValidationError("a stroke needs at least 2 points")
        if self.brush_radius < 0:
            raise ValidationError("brush radius must be >= 0")
        object.__setattr__(
            self, "points", tuple((int(x), int(y)) for x, y in self.points)
        )


@dataclass(frozen=True)
class ScribbleSet:
    """All strokes a user (or the robot) drew on one frame in one round."""

    frame_index: int
    strokes: tuple[ScribbleStroke, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "strokes", tuple(self.strokes))

    def __len__(self) -> int:
        return len(self.strokes)

    def positive_objects(self) -> list[int]:
        return sorted({s.object_id for s in self.strokes if s.polarity == "pos"})


@dataclass(frozen=True)
class LabelMask:
    """Per-cell object ids; ``resolution`` records which grid it lives on."""

    grid: np.ndarray
    resolution: str = RES_FULL

    def __post_init__(self):
        g = np.asarray(self.grid)
        if g.ndim != 2:
            raise ValidationError(f"label grid must be 2-D, got shape {g.shape}")
        if g.size and g.min() < 0:
            raise ValidationError("label grid holds a negative object id")
        object.__setattr__(self, "grid", g.astype(np.int32, copy=False))

    def binary(self, object_id: int) -> np.ndarray:
        return self.grid == object_id


@dataclass(frozen=True)
class ScalarMap:
    """A per-cell value in [0, 1] attached to one object."""

    grid: np.ndarray
    object_id: int

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=np.float64)
        if g.ndim != 2:
            raise ValidationError(f"scalar map must be 2-D, got shape {g.shape}")
        if g.size and (g.min() < 0.0 or g.max() > 1.0):
            raise ValidationError("scalar map values must lie in [0, 1]")
        object.__setattr__(self, "grid", g)


# ---------------------------------------------------------------------------
# scribble rasterization


def _line_cells(p0: tuple[int, int], p1: tuple[int, int]) -> list[tuple[int, int]]:
    """Integer line stepping along the major axis, round-half-up."""
    x0, y0 = p0
    x1, y1 = p1
    steps = max(abs(x1 - x0), abs(y1 - y0))
    if steps == 0:
        return [(x0, y0)]
    cells = []
    for i in range(steps + 1):
        t = i / steps
        x = math.floor(x0 + t * (x1 - x0) + 0.5)
        y = math.floor(y0 + t * (y1 - y0) + 0.5)
        cells.append((x, y))
    return cells


def rasterize_stroke(stroke: ScribbleStroke, height: int, width: int) -> np.ndarray:
    """Draw one stroke onto a bool grid: polyline stepping plus Chebyshev dilation."""
    grid = np.zeros((height, width), dtype=bool)
    pts = stroke.points
    for a, b in zip(pts[:-1], pts[1:]):
        for x, y in _line_cells(a, b):
            grid[y, x] = True
    r = stroke.brush_radius
    if r > 0 and grid.any():
        ys, xs = np.nonzero(grid)
        dil = np.zeros_like(grid)
        for y, x in zip(ys, xs):
            dil[max(0, y - r): y + r + 1, max(0, x - r): x + r + 1] = True
        grid = dil
    return grid


def rasterize_scribbles(
    scribbles: ScribbleSet, height: int, width: int
) -> dict[int, dict[str, np.ndarray]]:
    """Rasterize a scribble set into per-object positive/negative bool grids.

    Out-of-bounds points are rejected naming the offending stroke, and two
    different objects may not claim the same cell positively.
    """
    for i, stroke in enumerate(scribbles.strokes):
        for x, y in stroke.points:
            if not (0 <= x < width and 0 <= y < height):
                raise ValidationError(
                    f"stroke {i}: point ({x}, {y}) outside {width}x{height} frame"
                )
    channels: dict[int, dict[str, np.ndarray]] = {}
    for stroke in scribbles.strokes:
        ch = channels.setdefault(
            stroke.object_id,
            {
                "pos": np.zeros((height, width), dtype=bool),
                "neg": np.zeros((height, width), dtype=bool),
            },
        )
        ch[stroke.polarity] |= rasterize_stroke(stroke, height, width)

    claimed = np.full((height, width), -1, dtype=np.int64)
    for obj in sorted(channels):
        pos = channels[obj]["pos"]
        clash = pos & (claimed >= 0)
        if clash.any():
            y, x = np.argwhere(clash)[0]
            other = claimed[y, x]
            raise ValidationError(
                f"objects {other} and {obj} both scribbled positively at ({x}, {y})"
            )
        claimed[pos] = obj
    return channels


def to_stride_grid(full_grid: np.ndarray, stride: int) -> np.ndarray:
    """OR-pool a full-resolution bool grid into ceil-divided stride cells."""
    if stride < 1:
        raise ValidationError(f"stride must be >= 1, got {stride}")
    g = np.asarray(full_grid, dtype=bool)
    H, W = g.shape
    h, w = ceil_div(H, stride), ceil_div(W, stride)
    padded = np.zeros((h * stride, w * stride), dtype=bool)
    padded[:H, :W] = g
    return padded.reshape(h, stride, w, stride).any(axis=(1, 3))


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


# ---------------------------------------------------------------------------
# resampling


def upsample_map(grid, factor: int, mode: str = "nearest") -> np.ndarray:
    """Scale a 2-D grid (or a ScalarMap's grid) up by an integer factor.

    Nearest replicates cells. Bilinear samples at output-cell centers
    (u = (i + 0.5) / factor - 0.5) with edge clamping, so output values never
    leave the input's [min, max] range.
    """
    if factor < 1:
        raise ValidationError(f"factor must be >= 1, got {factor}")
    if isinstance(grid, ScalarMap):
        grid = grid.grid
    g = np.asarray(grid, dtype=np.float64)
    if factor == 1:
        return g.copy()
    if mode == "nearest":
        return np.repeat(np.repeat(g, factor, axis=0), factor, axis=1)
    if mode != "bilinear":
        raise ValidationError(f"unknown upsample mode {mode!r}")
    h, w = g.shape
    out_h, out_w = h * factor, w * factor
    us = np.clip((np.arange(out_h) + 0.5) / factor - 0.5, 0.0, h - 1.0)
    vs = np.clip((np.arange(out_w) + 0.5) / factor - 0.5, 0.0, w - 1.0)
    u0 = np.floor(us).astype(np.int64)
    v0 = np.floor(vs).astype(np.int64)
    u1 = np.minimum(u0 + 1, h - 1)
    v1 = np.minimum(v0 + 1, w - 1)
    fu = (us - u0)[:, None]
    fv = (vs - v0)[None, :]
    top = g[u0][:, v0] * (1 - fv) + g[u0][:, v1] * fv
    bot = g[u1][:, v0] * (1 - fv) + g[u1][:, v1] * fv
    return top * (1 - fu) + bot * fu


def downsample_labels(grid: np.ndarray, stride: int) -> np.ndarray:
    """Sample labels at stride-cell centers (ceil-divided output dims)."""
    g = np.asarray(grid)
    H, W = g.shape
    rows = np.minimum(np.arange(ceil_div(H, stride)) * stride + stride // 2, H - 1)
    cols = np.minimum(np.arange(ceil_div(W, stride)) * stride + stride // 2, W - 1)
    return g[np.ix_(rows, cols)]


# ---------------------------------------------------------------------------
# external interfaces: PNG frame/mask directories and scribble JSON

_FRAME_RE = re.compile(r"^(\d+)\.png$")


def load_frames(directory: str | Path) -> FrameSequence:
    """Read numbered PNGs (00000.png, 00001.png, ...) as an RGB sequence."""
    directory = Path(directory)
    entries = []
    for p in directory.iterdir():
        m = _FRAME_RE.match(p.name)
        if m:
            entries.append((int(m.group(1)), p))
    if not entries:
        raise ValidationError(f"no numbered .png frames in {directory}")
    entries.sort()
    frames = []
    for _, p in entries:
        with Image.open(p) as im:
            frames.append(np.asarray(im.convert("RGB"), dtype=np.uint8))
    shapes = {f.shape for f in frames}
    if len(shapes) != 1:
        raise ValidationError(f"frames disagree on size: {sorted(shapes)}")
    return FrameSequence(np.stack(frames))


def save_frames(seq: FrameSequence, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for t in range(seq.n):
        Image.fromarray(seq.frame(t), "RGB").save(directory / f"{t:05d}.png")


def save_mask_png(mask: LabelMask, path: str | Path) -> None:
    """Write a label mask as single-channel 8-bit PNG (pixel value = object id)."""
    g = mask.grid
    if g.size and g.max() > 255:
        raise ValidationError("object ids above 255 cannot be stored as 8-bit PNG")
    Image.fromarray(g.astype(np.uint8), "L").save(path)


def load_mask_png(path: str | Path, resolution: str = RES_FULL) -> LabelMask:
    with Image.open(path) as im:
        grid = np.asarray(im.convert("L"), dtype=np.int32)
    return LabelMask(grid, resolution)


def scribbles_to_json(scribbles: ScribbleSet) -> str:
    """Canonical compact JSON; key order and separators are part of the format."""
    payload = {
        "frame": scribbles.frame_index,
        "strokes": [
            {
                "object": s.object_id,
                "polarity": s.polarity,
                "radius": s.brush_radius,
                "points": [[x, y] for x, y in s.points],
            }
            for s in scribbles.strokes
        ],
    }
    return json.dumps(payload, separators=(",", ":"))


def scribbles_from_json(text: str) -> ScribbleSet:
    try:
        payload = json.loads(text)
        strokes = tuple(
            ScribbleStroke(
                object_id=int(s["object"]),
                polarity=str(s["polarity"]),
                points=tuple((int(x), int(y)) for x, y in s["points"]),
                brush_radius=int(s.get("radius", 0)),
            )
            for s in payload["strokes"]
        )
        return ScribbleSet(frame_index=int(payload["frame"]), strokes=strokes)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed scribble JSON: {exc}") from exc
