"""Shallow trainable segmentation heads.

Each head is a stack of depthwise-separable convolution layers (depthwise
k x k, pointwise 1 x 1, optional per-channel affine normalization, ReLU)
followed by a 1 x 1 projection to a single logit channel. One parameter set
is shared across objects; per-object logits are stacked and softmaxed over
the object dimension. Forward and backward passes are plain numpy in double
precision so analytic gradients can be checked against finite differences.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import LabelMask
from .embedding import EmbeddingField
from .errors import ContractViolation, FormatError, IvosError

_CKPT_MAGIC = b"IVHD"
_CKPT_HEADER = struct.Struct("<4sHHIIBI")

PROPAGATION_EXTRA_CHANNELS = 3  # global map, local map, previous-frame mask
INTERACTION_EXTRA_CHANNELS = 3  # positive scribbles, negative scribbles, prev-round mask


class TrainingAbort(IvosError):
    """Raised when gradients blow up and the run cannot continue."""


@dataclass(frozen=True)
class HeadConfig:
    layers: int = 2
    channels: int = 32
    kernel: int = 3
    norm: bool = True

    def __post_init__(self):
        if self.layers < 1:
            raise ContractViolation(f"layers must be >= 1, got {self.layers}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ContractViolation(f"kernel must be odd, got {self.kernel}")
        if self.channels < 1:
            raise ContractViolation(f"channels must be >= 1, got {self.channels}")


class HeadParams:
    """Parameter arrays in declaration order; mutated in place by SGD."""

    def __init__(self, config: HeadConfig, in_channels: int, seed: int = 0):
        self.config = config
        self.in_channels = in_channels
        rng = np.random.default_rng(seed)
        k = config.kernel
        self.depthwise: list[np.ndarray] = []
        self.pointwise: list[np.ndarray] = []
        self.bias: list[np.ndarray] = []
        self.gamma: list[np.ndarray] = []
        self.beta: list[np.ndarray] = []
        c_in = in_channels
        for _ in range(config.layers):
            self.depthwise.append(_he_uniform(rng, (c_in, k, k), fan_in=k * k))
            self.pointwise.append(
                _he_uniform(rng, (config.channels, c_in), fan_in=c_in)
            )
            self.bias.append(np.zeros(config.channels))
            self.gamma.append(np.ones(config.channels))
            self.beta.append(np.zeros(config.channels))
            c_in = config.channels
        self.final_weight = _he_uniform(rng, (config.channels,), fan_in=config.channels)
        self.final_bias = np.zeros(1)

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for i in range(self.config.layers):
            out.append((f"depthwise{i}", self.depthwise[i]))
            out.append((f"pointwise{i}", self.pointwise[i]))
            out.append((f"bias{i}", self.bias[i]))
            if self.config.norm:
                out.append((f"gamma{i}", self.gamma[i]))
                out.append((f"beta{i}", self.beta[i]))
        out.append(("final_weight", self.final_weight))
        out.append(("final_bias", self.final_bias))
        return out

    def zeros_like(self) -> "HeadParams":
        other = HeadParams.__new__(HeadParams)
        other.config = self.config
        other.in_channels = self.in_channels
        other.depthwise = [np.zeros_like(a) for a in self.depthwise]
        other.pointwise = [np.zeros_like(a) for a in self.pointwise]
        other.bias = [np.zeros_like(a) for a in self.bias]
        other.gamma = [np.zeros_like(a) for a in self.gamma]
        other.beta = [np.zeros_like(a) for a in self.beta]
        other.final_weight = np.zeros_like(self.final_weight)
        other.final_bias = np.zeros_like(self.final_bias)
        return other


def _he_uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


# ---------------------------------------------------------------------------
# forward / backward


def _depthwise_corr(x: np.ndarray, kernels: np.ndarray) -> np.ndarray:
    """Per-channel same-size correlation, zero padding, stride 1."""
    k = kernels.shape[-1]
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))
    return np.einsum("bchwuv,cuv->bchw", windows, kernels)


def _depthwise_kernel_grad(x: np.ndarray, dout: np.ndarray, k: int) -> np.ndarray:
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))
    return np.einsum("bchwuv,bchw->cuv", windows, dout)


def head_forward(params: HeadParams, x: np.ndarray,
                 want_cache: bool = False):
    """Run the head on a (B, C_in, h, w) batch; returns (B, h, w) logits."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4 or x.shape[1] != params.in_channels:
        raise ContractViolation(
            f"input must be (B, {params.in_channels}, h, w), got {x.shape}"
        )
    cfg = params.config
    cache = {"inputs": [], "depthwise_out": [], "raw": [], "pre_relu": []}
    for i in range(cfg.layers):
        xd = _depthwise_corr(x, params.depthwise[i])
        raw = np.einsum("oc,bchw->bohw", params.pointwise[i], xd) \
            + params.bias[i][None, :, None, None]
        if cfg.norm:
            pre = params.gamma[i][None, :, None, None] * raw \
                + params.beta[i][None, :, None, None]
        else:
            pre = raw
        if want_cache:
            cache["inputs"].append(x)
            cache["depthwise_out"].append(xd)
            cache["raw"].append(raw)
            cache["pre_relu"].append(pre)
        x = np.maximum(pre, 0.0)
    logits = np.einsum("c,bchw->bhw", params.final_weight, x) + params.final_bias[0]
    if want_cache:
        cache["features"] = x
        return logits, cache
    return logits


def head_backward(params: HeadParams, cache: dict, dlogits: np.ndarray) -> HeadParams:
    """Analytic gradients for every parameter, given d(loss)/d(logits)."""
    cfg = params.config
    grads = params.zeros_like()
    grads.final_weight[:] = np.einsum("bhw,bchw->c", dlogits, cache["features"])
    grads.final_bias[0] = dlogits.sum()
    dx = params.final_weight[None, :, None, None] * dlogits[:, None, :, :]
    for i in reversed(range(cfg.layers)):
        dx = dx * (cache["pre_relu"][i] > 0)
        if cfg.norm:
            grads.gamma[i][:] = np.einsum("bchw,bchw->c", dx, cache["raw"][i])
            grads.beta[i][:] = dx.sum(axis=(0, 2, 3))
            dx = params.gamma[i][None, :, None, None] * dx
        grads.bias[i][:] = dx.sum(axis=(0, 2, 3))
        grads.pointwise[i][:] = np.einsum("bohw,bchw->oc", dx, cache["depthwise_out"][i])
        dxd = np.einsum("oc,bohw->bchw", params.pointwise[i], dx)
        grads.depthwise[i][:] = _depthwise_kernel_grad(
            cache["inputs"][i], dxd, cfg.kernel
        )
        dx = _depthwise_corr(dxd, params.depthwise[i][:, ::-1, ::-1])
    return grads


def _stack_channels(field: EmbeddingField, extras: list[np.ndarray]) -> np.ndarray:
    h, w = field.shape
    planes = [np.moveaxis(field.grid.astype(np.float64), 2, 0)]
    for e in extras:
        e = np.asarray(e, dtype=np.float64)
        if e.shape != (h, w):
            raise ContractViolation(f"extra channel shape {e.shape} != field {h, w}")
        planes.append(e[None])
    return np.concatenate(planes, axis=0)[None]


def propagation_forward(params: HeadParams, field: EmbeddingField,
                        global_map: np.ndarray, local_map: np.ndarray,
                        prev_mask: np.ndarray) -> np.ndarray:
    """One object's propagation logits from [embedding | G | L | prev mask]."""
    x = _stack_channels(field, [global_map, local_map, prev_mask])
    return head_forward(params, x)[0]


def interaction_forward(params: HeadParams, field: EmbeddingField,
                        pos_scribbles: np.ndarray, neg_scribbles: np.ndarray,
                        prev_round_mask: np.ndarray) -> np.ndarray:
    """One object's interaction logits from [embedding | pos | neg | prev mask]."""
    x = _stack_channels(field, [pos_scribbles, neg_scribbles, prev_round_mask])
    return head_forward(params, x)[0]


def softmax_objects(logits: np.ndarray) -> np.ndarray:
    """Softmax over the leading (object) axis, stabilized by max subtraction."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 3 or z.shape[0] < 1:
        raise ContractViolation(f"logits must be (O, h, w), got {z.shape}")
    z = z - z.max(axis=0, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=0, keepdims=True)


def bootstrapped_ce_loss(probs: np.ndarray, target: LabelMask | np.ndarray,
                         fraction: float) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the hardest ceil(fraction * count) pixels.

    Returns the loss and its gradient with respect to the stacked logits;
    the gradient is nonzero only on the selected pixels.
    """
    if not 0.0 < fraction <= 1.0:
        raise ContractViolation(f"fraction must be in (0, 1], got {fraction}")
    tgt = target.grid if isinstance(target, LabelMask) else np.asarray(target)
    O, h, w = probs.shape
    if tgt.shape != (h, w) or tgt.size == 0:
        raise ContractViolation(f"target shape {tgt.shape} unusable for probs {probs.shape}")
    if tgt.min() < 0 or tgt.max() >= O:
        raise ContractViolation("target labels outside the object range")
    flat_p = probs.reshape(O, -1)
    flat_t = tgt.reshape(-1)
    idx = np.arange(flat_t.size)
    p_true = flat_p[flat_t, idx]
    ce = -np.log(np.maximum(p_true, 1e-300))
    m = int(np.ceil(fraction * flat_t.size))
    order = np.argsort(-ce, kind="stable")[:m]
    loss = float(ce[order].mean())
    dlogits = np.zeros_like(flat_p)
    sel_onehot = np.zeros_like(flat_p)
    sel_onehot[flat_t[order], order] = 1.0
    mask = np.zeros(flat_t.size, dtype=bool)
    mask[order] = True
    dlogits[:, mask] = (flat_p[:, mask] - sel_onehot[:, mask]) / m
    return loss, dlogits.reshape(O, h, w)


def sgd_step(params: HeadParams, grads: HeadParams, lr: float) -> HeadParams:
    for (_, p), (name, g) in zip(params.named_arrays(), grads.named_arrays()):
        if not np.isfinite(g).all():
            raise TrainingAbort(f"non-finite gradient in {name}")
        p -= lr * g
    return params


# ---------------------------------------------------------------------------
# loss schedule, checkpoints, traces


@dataclass(frozen=True)
class LossSchedule:
    """Linear ramp of the bootstrapped-CE hard-pixel fraction."""

    start_fraction: float = 1.0
    end_fraction: float = 0.15
    ramp_steps: int = 50000

    def __post_init__(self):
        if not (0.0 < self.end_fraction <= self.start_fraction <= 1.0):
            raise ContractViolation(
                f"need 0 < end <= start <= 1, got {self.start_fraction}, {self.end_fraction}"
            )
        if self.ramp_steps < 1:
            raise ContractViolation("ramp_steps must be >= 1")

    def fraction_at(self, step: int) -> float:
        t = min(max(step, 0), self.ramp_steps) / self.ramp_steps
        return self.start_fraction + t * (self.end_fraction - self.start_fraction)


def save_checkpoint(params: HeadParams, path: str | Path) -> None:
    cfg = params.config
    with open(path, "wb") as fh:
        fh.write(_CKPT_HEADER.pack(
            _CKPT_MAGIC, 1, cfg.layers, cfg.channels, cfg.kernel,
            1 if cfg.norm else 0, params.in_channels,
        ))
        for _, arr in params.named_arrays():
            fh.write(arr.astype("<f4").tobytes(order="C"))


def load_checkpoint(path: str | Path) -> HeadParams:
    with open(path, "rb") as fh:
        header = fh.read(_CKPT_HEADER.size)
        if len(header) != _CKPT_HEADER.size:
            raise FormatError(f"{path}: truncated checkpoint header")
        magic, version, layers, channels, kernel, norm, in_channels = \
            _CKPT_HEADER.unpack(header)
        if magic != _CKPT_MAGIC or version != 1:
            raise FormatError(f"{path}: not a head checkpoint")
        params = HeadParams(
            HeadConfig(layers=layers, channels=channels, kernel=kernel, norm=bool(norm)),
            in_channels=in_channels,
        )
        for name, arr in params.named_arrays():
            raw = fh.read(arr.size * 4)
            if len(raw) != arr.size * 4:
                raise FormatError(f"{path}: truncated while reading {name}")
            arr[...] = np.frombuffer(raw, dtype="<f4").reshape(arr.shape)
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after parameters")
    return params


def save_loss_trace(trace: list[tuple[int, float, float]], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "fraction"])
        writer.writerows(trace)
