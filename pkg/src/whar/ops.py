"""Inference-time neural primitives on float32 ndarrays.

Convolutions are cross-correlations (no kernel flip), matching the
framework convention the weights are exported from. "same" padding pads
symmetrically with zeros, putting the extra sample on the trailing side
when the total is odd, so exported weights reproduce shapes bit-stably.
All functions are pure and reentrant.

Layouts (no batch axis; the engine processes one window at a time):
    1d: x (C_in, L),      w (C_out, C_in/groups, K)
    2d: x (C_in, H, W),   w (C_out, C_in/groups, KH, KW)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class ConvSpec:
    dims: int
    in_ch: int
    out_ch: int
    kernel: tuple
    stride: tuple
    padding: str = "valid"
    groups: int = 1

    def __post_init__(self):
        if self.dims not in (1, 2):
            raise ConfigError(f"dims must be 1 or 2, got {self.dims}")
        kernel = _as_tuple(self.kernel, self.dims)
        stride = _as_tuple(self.stride, self.dims)
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "stride", stride)
        if self.padding not in ("valid", "same"):
            raise ConfigError(f"padding must be 'valid' or 'same', got {self.padding!r}")
        if self.groups < 1 or self.in_ch % self.groups or self.out_ch % self.groups:
            raise ConfigError(f"groups={self.groups} must divide in_ch={self.in_ch} "
                              f"and out_ch={self.out_ch}")
        if any(k < 1 for k in kernel) or any(s < 1 for s in stride):
            raise ConfigError(f"kernel {kernel} and stride {stride} must be >= 1")


@dataclass(frozen=True)
class BnParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5

    def __post_init__(self):
        n = len(self.gamma)
        for name in ("beta", "running_mean", "running_var"):
            if len(getattr(self, name)) != n:
                raise ShapeError(f"{name} length {len(getattr(self, name))} != {n}")
        if np.any(np.asarray(self.running_var) < 0):
            raise ConfigError("running_var must be nonnegative")
        if self.eps <= 0:
            raise ConfigError("eps must be positive")


def _as_tuple(v, dims):
    if np.isscalar(v):
        return (int(v),) * dims
    t = tuple(int(x) for x in v)
    if len(t) != dims:
        raise ConfigError(f"expected {dims} extents, got {t}")
    return t


def _same_pad(extent, kernel, stride):
    out = -(-extent // stride)
    total = max((out - 1) * stride + kernel - extent, 0)
    return total // 2, total - total // 2


def conv_out_len(extent, kernel, stride, padding):
    if padding == "same":
        lo, hi = _same_pad(extent, kernel, stride)
        extent = extent + lo + hi
    if extent < kernel:
        raise ShapeError(f"spatial extent {extent} smaller than kernel {kernel}")
    return (extent - kernel) // stride + 1


def _windows(x, spec: ConvSpec):
    spatial_axes = tuple(range(1, 1 + spec.dims))
    if spec.padding == "same":
        pads = [(0, 0)] + [list(_same_pad(x.shape[a], spec.kernel[a - 1], spec.stride[a - 1]))
                           for a in spatial_axes]
        x = np.pad(x, pads)
    for a in spatial_axes:
        if x.shape[a] < spec.kernel[a - 1]:
            raise ShapeError(f"input extent {x.shape[a]} smaller than kernel "
                             f"{spec.kernel[a - 1]} on axis {a}")
    win = np.lib.stride_tricks.sliding_window_view(x, spec.kernel, axis=spatial_axes)
    if spec.dims == 1:
        win = win[:, ::spec.stride[0]]
    else:
        win = win[:, ::spec.stride[0], ::spec.stride[1]]
    return win


def conv(x: np.ndarray, w: np.ndarray, b: np.ndarray | None, spec: ConvSpec) -> np.ndarray:
    """Strided cross-correlation with optional per-output-channel bias."""
    x = np.asarray(x, dtype=np.float32)
    w = np.asarray(w, dtype=np.float32)
    if x.ndim != spec.dims + 1 or x.shape[0] != spec.in_ch:
        raise ShapeError(f"input {x.shape} does not match spec "
                         f"(in_ch={spec.in_ch}, dims={spec.dims})")
    if w.shape != (spec.out_ch, spec.in_ch // spec.groups) + spec.kernel:
        raise ShapeError(f"weights {w.shape} do not match spec "
                         f"{(spec.out_ch, spec.in_ch // spec.groups) + spec.kernel}")
    if b is not None and np.asarray(b).shape != (spec.out_ch,):
        raise ShapeError(f"bias {np.asarray(b).shape} must be ({spec.out_ch},)")

    win = _windows(x, spec)  # (C_in, *out, *kernel)
    kernel_axes = tuple(range(win.ndim - spec.dims, win.ndim))
    if spec.groups == 1:
        out = np.tensordot(w, win, axes=([1] + list(range(2, 2 + spec.dims)),
                                         [0] + list(kernel_axes)))
    elif spec.groups == spec.in_ch == spec.out_ch:
        # depthwise fast path
        if spec.dims == 1:
            out = np.einsum("clk,ck->cl", win, w[:, 0], optimize=True)
        else:
            out = np.einsum("chwkl,ckl->chw", win, w[:, 0], optimize=True)
    else:
        cpg_in, cpg_out = spec.in_ch // spec.groups, spec.out_ch // spec.groups
        parts = []
        for g in range(spec.groups):
            wg = w[g * cpg_out:(g + 1) * cpg_out]
            ig = win[g * cpg_in:(g + 1) * cpg_in]
            parts.append(np.tensordot(wg, ig, axes=([1] + list(range(2, 2 + spec.dims)),
                                                    [0] + list(kernel_axes))))
        out = np.concatenate(parts, axis=0)
    if b is not None:
        out = out + np.asarray(b, dtype=np.float32).reshape((-1,) + (1,) * spec.dims)
    return np.ascontiguousarray(out, dtype=np.float32)


def maxpool(x: np.ndarray, kernel, stride, dims: int) -> np.ndarray:
    """Max pooling with valid semantics (the tail that does not fill a
    window is dropped)."""
    x = np.asarray(x, dtype=np.float32)
    kernel = _as_tuple(kernel, dims)
    stride = _as_tuple(stride, dims)
    if x.ndim != dims + 1:
        raise ShapeError(f"expected {dims + 1}-d input, got {x.shape}")
    for a in range(dims):
        if x.shape[a + 1] < kernel[a]:
            raise ShapeError(f"pool kernel {kernel[a]} exceeds extent {x.shape[a + 1]}")
    win = np.lib.stride_tricks.sliding_window_view(x, kernel, axis=tuple(range(1, dims + 1)))
    if dims == 1:
        win = win[:, ::stride[0]]
        return win.max(axis=-1)
    win = win[:, ::stride[0], ::stride[1]]
    return win.max(axis=(-2, -1))


def linear(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Dense layer: w @ x + b with w shaped (out, in)."""
    x = np.asarray(x, dtype=np.float32)
    w = np.asarray(w, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    if x.ndim != 1 or w.ndim != 2 or w.shape[1] != x.shape[0] or b.shape != (w.shape[0],):
        raise ShapeError(f"linear shapes disagree: x {x.shape}, w {w.shape}, b {b.shape}")
    return w @ x + b


def activation(x: np.ndarray, kind: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float32)
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "sigmoid":
        return expit(x)
    if kind == "hardsigmoid":
        return np.clip((x + 3.0) / 6.0, 0.0, 1.0).astype(np.float32)
    if kind == "hardswish":
        return x * np.clip((x + 3.0) / 6.0, 0.0, 1.0).astype(np.float32)
    if kind == "softmax":
        shifted = x - x.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=-1, keepdims=True)
    raise ConfigError(f"unknown activation {kind!r}")


def batchnorm_fold(w: np.ndarray, b: np.ndarray | None, bn: BnParams):
    """Fold an inference-time batchnorm into the preceding conv/linear.

    Returns (w', b') such that applying them equals conv -> batchnorm.
    """
    w = np.asarray(w, dtype=np.float32)
    if w.shape[0] != len(bn.gamma):
        raise ShapeError(f"weight out_ch {w.shape[0]} != bn channels {len(bn.gamma)}")
    gamma = np.asarray(bn.gamma, dtype=np.float32)
    beta = np.asarray(bn.beta, dtype=np.float32)
    mean = np.asarray(bn.running_mean, dtype=np.float32)
    var = np.asarray(bn.running_var, dtype=np.float32)
    scale = gamma / np.sqrt(var + np.float32(bn.eps))
    w_folded = w * scale.reshape((-1,) + (1,) * (w.ndim - 1))
    b = np.zeros(w.shape[0], dtype=np.float32) if b is None else np.asarray(b, dtype=np.float32)
    return w_folded.astype(np.float32), (beta + (b - mean) * scale).astype(np.float32)


def batchnorm(x: np.ndarray, bn: BnParams) -> np.ndarray:
    """Unfused per-channel batchnorm, used as the fold oracle in tests."""
    x = np.asarray(x, dtype=np.float32)
    if x.shape[0] != len(bn.gamma):
        raise ShapeError(f"channels {x.shape[0]} != bn channels {len(bn.gamma)}")
    shape = (-1,) + (1,) * (x.ndim - 1)
    scale = (np.asarray(bn.gamma) / np.sqrt(np.asarray(bn.running_var) + bn.eps))
    return ((x - np.asarray(bn.running_mean).reshape(shape)) * scale.reshape(shape)
            + np.asarray(bn.beta).reshape(shape)).astype(np.float32)


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    """Per-channel arithmetic mean over all spatial positions."""
    x = np.asarray(x, dtype=np.float32)
    if x.ndim < 2 or x[0].size == 0:
        raise ShapeError(f"need (C, *spatial) with nonempty spatial, got {x.shape}")
    return x.reshape(x.shape[0], -1).mean(axis=1)


def squeeze_excitation(x: np.ndarray, w1, b1, w2, b2) -> np.ndarray:
    """Channel gating from globally pooled features.

    s = hardsigmoid(w2 @ relu(w1 @ gap(x) + b1) + b2); out = x * s per channel.
    """
    x = np.asarray(x, dtype=np.float32)
    z = global_avg_pool(x)
    hidden = activation(linear(z, w1, b1), "relu")
    s = activation(linear(hidden, w2, b2), "hardsigmoid")
    if s.shape[0] != x.shape[0]:
        raise ShapeError(f"excitation produces {s.shape[0]} scales for {x.shape[0]} channels")
    return x * s.reshape((-1,) + (1,) * (x.ndim - 1))


@dataclass(frozen=True)
class SeWeights:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


@dataclass(frozen=True)
class InvResWeights:
    """Parameters of one inverted-residual block (batchnorms pre-folded)."""

    expand_w: np.ndarray | None
    expand_b: np.ndarray | None
    dw_w: np.ndarray
    dw_b: np.ndarray
    se: SeWeights | None
    project_w: np.ndarray
    project_b: np.ndarray


def inverted_residual(x: np.ndarray, weights: InvResWeights, *, kernel: int,
                      stride: int, act: str, in_ch: int, exp_ch: int,
                      out_ch: int) -> np.ndarray:
    """Expand -> depthwise -> (optional SE) -> project, with identity skip
    when stride == 1 and the channel count is preserved."""
    h = x
    if weights.expand_w is not None:
        h = conv(h, weights.expand_w, weights.expand_b,
                 ConvSpec(2, in_ch, exp_ch, 1, 1, "valid"))
        h = activation(h, act)
    elif exp_ch != in_ch:
        raise ShapeError(f"missing expand conv but exp_ch {exp_ch} != in_ch {in_ch}")
    h = conv(h, weights.dw_w, weights.dw_b,
             ConvSpec(2, exp_ch, exp_ch, kernel, stride, "same", groups=exp_ch))
    h = activation(h, act)
    if weights.se is not None:
        h = squeeze_excitation(h, weights.se.w1, weights.se.b1, weights.se.w2, weights.se.b2)
    h = conv(h, weights.project_w, weights.project_b,
             ConvSpec(2, exp_ch, out_ch, 1, 1, "valid"))
    if stride == 1 and in_ch == out_ch:
        h = h + x
    return h
