"""Differentiable primitives.

Every function takes and returns :class:`Tensor` objects and registers its
backward rule on the active graph. Broadcasting is limited to what the model
needs (bias adds, scalar constants).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, make_result


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    sa, sb = a.shape, b.shape

    def bwd(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return make_result("add", a.data + b.data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    sa, sb = a.shape, b.shape

    def bwd(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return make_result("sub", a.data - b.data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    ad, bd = a.data, b.data

    def bwd(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return make_result("mul", ad * bd, (a, b), bwd)


def relu(x: Tensor) -> Tensor:
    """Elementwise ``max(0, x)``; the subgradient at exactly 0 is 0."""
    mask = x.data > 0

    def bwd(g):
        return (g * mask,)

    return make_result("relu", np.maximum(x.data, 0, dtype=x.dtype), (x,), bwd)


# -------------------------------------------------------------------- shaping


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    orig = x.shape

    def bwd(g):
        return (g.reshape(orig),)

    return make_result("reshape", x.data.reshape(tuple(shape)), (x,), bwd)


def flatten(x: Tensor) -> Tensor:
    """Collapse all but the leading (batch) axis, row-major."""
    return reshape(x, (x.shape[0], -1))


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {x.shape}")

    def bwd(g):
        return (g.T,)

    return make_result("transpose", np.ascontiguousarray(x.data.T), (x,), bwd)


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = x.shape

    def bwd(g):
        return (np.broadcast_to(g, shape).astype(g.dtype, copy=True),)

    return make_result("sum", np.asarray(x.data.sum(), dtype=x.dtype), (x,), bwd)


def mean(x: Tensor) -> Tensor:
    n = x.size
    return mul(sum(x), 1.0 / n)


def take_rows(x: Tensor, index: Sequence[int]) -> Tensor:
    """Pick ``x[b, index[b]]`` for each row ``b``; result has shape ``[B]``."""
    idx = np.asarray(index, dtype=np.int64)
    rows = np.arange(x.shape[0])
    shape = x.shape

    def bwd(g):
        out = np.zeros(shape, dtype=g.dtype)
        out[rows, idx] = g
        return (out,)

    return make_result("take_rows", x.data[rows, idx], (x,), bwd)


# --------------------------------------------------------------------- linear


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bwd(g):
        return g @ bd.T, ad.T @ g

    return make_result("matmul", ad @ bd, (a, b), bwd)


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``x @ weight + bias`` with ``weight`` of shape ``[D, K]``."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"dense: input {x.shape} incompatible with weight {weight.shape}")
    if bias.shape != (weight.shape[1],):
        raise ShapeError(f"dense: bias {bias.shape} does not match {weight.shape[1]} outputs")
    xd, wd = x.data, weight.data

    def bwd(g):
        return g @ wd.T, xd.T @ g, g.sum(axis=0)

    return make_result("dense", xd @ wd + bias.data, (x, weight, bias), bwd)


# -------------------------------------------------------------- convolution


def _pad_amount(padding, k: int) -> int:
    if padding == "same":
        if k % 2 == 0:
            raise ShapeError("'same' padding needs an odd kernel size")
        return k // 2
    if padding == "valid":
        return 0
    if isinstance(padding, int) and padding >= 0:
        return padding
    raise ValueError(f"unknown padding mode {padding!r}")


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, padding="same", layout: str = "NCHW") -> Tensor:
    """2-D cross-correlation with ``[F, C, kH, kW]`` filters.

    ``layout`` is ``"NCHW"`` (input ``[B, C, H, W]``) or ``"CNHW"`` (input
    ``[C, B, H, W]``, output ``[F, B, H', W']``). The channel-major form is
    what the encoder runs on: patch unfolding then copies whole image rows.
    ``padding`` is ``"same"``, ``"valid"`` or an explicit zero-pad width.
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and kernel, got {x.shape} and {kernel.shape}")
    if layout not in ("NCHW", "CNHW"):
        raise ValueError(f"unknown layout {layout!r}")
    if layout == "NCHW":
        B, C, H, W = x.shape
    else:
        C, B, H, W = x.shape
    F, Ck, kh, kw = kernel.shape
    if C != Ck:
        raise ShapeError(f"conv2d channel mismatch: input has {C} channels, kernel expects {Ck}")
    if bias.shape != (F,):
        raise ShapeError(f"conv2d bias shape {bias.shape} does not match {F} filters")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    ph = _pad_amount(padding, kh)
    pw = _pad_amount(padding, kw)
    Hp, Wp = H + 2 * ph, W + 2 * pw
    if kh > Hp or kw > Wp:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {Hp}x{Wp}")
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1

    xd = x.data if layout == "CNHW" else x.data.transpose(1, 0, 2, 3)
    xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else xd
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # rows: (c, di, dj), columns: (b, i, j)
    cols = win.transpose(0, 4, 5, 1, 2, 3).reshape(C * kh * kw, B * Ho * Wo)
    wmat = kernel.data.reshape(F, C * kh * kw)
    out = wmat @ cols
    out += bias.data[:, None]
    out = out.reshape(F, B, Ho, Wo)
    if layout == "NCHW":
        out = np.ascontiguousarray(out.transpose(1, 0, 2, 3))

    def bwd(g):
        gc = g if layout == "CNHW" else np.ascontiguousarray(g.transpose(1, 0, 2, 3))
        g2 = gc.reshape(F, B * Ho * Wo)
        dk = (g2 @ cols.T).reshape(F, C, kh, kw)
        db = g2.sum(axis=1)
        dx = None
        if x.requires_grad:
            dcols = (wmat.T @ g2).reshape(C, kh, kw, B, Ho, Wo)
            dxp = np.zeros((C, B, Hp, Wp), dtype=g.dtype)
            for di in range(kh):
                for dj in range(kw):
                    dxp[:, :, di : di + stride * Ho : stride, dj : dj + stride * Wo : stride] += dcols[:, di, dj]
            dx = dxp[:, :, ph : ph + H, pw : pw + W]
            if layout == "NCHW":
                dx = dx.transpose(1, 0, 2, 3)
        return dx, dk, db

    return make_result("conv2d", out, (x, kernel, bias), bwd)


def swap_batch_channel(x: Tensor) -> Tensor:
    """``[B, C, H, W]`` <-> ``[C, B, H, W]``."""
    if x.ndim != 4:
        raise ShapeError(f"expected a 4-D tensor, got {x.shape}")

    def bwd(g):
        return (g.transpose(1, 0, 2, 3),)

    return make_result("swap_batch_channel", np.ascontiguousarray(x.data.transpose(1, 0, 2, 3)), (x,), bwd)


# -------------------------------------------------------------- normalization


@dataclass
class BatchNormState:
    """Running statistics for one batch-norm layer.

    ``momentum`` is the weight kept on the old estimate at each update.
    """

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    eps: float = 1e-5
    updates: int = field(default=0)

    @classmethod
    def create(cls, channels: int, dtype=np.float32, momentum: float = 0.9, eps: float = 1e-5):
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype), momentum, eps)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: BatchNormState,
    mode: str = "train",
    eps: float | None = None,
    layout: str = "NCHW",
) -> Tensor:
    """Per-channel normalization of ``[B, C, H, W]`` (or ``[C, B, H, W]``) input.

    Train mode normalizes with batch statistics (biased variance) and folds
    them into ``state`` by exponential moving average; eval mode uses the
    stored statistics.
    """
    if x.ndim != 4:
        raise ShapeError(f"batch_norm expects a 4-D input, got {x.shape}")
    if layout not in ("NCHW", "CNHW"):
        raise ValueError(f"unknown layout {layout!r}")
    cax = 1 if layout == "NCHW" else 0
    axes = (0, 2, 3) if cax == 1 else (1, 2, 3)
    bshape = (1, -1, 1, 1) if cax == 1 else (-1, 1, 1, 1)
    C = x.shape[cax]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError(f"batch_norm parameters must have shape ({C},)")
    eps = state.eps if eps is None else eps
    if eps <= 0:
        raise ValueError("eps must be positive")
    xd = x.data
    n = xd.size // C
    if n < 1:
        raise ShapeError("batch_norm needs at least one element per channel")
    gd = gamma.data.reshape(bshape)
    bd = beta.data.reshape(bshape)

    if mode == "train":
        mu = xd.mean(axis=axes, keepdims=True)
        xc = xd - mu
        var = (xc * xc).mean(axis=axes, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        m = state.momentum
        unbiased = var.reshape(C) * (n / (n - 1)) if n > 1 else var.reshape(C)
        state.running_mean[...] = m * state.running_mean + (1 - m) * mu.reshape(C)
        state.running_var[...] = m * state.running_var + (1 - m) * unbiased
        state.updates += 1

        def bwd(g):
            dg = (g * xhat).sum(axis=axes)
            db = g.sum(axis=axes)
            dxhat = g * gd
            dx = inv * (dxhat - dxhat.mean(axis=axes, keepdims=True) - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True))
            return dx, dg, db

    elif mode == "eval":
        rm = state.running_mean.reshape(bshape).astype(xd.dtype)
        rv = state.running_var.reshape(bshape).astype(xd.dtype)
        inv = 1.0 / np.sqrt(rv + eps)
        xhat = (xd - rm) * inv

        def bwd(g):
            return g * gd * inv, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    else:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")

    out = (xhat * gd + bd).astype(xd.dtype, copy=False)
    return make_result("batch_norm", out, (x, gamma, beta), bwd)


# -------------------------------------------------------------------- pooling


def max_pool2d(x: Tensor, window: int = 2, stride: int = 2) -> Tensor:
    """Non-overlapping max pooling; ties route the gradient to the first
    element of the window in row-major order."""
    if window != 2 or stride != 2:
        raise ValueError("only 2x2 windows with stride 2 are supported")
    if x.ndim != 4:
        raise ShapeError(f"max_pool2d expects [B, C, H, W], got {x.shape}")
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ShapeError(f"max_pool2d needs even spatial dims, got {H}x{W}")
    Ho, Wo = H // 2, W // 2
    win = x.data.reshape(B, C, Ho, 2, Wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, Ho, Wo, 4)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def bwd(g):
        gw = np.zeros((B, C, Ho, Wo, 4), dtype=g.dtype)
        np.put_along_axis(gw, arg[..., None], g[..., None], axis=-1)
        dx = gw.reshape(B, C, Ho, Wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H, W)
        return (dx,)

    return make_result("max_pool2d", np.ascontiguousarray(out), (x,), bwd)


# ------------------------------------------------------------ softmax family


def log_softmax(x: Tensor) -> Tensor:
    """Row-wise log-softmax of a ``[B, K]`` matrix, stabilized by the row max."""
    if x.ndim != 2 or x.shape[1] < 1:
        raise ShapeError(f"log_softmax expects [B, K] with K >= 1, got {x.shape}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=1, keepdims=True))

    def bwd(g):
        return (g - np.exp(out) * g.sum(axis=1, keepdims=True),)

    return make_result("log_softmax", out, (x,), bwd)


def masked_logsumexp(x: Tensor, mask: np.ndarray) -> Tensor:
    """Row-wise ``log sum_{j: mask[i, j]} exp(x[i, j])``; every row needs at
    least one selected entry."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape or x.ndim != 2:
        raise ShapeError(f"mask shape {mask.shape} does not match input {x.shape}")
    if not mask.any(axis=1).all():
        raise ValueError("every row of the mask must select at least one entry")
    xd = x.data
    neg = np.where(mask, xd, -np.inf)
    m = neg.max(axis=1, keepdims=True)
    e = np.where(mask, np.exp(neg - m), 0.0).astype(xd.dtype)
    s = e.sum(axis=1, keepdims=True)
    out = (m + np.log(s)).reshape(-1)
    weights = e / s

    def bwd(g):
        return (weights * g[:, None],)

    return make_result("masked_logsumexp", out.astype(xd.dtype), (x,), bwd)


def l2_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Divide each row of ``[B, D]`` by ``max(||row||, eps)``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    if x.ndim != 2:
        raise ShapeError(f"l2_normalize expects [B, D], got {x.shape}")
    xd = x.data
    norm = np.sqrt((xd * xd).sum(axis=1, keepdims=True))
    active = norm >= eps
    denom = np.where(active, norm, eps)
    y = xd / denom

    def bwd(g):
        radial = np.where(active, (y * g).sum(axis=1, keepdims=True), 0.0)
        return ((g - y * radial) / denom,)

    return make_result("l2_normalize", y.astype(xd.dtype, copy=False), (x,), bwd)
