"""Differentiable operators on :class:`SpikeTensor`."""

from __future__ import annotations

import builtins
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import ShapeError, SpikeTensor, as_tensor, make_result


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(a: SpikeTensor, b: SpikeTensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        sa, sb = a.shape[::-1], b.shape[::-1]
        bad = [
            -(i + 1)
            for i in range(min(len(sa), len(sb)))
            if sa[i] != sb[i] and sa[i] != 1 and sb[i] != 1
        ]
        raise ShapeError(
            f"{op}: shapes {a.shape} and {b.shape} do not broadcast (conflicting axes {sorted(bad)})"
        ) from None


def _operands(a, b):
    if isinstance(a, SpikeTensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


# elementwise ----------------------------------------------------------------


def add(a, b) -> SpikeTensor:
    a, b = _operands(a, b)
    _check_broadcast(a, b, "add")
    return make_result(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> SpikeTensor:
    a, b = _operands(a, b)
    _check_broadcast(a, b, "sub")
    return make_result(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> SpikeTensor:
    """Hadamard product with leading-axis / unit-extent broadcasting."""
    a, b = _operands(a, b)
    _check_broadcast(a, b, "hadamard")
    return make_result(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


hadamard = mul


def div(a, b) -> SpikeTensor:
    a, b = _operands(a, b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data
    return make_result(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
        "div",
    )


def neg(a: SpikeTensor) -> SpikeTensor:
    return make_result(-a.data, (a,), lambda g: (-g,), "neg")


def scalar_mul(a: SpikeTensor, c: float) -> SpikeTensor:
    c = float(c)
    return make_result(a.data * c, (a,), lambda g: (g * c,), "scalar_mul")


def power(a: SpikeTensor, p: float) -> SpikeTensor:
    p = float(p)
    out = a.data**p
    return make_result(out, (a,), lambda g: (g * p * a.data ** (p - 1),), "pow")


def exp(a: SpikeTensor) -> SpikeTensor:
    out = np.exp(a.data)
    return make_result(out, (a,), lambda g: (g * out,), "exp")


def log(a: SpikeTensor) -> SpikeTensor:
    return make_result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def abs(a: SpikeTensor) -> SpikeTensor:  # noqa: A001
    return make_result(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def relu(a: SpikeTensor) -> SpikeTensor:
    mask = a.data > 0
    return make_result(np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,), "relu")


def sigmoid(a: SpikeTensor) -> SpikeTensor:
    x = a.data
    # split by sign to avoid overflow in exp
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(a.dtype)
    # rounding would otherwise reach exactly 0 or 1 for |x| beyond ~17 (f32)
    fi = np.finfo(a.dtype)
    out = np.clip(out, fi.tiny, 1.0 - fi.epsneg)
    return make_result(out, (a,), lambda g: (g * out * (1 - out),), "sigmoid")


def clip(a: SpikeTensor, lo: float, hi: float) -> SpikeTensor:
    mask = (a.data >= lo) & (a.data <= hi)
    return make_result(np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,), "clip")


def spike(x: SpikeTensor, width: float = 1.0, smooth: bool = False) -> SpikeTensor:
    """Heaviside step of ``x`` (fires at ``x >= 0``) with a rectangular surrogate.

    Backward uses ``(1/width) * 1[|x| <= width/2]``. With ``smooth=True`` the
    forward pass is the ramp whose exact derivative is that window, which
    lets finite differences validate the backward rule.
    """
    if width <= 0:
        raise ValueError("surrogate width must be positive")
    if smooth:
        out = np.clip(x.data / width + 0.5, 0.0, 1.0).astype(x.dtype)
    else:
        out = (x.data >= 0).astype(x.dtype)
    return make_result(out, (x,), lambda g: (g * surrogate_grad(x.data, width),), "spike")


def surrogate_grad(u_minus_th: np.ndarray, width: float = 1.0) -> np.ndarray:
    """Rectangular surrogate derivative of the Heaviside step."""
    u = np.asarray(u_minus_th)
    dtype = u.dtype if u.dtype.kind == "f" else np.float32
    return ((np.abs(u) <= width / 2) / width).astype(dtype)


# reductions / shape ---------------------------------------------------------


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(a: SpikeTensor, axis=None, keepdims: bool = False) -> SpikeTensor:  # noqa: A001
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_result(np.asarray(out, dtype=a.dtype), (a,), bw, "sum")


def mean(a: SpikeTensor, axis=None, keepdims: bool = False) -> SpikeTensor:
    axes = _norm_axes(axis, a.ndim)
    n = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / n, a.shape).astype(a.dtype),)

    return make_result(np.asarray(out, dtype=a.dtype), (a,), bw, "mean")


def reshape(a: SpikeTensor, shape: Sequence[int]) -> SpikeTensor:
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {a.shape} into {shape}") from None
    return make_result(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: SpikeTensor, axes=None) -> SpikeTensor:
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_result(
        np.ascontiguousarray(a.data.transpose(axes)),
        (a,),
        lambda g: (g.transpose(inv),),
        "transpose",
    )


def getitem(a: SpikeTensor, index) -> SpikeTensor:
    out = a.data[index]

    basic = isinstance(index, (int, slice)) or (
        isinstance(index, tuple) and all(isinstance(i, (int, slice)) or i is None or i is Ellipsis for i in index)
    )

    def bw(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return make_result(np.array(out, dtype=a.dtype), (a,), bw, "getitem")


def stack(tensors: Sequence[SpikeTensor], axis: int = 0) -> SpikeTensor:
    tensors = list(tensors)
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f"stack: mismatched shapes {sorted(shapes)}")
    out = np.stack([t.data for t in tensors], axis=axis)
    n = len(tensors)

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return make_result(out, tensors, bw, "stack")


def concat(tensors: Sequence[SpikeTensor], axis: int = 0) -> SpikeTensor:
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result(out, tensors, bw, "concat")


def repeat_time(x: SpikeTensor, steps: int) -> SpikeTensor:
    """Tile ``x`` along a new leading time axis of extent ``steps``."""
    if steps < 1:
        raise ValueError("time steps must be >= 1")
    out = np.broadcast_to(x.data, (steps,) + x.shape).copy()
    return make_result(out, (x,), lambda g: (g.sum(axis=0),), "repeat_time")


# linear algebra -------------------------------------------------------------


def matmul(a: SpikeTensor, b: SpikeTensor) -> SpikeTensor:
    a, b = _operands(a, b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul: contraction axis mismatch {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make_result(out, (a, b), bw, "matmul")


def linear(x: SpikeTensor, weight: SpikeTensor, bias: SpikeTensor | None = None) -> SpikeTensor:
    """Affine map on the trailing axis: ``x @ weight.T + bias``."""
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(
            f"linear: input trailing axis {x.shape[-1]} != weight in_features {weight.shape[1]}"
        )
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ weight.data.T
    if bias is not None:
        out = out + bias.data
    out = out.reshape(lead + (weight.shape[0],))
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        g2 = g.reshape(-1, weight.shape[0])
        grads = [(g2 @ weight.data).reshape(x.shape), g2.T @ x2]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return grads

    return make_result(out, parents, bw, "linear")


# convolutions ---------------------------------------------------------------


def _out_extent(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def _check_conv(x: SpikeTensor, k: int, stride: int, padding: int, op: str) -> tuple[int, int]:
    if x.ndim != 4:
        raise ShapeError(f"{op}: input must be 4-d [B,C,H,W], got shape {x.shape}")
    if k % 2 == 0:
        raise ShapeError(f"{op}: kernel extent must be odd, got {k}")
    if padding < 0 or stride < 1:
        raise ShapeError(f"{op}: need padding >= 0 and stride >= 1")
    ho = _out_extent(x.shape[2], k, stride, padding)
    wo = _out_extent(x.shape[3], k, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"{op}: output extent (H'={ho}, W'={wo}) < 1 for input {x.shape}, k={k}")
    return ho, wo


def _pad(a: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return a
    return np.pad(a, ((0, 0), (0, 0), (p, p), (p, p)))


def conv2d(x: SpikeTensor, weight: SpikeTensor, stride: int = 1, padding: int | None = None) -> SpikeTensor:
    """Cross-correlation of ``x`` [B,Cin,H,W] with ``weight`` [Cout,Cin,k,k].

    ``padding=None`` means same-style padding ``k // 2``.
    """
    if weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise ShapeError(f"conv2d: weight must be [Cout,Cin,k,k], got {weight.shape}")
    k = weight.shape[2]
    padding = k // 2 if padding is None else padding
    ho, wo = _check_conv(x, k, stride, padding, "conv2d")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(
            f"conv2d: input channel axis (axis 1) = {x.shape[1]} != weight Cin (axis 1) = {weight.shape[1]}"
        )
    xp = _pad(x.data, padding)
    taps = [(i, j) for i in range(k) for j in range(k)]

    def tap(a: np.ndarray, i: int, j: int) -> np.ndarray:
        return a[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]

    # one channel-mixing product per kernel tap, accumulated as [Cout,B,Ho,Wo]
    acc = np.zeros((weight.shape[0], x.shape[0], ho, wo), dtype=np.result_type(x.data, weight.data))
    for i, j in taps:
        acc += np.tensordot(weight.data[:, :, i, j], tap(xp, i, j), axes=(1, 1))
    out = np.ascontiguousarray(acc.transpose(1, 0, 2, 3))

    def bw(g):
        gw = np.empty_like(weight.data)
        gxp = np.zeros_like(xp)
        for i, j in taps:
            gw[:, :, i, j] = np.tensordot(g, tap(xp, i, j), axes=([0, 2, 3], [0, 2, 3]))
            tap(gxp, i, j)[...] += np.tensordot(weight.data[:, :, i, j], g, axes=(0, 1)).transpose(1, 0, 2, 3)
        gx = gxp[:, :, padding : padding + x.shape[2], padding : padding + x.shape[3]] if padding else gxp
        return np.ascontiguousarray(gx), gw

    return make_result(out, (x, weight), bw, "conv2d")


def depthwise_conv2d(
    x: SpikeTensor, weight: SpikeTensor, stride: int = 1, padding: int | None = None
) -> SpikeTensor:
    """Per-channel convolution; ``weight`` is [C,1,k,k]."""
    if weight.ndim != 4 or weight.shape[1] != 1 or weight.shape[2] != weight.shape[3]:
        raise ShapeError(f"depthwise_conv2d: weight must be [C,1,k,k], got {weight.shape}")
    k = weight.shape[2]
    padding = k // 2 if padding is None else padding
    ho, wo = _check_conv(x, k, stride, padding, "depthwise_conv2d")
    if x.shape[1] != weight.shape[0]:
        raise ShapeError(
            f"depthwise_conv2d: input channel axis (axis 1) = {x.shape[1]} != weight channels (axis 0) = {weight.shape[0]}"
        )
    xp = _pad(x.data, padding)
    w = weight.data[:, 0]
    out = np.zeros((x.shape[0], x.shape[1], ho, wo), dtype=np.result_type(x.data, w))
    sl = lambda i, j: (slice(None), slice(None), slice(i, i + stride * ho, stride), slice(j, j + stride * wo, stride))  # noqa: E731
    for i in range(k):
        for j in range(k):
            out += xp[sl(i, j)] * w[None, :, i, j, None, None]

    def bw(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(weight.data)
        for i in range(k):
            for j in range(k):
                gw[:, 0, i, j] = (g * xp[sl(i, j)]).sum(axis=(0, 2, 3))
                gxp[sl(i, j)] += g * w[None, :, i, j, None, None]
        gx = gxp[:, :, padding : padding + x.shape[2], padding : padding + x.shape[3]] if padding else gxp
        return np.ascontiguousarray(gx), gw

    return make_result(out, (x, weight), bw, "depthwise_conv2d")


def pointwise_conv2d(x: SpikeTensor, weight: SpikeTensor, stride: int = 1) -> SpikeTensor:
    """1x1 convolution: per-pixel channel mixing with ``weight`` [Cout,Cin,1,1]."""
    if weight.ndim != 4 or weight.shape[2:] != (1, 1):
        raise ShapeError(f"pointwise_conv2d: weight must be [Cout,Cin,1,1], got {weight.shape}")
    if x.ndim != 4:
        raise ShapeError(f"pointwise_conv2d: input must be 4-d [B,C,H,W], got shape {x.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(
            f"pointwise_conv2d: input channel axis (axis 1) = {x.shape[1]} != weight Cin (axis 1) = {weight.shape[1]}"
        )
    xs = x.data[:, :, ::stride, ::stride] if stride > 1 else x.data
    w2 = weight.data[:, :, 0, 0]
    out = np.ascontiguousarray(np.tensordot(w2, xs, axes=([1], [1])).transpose(1, 0, 2, 3))

    def bw(g):
        gw = np.tensordot(g, xs, axes=([0, 2, 3], [0, 2, 3]))[:, :, None, None]
        gxs = np.tensordot(w2, g, axes=([0], [1])).transpose(1, 0, 2, 3)
        if stride > 1:
            gx = np.zeros_like(x.data)
            gx[:, :, ::stride, ::stride] = gxs
        else:
            gx = np.ascontiguousarray(gxs)
        return gx, gw.astype(weight.dtype)

    return make_result(out, (x, weight), bw, "pointwise_conv2d")


# normalization / losses -----------------------------------------------------


def group_norm(
    x: SpikeTensor,
    groups: int,
    weight: SpikeTensor | None = None,
    bias: SpikeTensor | None = None,
    eps: float = 1e-5,
) -> SpikeTensor:
    """Normalize each (sample, channel-group) to zero mean / unit variance, then affine."""
    if x.ndim != 4:
        raise ShapeError(f"group_norm: input must be 4-d [B,C,H,W], got {x.shape}")
    b, c, h, w = x.shape
    if groups < 1 or c % groups:
        raise ShapeError(f"group_norm: channel count {c} (axis 1) not divisible by {groups} groups")
    xg = x.data.reshape(b, groups, -1)
    mu = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mu) * inv).reshape(b, c, h, w).astype(x.dtype)
    out = xhat
    if weight is not None:
        out = out * weight.data.reshape(1, c, 1, 1)
    if bias is not None:
        out = out + bias.data.reshape(1, c, 1, 1)
    parents = [x]
    if weight is not None:
        parents.append(weight)
    if bias is not None:
        parents.append(bias)

    def bw(g):
        dxhat = g * weight.data.reshape(1, c, 1, 1) if weight is not None else g
        dg = dxhat.reshape(b, groups, -1)
        xh = xhat.reshape(b, groups, -1)
        dx = inv * (dg - dg.mean(axis=2, keepdims=True) - xh * (dg * xh).mean(axis=2, keepdims=True))
        grads = [dx.reshape(x.shape).astype(x.dtype)]
        if weight is not None:
            grads.append((g * xhat).sum(axis=(0, 2, 3)).astype(weight.dtype))
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)).astype(bias.dtype))
        return grads

    return make_result(out.astype(x.dtype), parents, bw, "group_norm")


def log_softmax(x: SpikeTensor, axis: int = -1) -> SpikeTensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    soft = np.exp(out)
    return make_result(
        out, (x,), lambda g: (g - soft * g.sum(axis=axis, keepdims=True),), "log_softmax"
    )


def cross_entropy(logits: SpikeTensor, labels: np.ndarray) -> SpikeTensor:
    """Mean negative log-likelihood of integer ``labels`` under ``logits`` [N, K]."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    lp = log_softmax(logits, axis=1)
    picked = getitem(lp, (np.arange(labels.shape[0]), labels))
    return scalar_mul(sum(picked), -1.0 / builtins.max(labels.shape[0], 1))
