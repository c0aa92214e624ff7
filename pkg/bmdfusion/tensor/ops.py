"""differentiable ops over Tensor; each op returns a new tensor and a backward rule"""
from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from bmdfusion.errors import ParameterError, shape_mismatch
from bmdfusion.tensor.core import Tensor

GELU_C = math.sqrt(2.0 / math.pi)
GELU_A = 0.044715

TRAIN = "train"
EVAL = "eval"


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _sum_to(g: np.ndarray, shape) -> np.ndarray:
    """reduces a bias-add gradient back onto the trailing-dims shape"""
    if g.shape == tuple(shape):
        return g
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead)))


# elementwise arithmetic

def add(a: Tensor, b: Tensor) -> Tensor:
    """same-shape add, or bias add where b matches a's trailing dims"""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and (b.ndim > a.ndim or a.shape[a.ndim - b.ndim:] != b.shape):
        raise shape_mismatch("add", a.shape, b.shape)

    def backward(g):
        return g, _sum_to(g, b.shape)

    return Tensor._result(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise shape_mismatch("sub", a.shape, b.shape)
    return Tensor._result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise shape_mismatch("mul", a.shape, b.shape)
    return Tensor._result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def mul_scalar(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return Tensor._result(a.data * a.data.dtype.type(c), (a,), lambda g: (g * c,))


def scale(a: Tensor, s: Tensor) -> Tensor:
    """multiplies every element of a by the single value held in s"""
    if s.size != 1:
        raise shape_mismatch("scale", a.shape, s.shape)
    sv = s.data.reshape(())

    def backward(g):
        return g * sv, np.sum(g * a.data).reshape(s.shape).astype(s.dtype)

    return Tensor._result(a.data * sv, (a, s), backward)


def square(a: Tensor) -> Tensor:
    return Tensor._result(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def absolute(a: Tensor) -> Tensor:
    return Tensor._result(np.abs(a.data), (a,), lambda g: (np.sign(a.data) * g,))


# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """[..., m, k] @ [k, n], or batched with equal leading dims"""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise shape_mismatch("matmul", a.shape, b.shape)
    if b.ndim == 2:
        k, n = b.shape
        a2 = a.data.reshape(-1, k)
        out = (a2 @ b.data).reshape(a.shape[:-1] + (n,))

        def backward(g):
            g2 = g.reshape(-1, n)
            return (g2 @ b.data.T).reshape(a.shape), a2.T @ g2

        return Tensor._result(out, (a, b), backward)
    if a.shape[:-2] != b.shape[:-2]:
        raise shape_mismatch("matmul", a.shape, b.shape)

    def backward_batched(g):
        return g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g

    return Tensor._result(a.data @ b.data, (a, b), backward_batched)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    out = matmul(x, weight)
    return add(out, bias) if bias is not None else out


# shape ops

def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError:
        raise shape_mismatch("reshape", a.shape, tuple(shape)) from None
    return Tensor._result(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return Tensor._result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise ParameterError("concat needs at least one tensor")
    ndim = tensors[0].ndim
    ax = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or t.shape[:ax] + t.shape[ax + 1:] != tensors[0].shape[:ax] + tensors[0].shape[ax + 1:]:
            raise shape_mismatch("concat", *[t.shape for t in tensors])
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=ax))

    return Tensor._result(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), backward)


def slice_axis(a: Tensor, start: int, stop: int, axis: int = -1) -> Tensor:
    ax = axis % a.ndim
    if not 0 <= start < stop <= a.shape[ax]:
        raise shape_mismatch(f"slice[{start}:{stop}] axis {ax}", a.shape)
    index = [slice(None)] * a.ndim
    index[ax] = slice(start, stop)
    index = tuple(index)

    def backward(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return Tensor._result(a.data[index], (a,), backward)


def take(a: Tensor, indices: np.ndarray, axis: int) -> Tensor:
    """gathers along one axis; repeated indices sum their gradients"""
    ax = axis % a.ndim
    indices = np.asarray(indices, dtype=np.intp)

    def backward(g):
        full = np.zeros_like(a.data)
        moved = np.moveaxis(full, ax, 0)
        np.add.at(moved, indices, np.moveaxis(g, ax, 0))
        return (full,)

    return Tensor._result(np.take(a.data, indices, axis=ax), (a,), backward)


# reductions

def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).astype(a.dtype),)

    return Tensor._result(np.asarray(out, dtype=a.dtype), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    out = np.mean(a.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, a.shape).astype(a.dtype),)

    return Tensor._result(np.asarray(out, dtype=a.dtype), (a,), backward)


# activations and normalization

def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return Tensor._result(y, (a,), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor._result(np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,))


def gelu(a: Tensor) -> Tensor:
    """tanh approximation"""
    x = a.data
    inner = GELU_C * (x + GELU_A * x ** 3)
    t = np.tanh(inner)
    y = 0.5 * x * (1.0 + t)

    def backward(g):
        dinner = GELU_C * (1.0 + 3.0 * GELU_A * x ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * dinner),)

    return Tensor._result(y, (a,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """normalizes the last axis to zero mean and unit variance, then gain/bias"""
    if eps <= 0:
        raise ParameterError(f"layer_norm eps must be > 0, got {eps}")
    n = x.shape[-1]
    if gain.shape != (n,) or bias.shape != (n,):
        raise shape_mismatch("layer_norm", x.shape, gain.shape, bias.shape)
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    out = xhat * gain.data + bias.data

    def backward(g):
        gx = g * gain.data
        dx = inv_std / n * (n * gx - gx.sum(axis=-1, keepdims=True)
                            - xhat * (gx * xhat).sum(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return Tensor._result(out.astype(x.dtype), (x, gain, bias), backward)


def dropout(x: Tensor, p: float, mode: str, rng: Optional[np.random.Generator]) -> Tensor:
    """eval mode and p == 0 return x untouched; train mode rescales survivors by 1/(1-p)"""
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability must lie in [0, 1), got {p}")
    if mode not in (TRAIN, EVAL):
        raise ParameterError(f"dropout mode must be {TRAIN!r} or {EVAL!r}, got {mode!r}")
    if mode == EVAL or p == 0.0:
        return x
    if rng is None:
        raise ParameterError("dropout in train mode needs an explicit rng")
    mask = (rng.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1.0 - p)
    return Tensor._result(x.data * mask, (x,), lambda g: (g * mask,))


def huber(e: Tensor, beta: float) -> Tensor:
    """0.5 e^2 / beta inside |e| <= beta, |e| - 0.5 beta outside"""
    if beta <= 0:
        raise ParameterError(f"huber beta must be > 0, got {beta}")
    x = e.data
    inside = np.abs(x) <= beta
    out = np.where(inside, 0.5 * x * x / beta, np.abs(x) - 0.5 * beta)

    def backward(g):
        return (g * np.where(inside, x / beta, np.sign(x)),)

    return Tensor._result(out.astype(e.dtype), (e,), backward)


# image ops

def pad_edge(x: Tensor, pad: int) -> Tensor:
    """replicates border pixels on both spatial axes of [B, C, H, W]"""
    if pad == 0:
        return x
    h, w = x.shape[-2:]
    rows = np.clip(np.arange(-pad, h + pad), 0, h - 1)
    cols = np.clip(np.arange(-pad, w + pad), 0, w - 1)
    return take(take(x, rows, axis=-2), cols, axis=-1)


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """valid stride-1 convolution; x [B, C, H, W], weight [O, C, k, k]"""
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise shape_mismatch("conv2d", x.shape, weight.shape)
    b, c, h, w = x.shape
    o, _, kh, kw = weight.shape
    oh, ow = h - kh + 1, w - kw + 1
    if oh < 1 or ow < 1:
        raise shape_mismatch("conv2d", x.shape, weight.shape)
    windows = sliding_window_view(x.data, (kh, kw), axis=(2, 3))  # [B, C, oh, ow, kh, kw]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(b * oh * ow, c * kh * kw)
    wmat = weight.data.reshape(o, c * kh * kw)
    out = (cols @ wmat.T).reshape(b, oh, ow, o).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data.reshape(1, o, 1, 1)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(b * oh * ow, o)
        gw = (g2.T @ cols).reshape(weight.shape)
        gcols = (g2 @ wmat).reshape(b, oh, ow, c, kh, kw)
        gx = np.zeros_like(x.data)
        for i in range(kh):
            for j in range(kw):
                gx[:, :, i:i + oh, j:j + ow] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._result(np.ascontiguousarray(out, dtype=x.dtype), parents, backward)


def avg_pool2d(x: Tensor, k: int) -> Tensor:
    """non-overlapping k x k average pooling on [B, C, H, W]"""
    b, c, h, w = x.shape
    if h % k or w % k:
        raise shape_mismatch(f"avg_pool2d k={k}", x.shape)
    out = x.data.reshape(b, c, h // k, k, w // k, k).mean(axis=(3, 5))

    def backward(g):
        spread = np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k)
        return (spread.astype(x.dtype),)

    return Tensor._result(out.astype(x.dtype), (x,), backward)
