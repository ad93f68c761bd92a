"""Differentiable tensor operations.

Every function takes and returns :class:`Tensor`; when a tape is active the
result is recorded with its vector-Jacobian product.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from nesr.core import kernels
from nesr.core.tensor import Tensor, as_tensor, make_result, note_branch
from nesr.errors import ConfigurationError, DimensionError, DomainError, NonFiniteInputError

DEFAULT_LEAKY_SLOPE = 0.01


def _const(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# --- elementwise arithmetic ---------------------------------------------------

def add(a, b) -> Tensor:
    a, b = (a, _const(b, a)) if isinstance(a, Tensor) else (_const(a, b), b)
    sa, sb = a.shape, b.shape
    return make_result(a.data + b.data, (a, b),
                       lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = (a, _const(b, a)) if isinstance(a, Tensor) else (_const(a, b), b)
    sa, sb = a.shape, b.shape
    return make_result(a.data - b.data, (a, b),
                       lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = (a, _const(b, a)) if isinstance(a, Tensor) else (_const(a, b), b)
    ad, bd = a.data, b.data

    def vjp(g):
        return (unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return make_result(ad * bd, (a, b), vjp, "mul")


def div(a, b) -> Tensor:
    a, b = (a, _const(b, a)) if isinstance(a, Tensor) else (_const(a, b), b)
    ad, bd = a.data, b.data
    out = ad / bd

    def vjp(g):
        return (unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
                unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None)

    return make_result(out, (a, b), vjp, "div")


def neg(a: Tensor) -> Tensor:
    return make_result(-a.data, (a,), lambda g: (-g,), "neg")


def absolute(a: Tensor) -> Tensor:
    sign = np.sign(a.data)
    note_branch(sign > 0)
    return make_result(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")


def square(a: Tensor) -> Tensor:
    ad = a.data
    return make_result(ad * ad, (a,), lambda g: (2.0 * g * ad,), "square")


# --- reductions and shape ops ---------------------------------------------

def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_result(np.asarray(out), (a,), vjp, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if np.isscalar(axis) else axis
        count = int(np.prod([a.shape[i] for i in axes]))
    s = sum(a, axis=axis, keepdims=keepdims)
    return mul(s, 1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    return make_result(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_result(np.ascontiguousarray(a.data.transpose(axes)), (a,),
                       lambda g: (g.transpose(inv),), "transpose")


def broadcast_to(a: Tensor, shape) -> Tensor:
    src = a.shape
    return make_result(np.broadcast_to(a.data, shape).copy(), (a,),
                       lambda g: (unbroadcast(g, src),), "broadcast_to")


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis
               for i in items)


def index(a: Tensor, idx) -> Tensor:
    """``a[idx]``; fancy indices scatter-add their gradient."""
    if isinstance(idx, Tensor):
        idx = idx.data.astype(np.intp)
    out = a.data[idx]
    basic = _is_basic_index(idx)

    def vjp(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return make_result(np.array(out, copy=True), (a,), vjp, "index")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tensors,
                       vjp, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return make_result(np.stack([t.data for t in tensors], axis=axis), tensors, vjp, "stack")


# --- linear algebra ---------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes are batch axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise DimensionError(f"matmul: batch axes of {a.shape} and {b.shape} differ") from exc
    ad, bd = a.data, b.data

    def vjp(g):
        ga = gb = None
        if a.requires_grad:
            ga = unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape)
        if b.requires_grad:
            gb = unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape)
        return ga, gb

    return make_result(out, (a, b), vjp, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map ``x @ weight + bias`` for row-vector batches x: (N, in)."""
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"linear: input {x.shape} does not match weight {weight.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd
    if bias is not None:
        out += bias.data

    def vjp(g):
        gx = g @ wd.T if x.requires_grad else None
        gw = xd.T @ g if weight.requires_grad else None
        gb = g.sum(axis=0) if bias is not None and bias.requires_grad else None
        return (gx, gw, gb) if bias is not None else (gx, gw)

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    return make_result(out, inputs, vjp, "linear")


def convolve(x: Tensor, kernels_: Tensor, bias: Optional[Tensor], rank: int,
             padding: Optional[int] = None) -> Tensor:
    """Zero-padded 'same' cross-correlation of a (C_in, *S) volume.

    ``kernels_`` is (C_out, C_in, k, ..., k) with ``rank`` kernel axes; the
    padding must equal (k - 1) // 2 so spatial extents are preserved.
    """
    if rank not in (2, 3):
        raise ConfigurationError(f"convolve: rank must be 2 or 3, got {rank}")
    if x.ndim != rank + 1:
        raise ConfigurationError(f"convolve: rank-{rank} input must be C x {rank} axes, got {x.shape}")
    if kernels_.ndim != rank + 2:
        raise ConfigurationError(f"convolve: kernel shape {kernels_.shape} is not rank {rank}")
    c_out, c_in = kernels_.shape[:2]
    k = kernels_.shape[2]
    if any(s != k for s in kernels_.shape[2:]):
        raise ConfigurationError(f"convolve: kernel must be cubic/square, got {kernels_.shape}")
    if k % 2 == 0:
        raise ConfigurationError(f"convolve: kernel extent must be odd, got {k}")
    if padding is None:
        padding = (k - 1) // 2
    if padding != (k - 1) // 2:
        raise ConfigurationError(f"convolve: padding must be {(k - 1) // 2} for kernel {k}")
    if x.shape[0] != c_in:
        raise ConfigurationError(f"convolve: input has {x.shape[0]} channels, kernel expects {c_in}")
    if bias is not None and bias.shape != (c_out,):
        raise ConfigurationError(f"convolve: bias shape {bias.shape} != ({c_out},)")

    spatial = x.shape[1:]
    xd = np.ascontiguousarray(x.data)
    cols = kernels.im2col(xd, k)
    w2 = kernels_.data.reshape(c_out, -1)
    out = w2 @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape((c_out,) + spatial)

    def vjp(g):
        g2 = g.reshape(c_out, -1)
        gx = gw = gb = None
        if x.requires_grad:
            gx = kernels.col2im(w2.T @ g2, c_in, spatial, k)
        if kernels_.requires_grad:
            gw = (g2 @ cols.T).reshape(kernels_.shape)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=1)
        return (gx, gw, gb) if bias is not None else (gx, gw)

    inputs = (x, kernels_, bias) if bias is not None else (x, kernels_)
    return make_result(out, inputs, vjp, f"conv{rank}d")


# --- resampling ----------------------------------------------------------------

def interpolation_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """(n_in, n_out) weights of endpoint-aligned linear resampling.

    Output index j reads source position j*(n_in-1)/(n_out-1); n_out == 1
    reads position 0.
    """
    if n_in < 1 or n_out < 1:
        raise DomainError(f"resize: lengths must be >= 1, got {n_in} -> {n_out}")
    m = np.zeros((n_in, n_out), dtype=dtype)
    if n_in == 1:
        m[0, :] = 1.0
        return m
    for j in range(n_out):
        pos = 0.0 if n_out == 1 else j * (n_in - 1) / (n_out - 1)
        i0 = min(int(np.floor(pos)), n_in - 2)
        t = pos - i0
        m[i0, j] += 1.0 - t
        m[i0 + 1, j] += t
    return m


def resize_linear(profile: Tensor, target_len: int) -> Tensor:
    """Linear interpolation along the last axis to ``target_len`` samples."""
    if target_len < 1:
        raise DomainError(f"resize_linear: target_len must be >= 1, got {target_len}")
    n_in = profile.shape[-1]
    m = interpolation_matrix(n_in, int(target_len), dtype=profile.dtype)
    lead = profile.shape[:-1]
    flat = profile.data.reshape(-1, n_in)
    out = (flat @ m).reshape(lead + (int(target_len),))

    def vjp(g):
        return ((g.reshape(-1, target_len) @ m.T).reshape(profile.shape),)

    return make_result(out, (profile,), vjp, "resize_linear")


# --- nonlinearities --------------------------------------------------------------

def softmax(logits: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted softmax along ``axis`` (the last axis by default)."""
    x = logits.data
    if not np.all(np.isfinite(x)):
        raise NonFiniteInputError("softmax: logits contain NaN or Inf")
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_result(y, (logits,), vjp, "softmax")


def activate(x: Tensor, kind: str = "relu", slope: float = DEFAULT_LEAKY_SLOPE) -> Tensor:
    """ReLU or leaky ReLU. At exactly 0 the gradient is the negative-side slope."""
    if kind == "relu":
        neg_slope = 0.0
    elif kind == "leaky_relu":
        neg_slope = float(slope)
    else:
        raise ConfigurationError(f"activate: unknown kind {kind!r}")
    xd = x.data
    pos = xd > 0
    note_branch(pos)
    if neg_slope == 0.0:
        out = np.maximum(xd, 0)
    elif 0.0 < neg_slope <= 1.0:
        out = np.maximum(xd, xd * np.asarray(neg_slope, dtype=xd.dtype))
    else:
        out = np.where(pos, xd, xd * neg_slope).astype(xd.dtype, copy=False)

    def vjp(g):
        if neg_slope == 0.0:
            return (g * pos,)
        factor = np.where(pos, np.asarray(1.0, g.dtype), np.asarray(neg_slope, g.dtype))
        return (g * factor,)

    return make_result(out, (x,), vjp, kind)


def relu(x: Tensor) -> Tensor:
    return activate(x, "relu")


def leaky_relu(x: Tensor, slope: float = DEFAULT_LEAKY_SLOPE) -> Tensor:
    return activate(x, "leaky_relu", slope)
