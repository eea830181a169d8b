"""Differentiable tensor operations.

Every public function runs its forward pass eagerly and registers a
backward rule on the active tape (see :mod:`refgame.tensor`).  Backward
rules receive d(loss)/d(out) and return per-input gradients.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError
from .tensor import Tensor, active_tape


def _record(out: Tensor, inputs: tuple, backward) -> Tensor:
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, inputs, backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise / arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)

    def backward(g):
        ga = _unbroadcast(g, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g, b.shape) if b.requires_grad else None
        return ga, gb

    return _record(out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _record(out, (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    out = Tensor(a.data * s)

    def backward(g):
        return (g * s if a.requires_grad else None,)

    return _record(out, (a,), backward)


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, neg(b))


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0))

    def backward(g):
        return (g * (a.data > 0) if a.requires_grad else None,)

    return _record(out, (a,), backward)


# ---------------------------------------------------------------------------
# reductions / shape


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        if not a.requires_grad:
            return (None,)
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return _record(out, (a,), backward)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape))

    def backward(g):
        return (g.reshape(a.shape) if a.requires_grad else None,)

    return _record(out, (a,), backward)


def transpose(a: Tensor, axes) -> Tensor:
    out = Tensor(a.data.transpose(axes))
    inverse = np.argsort(axes)

    def backward(g):
        return (g.transpose(inverse) if a.requires_grad else None,)

    return _record(out, (a,), backward)


def take_per_row(a: Tensor, indices: np.ndarray) -> Tensor:
    """out[b] = a[b, indices[b]] for a 2-D tensor."""
    if a.ndim != 2:
        raise DimensionError(f"take_per_row expects a 2-D tensor, got {a.shape}")
    idx = np.asarray(indices)
    n = a.shape[1]
    if idx.shape != (a.shape[0],):
        raise DimensionError("one index per row required")
    if np.any(idx < 0) or np.any(idx >= n):
        raise IndexError(f"row index out of range [0, {n})")
    rows = np.arange(a.shape[0])
    out = Tensor(a.data[rows, idx])

    def backward(g):
        if not a.requires_grad:
            return (None,)
        gx = np.zeros_like(a.data)
        np.add.at(gx, (rows, idx), g)
        return (gx,)

    return _record(out, (a,), backward)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D tensors, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dims disagree: {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data)

    def backward(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _record(out, (a, b), backward)


# ---------------------------------------------------------------------------
# softmax family


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def backward(g):
        if not a.requires_grad:
            return (None,)
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return _record(out, (a,), backward)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    ls = shifted - logsum
    out = Tensor(ls)

    def backward(g):
        if not a.requires_grad:
            return (None,)
        return (g - np.exp(ls) * g.sum(axis=axis, keepdims=True),)

    return _record(out, (a,), backward)


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean over the batch of -log softmax(logits)[target]."""
    picked = take_per_row(log_softmax(logits, axis=1), targets)
    return neg(tmean(picked))


# ---------------------------------------------------------------------------
# normalization / similarity


def l2_normalize(a: Tensor, eps: float = 1e-8) -> Tensor:
    """Normalize along the last axis; zero vectors are divided by ``eps``."""
    norms = np.sqrt((a.data ** 2).sum(axis=-1, keepdims=True))
    m = np.maximum(norms, eps)
    y = a.data / m
    out = Tensor(y)

    def backward(g):
        if not a.requires_grad:
            return (None,)
        # Below the floor the denominator is the constant eps.
        live = (norms > eps).astype(a.data.dtype)
        dot = (g * y).sum(axis=-1, keepdims=True)
        return ((g - live * y * dot) / m,)

    return _record(out, (a,), backward)


def cosine_similarity(u: Tensor, v: Tensor, eps: float = 1e-8) -> Tensor:
    """Cosine of the angle along the last axis, in [-1, 1] per row."""
    return tsum(mul(l2_normalize(u, eps), l2_normalize(v, eps)), axis=-1)


def cosine_matrix(a: Tensor, b: Tensor, eps: float = 1e-8) -> Tensor:
    """Pairwise cosine similarities between rows of ``a`` and rows of ``b``."""
    an = l2_normalize(a, eps)
    bn = l2_normalize(b, eps)
    return matmul(an, transpose(bn, (1, 0)))


# ---------------------------------------------------------------------------
# batch normalization


def _batchnorm_impl(x, gamma, beta, running_mean, running_var, momentum, eps,
                    training, axes, param_shape):
    """Shared batchnorm body; ``axes`` are the reduction axes and
    ``param_shape`` broadcasts the per-channel parameters over ``x``."""
    n = 1
    for ax in axes:
        n *= x.shape[ax]
    if training:
        if n < 2:
            raise DimensionError("batchnorm needs at least 2 values per channel in train mode")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean[:] = (1.0 - momentum) * running_mean + momentum * mu
        running_var[:] = (1.0 - momentum) * running_var + momentum * var
    else:
        mu = running_mean
        var = running_var
    std = np.sqrt(var + eps).reshape(param_shape)
    xhat = (x.data - mu.reshape(param_shape)) / std
    out = Tensor(gamma.data.reshape(param_shape) * xhat + beta.data.reshape(param_shape))

    def backward(g):
        ggamma = (g * xhat).sum(axis=axes) if gamma.requires_grad else None
        gbeta = g.sum(axis=axes) if beta.requires_grad else None
        if not x.requires_grad:
            return None, ggamma, gbeta
        gxhat = g * gamma.data.reshape(param_shape)
        if training:
            # Through the batch statistics.
            gm = gxhat.mean(axis=axes).reshape(param_shape)
            gv = (gxhat * xhat).mean(axis=axes).reshape(param_shape)
            gx = (gxhat - gm - xhat * gv) / std
        else:
            gx = gxhat / std
        return gx, ggamma, gbeta

    return _record(out, (x, gamma, beta), backward)


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    momentum: float = 0.1,
    eps: float = 1e-5,
    training: bool = True,
) -> Tensor:
    """Normalize columns of a BxD tensor by batch (train) or running (eval) stats.

    Train mode mutates ``running_mean``/``running_var`` in place; this side
    effect is not recorded on the tape.
    """
    if x.ndim != 2:
        raise DimensionError(f"batchnorm expects a BxD tensor, got {x.shape}")
    return _batchnorm_impl(x, gamma, beta, running_mean, running_var, momentum, eps,
                           training, axes=(0,), param_shape=(1, x.shape[1]))


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    momentum: float = 0.1,
    eps: float = 1e-5,
    training: bool = True,
) -> Tensor:
    """Per-channel normalization of a BxCxHxW tensor over batch and space."""
    if x.ndim != 4:
        raise DimensionError(f"batchnorm2d expects a BxCxHxW tensor, got {x.shape}")
    return _batchnorm_impl(x, gamma, beta, running_mean, running_var, momentum, eps,
                           training, axes=(0, 2, 3), param_shape=(1, x.shape[1], 1, 1))


# ---------------------------------------------------------------------------
# convolution / pooling


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of BxCxHxW input with OxCxKhxKw kernels."""
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D tensors, got {x.shape} and {w.shape}")
    bsz, cin, h, width = x.shape
    cout, cker, kh, kw = w.shape
    if cker != cin:
        raise DimensionError(f"kernel channels {cker} != input channels {cin}")
    hp, wp = h + 2 * padding, width + 2 * padding
    if kh > hp or kw > wp:
        raise DimensionError(f"kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # (B, C, OH, OW, kh, kw) -> (B*OH*OW, C*kh*kw)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(bsz * oh * ow, cin * kh * kw)
    wmat = w.data.reshape(cout, cin * kh * kw)
    out_data = (cols @ wmat.T).reshape(bsz, oh, ow, cout).transpose(0, 3, 1, 2)
    out = Tensor(out_data)

    def backward(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(bsz * oh * ow, cout)
        gw = (gmat.T @ cols).reshape(w.shape) if w.requires_grad else None
        if not x.requires_grad:
            return None, gw
        if stride == 1 and kh - 1 - padding >= 0 and kw - 1 - padding >= 0:
            # d(input) is a full correlation of the output gradient with the
            # spatially flipped, channel-swapped kernels; one BLAS call beats
            # the generic strided scatter below.
            wflip = w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
            gp = np.pad(g, ((0, 0), (0, 0),
                            (kh - 1 - padding, kh - 1 - padding),
                            (kw - 1 - padding, kw - 1 - padding)))
            gwin = sliding_window_view(gp, (kh, kw), axis=(2, 3))
            gcols = gwin.transpose(0, 2, 3, 1, 4, 5).reshape(bsz * h * width, cout * kh * kw)
            gx = (gcols @ wflip.reshape(cin, cout * kh * kw).T) \
                .reshape(bsz, h, width, cin).transpose(0, 3, 1, 2)
            return gx, gw
        gcols = (gmat @ wmat).reshape(bsz, oh, ow, cin, kh, kw).transpose(0, 3, 1, 2, 4, 5)
        gxp = np.zeros((bsz, cin, hp, wp), dtype=x.data.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += gcols[:, :, :, :, i, j]
        gx = gxp[:, :, padding : padding + h, padding : padding + width] if padding else gxp
        return gx, gw

    return _record(out, (x, w), backward)


def maxpool2d(x: Tensor, window: int = 2) -> Tensor:
    """Non-overlapping max pooling; ties resolve to the lowest flat index."""
    if x.ndim != 4:
        raise DimensionError(f"maxpool2d expects a 4-D tensor, got {x.shape}")
    bsz, c, h, w = x.shape
    if h % window or w % window:
        raise DimensionError(f"spatial dims {h}x{w} not divisible by window {window}")
    oh, ow = h // window, w // window
    tiles = x.data.reshape(bsz, c, oh, window, ow, window).transpose(0, 1, 2, 4, 3, 5)
    flat = tiles.reshape(bsz, c, oh, ow, window * window)
    idx = flat.argmax(axis=-1)
    out = Tensor(np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0])

    def backward(g):
        if not x.requires_grad:
            return (None,)
        gtiles = np.zeros_like(flat)
        np.put_along_axis(gtiles, idx[..., None], g[..., None], axis=-1)
        gx = gtiles.reshape(bsz, c, oh, ow, window, window).transpose(0, 1, 2, 4, 3, 5)
        return (gx.reshape(x.shape),)

    return _record(out, (x,), backward)
