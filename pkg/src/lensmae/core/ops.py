"""Differentiable primitives.

Each op computes its forward value with numpy and attaches a closure that
returns one cotangent per parent (``None`` for parents that need none).
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor, check_finite, grad_enabled

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


def _result(data, parents, backward, op: str) -> Tensor:
    check_finite(data, op)
    parents = tuple(parents)
    if grad_enabled() and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=parents, backward=backward)
    return Tensor(data)


def _coerce(a, like: Tensor | None = None) -> Tensor:
    if isinstance(a, Tensor):
        return a
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(a, dtype=dtype))


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# elementwise ------------------------------------------------------------


def add(a, b) -> Tensor:
    a = _coerce(a, b if isinstance(b, Tensor) else None)
    b = _coerce(b, a)
    out = a.data + b.data

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return _result(out, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a = _coerce(a, b if isinstance(b, Tensor) else None)
    b = _coerce(b, a)
    out = a.data - b.data

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return _result(out, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a = _coerce(a, b if isinstance(b, Tensor) else None)
    b = _coerce(b, a)
    out = a.data * b.data

    def backward(g):
        ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), backward, "mul")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.dtype, copy=False)

    def backward(g):
        return (g * mask,)

    return _result(out, (x,), backward, "relu")


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    u = x.data
    inner = _SQRT_2_OVER_PI * (u + 0.044715 * (u * u * u))
    t = np.tanh(inner)
    out = 0.5 * u * (1.0 + t)

    def backward(g):
        dinner = _SQRT_2_OVER_PI * (1.0 + 3 * 0.044715 * (u * u))
        d = 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * dinner
        return (g * d,)

    return _result(out, (x,), backward, "gelu")


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = rng.random(x.shape) >= p
    scale = np.asarray(1.0 / (1.0 - p), dtype=x.dtype)
    mask = keep * scale
    out = x.data * mask

    def backward(g):
        return (g * mask,)

    return _result(out, (x,), backward, "dropout")


# shape ------------------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)

    def backward(g):
        return (g.reshape(x.shape),)

    return _result(out, (x,), backward, "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    if not axes:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = x.data.transpose(axes)

    def backward(g):
        return (g.transpose(inv),)

    return _result(out, (x,), backward, "transpose")


def broadcast_to(x: Tensor, shape) -> Tensor:
    out = np.broadcast_to(x.data, shape)

    def backward(g):
        return (unbroadcast(g, x.shape),)

    return _result(out, (x,), backward, "broadcast_to")


def concat(xs, axis: int = 0) -> Tensor:
    xs = [_coerce(x) for x in xs]
    out = np.concatenate([x.data for x in xs], axis=axis)
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(out, xs, backward, "concat")


def take_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Per-batch gather along axis 1: ``out[b, j] = x[b, idx[b, j]]``."""
    idx = np.asarray(idx)
    if x.ndim < 2 or idx.ndim != 2 or idx.shape[0] != x.shape[0]:
        raise ShapeError(f"take_rows: bad shapes x={x.shape} idx={idx.shape}")
    rows = np.arange(x.shape[0])[:, None]
    out = x.data[rows, idx]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (rows, idx), g)
        return (gx,)

    return _result(out, (x,), backward, "take_rows")


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)
    out = x.data[sl]

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[sl] = g
        return (gx,)

    return _result(out, (x,), backward, "slice")


# reductions ---------------------------------------------------------------


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(out, (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


# linear algebra -------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product; backward: dA = dC·Bᵀ, dB = Aᵀ·dC."""
    a = _coerce(a)
    b = _coerce(b, a)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            if b.ndim == 2:
                k = a.shape[-1]
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _result(out, (a, b), backward, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` over the last axis of ``x``."""
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {w.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ w.data
    if b is not None:
        out = out + b.data
    out = out.reshape(*lead, w.shape[1])
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        g2 = g.reshape(-1, w.shape[1])
        gx = (g2 @ w.data.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if w.requires_grad else None
        if b is None:
            return gx, gw
        gb = g2.sum(axis=0) if b.requires_grad else None
        return gx, gw, gb

    return _result(out, parents, backward, "linear")


# normalisation / probabilities ----------------------------------------------


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _result(s, (x,), backward, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def backward(g):
        s = np.exp(out)
        return (g - s * g.sum(axis=axis, keepdims=True),)

    return _result(out, (x,), backward, "log_softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: last axis {d} vs gamma {gamma.shape} / beta {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        ggamma = (g * xhat).sum(axis=lead) if gamma.requires_grad else None
        gbeta = g.sum(axis=lead) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv * (
                gh
                - gh.mean(axis=-1, keepdims=True)
                - xhat * (gh * xhat).mean(axis=-1, keepdims=True)
            )
        return gx, ggamma, gbeta

    return _result(out, (x, gamma, beta), backward, "layer_norm")


# losses -----------------------------------------------------------------


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy of integer ``labels`` against ``logits[n, k]``."""
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"cross_entropy: {n} logit rows vs labels {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"cross_entropy: labels must lie in [0, {k}), got {labels.tolist()}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    rows = np.arange(n)
    out = np.asarray(-logp[rows, labels].mean())

    def backward(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        return (p * (g / n),)

    return _result(out, (logits,), backward, "cross_entropy")


def mse(pred: Tensor, target) -> Tensor:
    """Mean over all elements of the squared difference."""
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ShapeError(f"mse: prediction {pred.shape} vs target {target.shape}")
    diff = pred.data - target
    out = np.asarray((diff * diff).mean())

    def backward(g):
        return (g * (2.0 / diff.size) * diff,)

    return _result(out, (pred,), backward, "mse")


# image ops ------------------------------------------------------------------


def _as_batch(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 4:
        raise ShapeError(f"expected [c,h,w] or [b,c,h,w], got {x.shape}")
    return x, False


def conv2d_3x3(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """3×3 cross-correlation, stride 1, zero padding 1.

    ``x`` is ``[c_in, h, w]`` or ``[batch, c_in, h, w]``; ``w`` is ``[c_out, c_in, 3, 3]``.
    """
    xb, squeeze = _as_batch(x)
    bsz, cin, h, wd = xb.shape
    if w.ndim != 4 or w.shape[2:] != (3, 3):
        raise ShapeError(f"conv2d_3x3: kernel must be [c_out, c_in, 3, 3], got {w.shape}")
    if w.shape[1] != cin:
        raise ShapeError(f"conv2d_3x3: input has {cin} channels, kernel expects {w.shape[1]}")
    cout = w.shape[0]
    padded = np.pad(xb.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    # cols[b, i, j, c, ki, kj] = padded[b, c, i+ki, j+kj]
    win = np.lib.stride_tricks.sliding_window_view(padded, (3, 3), axis=(2, 3))
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(bsz * h * wd, cin * 9)
    wmat = w.data.reshape(cout, cin * 9)
    out = cols @ wmat.T
    if b is not None:
        out = out + b.data
    out = out.reshape(bsz, h, wd, cout).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)
    parents = (xb, w) if b is None else (xb, w, b)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        gw = (g2.T @ cols).reshape(w.shape) if w.requires_grad else None
        gx = None
        if xb.requires_grad:
            dcols = (g2 @ wmat).reshape(bsz, h, wd, cin, 3, 3)
            gpad = np.zeros_like(padded)
            for ki in range(3):
                for kj in range(3):
                    gpad[:, :, ki : ki + h, kj : kj + wd] += dcols[..., ki, kj].transpose(0, 3, 1, 2)
            gx = gpad[:, :, 1:-1, 1:-1]
        if b is None:
            return gx, gw
        gb = g2.sum(axis=0) if b.requires_grad else None
        return gx, gw, gb

    res = _result(out, parents, backward, "conv2d_3x3")
    return reshape(res, res.shape[1:]) if squeeze else res


def _shuffle_array(a: np.ndarray, r: int) -> np.ndarray:
    bsz, cr2, h, w = a.shape
    c = cr2 // (r * r)
    return a.reshape(bsz, c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(bsz, c, h * r, w * r)


def _unshuffle_array(a: np.ndarray, r: int) -> np.ndarray:
    bsz, c, hr, wr = a.shape
    h, w = hr // r, wr // r
    return a.reshape(bsz, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(bsz, c * r * r, h, w)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """``[c·r², h, w] -> [c, r·h, r·w]``; channel ``k`` of group ``c`` lands at offset ``(k // r, k % r)``."""
    xb, squeeze = _as_batch(x)
    if xb.shape[1] % (r * r):
        raise ShapeError(f"pixel_shuffle: {xb.shape[1]} channels not divisible by r²={r * r}")
    out = _shuffle_array(xb.data, r)

    def backward(g):
        return (_unshuffle_array(g, r),)

    res = _result(out, (xb,), backward, "pixel_shuffle")
    return reshape(res, res.shape[1:]) if squeeze else res


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    xb, squeeze = _as_batch(x)
    if xb.shape[2] % r or xb.shape[3] % r:
        raise ShapeError(f"pixel_unshuffle: spatial dims {xb.shape[2:]} not divisible by {r}")
    out = _unshuffle_array(xb.data, r)

    def backward(g):
        return (_shuffle_array(g, r),)

    res = _result(out, (xb,), backward, "pixel_unshuffle")
    return reshape(res, res.shape[1:]) if squeeze else res


def nearest_upsample(x: Tensor, factor: int) -> Tensor:
    """Replicate every pixel of the last two axes into a ``factor × factor`` block."""
    factor = int(factor)
    if factor < 1:
        raise ValueError(f"upsample factor must be >= 1, got {factor}")
    if factor == 1:
        return x
    out = np.repeat(np.repeat(x.data, factor, axis=-2), factor, axis=-1)

    def backward(g):
        *lead, hf, wf = g.shape
        h, w = hf // factor, wf // factor
        return (g.reshape(*lead, h, factor, w, factor).sum(axis=(-3, -1)),)

    return _result(out, (x,), backward, "nearest_upsample")


def as_input(x, dtype=np.float32) -> Tensor:
    """Wrap raw data as a constant (non-differentiable) tensor."""
    return as_tensor(np.asarray(x, dtype=dtype))
