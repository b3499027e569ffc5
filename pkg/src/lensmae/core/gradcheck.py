"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numerical_gradient(
    fn: Callable[..., Tensor],
    tensors: Sequence[Tensor],
    which: int,
    coords: np.ndarray,
    h: float = 1e-5,
) -> np.ndarray:
    """Central differences of scalar ``fn(*tensors)`` w.r.t. flat ``coords`` of ``tensors[which]``."""
    target = tensors[which]
    flat = target.data.reshape(-1)
    out = np.empty(len(coords))
    for n, i in enumerate(coords):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(fn(*tensors).data)
        flat[i] = orig - h
        fm = float(fn(*tensors).data)
        flat[i] = orig
        out[n] = (fp - fm) / (2 * h)
    return out


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Sequence,
    h: float = 1e-5,
    wrt: Sequence[int] | None = None,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-6,
) -> float:
    """Worst relative error between analytic and finite-difference gradients.

    ``fn`` receives one ``Tensor`` per entry of ``inputs`` and may return a
    tensor of any shape; non-scalar outputs are contracted with a fixed random
    cotangent so every output component participates.  For each checked input
    the error is ``max|analytic - numeric| / max(max|analytic|, max|numeric|, floor)``
    over the sampled coordinates, and the maximum over inputs is returned.  The
    floor keeps gradients that are exactly zero (e.g. attention key biases,
    which softmax cancels) from turning finite-difference noise into an error.

    All inputs are promoted to float64.  ``max_coords`` samples that many flat
    coordinates per input (a "weight slice") instead of checking all of them.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    tensors = [
        x if isinstance(x, Tensor) else Tensor(np.array(x, dtype=np.float64))
        for x in inputs
    ]
    for t in tensors:
        if t.dtype != np.float64:
            t.data = t.data.astype(np.float64)
        t.data = np.ascontiguousarray(t.data)
    wrt = list(range(len(tensors))) if wrt is None else list(wrt)
    saved = [t.requires_grad for t in tensors]
    for i, t in enumerate(tensors):
        t.requires_grad = i in wrt
        t.grad = None

    probe = fn(*tensors)
    cot = None
    if probe.size != 1:
        cot = rng.standard_normal(probe.shape)

    def scalar_fn(*ts):
        out = fn(*ts)
        if cot is None:
            return out
        return (out * cot).sum()

    loss = scalar_fn(*tensors)
    loss.backward()

    worst = 0.0
    for i in wrt:
        t = tensors[i]
        analytic_full = np.zeros_like(t.data) if t.grad is None else t.grad
        analytic_full = analytic_full.reshape(-1)
        if max_coords is not None and max_coords < t.size:
            coords = np.sort(rng.choice(t.size, size=max_coords, replace=False))
        else:
            coords = np.arange(t.size)
        numeric = numerical_gradient(scalar_fn, tensors, i, coords, h=h)
        analytic = analytic_full[coords]
        scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), floor)
        worst = max(worst, float(np.abs(analytic - numeric).max() / scale))

    for t, flag in zip(tensors, saved):
        t.requires_grad = flag
        t.grad = None
    return worst
