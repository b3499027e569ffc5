from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import ShapeError, Tensor


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, dtype=np.float32) -> np.ndarray:
    """Normal(0, std) truncated to ±2·std by resampling."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return (out * std).astype(dtype)


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def xavier_uniform(rng: np.random.Generator, shape, dtype=np.float32) -> np.ndarray:
    """Uniform(±sqrt(6 / (fan_in + fan_out))) for a ``[fan_in, fan_out]`` matrix."""
    bound = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-bound, bound, shape).astype(dtype)


class Module:
    """Container whose ``Tensor`` attributes are parameters.

    Attributes are visited in assignment order, so parameter names and their
    ordering are a pure function of construction.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(value, Tensor):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)) and value and isinstance(value[0], Module):
                for i, sub in enumerate(value):
                    yield from sub.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            unexpected = sorted(set(state) - set(own))
            if missing or unexpected:
                raise KeyError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for name, value in state.items():
            if name not in own:
                continue
            p = own[name]
            value = np.asarray(value)
            if value.shape != p.shape:
                raise ShapeError(f"{name}: checkpoint shape {value.shape} vs model shape {p.shape}")
            p.data = value.astype(p.dtype, copy=True)

    def astype(self, dtype) -> "Module":
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
        return self

    def set_trainable(self, flag: bool) -> None:
        for p in self.parameters():
            p.requires_grad = flag

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None
