"""Adam with decoupled weight decay and parameter groups."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core import NonFiniteError, ShapeError, Tensor


@dataclass
class ParamGroup:
    name: str
    params: list[tuple[str, Tensor]]
    lr: float
    weight_decay: float = 0.0

    @property
    def num_parameters(self) -> int:
        return int(sum(p.size for _, p in self.params))


@dataclass
class AdamState:
    m: dict[int, np.ndarray] = field(default_factory=dict)
    v: dict[int, np.ndarray] = field(default_factory=dict)
    t: int = 0


class Adam:
    """θ ← θ − lr·(m̂/(√v̂ + eps) + wd·θ) with bias-corrected moments."""

    def __init__(self, groups: Sequence[ParamGroup], betas=(0.9, 0.999), eps: float = 1e-8,
                 check_finite: bool = True):
        self.groups = list(groups)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.state = AdamState()
        self._check = check_finite

    @property
    def params(self) -> list[Tensor]:
        return [p for g in self.groups for _, p in g.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def hyperparameters(self) -> dict:
        return {
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "weight_decay_mode": "decoupled",
            "groups": [
                {"name": g.name, "lr": g.lr, "weight_decay": g.weight_decay,
                 "num_parameters": g.num_parameters}
                for g in self.groups
            ],
        }

    def step(self) -> None:
        st = self.state
        st.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**st.t
        c2 = 1.0 - b2**st.t
        for group in self.groups:
            for name, p in group.params:
                g = p.grad
                if g is None:
                    continue
                if g.shape != p.shape:
                    raise ShapeError(f"{name}: gradient {g.shape} vs parameter {p.shape}")
                if self._check and not np.isfinite(g).all():
                    raise NonFiniteError(f"{name}: non-finite gradient")
                key = id(p)
                m = st.m.get(key)
                if m is None:
                    m = st.m[key] = np.zeros_like(p.data)
                    st.v[key] = np.zeros_like(p.data)
                v = st.v[key]
                m *= b1
                m += (1.0 - b1) * g
                v *= b2
                v += (1.0 - b2) * (g * g)
                update = (m / c1) / (np.sqrt(v / c2) + self.eps)
                if group.weight_decay:
                    update = update + group.weight_decay * p.data
                p.data -= (group.lr * update).astype(p.dtype, copy=False)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: dict,
              lr: float, weight_decay: float = 0.0, betas=(0.9, 0.999), eps: float = 1e-8):
    """Functional single Adam step on plain arrays; ``state`` holds ``m``, ``v``, ``t``."""
    if len(params) != len(grads):
        raise ShapeError("params and grads differ in length")
    b1, b2 = betas
    t = state.get("t", 0) + 1
    ms = state.get("m") or [np.zeros_like(np.asarray(p, dtype=float)) for p in params]
    vs = state.get("v") or [np.zeros_like(np.asarray(p, dtype=float)) for p in params]
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, ms, vs):
        p = np.asarray(p, dtype=float)
        g = np.asarray(g, dtype=float)
        if p.shape != g.shape:
            raise ShapeError(f"gradient {g.shape} vs parameter {p.shape}")
        if not np.isfinite(g).all():
            raise NonFiniteError("non-finite gradient")
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        new_params.append(p - lr * (mhat / (np.sqrt(vhat) + eps) + weight_decay * p))
        new_m.append(m)
        new_v.append(v)
    return new_params, {"m": new_m, "v": new_v, "t": t}


def param_groups(encoder, head, encoder_trainable: bool, lr: float,
                 weight_decay: float) -> list[ParamGroup]:
    """One group over encoder + head, or the head alone when the encoder is frozen."""
    params: list[tuple[str, Tensor]] = []
    if encoder_trainable:
        params += [(f"encoder.{n}", p) for n, p in encoder.named_parameters()]
    params += [(f"head.{n}", p) for n, p in head.named_parameters()]
    return [ParamGroup("finetune" if encoder_trainable else "head", params, lr, weight_decay)]


def module_group(name: str, modules: Iterable, lr: float, weight_decay: float = 0.0) -> ParamGroup:
    params = []
    for prefix, mod in modules:
        params += [(f"{prefix}.{n}", p) for n, p in mod.named_parameters()]
    return ParamGroup(name, params, lr, weight_decay)
