"""Adam and Polyak averaging."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .autodiff import Parameter


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class Adam:
    def __init__(self, params: Iterable[Parameter], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = {p.name: p for p in params}
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        for name, p in self.params.items():
            self.state.m[name] = np.zeros_like(p.data)
            self.state.v[name] = np.zeros_like(p.data)

    def step(self, grads: dict[str, np.ndarray]) -> None:
        """Apply one update. Parameters absent from ``grads`` are left untouched."""
        for name, g in grads.items():
            if name in self.params and not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        st = self.state
        st.step += 1
        bc1 = 1.0 - st.beta1**st.step
        bc2 = 1.0 - st.beta2**st.step
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter {name!r} {p.data.shape}")
            m = st.m[name]
            v = st.v[name]
            m *= st.beta1
            m += (1.0 - st.beta1) * g
            v *= st.beta2
            v += (1.0 - st.beta2) * (g * g)
            p.data -= st.lr * (m / bc1) / (np.sqrt(v / bc2) + st.eps)

    def state_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {f"{prefix}/step": np.array([self.state.step], dtype=float)}
        for name in self.params:
            out[f"{prefix}/m/{name}"] = self.state.m[name]
            out[f"{prefix}/v/{name}"] = self.state.v[name]
        return out

    def load_state_arrays(self, prefix: str, arrays: dict[str, np.ndarray]) -> None:
        self.state.step = int(arrays[f"{prefix}/step"][0])
        for name in self.params:
            self.state.m[name] = np.array(arrays[f"{prefix}/m/{name}"], dtype=float)
            self.state.v[name] = np.array(arrays[f"{prefix}/v/{name}"], dtype=float)


def polyak_update(target: Iterable[Parameter], online: Iterable[Parameter], rate: float) -> None:
    """In place: target <- (1 - rate) * target + rate * online."""
    if not (0.0 < rate <= 1.0):
        raise ValueError(f"Polyak rate must lie in (0, 1], got {rate}")
    target, online = list(target), list(online)
    if len(target) != len(online):
        raise ValueError("target and online parameter lists differ in length")
    for t, o in zip(target, online):
        if t.data.shape != o.data.shape:
            raise ValueError(f"shape mismatch {t.name} {t.data.shape} vs {o.name} {o.data.shape}")
        if rate == 1.0:
            t.data[...] = o.data
        else:
            t.data *= 1.0 - rate
            t.data += rate * o.data
