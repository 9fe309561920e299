"""Bias-corrected Adam."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ..autodiff import ShapeError, Tensor


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def arrays(self, prefix: str = "adam") -> dict[str, np.ndarray]:
        out = {f"{prefix}.t": np.array(self.t, dtype=np.int64)}
        for k in self.m:
            out[f"{prefix}.m.{k}"] = self.m[k]
            out[f"{prefix}.v.{k}"] = self.v[k]
        return out

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray], prefix: str = "adam", **hyper) -> "AdamState":
        st = cls(**hyper)
        st.t = int(arrays[f"{prefix}.t"])
        mp, vp = f"{prefix}.m.", f"{prefix}.v."
        for k, a in arrays.items():
            if k.startswith(mp):
                st.m[k[len(mp):]] = a.copy()
            elif k.startswith(vp):
                st.v[k[len(vp):]] = a.copy()
        return st


def adam_step(
    params: Mapping[str, Tensor],
    state: AdamState,
    lr: float,
    grads: Mapping[str, np.ndarray] | None = None,
) -> None:
    """One in-place update of every parameter that has a gradient.

    ``grads`` defaults to each tensor's ``.grad``; parameters without a
    gradient are left alone and their moments untouched. ``state.t`` advances
    once per call.
    """
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = p.grad if grads is None else grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, parameter has {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        step = (lr / c1) * m / (np.sqrt(v / c2) + state.eps)
        p.data -= step.astype(p.dtype, copy=False)
