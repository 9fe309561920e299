"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .tensor import Graph, Tensor, backward, no_grad, use_graph


@dataclass
class GradCheckReport:
    analytic: np.ndarray
    numeric: np.ndarray
    rel_error: np.ndarray
    tol: float
    failure: str | None = None

    @property
    def max_rel_error(self) -> float:
        if self.rel_error.size == 0:
            return 0.0
        return float(np.nanmax(self.rel_error)) if np.isfinite(self.rel_error).any() else float("inf")

    @property
    def worst_index(self) -> tuple[int, ...] | None:
        if self.rel_error.size == 0:
            return None
        err = np.where(np.isfinite(self.rel_error), self.rel_error, np.inf)
        return tuple(int(i) for i in np.unravel_index(int(np.argmax(err)), err.shape))

    @property
    def passed(self) -> bool:
        return self.failure is None and self.max_rel_error < self.tol


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """``|a - n| / max(1, |a|, |n|)`` elementwise."""
    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return np.abs(analytic - numeric) / scale


def grad_check(
    fn: Callable[[Tensor], Tensor],
    point,
    h: float = 1e-5,
    tol: float = 1e-4,
) -> GradCheckReport:
    """Compare the backward-pass gradient of scalar ``fn`` at ``point`` with
    central differences. Runs in float64 regardless of the input dtype."""
    x0 = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64)

    x = Tensor(x0.copy(), requires_grad=True)
    graph = Graph()
    with use_graph(graph):
        out = fn(x)
        if not np.all(np.isfinite(out.data)):
            return GradCheckReport(np.full_like(x0, np.nan), np.full_like(x0, np.nan),
                                   np.full_like(x0, np.inf), tol, "non-finite output at the base point")
        if out.requires_grad:
            backward(out, graph)
    analytic = x.grad if x.grad is not None else np.zeros_like(x0)

    numeric = np.zeros_like(x0)
    flat = numeric.reshape(-1)
    probe = x0.copy()
    pflat = probe.reshape(-1)
    failure = None
    with no_grad():
        for k in range(pflat.size):
            orig = pflat[k]
            pflat[k] = orig + h
            fp = float(fn(Tensor(probe)).data)
            pflat[k] = orig - h
            fm = float(fn(Tensor(probe)).data)
            pflat[k] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                failure = f"non-finite output when perturbing element {np.unravel_index(k, x0.shape)}"
                flat[k] = np.nan
                continue
            flat[k] = (fp - fm) / (2 * h)
    rel = relative_error(analytic, numeric)
    return GradCheckReport(analytic, numeric, rel, tol, failure)
