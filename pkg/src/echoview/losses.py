"""View cross-entropy and the supervised contrastive loss."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import Tensor, log_softmax, masked_logsumexp, matmul, mean, mul, sub, take_rows, transpose
from .autodiff import ops
from .labels import as_index


@dataclass(frozen=True)
class LossConfig:
    tau: float = 1000.0
    supcon_variant: str = "mean-inside-log"

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.supcon_variant != "mean-inside-log":
            raise ValueError("only the mean-inside-log variant is implemented")


@dataclass
class ContrastiveBatch:
    """``2N`` projections with labels; ``twin_index[i]`` is the other
    augmentation of the same source frame."""

    projections: Tensor
    labels: Sequence
    twin_index: Sequence[int]

    def __post_init__(self):
        n = len(self.labels)
        if self.projections.ndim != 2 or self.projections.shape[0] != n:
            raise ValueError("projections must be [2N, P] with one label per row")
        if len(self.twin_index) != n or n < 2:
            raise ValueError("need at least two rows and one twin index per row")
        labels = [as_index(l) for l in self.labels]
        for i, t in enumerate(self.twin_index):
            if t == i or self.twin_index[t] != i:
                raise ValueError(f"twin_index is not a fixed-point-free involution at {i}")
            if labels[t] != labels[i]:
                raise ValueError(f"row {i} and its twin {t} carry different labels")

    def label_indices(self) -> np.ndarray:
        return np.array([as_index(l) for l in self.labels], dtype=np.int64)

    def masks(self) -> tuple[np.ndarray, np.ndarray]:
        """(positive mask, denominator mask); both exclude the diagonal."""
        y = self.label_indices()
        off = ~np.eye(len(y), dtype=bool)
        return (y[:, None] == y[None, :]) & off, off


def cross_entropy_view(logits: Tensor, targets: Sequence) -> Tensor:
    """Batch-mean of ``-log softmax(logits)[target]``."""
    idx = [as_index(t) for t in targets]
    if len(idx) != logits.shape[0]:
        raise ValueError(f"{len(idx)} targets for {logits.shape[0]} rows")
    k = logits.shape[1]
    for t in idx:
        if not 0 <= t < k:
            raise ValueError(f"target index {t} outside [0, {k})")
    picked = take_rows(log_softmax(logits), idx)
    return mul(mean(picked), -1.0)


def supcon_loss(batch: ContrastiveBatch, config: LossConfig = LossConfig()) -> Tensor:
    """Sum over anchors of ``-log((1/M_i) sum_{j in P_i} exp(s_ij) / sum_{a != i} exp(s_ia))``
    with ``s = x x^T / tau``. Both log-sum-exps subtract their row max."""
    pos, denom = batch.masks()
    m = pos.sum(axis=1)
    if (m == 0).any():
        bad = int(np.argmax(m == 0))
        raise ValueError(f"anchor {bad} has no positive partner in the batch")
    x = batch.projections
    sim = mul(matmul(x, transpose(x)), 1.0 / config.tau)
    per_anchor = sub(masked_logsumexp(sim, denom), masked_logsumexp(sim, pos))
    log_m = Tensor(np.log(m).astype(x.dtype))
    return ops.sum(ops.add(per_anchor, log_m))


def supcon_oracle(batch: ContrastiveBatch, config: LossConfig = LossConfig()) -> float:
    """Direct double loop over the printed formula with plain exponentials.
    Reference only; no gradients, no stabilization."""
    x = np.asarray(batch.projections.data, dtype=np.float64)
    y = [as_index(l) for l in batch.labels]
    n = len(y)
    total = 0.0
    for i in range(n):
        denom = 0.0
        for a in range(n):
            if a != i:
                denom += math.exp(float(np.dot(x[i], x[a])) / config.tau)
        positives = [j for j in range(n) if j != i and y[j] == y[i]]
        if not positives:
            raise ValueError(f"anchor {i} has no positive partner in the batch")
        acc = 0.0
        for j in positives:
            acc += math.exp(float(np.dot(x[i], x[j])) / config.tau) / denom
        total += -math.log(acc / len(positives))
    return total
