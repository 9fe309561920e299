"""Confusion matrices, precision/recall/F1 and report emission."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import no_grad
from .labels import ALL_LABELS, NUM_CLASSES, ViewLabel
from .model import ClassifierModel, EncoderModel, classify, encode

UNDEFINED = "undefined"
_SUB = str.maketrans("0123456789.-", "₀₁₂₃₄₅₆₇₈₉.₋")


@dataclass
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes."""

    counts: np.ndarray = field(default_factory=lambda: np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64))

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (NUM_CLASSES, NUM_CLASSES):
            raise ValueError(f"confusion matrix must be {NUM_CLASSES}x{NUM_CLASSES}, got {self.counts.shape}")
        if (self.counts < 0).any():
            raise ValueError("confusion counts must be non-negative")

    @classmethod
    def from_predictions(cls, truth: Sequence[int], pred: Sequence[int]):
        t = np.asarray(truth, dtype=np.int64)
        p = np.asarray(pred, dtype=np.int64)
        if t.shape != p.shape:
            raise ValueError("truth and prediction lengths differ")
        counts = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
        np.add.at(counts, (t, p), 1)
        return cls(counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def accuracy(self) -> float:
        return float(np.trace(self.counts)) / self.total if self.total else 0.0

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int
    predicted: int

    @property
    def present(self) -> bool:
        return self.support > 0 or self.predicted > 0


@dataclass
class MetricsReport:
    per_class: list[ClassMetrics]
    macro: dict[str, float]
    weighted: dict[str, float]
    accuracy: float

    def f1s(self) -> np.ndarray:
        return np.array([c.f1 for c in self.per_class])


@dataclass
class AggregateReport:
    """Mean and population std over splits, metric by metric."""

    splits: list[MetricsReport]
    class_mean: np.ndarray  # [K, 3] precision, recall, f1
    class_std: np.ndarray
    macro_mean: dict[str, float]
    macro_std: dict[str, float]
    weighted_mean: dict[str, float]
    weighted_std: dict[str, float]


def _safe_div(a: float, b: float) -> float:
    return a / b if b else 0.0


def metrics_from_confusion(cm: ConfusionMatrix) -> MetricsReport:
    """Per-class precision, recall and F1 with 0/0 taken as 0.

    The macro average runs over classes that have at least one true or one
    predicted frame; absent classes would otherwise count as spurious zeros.
    """
    c = cm.counts
    tp = np.diag(c).astype(np.float64)
    support = c.sum(axis=1)
    predicted = c.sum(axis=0)
    per = []
    for k in range(c.shape[0]):
        p = _safe_div(tp[k], predicted[k])
        r = _safe_div(tp[k], support[k])
        f = _safe_div(2 * p * r, p + r)
        per.append(ClassMetrics(float(p), float(r), float(f), int(support[k]), int(predicted[k])))
    present = [m for m in per if m.present]
    macro = {
        name: float(np.mean([getattr(m, name) for m in present])) if present else 0.0
        for name in ("precision", "recall", "f1")
    }
    total = support.sum()
    weighted = {
        name: _safe_div(sum(getattr(m, name) * m.support for m in per), total) for name in ("precision", "recall", "f1")
    }
    return MetricsReport(per, macro, {k: float(v) for k, v in weighted.items()}, cm.accuracy())


def predict(enc: EncoderModel, cls: ClassifierModel, images: np.ndarray, batch_size: int = 128) -> np.ndarray:
    """Argmax class per frame; ``np.argmax`` keeps the lowest index on ties."""
    out = []
    with no_grad():
        for start in range(0, len(images), batch_size):
            logits = classify(cls, encode(enc, images[start : start + batch_size], mode="eval"))
            out.append(np.argmax(logits.data, axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def evaluate(enc: EncoderModel, cls: ClassifierModel, frames) -> ConfusionMatrix:
    if len(frames) == 0:
        raise ValueError("cannot evaluate an empty frame set")
    return ConfusionMatrix.from_predictions(frames.labels, predict(enc, cls, frames.images))


def _mean_std(a: np.ndarray):
    # shifting by the first split keeps identical values at exactly zero std
    d = a - a[0]
    m = d.mean(axis=0)
    return a[0] + m, np.sqrt(((d - m) ** 2).mean(axis=0))


def aggregate_splits(reports: Sequence[MetricsReport]) -> AggregateReport:
    if not reports:
        raise ValueError("need at least one report")
    arr = np.array([[[m.precision, m.recall, m.f1] for m in r.per_class] for r in reports])

    def stats(key):
        vals = {n: np.array([getattr(r, key)[n] for r in reports]) for n in ("precision", "recall", "f1")}
        ms = {n: _mean_std(v) for n, v in vals.items()}
        return {n: float(m) for n, (m, _) in ms.items()}, {n: float(sd) for n, (_, sd) in ms.items()}

    mm, ms = stats("macro")
    wm, ws = stats("weighted")
    cm, cs = _mean_std(arr)
    return AggregateReport(list(reports), cm, cs, mm, ms, wm, ws)


def format_mean_std(mean: float, std: float, digits: int = 3) -> str:
    """``0.874₍.₀₁₎``: the std drops its leading zero and is subscripted."""
    s = f"{std:.2f}"
    if s.startswith("0"):
        s = s[1:]
    return f"{mean:.{digits}f}₍{s.translate(_SUB)}₎"


def table2_text(results: dict[str, AggregateReport]) -> str:
    """One row per method: macro F1, precision and recall as mean with std."""
    lines = [f"{'Method':<12} {'F1':>12} {'Precision':>12} {'Recall':>12}"]
    for name, agg in results.items():
        cells = [format_mean_std(agg.macro_mean[k], agg.macro_std[k]) for k in ("f1", "precision", "recall")]
        lines.append(f"{name:<12} " + " ".join(f"{c:>12}" for c in cells))
    return "\n".join(lines) + "\n"


@dataclass
class Comparison:
    labels: list[ViewLabel]
    f1_baseline: np.ndarray
    f1_supcon: np.ndarray
    pct_diff: list[float | str]
    flagged: list[bool]
    sizes: list[int] | None = None


def pct_diff(a: float, b: float) -> float | str:
    """``100 (b - a) / a``, or the undefined marker when ``a`` is zero."""
    if a == 0:
        return UNDEFINED
    return 100.0 * (b - a) / a


def compare_methods(a, b, threshold: float = 10.0, sizes: Sequence[int] | None = None) -> Comparison:
    """Per-class F1 differences of method ``b`` relative to baseline ``a``.

    Accepts single-split or aggregated reports; aggregates compare mean F1.
    """
    fa, fb = _class_f1(a), _class_f1(b)
    if fa.shape != fb.shape:
        raise ValueError("reports cover different class sets")
    diffs = [pct_diff(float(x), float(y)) for x, y in zip(fa, fb)]
    flags = [d != UNDEFINED and abs(d) > threshold for d in diffs]
    return Comparison(list(ALL_LABELS), fa, fb, diffs, flags, list(sizes) if sizes is not None else None)


def _class_f1(r) -> np.ndarray:
    if isinstance(r, AggregateReport):
        return r.class_mean[:, 2].copy()
    return r.f1s()


def _fmt_pct(d) -> str:
    return d if isinstance(d, str) else f"{d:+.2f}"


def table3_text(cmp: Comparison) -> str:
    lines = [f"{'View':<8} {'Contrast':<9} {'Size':>5} {'Baseline':>9} {'SupCon':>9} {'%Diff':>10}"]
    for i, label in enumerate(cmp.labels):
        size = "" if cmp.sizes is None else str(cmp.sizes[i])
        mark = " *" if cmp.flagged[i] else ""
        lines.append(
            f"{label.view:<8} {('yes' if label.contrast else 'no'):<9} {size:>5} "
            f"{cmp.f1_baseline[i]:>9.3f} {cmp.f1_supcon[i]:>9.3f} {_fmt_pct(cmp.pct_diff[i]):>10}{mark}"
        )
    lines.append("* |%Diff| above threshold")
    return "\n".join(lines) + "\n"


def write_report_csv(path, reports: dict[str, MetricsReport]) -> None:
    """Rows per (split, class) plus ``macro`` and ``weighted`` summary rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class", "contrast", "split", "precision", "recall", "f1"])
        for split, rep in reports.items():
            for label, m in zip(ALL_LABELS, rep.per_class):
                w.writerow([label.view, int(label.contrast), split, repr(m.precision), repr(m.recall), repr(m.f1)])
            for name in ("macro", "weighted"):
                agg = getattr(rep, name)
                w.writerow([name, "", split, repr(agg["precision"]), repr(agg["recall"]), repr(agg["f1"])])


def read_report_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in ("precision", "recall", "f1"):
            r[k] = float(r[k])
    return rows


def write_comparison_csv(path, cmp: Comparison) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class", "contrast", "f1_baseline", "f1_supcon", "pct_diff", "flagged"])
        for i, label in enumerate(cmp.labels):
            d = cmp.pct_diff[i]
            w.writerow([
                label.view, int(label.contrast), repr(float(cmp.f1_baseline[i])), repr(float(cmp.f1_supcon[i])),
                d if isinstance(d, str) else repr(d), int(cmp.flagged[i]),
            ])


def comparison_svg(cmp: Comparison, width: int = 720, height: int = 320) -> str:
    """Static bar chart of per-class F1 deltas (supcon minus baseline)."""
    deltas = np.asarray(cmp.f1_supcon, dtype=np.float64) - np.asarray(cmp.f1_baseline, dtype=np.float64)
    span = max(0.05, float(np.abs(deltas).max()) if len(deltas) else 0.05)
    left, right, top, bottom = 50, 10, 20, 60
    plot_w, plot_h = width - left - right, height - top - bottom
    mid = top + plot_h / 2
    bar_w = plot_w / max(1, len(deltas))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{left}" y="14" font-size="12" font-family="sans-serif">F1 delta per class (supcon - baseline)</text>',
        f'<line x1="{left}" y1="{mid:.1f}" x2="{width - right}" y2="{mid:.1f}" stroke="black"/>',
        f'<text x="4" y="{top + 10}" font-size="10" font-family="sans-serif">+{span:.3f}</text>',
        f'<text x="4" y="{top + plot_h}" font-size="10" font-family="sans-serif">-{span:.3f}</text>',
    ]
    for i, (label, d) in enumerate(zip(cmp.labels, deltas)):
        h = abs(d) / span * (plot_h / 2)
        x = left + i * bar_w + bar_w * 0.15
        y = mid - h if d >= 0 else mid
        color = "#2b8a3e" if d >= 0 else "#c92a2a"
        parts.append(f'<rect x="{x:.1f}" y="{y:.1f}" width="{bar_w * 0.7:.1f}" height="{h:.1f}" fill="{color}"/>')
        tx, ty = left + (i + 0.5) * bar_w, top + plot_h + 12
        parts.append(
            f'<text x="{tx:.1f}" y="{ty:.1f}" font-size="9" font-family="sans-serif" '
            f'text-anchor="end" transform="rotate(-45 {tx:.1f} {ty:.1f})">{label.short}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def median_pct_diff(values: Sequence[float | str]) -> float | str:
    nums = [v for v in values if not isinstance(v, str) and math.isfinite(v)]
    return float(np.median(nums)) if nums else UNDEFINED
