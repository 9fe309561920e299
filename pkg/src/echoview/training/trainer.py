"""Baseline and two-stage contrastive training loops."""

from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import Executor
from dataclasses import asdict, dataclass, field

import numpy as np

from ..augment import AugmentConfig, augment_batch, make_contrastive_batch
from ..autodiff import Tensor, backward, default_graph, no_grad
from ..dataset.frames import FrameSet
from ..dataset.manifest import batch_iter
from ..losses import ContrastiveBatch, LossConfig, cross_entropy_view, supcon_loss
from ..model import ClassifierModel, EncoderModel, ModelConfig, ProjectionModel, classify, encode, project, set_frozen
from .adam import AdamState, adam_step
from .checkpoint import Checkpoint

log = logging.getLogger(__name__)

EVAL_BATCH = 128
VALIDATION_STREAM = 0x7A11D


class NumericalError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 64
    max_epochs: int = 50
    patience: int = 10
    tau: float = 1000.0
    seed: int = 0
    precision: int = 32
    method: str = "baseline"
    stage2_max_epochs: int | None = None
    stage2_learning_rate: float | None = None

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.precision not in (32, 64):
            raise ValueError("precision must be 32 or 64")
        if self.method not in ("baseline", "supcon"):
            raise ValueError(f"method must be 'baseline' or 'supcon', got {self.method!r}")
        if not self.tau > 0:
            raise ValueError("tau must be positive")

    @property
    def dtype(self):
        return np.float32 if self.precision == 32 else np.float64


@dataclass
class LogRow:
    epoch: int
    stage: str
    train_loss: float
    val_loss: float
    seconds: float


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list[LogRow] = field(default_factory=list)


def early_stop(history, patience: int) -> tuple[bool, int]:
    """Return ``(stop, best)`` for a loss history.

    ``best`` is the earliest index of the minimum; training stops once
    ``patience`` epochs have passed without a strict improvement on it.
    """
    if not history:
        raise ValueError("history must be non-empty")
    best = int(np.argmin(np.asarray(history, dtype=np.float64)))
    return (len(history) - 1 - best) >= patience, best


def write_log(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "stage", "train_loss", "val_loss", "seconds"])
        for r in rows:
            w.writerow([r.epoch, r.stage, repr(float(r.train_loss)), repr(float(r.val_loss)), f"{r.seconds:.3f}"])


def read_log(path) -> list[LogRow]:
    with open(path, newline="") as fh:
        return [
            LogRow(int(r["epoch"]), r["stage"], float(r["train_loss"]), float(r["val_loss"]), float(r["seconds"]))
            for r in csv.DictReader(fh)
        ]


def _check_finite(value: float, stage: str, epoch: int, step: int) -> None:
    if not math.isfinite(value):
        raise NumericalError(f"non-finite {stage} loss at epoch {epoch}, step {step}")


def _positions(frames: FrameSet):
    return {rec: i for i, rec in enumerate(frames.records)}


def _epoch_batches(frames: FrameSet, batch_size: int, seed, pos=None):
    pos = pos if pos is not None else _positions(frames)
    for batch in batch_iter(frames.records, batch_size, seed):
        yield [pos[rec] for rec, _ in batch]


def validation_ce(enc: EncoderModel, cls: ClassifierModel, frames: FrameSet) -> float:
    """Frame-weighted mean cross-entropy, eval mode, no augmentation."""
    if len(frames) == 0:
        return float("nan")
    total = 0.0
    with no_grad():
        for start in range(0, len(frames), EVAL_BATCH):
            sl = slice(start, start + EVAL_BATCH)
            logits = classify(cls, encode(enc, frames.images[sl], mode="eval"))
            loss = cross_entropy_view(logits, frames.labels[sl])
            total += float(loss.data) * logits.shape[0]
    return total / len(frames)


def validation_supcon(
    enc: EncoderModel,
    proj: ProjectionModel,
    frames: FrameSet,
    batch_size: int,
    augment: AugmentConfig,
    loss_cfg: LossConfig,
    seed: int,
    executor: Executor | None = None,
) -> float:
    """Contrastive loss per anchor over fixed-seed validation batches."""
    if len(frames) == 0:
        return float("nan")
    total, anchors = 0.0, 0
    with no_grad():
        for start in range(0, len(frames), batch_size):
            idx = list(range(start, min(start + batch_size, len(frames))))
            value, n = _supcon_forward(enc, proj, frames, idx, augment, loss_cfg, (seed, VALIDATION_STREAM), "eval", executor)
            total += float(value.data)
            anchors += n
    return total / anchors


def _supcon_forward(enc, proj, frames: FrameSet, idx, augment, loss_cfg, batch_seed, mode, executor):
    pairs = list(zip(frames.frame_images(idx), frames.label_list(idx)))
    views = make_contrastive_batch(pairs, augment, batch_seed, sample_ids=frames.ids[idx], executor=executor)
    z = project(proj, encode(enc, views.images, mode=mode))
    batch = ContrastiveBatch(z, views.labels, views.twin_index)
    return supcon_loss(batch, loss_cfg), len(views.labels)


class _BestKeeper:
    def __init__(self, parts):
        self.parts = parts
        self.state = [p.copy_state() for p in parts]

    def update(self):
        self.state = [p.copy_state() for p in self.parts]

    def restore(self):
        for part, st in zip(self.parts, self.state):
            part.load_arrays(st)


def _stage(name, epochs, patience, run_epoch, validate, keeper, rows, start_epoch=0):
    history: list[float] = []
    for epoch in range(start_epoch, start_epoch + epochs):
        t0 = time.perf_counter()
        train_loss = run_epoch(epoch)
        val_loss = validate()
        if not math.isfinite(val_loss):
            raise NumericalError(f"non-finite {name} validation loss at epoch {epoch}")
        history.append(val_loss)
        rows.append(LogRow(epoch, name, train_loss, val_loss, time.perf_counter() - t0))
        stop, best = early_stop(history, patience)
        log.info("%s epoch %d: train %.5f val %.5f%s", name, epoch, train_loss, val_loss, " *" if best == len(history) - 1 else "")
        if best == len(history) - 1:
            keeper.update()
        if stop:
            break
    keeper.restore()
    best = int(np.argmin(history))
    return best, history[best]


def _config_echo(model_cfg: ModelConfig, config: TrainConfig, augment: AugmentConfig) -> dict:
    aug = asdict(augment)
    aug["contrast_range"] = list(augment.contrast_range)
    return {"model": model_cfg.to_dict(), "train": asdict(config), "augment": aug}


def _checkpoint(parts, adam: AdamState, model_cfg, config, augment, meta) -> Checkpoint:
    tensors = {}
    for part in parts:
        tensors.update({k: v.copy() for k, v in part.state_arrays().items()})
    tensors.update({k: np.array(v, copy=True) for k, v in adam.arrays().items()})
    return Checkpoint(tensors, _config_echo(model_cfg, config, augment), meta)


def train_baseline(
    parts,
    train: FrameSet,
    val: FrameSet,
    config: TrainConfig,
    augment: AugmentConfig = AugmentConfig(),
    executor: Executor | None = None,
) -> TrainResult:
    """Encoder and classifier trained jointly on cross-entropy."""
    enc, _, cls = parts
    if len(train) == 0:
        raise ValueError("no training frames")
    params = {**enc.params, **cls.params}
    adam = AdamState()
    rows: list[LogRow] = []
    pos = _positions(train)

    def run_epoch(epoch):
        total, seen = 0.0, 0
        for step, idx in enumerate(_epoch_batches(train, config.batch_size, (config.seed, 0, epoch), pos)):
            default_graph().clear()
            x = augment_batch(train.frame_images(idx), augment, (config.seed, 0, epoch), train.ids[idx], executor)
            loss = cross_entropy_view(classify(cls, encode(enc, x, "train")), train.labels[idx])
            value = float(loss.data)
            _check_finite(value, "baseline", epoch, step)
            for p in params.values():
                p.grad = None
            backward(loss)
            adam_step(params, adam, config.learning_rate)
            total += value * len(idx)
            seen += len(idx)
        return total / seen

    keeper = _BestKeeper([enc, cls])
    best, best_val = _stage(
        "baseline", config.max_epochs, config.patience, run_epoch, lambda: validation_ce(enc, cls, val), keeper, rows
    )
    meta = {"method": "baseline", "best_epoch": best, "best_val_loss": best_val, "epochs_run": len(rows)}
    return TrainResult(_checkpoint([enc, cls], adam, enc.config, config, augment, meta), rows)


def train_supcon(
    parts,
    train: FrameSet,
    val: FrameSet,
    config: TrainConfig,
    augment: AugmentConfig = AugmentConfig(),
    executor: Executor | None = None,
) -> TrainResult:
    """Contrastive encoder pre-training, then a classifier on the frozen encoder.

    Stage 1 draws ``batch_size`` distinct frames per step and augments each
    twice. Stage 2 never touches encoder tensors or batch-norm statistics.
    """
    enc, proj, cls = parts
    if len(train) == 0:
        raise ValueError("no training frames")
    loss_cfg = LossConfig(tau=config.tau)
    rows: list[LogRow] = []
    pos = _positions(train)

    set_frozen(enc, False)
    params1 = {**enc.params, **proj.params}
    adam1 = AdamState()

    def run_pretrain(epoch):
        total, anchors = 0.0, 0
        for step, idx in enumerate(_epoch_batches(train, config.batch_size, (config.seed, 1, epoch), pos)):
            default_graph().clear()
            loss, n = _supcon_forward(enc, proj, train, idx, augment, loss_cfg, (config.seed, 1, epoch), "train", executor)
            value = float(loss.data)
            _check_finite(value, "supcon", epoch, step)
            for p in params1.values():
                p.grad = None
            backward(loss)
            adam_step(params1, adam1, config.learning_rate)
            total += value
            anchors += n
        return total / anchors

    keeper1 = _BestKeeper([enc, proj])
    best1, val1 = _stage(
        "pretrain",
        config.max_epochs,
        config.patience,
        run_pretrain,
        lambda: validation_supcon(enc, proj, val, config.batch_size, augment, loss_cfg, config.seed, executor),
        keeper1,
        rows,
    )

    set_frozen(enc, True)
    adam2 = AdamState()
    lr2 = config.stage2_learning_rate or config.learning_rate
    epochs2 = config.stage2_max_epochs or config.max_epochs

    def run_classifier(epoch):
        total, seen = 0.0, 0
        for step, idx in enumerate(_epoch_batches(train, config.batch_size, (config.seed, 2, epoch), pos)):
            default_graph().clear()
            x = augment_batch(train.frame_images(idx), augment, (config.seed, 2, epoch), train.ids[idx], executor)
            with no_grad():
                feats = encode(enc, x, "eval")
            loss = cross_entropy_view(classify(cls, Tensor(feats.data)), train.labels[idx])
            value = float(loss.data)
            _check_finite(value, "classifier", epoch, step)
            for p in cls.params.values():
                p.grad = None
            backward(loss)
            adam_step(cls.params, adam2, lr2)
            total += value * len(idx)
            seen += len(idx)
        return total / seen

    keeper2 = _BestKeeper([cls])
    best2, val2 = _stage(
        "classifier", epochs2, config.patience, run_classifier, lambda: validation_ce(enc, cls, val), keeper2, rows
    )
    set_frozen(enc, False)
    meta = {
        "method": "supcon",
        "pretrain_best_epoch": best1,
        "pretrain_best_val_loss": val1,
        "best_epoch": best2,
        "best_val_loss": val2,
        "epochs_run": len(rows),
    }
    return TrainResult(_checkpoint([enc, proj, cls], adam2, enc.config, config, augment, meta), rows)


def train(parts, train_frames: FrameSet, val_frames: FrameSet, config: TrainConfig, augment=AugmentConfig(), executor=None):
    fn = train_baseline if config.method == "baseline" else train_supcon
    return fn(parts, train_frames, val_frames, config, augment, executor)


def load_parts(ckpt: Checkpoint, parts) -> None:
    """Copy checkpoint tensors into existing model parts (shape-checked)."""
    for part in parts:
        if part is None:
            continue
        if part.prefix == "projection" and not any(k.startswith("projection.") for k in ckpt.tensors):
            continue
        part.load_arrays(ckpt.tensors)
