"""Run directories: multi-split training, evaluation and comparison.

Layout of a training run::

    config.txt              resolved configuration
    split_<k>/checkpoint.supc
    split_<k>/log.csv
    split_<k>/val_echos.txt
"""

from __future__ import annotations

import logging
import os
import shutil
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import evaluation as ev
from .config import RunConfig, defaults, parse_config_text
from .dataset import Manifest, load_frames, load_manifest, split_folds, subsample_per_class
from .labels import ALL_LABELS
from .model import ModelConfig, build_model
from .training import load_checkpoint, load_parts, save_checkpoint, train, write_log

log = logging.getLogger(__name__)

CONFIG_NAME = "config.txt"
CHECKPOINT_NAME = "checkpoint.supc"


class RunDirError(ValueError):
    pass


def manifest_path(data: str | os.PathLike) -> Path:
    p = Path(data)
    return p / "manifest.csv" if p.is_dir() else p


def prepare_out_dir(out: str | os.PathLike, force: bool) -> Path:
    """Refuse to reuse a non-empty directory unless ``force`` is set."""
    p = Path(out)
    if p.exists() and any(p.iterdir()):
        if not force:
            raise RunDirError(f"output directory {p} is not empty; pass --force to overwrite")
        shutil.rmtree(p)
    p.mkdir(parents=True, exist_ok=True)
    return p


def worker_count(threads: int) -> int:
    return threads if threads > 0 else (os.cpu_count() or 1)


@contextmanager
def compute_context(threads: int):
    """Worker pool for loading and augmentation.

    BLAS stays single-threaded: its reduction order may depend on the thread
    count, which would break bitwise reproducibility across ``--threads``.
    """
    with threadpool_limits(1), ThreadPoolExecutor(max_workers=worker_count(threads)) as pool:
        yield pool


def split_dir(run: Path, k: int) -> Path:
    return run / f"split_{k}"


def list_splits(run: str | os.PathLike) -> list[Path]:
    run = Path(run)
    dirs = sorted(
        (d for d in run.glob("split_*") if (d / CHECKPOINT_NAME).exists()),
        key=lambda d: int(d.name.split("_")[1]),
    )
    if not dirs:
        raise RunDirError(f"no split checkpoints under {run}")
    return dirs


def read_run_config(run: str | os.PathLike) -> RunConfig:
    path = Path(run) / CONFIG_NAME
    if not path.exists():
        raise RunDirError(f"{path} not found")
    cfg = RunConfig({**defaults().values, **parse_config_text(path.read_text(), str(path))})
    cfg.validate()
    return cfg


def training_manifest(cfg: RunConfig) -> Manifest:
    man = load_manifest(manifest_path(cfg.data))
    if cfg.subsample is not None:
        man = subsample_per_class(man, cfg.subsample, seed=cfg.seed, split="train")
    return man


def train_run(cfg: RunConfig, out: str | os.PathLike, force: bool = False) -> Path:
    """Train ``cfg.splits`` resampled splits and write the run directory."""
    if cfg.data is None:
        raise RunDirError("no dataset given")
    man = training_manifest(cfg)
    train_man = man.select("train")
    if len(train_man) == 0:
        raise RunDirError("manifest has no training frames")
    out = prepare_out_dir(out, force)
    (out / CONFIG_NAME).write_text(cfg.to_text())
    folds = split_folds(train_man, n_splits=cfg.splits, validation_frac=cfg.validation_frac, seed=cfg.seed)
    tcfg, mcfg, acfg = cfg.train_config(), cfg.model_config(), cfg.augment_config()
    with compute_context(cfg.threads) as pool:
        frames = load_frames(train_man, mcfg.input_size, pool, tcfg.dtype)
        for fold in folds:
            d = split_dir(out, fold.index)
            d.mkdir()
            (d / "val_echos.txt").write_text("".join(f"{e}\n" for e in fold.val_echos))
            parts = build_model(mcfg, seed=cfg.seed + fold.index, dtype=tcfg.dtype)
            log.info("split %d: %d train / %d validation echos", fold.index, len(fold.train_echos), len(fold.val_echos))
            result = train(
                parts,
                frames.select_echos(fold.train_echos),
                frames.select_echos(fold.val_echos),
                tcfg,
                acfg,
                pool,
            )
            result.checkpoint.metadata["split"] = fold.index
            save_checkpoint(result.checkpoint, d / CHECKPOINT_NAME)
            write_log(result.log, d / "log.csv")
    return out


@dataclass
class RunEvaluation:
    validation: dict[str, ev.MetricsReport]
    test: dict[str, ev.MetricsReport]
    train_sizes: list[int]

    def aggregate(self, which: str) -> ev.AggregateReport:
        return ev.aggregate_splits(list(getattr(self, which).values()))


def _model_from_checkpoint(path: Path, dtype):
    ckpt = load_checkpoint(path)
    mc = dict(ckpt.config["model"])
    mc["block_channels"] = tuple(mc["block_channels"])
    enc, _, cls = build_model(ModelConfig(**mc), dtype=dtype)
    load_parts(ckpt, (enc, cls))
    return enc, cls


def evaluate_run(run: str | os.PathLike, data: str | os.PathLike | None = None, threads: int | None = None) -> RunEvaluation:
    run = Path(run)
    cfg = read_run_config(run)
    if data is not None:
        cfg = cfg.replace(data=str(data))
    if cfg.data is None:
        raise RunDirError("run config names no dataset; pass --data")
    man = training_manifest(cfg)
    test_man, train_man = man.select("test"), man.select("train")
    dtype = cfg.train_config().dtype
    validation, test = {}, {}
    with compute_context(cfg.threads if threads is None else threads) as pool:
        size = cfg.input_size
        test_frames = load_frames(test_man, size, pool, dtype) if len(test_man) else None
        train_frames = load_frames(train_man, size, pool, dtype)
        for d in list_splits(run):
            enc, cls = _model_from_checkpoint(d / CHECKPOINT_NAME, dtype)
            val_echos = [e for e in (d / "val_echos.txt").read_text().split() if e]
            val_frames = train_frames.select_echos(val_echos)
            if len(val_frames):
                validation[d.name] = ev.metrics_from_confusion(ev.evaluate(enc, cls, val_frames))
            if test_frames is not None:
                test[d.name] = ev.metrics_from_confusion(ev.evaluate(enc, cls, test_frames))
    counts = train_man.class_counts("echo")
    return RunEvaluation(validation, test, [counts.get(l, 0) for l in ALL_LABELS])


def write_run_reports(run: str | os.PathLike, result: RunEvaluation, name: str | None = None) -> str:
    run = Path(run)
    name = name or read_run_config(run).method
    text = []
    for which in ("validation", "test"):
        reports = getattr(result, which)
        if not reports:
            continue
        ev.write_report_csv(run / f"report_{which}.csv", reports)
        text.append(f"[{which}] macro over {len(reports)} split(s)\n" + ev.table2_text({name: result.aggregate(which)}))
    out = "\n".join(text)
    (run / "table2.txt").write_text(out)
    return out


def _classes_present(man: Manifest) -> set:
    return {r.label for r in man.records}


def compare_runs(
    baseline_run: str | os.PathLike,
    supcon_run: str | os.PathLike,
    out: str | os.PathLike,
    which: str = "test",
    threshold: float = 10.0,
    data: str | os.PathLike | None = None,
) -> tuple[ev.Comparison, str]:
    """Evaluate both runs and write ``comparison.csv``, ``comparison.svg``,
    ``table2.txt`` and ``table3.txt`` under ``out``."""
    ca, cb = read_run_config(baseline_run), read_run_config(supcon_run)
    ma = training_manifest(ca if data is None else ca.replace(data=str(data)))
    mb = training_manifest(cb if data is None else cb.replace(data=str(data)))
    if _classes_present(ma) != _classes_present(mb):
        raise RunDirError("runs cover different class sets")
    ra, rb = evaluate_run(baseline_run, data), evaluate_run(supcon_run, data)
    if not getattr(ra, which) or not getattr(rb, which):
        raise RunDirError(f"no {which} frames to compare on")
    agg_a, agg_b = ra.aggregate(which), rb.aggregate(which)
    cmp = ev.compare_methods(agg_a, agg_b, threshold=threshold, sizes=ra.train_sizes)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    ev.write_comparison_csv(out / "comparison.csv", cmp)
    (out / "comparison.svg").write_text(ev.comparison_svg(cmp))
    t2 = ev.table2_text({f"{ca.method}": agg_a, f"{cb.method}": agg_b})
    t3 = ev.table3_text(cmp)
    (out / "table2.txt").write_text(t2)
    (out / "table3.txt").write_text(t3)
    return cmp, f"[{which}] macro mean and std over splits\n{t2}\n[{which}] per-class F1\n{t3}"


def macro_f1(result: RunEvaluation, which: str = "test") -> float:
    return result.aggregate(which).macro_mean["f1"]


def ablation_summary(reference: RunEvaluation, variant: RunEvaluation, label: str) -> str:
    lines = [f"ablation: {label}"]
    for which in ("validation", "test"):
        if not getattr(reference, which) or not getattr(variant, which):
            continue
        a, b = macro_f1(reference, which), macro_f1(variant, which)
        d = ev.pct_diff(a, b)
        ds = d if isinstance(d, str) else f"{d:+.2f}%"
        lines.append(f"{which:<10} macro F1 reference {a:.3f} variant {b:.3f} diff {ds}")
    return "\n".join(lines) + "\n"
