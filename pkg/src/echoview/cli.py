"""``echoview`` command line.

Exit codes: 0 success, 1 validation or usage error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from . import gradsuite
from . import runs
from .config import ConfigFileError, resolve
from .dataset import ManifestError, PGMError, paper_shaped_spec, synth_generate, uniform_spec
from .labels import ALL_LABELS
from .model import ConfigError
from .training import CheckpointError, NumericalError

log = logging.getLogger("echoview")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ------------------------------------------------------------------ synth


def _class_list(text: str):
    if text == "all":
        return list(ALL_LABELS)
    by_short = {l.short: l for l in ALL_LABELS}
    out = []
    for name in text.split(","):
        name = name.strip()
        if name not in by_short:
            raise UsageError(f"unknown class {name!r}; expected 'all' or names like {', '.join(by_short)}")
        out.append(by_short[name])
    return out


def cmd_synth(args) -> int:
    if args.paper_shaped:
        spec = paper_shaped_spec(args.scale, min_train=args.min_echos, min_test=args.min_test)
        if args.classes != "all":
            keep = set(_class_list(args.classes))
            spec = {k: v for k, v in spec.items() if k in keep}
    else:
        spec = uniform_spec(args.echos, test_frac=args.test_frac, labels=_class_list(args.classes))
    frames = (args.frames, args.frames) if args.frames else (args.frames_min, args.frames_max)
    out = runs.prepare_out_dir(args.out, args.force)
    man = synth_generate(out, spec, frames_per_echo=frames, image_size=args.image_size, seed=args.seed)
    echos = man.echos()
    n_train = sum(1 for recs in echos.values() if recs[0].split == "train")
    print(f"wrote {len(echos)} echos ({n_train} train, {len(echos) - n_train} test), {len(man)} frames to {out}")
    return EXIT_OK


# ------------------------------------------------------------------ train

_TRAIN_FLAGS = {
    "method": "method",
    "seed": "seed",
    "splits": "splits",
    "subsample": "subsample",
    "threads": "threads",
    "batch_size": "batch_size",
    "learning_rate": "learning_rate",
    "max_epochs": "max_epochs",
    "patience": "patience",
    "tau": "tau",
    "precision": "precision",
    "input_size": "input_size",
    "channels": "block_channels",
    "stage2_epochs": "stage2_max_epochs",
    "stage2_lr": "stage2_learning_rate",
    "crop": "crop_size",
}


def _add_train_flags(p: argparse.ArgumentParser, with_method: bool = True) -> None:
    p.add_argument("data", help="dataset directory or manifest.csv")
    p.add_argument("out", help="run directory to create")
    p.add_argument("--config", help="flat key = value config file")
    if with_method:
        p.add_argument("--method", help="baseline or supcon")
    p.add_argument("--seed", type=int)
    p.add_argument("--splits", type=int, help="number of resampled train/validation splits")
    p.add_argument("--subsample", type=int, help="keep at most N training echos per class")
    p.add_argument("--threads", type=int, help="worker threads (0 = all cores)")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--precision", type=int, choices=(32, 64))
    p.add_argument("--input-size", type=int)
    p.add_argument("--channels", help="five comma-separated block channel counts")
    p.add_argument("--stage2-epochs", type=int)
    p.add_argument("--stage2-lr", type=float)
    p.add_argument("--force", action="store_true", help="overwrite a non-empty run directory")


def _run_config(args, **extra):
    flags = {key: getattr(args, name, None) for name, key in _TRAIN_FLAGS.items()}
    flags["data"] = str(args.data)
    flags.update(extra)
    return resolve(args.config, flags)


def cmd_train(args) -> int:
    cfg = _run_config(args)
    t0 = time.perf_counter()
    out = runs.train_run(cfg, args.out, force=args.force)
    print(f"trained {cfg.splits} split(s) with method {cfg.method} in {time.perf_counter() - t0:.1f}s -> {out}")
    return EXIT_OK


# ------------------------------------------------------------------- eval


def cmd_eval(args) -> int:
    if args.compare:
        a, b = args.compare
        out = args.out or Path(b) / "compare"
        _, text = runs.compare_runs(a, b, out, which=args.on, threshold=args.threshold, data=args.data)
        print(text, end="")
        print(f"comparison written to {out}")
        return EXIT_OK
    if not args.run:
        raise UsageError("eval needs a run directory or --compare A B")
    result = runs.evaluate_run(args.run, args.data)
    print(runs.write_run_reports(args.run, result), end="")
    return EXIT_OK


# -------------------------------------------------------------- gradcheck


def cmd_gradcheck(args) -> int:
    t0 = time.perf_counter()
    results = gradsuite.run_suite(args.instances, args.seed, args.tol, args.h, args.e2e_instances)
    print(gradsuite.format_results(results, args.tol, args.h), end="")
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} cases passed in {time.perf_counter() - t0:.1f}s")
    if failed:
        worst = max(failed, key=lambda r: r.max_rel_error)
        print(f"worst offender: {worst.name}: {worst.worst}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


# ----------------------------------------------------------------- ablate


def cmd_ablate(args) -> int:
    chosen = [name for name in ("crop", "batch_size") if getattr(args, name) is not None]
    if len(chosen) != 1:
        raise UsageError("ablate needs exactly one of --crop or --batch-size")
    out = runs.prepare_out_dir(args.out, args.force)
    base_cfg = _run_config(args, crop_size=None, batch_size=None)
    if chosen[0] == "crop":
        variant_cfg = base_cfg.replace(crop_size=args.crop)
        label = f"crop {args.crop}"
    else:
        variant_cfg = base_cfg.replace(batch_size=args.batch_size)
        label = f"batch size {args.batch_size}"
    variant_cfg.validate()
    if args.reference:
        reference = Path(args.reference)
    else:
        reference = runs.train_run(base_cfg, out / "reference")
    variant = runs.train_run(variant_cfg, out / "variant")
    ref_eval, var_eval = runs.evaluate_run(reference), runs.evaluate_run(variant)
    runs.write_run_reports(variant, var_eval)
    summary = runs.ablation_summary(ref_eval, var_eval, label)
    (out / "ablation.txt").write_text(summary)
    if ref_eval.test and var_eval.test:
        runs.compare_runs(reference, variant, out / "compare")
    print(summary, end="")
    return EXIT_OK


# ------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="echoview", description="Contrastive echo view classification at desk scale.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic sector-scan dataset")
    s.add_argument("out")
    s.add_argument("--classes", default="all", help="'all' or comma-separated class names (c-2ch, plax, ...)")
    s.add_argument("--echos", type=int, default=4, help="echos per class (uniform spec)")
    s.add_argument("--frames", type=int, help="fixed frames per echo")
    s.add_argument("--frames-min", type=int, default=8)
    s.add_argument("--frames-max", type=int, default=16)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--paper-shaped", action="store_true", help="class imbalance mirroring the clinical dataset")
    s.add_argument("--scale", type=float, default=0.1)
    s.add_argument("--min-echos", type=int, default=1, help="floor on training echos per class (paper-shaped)")
    s.add_argument("--min-test", type=int, default=1, help="floor on test echos per class (paper-shaped)")
    s.add_argument("--test-frac", type=float, default=0.25)
    s.add_argument("--image-size", type=int, default=96)
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train on resampled splits")
    _add_train_flags(t)
    t.add_argument("--crop", type=int, help="random crop size for augmentation")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a run on validation and test frames")
    e.add_argument("run", nargs="?")
    e.add_argument("--data", help="override the dataset recorded in the run config")
    e.add_argument("--compare", nargs=2, metavar=("BASELINE", "SUPCON"))
    e.add_argument("--out", help="directory for comparison outputs")
    e.add_argument("--on", choices=("test", "validation"), default="test")
    e.add_argument("--threshold", type=float, default=10.0, help="flag classes with |%%diff| above this")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference verification of every backward rule")
    g.add_argument("--tol", type=float, default=1e-4)
    g.add_argument("--h", type=float, default=1e-5)
    g.add_argument("--instances", type=int, default=100)
    g.add_argument("--e2e-instances", type=int, default=3)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gradcheck)

    a = sub.add_parser("ablate", help="train a variant and compare it against a reference run")
    _add_train_flags(a)
    a.add_argument("--crop", type=int, help="random crop size, e.g. 140")
    a.add_argument("--reference", help="existing run directory to compare against")
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (UsageError, ConfigFileError, ConfigError, ManifestError, PGMError, CheckpointError, runs.RunDirError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
