"""Frame index: subjects, echocardiograms, frames and their view labels."""

from __future__ import annotations

import csv
import os
import warnings
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from ..labels import VIEWS, ViewLabel

MANIFEST_HEADER = ("path", "subject_id", "echo_id", "frame_index", "view", "contrast", "split")
SPLITS = ("train", "test")


class ManifestError(ValueError):
    """Base class for manifest validation failures."""


class ManifestFormatError(ManifestError):
    pass


class UnknownViewError(ManifestError):
    pass


class DuplicateFrameError(ManifestError):
    pass


class EchoLabelError(ManifestError):
    """Frames of one echocardiogram disagree on label or subject."""


class EchoSplitError(ManifestError):
    pass


class SubjectSplitError(ManifestError):
    pass


@dataclass(frozen=True)
class FrameRecord:
    path: str
    subject_id: str
    echo_id: str
    frame_index: int
    label: ViewLabel
    split: str = "train"


@dataclass(frozen=True)
class Manifest:
    records: tuple[FrameRecord, ...]
    root: str = ""

    def __post_init__(self):
        validate_records(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[FrameRecord]:
        return iter(self.records)

    def resolve(self, record: FrameRecord) -> str:
        if os.path.isabs(record.path) or not self.root:
            return record.path
        return os.path.join(self.root, record.path)

    def select(self, split: str | None = None, echos: Iterable[str] | None = None) -> "Manifest":
        keep = None if echos is None else set(echos)
        recs = tuple(
            r for r in self.records
            if (split is None or r.split == split) and (keep is None or r.echo_id in keep)
        )
        return Manifest(recs, self.root)

    def echos(self) -> dict[str, list[FrameRecord]]:
        """Echo id -> frames, in first-appearance order."""
        out: dict[str, list[FrameRecord]] = {}
        for r in self.records:
            out.setdefault(r.echo_id, []).append(r)
        return out

    def echo_labels(self) -> dict[str, ViewLabel]:
        return {e: frames[0].label for e, frames in self.echos().items()}

    def class_counts(self, unit: str = "echo") -> dict[ViewLabel, int]:
        counts = {label: 0 for label in ViewLabel}
        if unit == "echo":
            for label in self.echo_labels().values():
                counts[label] += 1
        else:
            for r in self.records:
                counts[r.label] += 1
        return counts


def validate_records(records: Sequence[FrameRecord], rows: Sequence[int] | None = None) -> None:
    """Enforce the manifest invariants, naming the first offending row."""
    rows = rows if rows is not None else [i + 2 for i in range(len(records))]
    seen: dict[tuple[str, int], int] = {}
    echo_info: dict[str, tuple[ViewLabel, str, str, int]] = {}
    subject_split: dict[str, tuple[str, int]] = {}
    for rec, row in zip(records, rows):
        if rec.split not in SPLITS:
            raise ManifestFormatError(f"row {row}: split must be one of {SPLITS}, got {rec.split!r}")
        key = (rec.echo_id, rec.frame_index)
        if key in seen:
            raise DuplicateFrameError(
                f"row {row}: duplicate frame {rec.frame_index} of echo {rec.echo_id!r} (first at row {seen[key]})"
            )
        seen[key] = row
        info = echo_info.get(rec.echo_id)
        if info is None:
            echo_info[rec.echo_id] = (rec.label, rec.subject_id, rec.split, row)
        else:
            label, subject, split, first = info
            if split != rec.split:
                raise EchoSplitError(
                    f"row {row}: echo {rec.echo_id!r} is in {rec.split!r} but row {first} put it in {split!r}"
                )
            if label != rec.label or subject != rec.subject_id:
                raise EchoLabelError(
                    f"row {row}: echo {rec.echo_id!r} disagrees with row {first} on label or subject"
                )
        sub = subject_split.get(rec.subject_id)
        if sub is None:
            subject_split[rec.subject_id] = (rec.split, row)
        elif sub[0] != rec.split:
            raise SubjectSplitError(
                f"row {row}: subject {rec.subject_id!r} appears in both {sub[0]!r} (row {sub[1]}) and {rec.split!r}"
            )


def _parse_row(row: dict, lineno: int) -> FrameRecord:
    view = row["view"].strip()
    if view not in VIEWS:
        raise UnknownViewError(f"row {lineno}: unknown view {view!r}")
    contrast_s = row["contrast"].strip()
    if contrast_s not in ("0", "1"):
        raise ManifestFormatError(f"row {lineno}: contrast must be 0 or 1, got {contrast_s!r}")
    try:
        label = ViewLabel.from_parts(view, contrast_s == "1")
    except ValueError as exc:
        raise UnknownViewError(f"row {lineno}: {exc}") from None
    try:
        frame_index = int(row["frame_index"])
    except ValueError:
        raise ManifestFormatError(f"row {lineno}: frame_index {row['frame_index']!r} is not an integer") from None
    return FrameRecord(
        path=row["path"],
        subject_id=row["subject_id"],
        echo_id=row["echo_id"],
        frame_index=frame_index,
        label=label,
        split=row["split"].strip(),
    )


def load_manifest(path: str | os.PathLike) -> Manifest:
    """Read and validate a manifest CSV; relative image paths resolve against
    the CSV's directory."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != MANIFEST_HEADER:
            raise ManifestFormatError(
                f"{path}: header must be {','.join(MANIFEST_HEADER)}, got {','.join(reader.fieldnames or [])}"
            )
        records, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            records.append(_parse_row(row, lineno))
            rows.append(lineno)
    validate_records(records, rows)
    return Manifest(tuple(records), str(path.parent))


def write_manifest(manifest: Manifest | Sequence[FrameRecord], path: str | os.PathLike) -> None:
    records = manifest.records if isinstance(manifest, Manifest) else manifest
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for r in records:
            w.writerow([r.path, r.subject_id, r.echo_id, r.frame_index, r.label.view, int(r.label.contrast), r.split])


# ------------------------------------------------------------------- splitting


@dataclass(frozen=True)
class Fold:
    index: int
    train_echos: tuple[str, ...]
    val_echos: tuple[str, ...]


def _class_quotas(sizes: dict[ViewLabel, int], frac: float, rng: np.random.Generator) -> dict[ViewLabel, int]:
    eligible = [c for c, n in sizes.items() if n >= 2]
    total = sum(sizes.values())
    target = int(round(frac * total))
    exact = {c: frac * sizes[c] for c in eligible}
    quota = {c: min(int(np.floor(exact[c])), sizes[c] - 1) for c in eligible}
    spare = target - sum(quota.values())
    # largest remainder first; random order among equal remainders
    order = sorted(eligible, key=lambda c: (-(exact[c] - np.floor(exact[c])), rng.random()))
    while spare > 0:
        progressed = False
        for c in order:
            if spare == 0:
                break
            if quota[c] < sizes[c] - 1:
                quota[c] += 1
                spare -= 1
                progressed = True
        if not progressed:
            break
    for c in sizes:
        quota.setdefault(c, 0)
    return quota


def split_folds(manifest: Manifest, n_splits: int = 8, validation_frac: float = 0.10, seed: int = 0) -> list[Fold]:
    """Repeated echo-level train/validation resampling over the training split.

    Each of the ``n_splits`` validation sets holds ``round(frac * echos)``
    echos, allocated across classes by largest remainder. Within a class the
    echos are permuted once per seed and validation windows advance
    cyclically, so repeated splits spread validation duty over different echos.
    """
    if n_splits < 1:
        raise ValueError("n_splits must be >= 1")
    if not 0 < validation_frac < 1:
        raise ValueError("validation_frac must lie in (0, 1)")
    train = manifest.select(split="train")
    by_class: dict[ViewLabel, list[str]] = defaultdict(list)
    for echo, label in train.echo_labels().items():
        by_class[label].append(echo)
    if not by_class:
        raise ValueError("manifest has no training echocardiograms")
    for label, echos in by_class.items():
        if len(echos) < 2:
            warnings.warn(f"class {label.short} has {len(echos)} echo(s); kept on the training side", stacklevel=2)
    sizes = {c: len(e) for c, e in by_class.items()}
    base = np.random.default_rng(np.random.SeedSequence([seed, 0x5F17]))
    perms = {c: [by_class[c][i] for i in base.permutation(len(by_class[c]))] for c in sorted(by_class, key=lambda c: c.index)}
    cursor = {c: int(base.integers(len(by_class[c]))) for c in perms}

    folds = []
    all_echos = [e for e in train.echo_labels()]
    for k in range(n_splits):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5F17, k + 1]))
        quota = _class_quotas(sizes, validation_frac, rng)
        val: set[str] = set()
        for c, perm in perms.items():
            q = quota[c]
            n = len(perm)
            val.update(perm[(cursor[c] + i) % n] for i in range(q))
            cursor[c] = (cursor[c] + q) % n
        folds.append(Fold(
            index=k,
            train_echos=tuple(e for e in all_echos if e not in val),
            val_echos=tuple(e for e in all_echos if e in val),
        ))
    return folds


def subsample_per_class(manifest: Manifest, echos_per_class: int, seed: int = 0, split: str | None = None) -> Manifest:
    """Keep at most ``echos_per_class`` random echos per class.

    With ``split`` given, only that split is reduced and the others pass
    through untouched.
    """
    if echos_per_class < 1:
        raise ValueError("echos_per_class must be >= 1")
    pool = manifest.select(split=split) if split else manifest
    by_class: dict[ViewLabel, list[str]] = defaultdict(list)
    for echo, label in pool.echo_labels().items():
        by_class[label].append(echo)
    keep: set[str] = set()
    for label in sorted(by_class, key=lambda c: c.index):
        echos = by_class[label]
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x50B, label.index]))
        if len(echos) <= echos_per_class:
            keep.update(echos)
        else:
            keep.update(echos[i] for i in rng.choice(len(echos), echos_per_class, replace=False))
    recs = tuple(r for r in manifest.records if r.echo_id in keep or (split is not None and r.split != split))
    return Manifest(recs, manifest.root)


def batch_iter(records, batch_size: int, epoch_seed=0) -> Iterator[list[tuple[FrameRecord, ViewLabel]]]:
    """Shuffle all frames once per epoch and yield consecutive batches; the
    last short batch is kept."""
    if batch_size < 2:
        raise ValueError("batch_size must be >= 2")
    recs = list(records.records if isinstance(records, Manifest) else records)
    if not recs:
        raise ValueError("cannot iterate over an empty manifest")
    seed = list(epoch_seed) if isinstance(epoch_seed, (tuple, list)) else [epoch_seed]
    order = np.random.default_rng(np.random.SeedSequence(seed + [0xBA7C])).permutation(len(recs))
    for start in range(0, len(recs), batch_size):
        yield [(recs[i], recs[i].label) for i in order[start : start + batch_size]]
