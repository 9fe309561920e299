"""In-memory preprocessed frames for training and evaluation."""

from __future__ import annotations

from concurrent.futures import Executor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..augment import FrameImage, preprocess
from ..labels import ViewLabel
from .manifest import FrameRecord, Manifest
from .pgm import read_pgm


@dataclass
class FrameSet:
    """Preprocessed images aligned with their records.

    ``ids`` are positions in the source manifest and key the per-sample
    augmentation streams, so a frame draws the same augmentations no
    matter which subset it is batched from.
    """

    images: np.ndarray  # [n, 1, S, S] float32
    labels: np.ndarray  # [n] int64 class indices
    ids: np.ndarray  # [n] int64
    records: tuple[FrameRecord, ...]

    def __len__(self) -> int:
        return len(self.records)

    def subset(self, positions: Sequence[int]) -> "FrameSet":
        pos = np.asarray(positions, dtype=np.int64)
        return FrameSet(self.images[pos], self.labels[pos], self.ids[pos], tuple(self.records[i] for i in pos))

    def select_echos(self, echos) -> "FrameSet":
        keep = set(echos)
        return self.subset([i for i, r in enumerate(self.records) if r.echo_id in keep])

    def select_split(self, split: str) -> "FrameSet":
        return self.subset([i for i, r in enumerate(self.records) if r.split == split])

    def frame_images(self, positions: Sequence[int]) -> list[FrameImage]:
        return [FrameImage(self.images[i], self.records[i]) for i in positions]

    def label_list(self, positions: Sequence[int] | None = None) -> list[ViewLabel]:
        pos = range(len(self)) if positions is None else positions
        return [ViewLabel.from_index(int(self.labels[i])) for i in pos]


def load_frames(manifest: Manifest, input_size: int, executor: Executor | None = None, dtype=np.float32) -> FrameSet:
    """Read and preprocess every frame of ``manifest``."""
    recs = manifest.records

    def load(rec: FrameRecord) -> np.ndarray:
        return preprocess(read_pgm(manifest.resolve(rec)), input_size).pixels

    pix = list(executor.map(load, recs)) if executor is not None else [load(r) for r in recs]
    images = np.stack(pix).astype(dtype, copy=False) if pix else np.zeros((0, 1, input_size, input_size), dtype)
    labels = np.array([r.label.index for r in recs], dtype=np.int64)
    return FrameSet(images, labels, np.arange(len(recs), dtype=np.int64), tuple(recs))
