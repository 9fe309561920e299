"""Frame preprocessing and the stochastic augmentation used to build
two-view contrastive batches."""

from __future__ import annotations

import math
from concurrent.futures import Executor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .labels import ViewLabel


@dataclass(frozen=True)
class AugmentConfig:
    brightness_delta: float = 0.2
    contrast_range: tuple[float, float] = (0.8, 1.25)
    max_rotation_deg: float = 30.0
    max_translation_frac: float = 0.10
    crop_size: int | None = None
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.max_translation_frac < 1:
            raise ValueError("max_translation_frac must lie in [0, 1)")
        if not 0 <= self.max_rotation_deg <= 180:
            raise ValueError("max_rotation_deg must lie in [0, 180]")
        if self.brightness_delta < 0:
            raise ValueError("brightness_delta must be >= 0")
        lo, hi = self.contrast_range
        if not 0 < lo <= 1 <= hi:
            raise ValueError("contrast_range must satisfy 0 < lo <= 1 <= hi")
        if self.crop_size is not None and self.crop_size < 1:
            raise ValueError("crop_size must be positive")

    @classmethod
    def identity(cls, seed: int = 0) -> "AugmentConfig":
        return cls(0.0, (1.0, 1.0), 0.0, 0.0, None, seed)


@dataclass
class FrameImage:
    pixels: np.ndarray  # float32 [1, H, W] in [0, 1]
    source: object = None

    @property
    def size(self) -> int:
        return self.pixels.shape[-1]


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int | None = None) -> np.ndarray:
    """Pixel-centre-aligned bilinear resize of a 2-D array."""
    out_w = out_h if out_w is None else out_w
    h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.copy()
    rows = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    cols = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return ndimage.map_coordinates(img, [rr, cc], order=1, mode="nearest")


def preprocess(raw: np.ndarray, target_size: int = 192, source=None) -> FrameImage:
    """Resize to ``target_size`` square, z-score, then min-max rescale to [0, 1]."""
    raw = np.asarray(raw)
    if raw.ndim != 2 or raw.size == 0:
        raise ValueError(f"expected a non-empty 2-D grayscale image, got shape {raw.shape}")
    img = resize_bilinear(raw.astype(np.float64), target_size)
    z = (img - img.mean()) / max(float(img.std()), 1e-6)
    lo, hi = z.min(), z.max()
    if hi - lo > 0:
        out = (z - lo) / (hi - lo)
    else:
        out = np.zeros_like(z)
    return FrameImage(out.astype(np.float32)[None], source)


@dataclass(frozen=True)
class AugmentParams:
    rotation_deg: float
    shift: tuple[float, float]  # (rows, cols) in pixels
    brightness: float
    contrast: float
    crop_origin: tuple[int, int] | None


def sample_params(config: AugmentConfig, size: int, rng: np.random.Generator) -> AugmentParams:
    """Draw one parameter set. The number and order of draws never depends
    on the values, so streams stay aligned across configs."""
    theta = rng.uniform(-config.max_rotation_deg, config.max_rotation_deg)
    t = config.max_translation_frac * size
    dy, dx = rng.uniform(-t, t), rng.uniform(-t, t)
    bright = rng.uniform(-config.brightness_delta, config.brightness_delta)
    lo, hi = config.contrast_range
    factor = math.exp(rng.uniform(math.log(lo), math.log(hi)))
    crop = None
    if config.crop_size is not None:
        if config.crop_size >= size:
            raise ValueError(f"crop_size {config.crop_size} must be smaller than the image size {size}")
        span = size - config.crop_size
        crop = (int(rng.integers(0, span + 1)), int(rng.integers(0, span + 1)))
    return AugmentParams(theta, (dy, dx), bright, factor, crop)


def affine_warp(img: np.ndarray, rotation_deg: float, shift: tuple[float, float]) -> np.ndarray:
    """Rotate about the image centre, then translate; bilinear, zero fill."""
    h, w = img.shape
    a = math.radians(rotation_deg)
    c, s = math.cos(a), math.sin(a)
    ctr = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    # inverse map: source = R^-1 (dest - centre - shift) + centre
    inv = np.array([[c, s], [-s, c]])
    offset = ctr - inv @ (ctr + np.asarray(shift))
    return ndimage.affine_transform(img, inv, offset=offset, order=1, mode="constant", cval=0.0)


def apply_params(pixels: np.ndarray, params: AugmentParams, crop_size: int | None = None) -> np.ndarray:
    img = pixels[0]
    if params.contrast != 1.0:
        m = img.mean()
        img = m + params.contrast * (img - m)
    if params.brightness != 0.0:
        img = img + params.brightness
    img = np.clip(img, 0.0, 1.0)
    if params.rotation_deg != 0.0 or params.shift != (0.0, 0.0):
        img = affine_warp(img, params.rotation_deg, params.shift)
    if params.crop_origin is not None:
        r, c = params.crop_origin
        k = crop_size
        img = resize_bilinear(img[r : r + k, c : c + k], pixels.shape[-2], pixels.shape[-1])
    return np.clip(img, 0.0, 1.0).astype(pixels.dtype, copy=False)[None]


def sample_stream(seed, *ids: int) -> np.random.Generator:
    """Counter-style stream keyed by (seed..., ids...)."""
    key = list(seed) if isinstance(seed, (tuple, list)) else [seed]
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key] + [int(i) for i in ids]))


def augment_once(img: FrameImage, config: AugmentConfig, rng: np.random.Generator) -> FrameImage:
    params = sample_params(config, img.size, rng)
    return FrameImage(apply_params(img.pixels, params, config.crop_size), img.source)


@dataclass
class ContrastiveImages:
    images: np.ndarray  # [2N, 1, H, W]
    labels: list[ViewLabel]
    twin_index: list[int]


def make_contrastive_batch(
    frames: Sequence[tuple[FrameImage, ViewLabel]],
    config: AugmentConfig,
    batch_seed,
    sample_ids: Sequence[int] | None = None,
    executor: Executor | None = None,
) -> ContrastiveImages:
    """Augment each of N frames twice. Rows ``0..N-1`` hold first views and
    ``N..2N-1`` the second views, so ``twin_index[i] = (i + N) mod 2N``."""
    n = len(frames)
    if n == 0:
        raise ValueError("cannot build a contrastive batch from zero frames")
    ids = list(range(n)) if sample_ids is None else list(sample_ids)
    jobs = [(k, slot) for slot in (0, 1) for k in range(n)]

    def run(job):
        k, slot = job
        return augment_once(frames[k][0], config, sample_stream(batch_seed, ids[k], slot)).pixels

    outs = list(executor.map(run, jobs)) if executor is not None else [run(j) for j in jobs]
    labels = [frames[k][1] for k, _ in jobs]
    twin = [(i + n) % (2 * n) for i in range(2 * n)]
    return ContrastiveImages(np.stack(outs), labels, twin)


def augment_batch(
    frames: Sequence[FrameImage],
    config: AugmentConfig,
    batch_seed,
    sample_ids: Sequence[int],
    executor: Executor | None = None,
) -> np.ndarray:
    """Single augmented view per frame, stacked ``[B, 1, H, W]``."""

    def run(k):
        return augment_once(frames[k], config, sample_stream(batch_seed, sample_ids[k], 0)).pixels

    idx = range(len(frames))
    outs = list(executor.map(run, idx)) if executor is not None else [run(k) for k in idx]
    return np.stack(outs)
