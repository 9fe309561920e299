"""Deterministic synthetic sector-scan frames standing in for clinical echoes.

Each class is a fixed arrangement of "chambers" inside an ultrasound sector:

=======  =============================================================
2ch      two stacked cavities (ventricle above atrium)
3ch      ventricle plus two smaller cavities below it
4ch      2 x 2 grid of cavities
5ch      4ch grid plus a small central outflow cavity
plax     one long, near-horizontal cavity plus an atrium
sax      one round cavity
rv       one elongated cavity, tilted
ssn      one thin arch
=======  =============================================================

Non-contrast frames have dark cavities in bright tissue; contrast frames
swap that. Echo-level randomness moves, scales and tilts the layout, frames
add a cardiac-cycle pulsation and multiplicative speckle.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from ..labels import ViewLabel
from .manifest import FrameRecord, Manifest, write_manifest
from .pgm import write_pgm

# Subjects per class in the original training / test sets; used to shape
# class imbalance.
PAPER_SUBJECTS: dict[ViewLabel, tuple[int, int]] = {
    ViewLabel.C_2CH: (711, 139),
    ViewLabel.C_3CH: (699, 139),
    ViewLabel.C_4CH: (704, 138),
    ViewLabel.C_PLAX: (85, 9),
    ViewLabel.C_SAX: (607, 138),
    ViewLabel.NC_5CH: (165, 18),
    ViewLabel.NC_PLAX: (383, 42),
    ViewLabel.NC_RV: (52, 5),
    ViewLabel.NC_SSN: (55, 6),
    ViewLabel.NC_2CH: (314, 126),
    ViewLabel.NC_3CH: (364, 135),
    ViewLabel.NC_4CH: (332, 130),
    ViewLabel.NC_SAX: (229, 98),
}


@dataclass(frozen=True)
class Chamber:
    cx: float
    cy: float
    a: float  # semi-axis along the chamber's own x
    b: float
    angle: float = 0.0  # degrees
    arch: bool = False  # a ring segment of radius a, thickness b, upper half
    atrial: bool = False  # pulses in antiphase with ventricles


_LAYOUTS: dict[str, tuple[Chamber, ...]] = {
    "2ch": (Chamber(0.0, -0.12, 0.085, 0.14), Chamber(0.0, 0.16, 0.075, 0.075, atrial=True)),
    "3ch": (
        Chamber(0.0, -0.12, 0.085, 0.14),
        Chamber(-0.085, 0.15, 0.065, 0.065, atrial=True),
        Chamber(0.095, 0.15, 0.05, 0.05, atrial=True),
    ),
    "4ch": (
        Chamber(-0.105, -0.10, 0.07, 0.12),
        Chamber(0.105, -0.10, 0.065, 0.11),
        Chamber(-0.105, 0.15, 0.065, 0.065, atrial=True),
        Chamber(0.105, 0.15, 0.06, 0.06, atrial=True),
    ),
    "5ch": (
        Chamber(-0.105, -0.10, 0.07, 0.12),
        Chamber(0.105, -0.10, 0.065, 0.11),
        Chamber(-0.105, 0.15, 0.065, 0.065, atrial=True),
        Chamber(0.105, 0.15, 0.06, 0.06, atrial=True),
        Chamber(0.0, 0.03, 0.03, 0.03, atrial=True),
    ),
    "plax": (Chamber(-0.04, -0.03, 0.20, 0.07, angle=-12.0), Chamber(0.15, 0.14, 0.065, 0.065, atrial=True)),
    "sax": (Chamber(0.0, 0.0, 0.13, 0.13),),
    "rv": (Chamber(0.0, 0.0, 0.09, 0.19, angle=25.0),),
    "ssn": (Chamber(0.0, 0.08, 0.17, 0.05, arch=True),),
}


@dataclass(frozen=True)
class EchoStyle:
    """Per-echo nuisance parameters."""

    center: tuple[float, float]
    scale: float
    tilt: float
    half_angle: float
    tissue: float
    cavity: float
    period: float
    phase: float


def _echo_style(rng: np.random.Generator, contrast: bool) -> EchoStyle:
    tissue = rng.uniform(0.55, 0.75)
    cavity = rng.uniform(0.04, 0.12)
    if contrast:
        tissue, cavity = rng.uniform(0.25, 0.40), rng.uniform(0.80, 0.92)
    return EchoStyle(
        center=(0.5 + rng.uniform(-0.03, 0.03), 0.55 + rng.uniform(-0.03, 0.03)),
        scale=rng.uniform(0.9, 1.1),
        tilt=rng.uniform(-8.0, 8.0),
        half_angle=rng.uniform(36.0, 44.0),
        tissue=tissue,
        cavity=cavity,
        period=rng.uniform(6.0, 12.0),
        phase=rng.uniform(0.0, 2 * math.pi),
    )


def _grid(size: int) -> tuple[np.ndarray, np.ndarray]:
    c = (np.arange(size) + 0.5) / size
    return np.meshgrid(c, c)  # (u, v): u rightwards, v downwards


def sector_mask(size: int, half_angle: float = 40.0, apex=(0.5, 0.04), radius: float = 0.92) -> np.ndarray:
    u, v = _grid(size)
    du, dv = u - apex[0], v - apex[1]
    r = np.hypot(du, dv)
    ang = np.degrees(np.arctan2(du, dv))
    return (r <= radius) & (np.abs(ang) <= half_angle) & (dv >= 0)


def chamber_mask(view: str, size: int, style: EchoStyle, pulse: float, offset=(0.0, 0.0)) -> np.ndarray:
    """Union of the class's cavities after echo placement and pulsation."""
    u, v = _grid(size)
    t = math.radians(style.tilt)
    du = (u - style.center[0] - offset[0]) / style.scale
    dv = (v - style.center[1] - offset[1]) / style.scale
    x = math.cos(t) * du + math.sin(t) * dv
    y = -math.sin(t) * du + math.cos(t) * dv
    mask = np.zeros((size, size), dtype=bool)
    for ch in _LAYOUTS[view]:
        k = 1.0 + (-pulse if ch.atrial else pulse)
        px, py = x - ch.cx, y - ch.cy
        if ch.arch:
            r = np.hypot(px, py)
            mask |= (np.abs(r - ch.a * k) <= ch.b / 2) & (py <= 0)
            continue
        al = math.radians(ch.angle)
        qx = math.cos(al) * px + math.sin(al) * py
        qy = -math.sin(al) * px + math.cos(al) * py
        mask |= (qx / (ch.a * k)) ** 2 + (qy / (ch.b * k)) ** 2 <= 1.0
    return mask


def render_frame(label: ViewLabel, size: int, style: EchoStyle, frame: int, rng: np.random.Generator | None):
    """Float image in [0, 1]; ``rng=None`` gives the noiseless frame."""
    phase = 2 * math.pi * frame / style.period + style.phase
    pulse = 0.05 * math.sin(phase)
    offset = (0.004 * math.sin(phase + 1.0), 0.004 * math.cos(phase))
    sector = sector_mask(size, style.half_angle)
    cav = chamber_mask(label.view, size, style, pulse, offset) & sector
    img = np.where(sector, style.tissue, 0.0)
    img[cav] = style.cavity
    if rng is not None:
        img = img * rng.gamma(4.0, 0.25, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


# ------------------------------------------------------------- dataset specs


def uniform_spec(echos: int, test_frac: float = 0.25, labels=None) -> dict[ViewLabel, tuple[int, int]]:
    """``echos`` per class in total, ``round(test_frac * echos)`` of them test
    (at least one when ``echos >= 2`` and ``test_frac > 0``)."""
    labels = list(labels) if labels is not None else list(ViewLabel)
    n_test = int(round(test_frac * echos))
    if test_frac > 0 and echos >= 2:
        n_test = max(1, min(n_test, echos - 1))
    return {label: (echos - n_test, n_test) for label in labels}


def paper_shaped_spec(scale: float, min_train: int = 1, min_test: int = 1) -> dict[ViewLabel, tuple[int, int]]:
    """Table-shaped imbalance: subject counts times ``scale``, rounded."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    return {
        label: (max(min_train, int(round(tr * scale))), max(min_test, int(round(te * scale))))
        for label, (tr, te) in PAPER_SUBJECTS.items()
    }


def synth_generate(
    out_dir: str | os.PathLike,
    spec: Mapping[ViewLabel, tuple[int, int]],
    frames_per_echo: tuple[int, int] = (8, 16),
    image_size: int = 96,
    seed: int = 0,
) -> Manifest:
    """Write PGM frames and ``manifest.csv`` under ``out_dir``.

    Echo ``j`` of a class in a split belongs to subject ``j`` of that split,
    so subjects carry several views and never cross splits.
    """
    lo, hi = frames_per_echo
    if not 1 <= lo <= hi:
        raise ValueError(f"invalid frames_per_echo range {frames_per_echo}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records: list[FrameRecord] = []
    for split_no, split in enumerate(("train", "test")):
        for label in ViewLabel:
            n = spec.get(label, (0, 0))[split_no]
            for j in range(n):
                echo_id = f"{split}-{label.short}-{j:04d}"
                subject = f"{split[:2]}-s{j:04d}"
                erng = np.random.default_rng(np.random.SeedSequence([seed, 0xEC0, split_no, label.index, j]))
                style = _echo_style(erng, label.contrast)
                n_frames = int(erng.integers(lo, hi + 1))
                echo_dir = out / "images" / echo_id
                echo_dir.mkdir(parents=True, exist_ok=True)
                for f in range(n_frames):
                    frng = np.random.default_rng(np.random.SeedSequence([seed, 0xF4A, split_no, label.index, j, f]))
                    img = render_frame(label, image_size, style, f, frng)
                    rel = f"images/{echo_id}/{f:03d}.pgm"
                    write_pgm(out / rel, to_uint8(img))
                    records.append(FrameRecord(rel, subject, echo_id, f, label, split))
    manifest = Manifest(tuple(records), str(out))
    write_manifest(manifest, out / "manifest.csv")
    return manifest


def echo_style(seed: int, split: str, label: ViewLabel, j: int) -> EchoStyle:
    """Recreate the nuisance parameters drawn for echo ``j`` of a class."""
    split_no = ("train", "test").index(split)
    erng = np.random.default_rng(np.random.SeedSequence([seed, 0xEC0, split_no, label.index, j]))
    return _echo_style(erng, label.contrast)
