"""Binary 8-bit PGM (P5) reading and writing."""

from __future__ import annotations

import os

import numpy as np


class PGMError(ValueError):
    pass


def _tokens(buf: bytes, count: int) -> tuple[list[int], int]:
    out: list[int] = []
    pos = 0
    n = len(buf)
    while len(out) < count:
        while pos < n and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos : pos + 1] == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise PGMError("truncated PGM header")
        out.append(int(buf[start:pos]))
    return out, pos + 1  # exactly one whitespace byte precedes the raster


def decode_pgm(buf: bytes) -> np.ndarray:
    if buf[:2] != b"P5":
        raise PGMError("not a binary PGM (missing P5 magic)")
    (width, height, maxval), offset = _tokens(buf[2:], 3)
    offset += 2
    if width <= 0 or height <= 0:
        raise PGMError(f"zero-area image ({width}x{height})")
    if not 0 < maxval < 256:
        raise PGMError(f"only 8-bit PGM is supported (maxval={maxval})")
    if len(buf) - offset < width * height:
        raise PGMError(f"truncated raster: need {width * height} bytes, have {max(len(buf) - offset, 0)}")
    raster = np.frombuffer(buf, dtype=np.uint8, count=width * height, offset=offset)
    return raster.reshape(height, width).copy()


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    """Return the image as a ``uint8`` array of shape ``(height, width)``."""
    with open(path, "rb") as fh:
        buf = fh.read()
    try:
        return decode_pgm(buf)
    except (PGMError, ValueError) as exc:
        raise PGMError(f"{path}: {exc}") from exc


def encode_pgm(img: np.ndarray) -> bytes:
    img = np.asarray(img)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise PGMError("PGM encoding expects a 2-D uint8 array")
    h, w = img.shape
    return b"P5\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(img).tobytes()


def write_pgm(path: str | os.PathLike, img: np.ndarray) -> None:
    data = encode_pgm(img)
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
