"""Binary named-tensor checkpoints.

Layout (little-endian)::

    b"SUPC" | u32 version | u32 tensor count
    per tensor: u16 name length | name (utf-8) | u8 dtype code | u8 rank
                | rank x u32 dims | raw payload
    u32 CRC32 of every preceding byte

Config and training metadata travel as uint8 tensors holding JSON.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"SUPC"
VERSION = 1
CONFIG_KEY = "__config__"
META_KEY = "__meta__"

_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i8"), 4: np.dtype("u1"), 5: np.dtype("<i4")}
_CODES = {dt: code for code, dt in _DTYPES.items()}


class CheckpointError(ValueError):
    pass


class CheckpointMagicError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointChecksumError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    version: int = VERSION


def _json_tensor(obj) -> np.ndarray:
    return np.frombuffer(json.dumps(obj, sort_keys=True).encode(), dtype=np.uint8)


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    items = dict(ckpt.tensors)
    items[CONFIG_KEY] = _json_tensor(ckpt.config)
    items[META_KEY] = _json_tensor(ckpt.metadata)
    parts = [MAGIC, struct.pack("<II", ckpt.version, len(items))]
    for name, arr in items.items():
        arr = np.asarray(arr)
        code = _CODES.get(arr.dtype.newbyteorder("<"))
        if code is None:
            raise CheckpointError(f"tensor {name!r}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise CheckpointError(f"tensor name too long: {name[:40]}...")
        if arr.ndim > 255:
            raise CheckpointError(f"tensor {name!r} has too many dimensions")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def _walk(buf: bytes, limit: int):
    """Parse the tensor table; raises CheckpointTruncatedError when the
    declared layout runs past ``limit``."""
    pos = 12
    _, count = struct.unpack_from("<II", buf, 4)
    out = {}
    for _ in range(count):
        if pos + 2 > limit:
            raise CheckpointTruncatedError("file ends inside the tensor table")
        (nlen,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        if pos + nlen + 2 > limit:
            raise CheckpointTruncatedError("file ends inside a tensor header")
        name = buf[pos : pos + nlen].decode("utf-8", errors="replace")
        pos += nlen
        code, rank = struct.unpack_from("<BB", buf, pos)
        pos += 2
        if pos + 4 * rank > limit:
            raise CheckpointTruncatedError(f"file ends inside the shape of {name!r}")
        dims = struct.unpack_from(f"<{rank}I", buf, pos)
        pos += 4 * rank
        dt = _DTYPES.get(code)
        nbytes = int(np.prod(dims, dtype=np.int64)) * (dt.itemsize if dt is not None else 1)
        if pos + nbytes > limit:
            raise CheckpointTruncatedError(f"file ends inside the payload of {name!r}")
        out[name] = (dt, dims, pos, nbytes)
        pos += nbytes
    return out, pos


def decode_checkpoint(buf: bytes) -> Checkpoint:
    if len(buf) < 4 or buf[:4] != MAGIC:
        if len(buf) < 4 and MAGIC.startswith(buf):
            raise CheckpointTruncatedError("file shorter than the magic")
        raise CheckpointMagicError("not a SUPC checkpoint (bad magic)")
    if len(buf) < 16:
        raise CheckpointTruncatedError(f"file has only {len(buf)} bytes")
    body, stored = buf[:-4], struct.unpack("<I", buf[-4:])[0]
    if zlib.crc32(body) & 0xFFFFFFFF != stored:
        # distinguish a cut-short file from corrupted bytes
        try:
            _, end = _walk(buf, len(buf))
        except CheckpointTruncatedError:
            raise
        except Exception:
            end = len(body)
        if end + 4 > len(buf):
            raise CheckpointTruncatedError("file is shorter than its declared layout")
        raise CheckpointChecksumError("CRC32 mismatch: checkpoint is corrupted")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint version {version}, this reader supports {VERSION}")
    table, end = _walk(buf, len(body))
    if end != len(body):
        raise CheckpointChecksumError("trailing bytes after the tensor table")
    tensors = {}
    for name, (dt, dims, pos, nbytes) in table.items():
        if dt is None:
            raise CheckpointError(f"tensor {name!r}: unknown dtype code")
        tensors[name] = np.frombuffer(buf, dtype=dt, count=nbytes // dt.itemsize, offset=pos).reshape(dims).copy()
    config = json.loads(bytes(tensors.pop(CONFIG_KEY, np.zeros(0, np.uint8))) or b"{}")
    meta = json.loads(bytes(tensors.pop(META_KEY, np.zeros(0, np.uint8))) or b"{}")
    return Checkpoint(tensors, config, meta, version)


def save_checkpoint(ckpt: Checkpoint, path: str | os.PathLike) -> None:
    data = encode_checkpoint(ckpt)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())
