"""``MST1`` binary tensor container and named-tensor checkpoints.

Tensor blob (little-endian)::

    b"MST1" | u8 dtype (1=f64, 2=f32) | u8 ndim | ndim x u32 dims | row-major payload

Checkpoint::

    b"MSTC" | u32 record count | records...
    record = u32 name length | utf-8 name | u64 blob length | tensor blob
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"MST1"
CKPT_MAGIC = b"MSTC"
_DTYPES = {1: np.dtype("<f8"), 2: np.dtype("<f4")}
_CODES = {np.dtype("<f8"): 1, np.dtype("<f4"): 2}


class ContainerError(ValueError):
    pass


def encode_tensor(arr: np.ndarray, dtype: str = "f64") -> bytes:
    arr = np.asarray(arr)
    dt = np.dtype("<f8") if dtype == "f64" else np.dtype("<f4")
    if arr.ndim > 255:
        raise ContainerError(f"too many dimensions: {arr.ndim}")
    head = MAGIC + struct.pack("<BB", _CODES[dt], arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=dt).tobytes()


def decode_tensor(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Parse one tensor blob at ``offset``; returns (array, offset after blob)."""
    if buf[offset:offset + 4] != MAGIC:
        raise ContainerError(f"bad magic at offset {offset}: {bytes(buf[offset:offset + 4])!r}")
    pos = offset + 4
    if len(buf) < pos + 2:
        raise ContainerError(f"truncated header at offset {pos}")
    code, ndim = struct.unpack_from("<BB", buf, pos)
    if code not in _DTYPES:
        raise ContainerError(f"unknown dtype code {code} at offset {pos}")
    pos += 2
    if len(buf) < pos + 4 * ndim:
        raise ContainerError(f"truncated dims at offset {pos}")
    dims = struct.unpack_from(f"<{ndim}I", buf, pos)
    pos += 4 * ndim
    dt = _DTYPES[code]
    nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
    if len(buf) < pos + nbytes:
        raise ContainerError(f"payload at offset {pos} needs {nbytes} bytes, "
                             f"only {len(buf) - pos} left")
    arr = np.frombuffer(buf, dtype=dt, count=nbytes // dt.itemsize, offset=pos).reshape(dims)
    return arr.astype(np.float64), pos + nbytes


def save_tensor(path, arr: np.ndarray, dtype: str = "f64") -> None:
    Path(path).write_bytes(encode_tensor(arr, dtype))


def load_tensor(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    arr, end = decode_tensor(buf)
    if end != len(buf):
        raise ContainerError(f"{len(buf) - end} trailing bytes at offset {end}")
    return arr


def encode_checkpoint(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [CKPT_MAGIC, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        nb = name.encode("utf-8")
        blob = encode_tensor(arr)
        parts += [struct.pack("<I", len(nb)), nb, struct.pack("<Q", len(blob)), blob]
    return b"".join(parts)


def decode_checkpoint(buf: bytes) -> dict[str, np.ndarray]:
    if buf[:4] != CKPT_MAGIC:
        raise ContainerError(f"bad checkpoint magic at offset 0: {bytes(buf[:4])!r}")
    if len(buf) < 8:
        raise ContainerError("truncated record count at offset 4")
    (count,) = struct.unpack_from("<I", buf, 4)
    pos = 8
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        if len(buf) < pos + 4:
            raise ContainerError(f"truncated name length at offset {pos}")
        (nlen,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        if len(buf) < pos + nlen + 8:
            raise ContainerError(f"truncated record header at offset {pos}")
        name = bytes(buf[pos:pos + nlen]).decode("utf-8")
        pos += nlen
        (blen,) = struct.unpack_from("<Q", buf, pos)
        pos += 8
        arr, end = decode_tensor(buf, pos)
        if end - pos != blen:
            raise ContainerError(f"record {name!r} at offset {pos}: declared {blen} bytes, "
                                 f"parsed {end - pos}")
        out[name] = arr
        pos = end
    if pos != len(buf):
        raise ContainerError(f"{len(buf) - pos} trailing bytes at offset {pos}")
    return out


def save_checkpoint(path, tensors: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode_checkpoint(tensors))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    return decode_checkpoint(Path(path).read_bytes())
