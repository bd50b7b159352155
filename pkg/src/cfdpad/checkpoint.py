"""The CFDCKPT1 named-array container.

Layout (all integers little-endian)::

    b"CFDCKPT1"  version:u8  count:u64
    per array:   name_len:u32  name:utf-8  rank:u32  extents:u64*rank  values:f64*prod(extents)
"""

from __future__ import annotations

import os
import struct
import tempfile
from typing import Mapping

import numpy as np

MAGIC = b"CFDCKPT1"
VERSION = 1


class ContainerError(ValueError):
    """Raised for malformed or truncated containers."""


def encode(arrays: Mapping[str, np.ndarray]) -> bytes:
    out = [MAGIC, struct.pack("<BQ", VERSION, len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)))
        out.append(raw)
        out.append(struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(np.ascontiguousarray(arr).astype("<f8").tobytes())
    return b"".join(out)


def decode(buf: bytes) -> dict[str, np.ndarray]:
    pos = 0

    def read(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise ContainerError(f"truncated container: need {n} bytes for {what} at offset {pos}, have {len(buf) - pos}")
        chunk = buf[pos : pos + n]
        pos += n
        return chunk

    if read(len(MAGIC), "magic") != MAGIC:
        raise ContainerError("bad magic at offset 0")
    version, count = struct.unpack("<BQ", read(9, "header"))
    if version != VERSION:
        raise ContainerError(f"unsupported version {version} at offset 8")
    arrays: dict[str, np.ndarray] = {}
    for k in range(count):
        (n,) = struct.unpack("<I", read(4, f"name length of array {k}"))
        try:
            name = read(n, f"name of array {k}").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ContainerError(f"array {k} name is not UTF-8 (offset {pos - n})") from exc
        if name in arrays:
            raise ContainerError(f"duplicate array name {name!r} at offset {pos - n}")
        (rank,) = struct.unpack("<I", read(4, f"rank of {name!r}"))
        shape = struct.unpack(f"<{rank}Q", read(8 * rank, f"extents of {name!r}"))
        size = int(np.prod(shape, dtype=np.int64)) if rank else 1
        values = np.frombuffer(read(8 * size, f"values of {name!r}"), dtype="<f8")
        arrays[name] = values.astype(np.float64).reshape(shape)
    if pos != len(buf):
        raise ContainerError(f"{len(buf) - pos} trailing bytes after last array at offset {pos}")
    return arrays


def atomic_write(path: str | os.PathLike, payload: bytes) -> None:
    """Write via a temp file in the same directory and rename into place."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(path: str | os.PathLike, arrays: Mapping[str, np.ndarray]) -> None:
    atomic_write(path, encode(arrays))


def load(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return decode(fh.read())


def text_to_array(text: str) -> np.ndarray:
    """Store UTF-8 text as a rank-1 array of byte values (exact in binary64)."""
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.float64)


def array_to_text(arr: np.ndarray) -> str:
    return bytes(np.asarray(arr, dtype=np.uint8).tolist()).decode("utf-8")
