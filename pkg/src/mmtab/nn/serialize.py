"""Flat binary snapshot format for named parameter maps.

Layout (little-endian): magic ``MMTP``, u32 entry count, then per entry
u16 name length, UTF-8 name, u8 ndim, ndim x u64 dims, row-major float64 data.
Entries are written in sorted name order so equal maps give equal bytes.
"""
from __future__ import annotations

import struct
from typing import Mapping

import numpy as np

MAGIC = b"MMTP"


def dumps(params: Mapping[str, np.ndarray]) -> bytes:
    out = [MAGIC, struct.pack("<I", len(params))]
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        raw = name.encode("utf-8")
        out.append(struct.pack("<HB", len(raw), arr.ndim) + raw)
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(arr.tobytes(order="C"))
    return b"".join(out)


def loads(buf: bytes) -> dict[str, np.ndarray]:
    if buf[:4] != MAGIC:
        raise ValueError("not a parameter snapshot (bad magic)")
    (count,) = struct.unpack_from("<I", buf, 4)
    pos = 8
    params = {}
    for _ in range(count):
        name_len, ndim = struct.unpack_from("<HB", buf, pos)
        pos += 3
        name = buf[pos:pos + name_len].decode("utf-8")
        pos += name_len
        shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
        pos += 8 * ndim
        size = int(np.prod(shape, dtype=np.int64))
        params[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * size
    if pos != len(buf):
        raise ValueError("trailing bytes after parameter snapshot")
    return params


def save(params: Mapping[str, np.ndarray], path) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(params))


def load(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return loads(fh.read())
