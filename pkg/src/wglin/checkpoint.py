"""Bit-exact checkpoint format.

Layout: magic "WGLN", version byte 0x01, then repeated records
  name_len: u32 LE | name: UTF-8 | rank: u32 LE | dims: u32 LE each |
  values: f64 LE row-major
terminated by a CRC32 (u32 LE) over all preceding bytes.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import ChecksumMismatch

MAGIC = b"WGLN"
VERSION = 1


def save_checkpoint(path, entries: dict[str, np.ndarray]):
    chunks = [MAGIC, bytes([VERSION])]
    for name, arr in entries.items():
        arr = np.asarray(arr, dtype=np.float64)   # keeps rank 0 for scalars
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.astype("<f8").tobytes())
    body = b"".join(chunks)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if len(data) < 9 or data[:4] != MAGIC or data[4] != VERSION:
        raise ChecksumMismatch(f"{path}: not a checkpoint (bad magic/version)")
    body, crc = data[:-4], struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(body) != crc:
        raise ChecksumMismatch(f"{path}: CRC32 mismatch")
    entries: dict[str, np.ndarray] = {}
    pos = 5
    while pos < len(body):
        (name_len,) = struct.unpack_from("<I", body, pos)
        pos += 4
        name = body[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = struct.unpack_from("<I", body, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}I", body, pos)
        pos += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=pos)
        pos += 8 * count
        entries[name] = arr.reshape(dims).copy()
    return entries
