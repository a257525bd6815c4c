"""Little-endian binary records shared by the feature cache and checkpoints.

A tensor is ``rank u32, dims u32 x rank, float32 payload``; a tensor
table is ``count u32`` followed by ``(name length u32, UTF-8 name, tensor)``.
"""

import struct
from typing import BinaryIO, Dict

import numpy as np


class RecordError(ValueError):
    """Malformed, truncated or mismatched binary record."""


def read_exact(fh: BinaryIO, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise RecordError(f"truncated record: wanted {n} bytes, got {len(data)}")
    return data


def write_u32(fh, v):
    fh.write(struct.pack("<I", v))


def write_u64(fh, v):
    fh.write(struct.pack("<Q", v))


def read_u32(fh) -> int:
    return struct.unpack("<I", read_exact(fh, 4))[0]


def read_u64(fh) -> int:
    return struct.unpack("<Q", read_exact(fh, 8))[0]


def write_str(fh, s: str):
    raw = s.encode("utf-8")
    write_u32(fh, len(raw))
    fh.write(raw)


def read_str(fh) -> str:
    return read_exact(fh, read_u32(fh)).decode("utf-8")


def write_tensor(fh, arr: np.ndarray):
    arr = np.asarray(arr)
    write_u32(fh, arr.ndim)
    for d in arr.shape:
        write_u32(fh, d)
    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_tensor(fh) -> np.ndarray:
    rank = read_u32(fh)
    if rank > 8:
        raise RecordError(f"implausible tensor rank {rank}")
    shape = tuple(read_u32(fh) for _ in range(rank))
    count = int(np.prod(shape)) if shape else 1
    raw = read_exact(fh, 4 * count)
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)


def write_table(fh, table: Dict[str, np.ndarray]):
    write_u32(fh, len(table))
    for name in table:
        write_str(fh, name)
        write_tensor(fh, table[name])


def read_table(fh) -> Dict[str, np.ndarray]:
    out = {}
    for _ in range(read_u32(fh)):
        name = read_str(fh)
        out[name] = read_tensor(fh)
    return out
