"""Binary weight checkpoint files.

Layout (little-endian): magic ``SCXW``, format version (u32), array count
(u32), then per array: name length (u32), UTF-8 name, rank (u32), dims
(u64 each), raw float32 data.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from .errors import InputError

MAGIC = b"SCXW"
VERSION = 1


def save_arrays(path: str, arrays: dict) -> None:
    """Write named float32 arrays atomically (temp file + rename)."""
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<II", VERSION, len(arrays))
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float32)
        if arr.ndim:
            arr = np.ascontiguousarray(arr)  # would promote 0-d to 1-d
        encoded = name.encode("utf-8")
        blob += struct.pack("<I", len(encoded))
        blob += encoded
        blob += struct.pack("<I", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        blob += arr.tobytes()
    _atomic_write(path, bytes(blob))


def load_arrays(path: str) -> dict:
    """Read a checkpoint back into a name -> float32 ndarray dict."""
    with open(path, "rb") as fh:
        data = fh.read()
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise InputError(f"checkpoint {path}: truncated while reading {what} "
                             f"(need {n} bytes at offset {pos}, file has {len(data)})")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise InputError(f"checkpoint {path}: bad magic, not a weight checkpoint")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise InputError(f"checkpoint {path}: unsupported format version {version}")
    arrays = {}
    for i in range(count):
        (name_len,) = struct.unpack("<I", take(4, f"name length of array {i}"))
        name = take(name_len, f"name of array {i}").decode("utf-8")
        (rank,) = struct.unpack("<I", take(4, f"rank of '{name}'"))
        dims = struct.unpack(f"<{rank}Q", take(8 * rank, f"dims of '{name}'"))
        n = int(np.prod(dims)) if rank else 1
        raw = take(4 * n, f"data of '{name}'")
        arrays[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
    if pos != len(data):
        raise InputError(f"checkpoint {path}: {len(data) - pos} trailing bytes after last array")
    return arrays


def _atomic_write(path: str, payload: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
