"""SIGC checkpoint format.

Layout (little-endian): magic ``SIGC``, u16 version=1, u32 entry count,
then per entry: u16 name length + UTF-8 name, u8 rank, u32 per-dim
extents, float32 payload.
"""

from __future__ import annotations

import struct

import numpy as np

SIGC_MAGIC = b"SIGC"
SIGC_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_arrays(arrays: dict, path):
    """Write name -> float array entries in the given order."""
    with open(path, "wb") as fh:
        fh.write(SIGC_MAGIC)
        fh.write(struct.pack("<H", SIGC_VERSION))
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            arr = np.asarray(arr, dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            for extent in arr.shape:
                fh.write(struct.pack("<I", extent))
            fh.write(arr.tobytes())


def load_arrays(path) -> dict:
    def take(fh, n, what):
        buf = fh.read(n)
        if len(buf) != n:
            raise CheckpointError(f"{path}: truncated {what}")
        return buf

    arrays = {}
    with open(path, "rb") as fh:
        if take(fh, 4, "magic") != SIGC_MAGIC:
            raise CheckpointError(f"{path}: bad magic")
        (version,) = struct.unpack("<H", take(fh, 2, "version"))
        if version != SIGC_VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        (count,) = struct.unpack("<I", take(fh, 4, "entry count"))
        for _ in range(count):
            (name_len,) = struct.unpack("<H", take(fh, 2, "name length"))
            name = take(fh, name_len, "name").decode("utf-8")
            (rank,) = struct.unpack("<B", take(fh, 1, "rank"))
            shape = tuple(struct.unpack("<I", take(fh, 4, "dim"))[0] for _ in range(rank))
            numel = int(np.prod(shape)) if shape else 1
            payload = take(fh, 4 * numel, f"payload of {name!r}")
            arrays[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    return arrays


def check_compatible(arrays: dict, expected: dict):
    """Validate names and shapes; raise naming the first offending entry."""
    for name, shape in expected.items():
        if name not in arrays:
            raise CheckpointError(f"checkpoint incompatible: missing entry {name!r}")
        if tuple(arrays[name].shape) != tuple(shape):
            raise CheckpointError(
                f"checkpoint incompatible: {name!r} has shape {tuple(arrays[name].shape)}, "
                f"expected {tuple(shape)}")
