"""Flat binary container for float64 tensors.

Layout (little-endian): magic "EXFS", version u32, tensor count u32, then for
each tensor: rank u32, one u32 per dimension, raw float64 values in row-major
order.
"""

import struct
from pathlib import Path
from typing import List, Sequence, Union

import numpy as np

from .errors import FormatError

MAGIC = b"EXFS"
VERSION = 1


def encode_tensors(arrays: Sequence[np.ndarray]) -> bytes:
    """Serialize arrays into the container format."""
    chunks = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for array in arrays:
        array = np.asarray(array, dtype=np.float64)
        chunks.append(struct.pack(f"<I{array.ndim}I", array.ndim, *array.shape))
        chunks.append(np.ascontiguousarray(array, dtype="<f8").tobytes())
    return b"".join(chunks)


def decode_tensors(payload: bytes, filename: str = "<bytes>") -> List[np.ndarray]:
    """Parse a container produced by `encode_tensors`."""
    if payload[:4] != MAGIC:
        raise FormatError(filename, f"bad magic {payload[:4]!r}, expected {MAGIC!r}")
    try:
        version, count = struct.unpack_from("<II", payload, 4)
        if version != VERSION:
            raise FormatError(filename, f"unsupported container version {version}")
        offset = 12
        arrays = []
        for _ in range(count):
            (rank,) = struct.unpack_from("<I", payload, offset)
            dims = struct.unpack_from(f"<{rank}I", payload, offset + 4)
            offset += 4 + 4 * rank
            size = int(np.prod(dims, dtype=np.int64))
            end = offset + 8 * size
            if end > len(payload):
                raise FormatError(filename, "truncated tensor data")
            values = np.frombuffer(payload[offset:end], dtype="<f8").astype(np.float64)
            arrays.append(values.reshape(dims))
            offset = end
    except struct.error as e:
        raise FormatError(filename, f"truncated header: {e}") from e
    if offset != len(payload):
        raise FormatError(filename, f"{len(payload) - offset} trailing bytes")
    return arrays


def write_tensors(path: Union[str, Path], arrays: Sequence[np.ndarray]) -> None:
    Path(path).write_bytes(encode_tensors(arrays))


def read_tensors(path: Union[str, Path]) -> List[np.ndarray]:
    path = Path(path)
    return decode_tensors(path.read_bytes(), filename=str(path))
