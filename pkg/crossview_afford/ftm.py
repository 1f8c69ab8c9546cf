"""FTM1 tensor container.

Layout: magic ``FTM1``, little-endian u32 rank, rank × little-endian u32 dims,
then the payload as little-endian float32 values in row-major order. Values
are rounded from float64 on write and widened back on read.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import FormatError
from .tensor import Tensor

MAGIC = b"FTM1"
_U32 = np.dtype("<u4")
_F32 = np.dtype("<f4")


def encode(array: np.ndarray | Tensor) -> bytes:
    data = array.data if isinstance(array, Tensor) else np.asarray(array, dtype=np.float64)
    header = np.array([data.ndim, *data.shape], dtype=_U32)
    return MAGIC + header.tobytes() + np.ascontiguousarray(data, dtype=_F32).tobytes()


def decode(blob: bytes, source: str = "<bytes>") -> np.ndarray:
    if blob[:4] != MAGIC:
        raise FormatError(f"{source}: not an FTM1 container")
    if len(blob) < 8:
        raise FormatError(f"{source}: truncated header")
    rank = int(np.frombuffer(blob, dtype=_U32, count=1, offset=4)[0])
    dims_end = 8 + 4 * rank
    if len(blob) < dims_end:
        raise FormatError(f"{source}: truncated dimensions (rank {rank})")
    dims = tuple(int(d) for d in np.frombuffer(blob, dtype=_U32, count=rank, offset=8))
    count = int(np.prod(dims)) if dims else 1
    if len(blob) != dims_end + 4 * count:
        raise FormatError(
            f"{source}: payload is {len(blob) - dims_end} bytes, expected {4 * count} for shape {dims}"
        )
    payload = np.frombuffer(blob, dtype=_F32, count=count, offset=dims_end)
    return payload.astype(np.float64).reshape(dims)


def write_tensor(path: Path | str, array: np.ndarray | Tensor) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode(array))
    return path


def read_tensor(path: Path | str) -> np.ndarray:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read {path}: {e.strerror}") from e
    return decode(blob, source=str(path))


def snap_to_f32(array: np.ndarray) -> np.ndarray:
    """Round to the nearest float32 value, kept as float64."""
    return np.asarray(array, dtype=np.float64).astype(np.float32).astype(np.float64)
