"""
Raw tensor container (.mmt):

    b"MMT1" | u8 rank | rank x u32 LE extents | u8 dtype tag (0 = f32, 1 = f64) | row-major LE payload
"""
import struct
from pathlib import Path

import numpy as np

from utils.errors import FormatError

MAGIC = b"MMT1"
DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
TAG_OF = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def encode_tensor(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    if array.dtype not in TAG_OF:
        raise FormatError(f"mmt: unsupported dtype {array.dtype} (only float32 and float64 are stored)")
    if array.ndim > 255:
        raise FormatError(f"mmt: rank {array.ndim} does not fit the header")
    tag = TAG_OF[array.dtype]
    header = MAGIC + struct.pack("<B", array.ndim) + struct.pack(f"<{array.ndim}I", *array.shape)
    payload = np.ascontiguousarray(array, dtype=DTYPE_TAGS[tag]).tobytes()
    return header + struct.pack("<B", tag) + payload


def decode_tensor(blob: bytes, offset: int = 0, source: str = "mmt") -> tuple[np.ndarray, int]:
    """Returns (array, offset just past the payload)."""
    if blob[offset:offset + 4] != MAGIC:
        raise FormatError(f"{source}: bad magic {blob[offset:offset + 4]!r}, expected {MAGIC!r}")
    offset += 4
    if len(blob) < offset + 1:
        raise FormatError(f"{source}: truncated header")
    (rank,) = struct.unpack_from("<B", blob, offset)
    offset += 1
    if len(blob) < offset + 4 * rank + 1:
        raise FormatError(f"{source}: truncated header")
    shape = struct.unpack_from(f"<{rank}I", blob, offset)
    offset += 4 * rank
    (tag,) = struct.unpack_from("<B", blob, offset)
    offset += 1
    if tag not in DTYPE_TAGS:
        raise FormatError(f"{source}: unknown dtype tag {tag}")
    dtype = DTYPE_TAGS[tag]
    n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(blob) < offset + n_bytes:
        raise FormatError(f"{source}: truncated payload ({len(blob) - offset} of {n_bytes} bytes)")
    array = np.frombuffer(blob, dtype=dtype, count=n_bytes // dtype.itemsize, offset=offset).reshape(shape)
    return array.astype(dtype.newbyteorder("="), copy=True), offset + n_bytes


def save_mmt(path: Path | str, array: np.ndarray):
    Path(path).write_bytes(encode_tensor(array))


def load_mmt(path: Path | str) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"{path}: no such file")
    blob = path.read_bytes()
    array, end = decode_tensor(blob, source=str(path))
    if end != len(blob):
        raise FormatError(f"{path}: {len(blob) - end} trailing bytes after the payload")
    return array
