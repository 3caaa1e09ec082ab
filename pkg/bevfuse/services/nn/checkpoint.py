"""Binary checkpoint format.

    "BVF1" | u32 blob count | per blob: u32 name length, UTF-8 name,
    u32 rank, rank x u32 dims, float64 data (row-major)

All integers and floats are little-endian.
"""

import struct
from pathlib import Path
from typing import Dict, Union

import numpy as np

from bevfuse.errors import NNError

MAGIC = b"BVF1"


def save_checkpoint(path: Union[str, Path], state: Dict[str, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    chunks = [MAGIC, struct.pack("<I", len(state))]
    for name in sorted(state):
        data = np.ascontiguousarray(state[name], dtype="<f8")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.tobytes())
    path.write_bytes(b"".join(chunks))
    return path


def load_checkpoint(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise NNError(f"checkpoint {path} does not exist")
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise NNError(f"{path} is not a checkpoint (bad magic)")
    pos = 4

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(raw):
            raise NNError(f"checkpoint {path} is truncated")
        values = struct.unpack_from(fmt, raw, pos)
        pos += size
        return values

    (count,) = take("<I")
    state: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (length,) = take("<I")
        if pos + length > len(raw):
            raise NNError(f"checkpoint {path} is truncated")
        name = raw[pos : pos + length].decode("utf-8")
        pos += length
        (rank,) = take("<I")
        dims = take(f"<{rank}I") if rank else ()
        nbytes = 8 * int(np.prod(dims, dtype=np.int64))
        if pos + nbytes > len(raw):
            raise NNError(f"checkpoint {path} is truncated")
        state[name] = np.frombuffer(raw[pos : pos + nbytes], dtype="<f8").reshape(dims).astype(np.float64)
        pos += nbytes
    if pos != len(raw):
        raise NNError(f"checkpoint {path} has {len(raw) - pos} trailing bytes")
    return state
