"""Binary checkpoint container.

Layout (little-endian)::

    b"STRM" | u32 version | u32 count | count × record
    record = u32 name_len | name (UTF-8) | u8 dtype tag | u32 rank | rank × u64 dim | raw values
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"STRM"
VERSION = 1

_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8"), 3: np.dtype("u1")}
_TAG_OF = {v: k for k, v in _TAGS.items()}


class CheckpointError(ValueError):
    """Malformed or incompatible checkpoint file."""


def save_arrays(path: str | Path, arrays: Mapping[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<") if arr.dtype.kind != "u" else arr.dtype
        if dt not in _TAG_OF:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for record {name!r}")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack("<BI", _TAG_OF[dt], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_arrays(path: str | Path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {buf[:4]!r}")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    pos = 12
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos : pos + n].decode("utf-8")
            pos += n
            tag, rank = struct.unpack_from("<BI", buf, pos)
            pos += 5
            dims = struct.unpack_from(f"<{rank}Q", buf, pos)
            pos += 8 * rank
            dt = _TAGS[tag]
            nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
            if pos + nbytes > len(buf):
                raise CheckpointError(f"{path}: record {name!r} truncated")
            out[name] = np.frombuffer(buf, dtype=dt, count=nbytes // dt.itemsize, offset=pos).reshape(dims).copy()
            pos += nbytes
    except (struct.error, KeyError) as exc:
        raise CheckpointError(f"{path}: corrupt record table ({exc})") from exc
    return out
