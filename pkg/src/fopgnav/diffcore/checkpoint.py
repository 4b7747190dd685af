"""Flat binary parameter checkpoints.

Layout: ``b"FOPG"``, format version (u32), then for every tensor the name
length (u32), UTF-8 name bytes, rank (u32), dims (u32 each) and the data as
little-endian float64 in row-major order. All integers are little-endian.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

MAGIC = b"FOPG"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode(tensors: dict[str, np.ndarray]) -> bytes:
    out = [MAGIC, struct.pack("<I", VERSION)]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8", order="C")
        nb = name.encode("utf-8")
        out.append(struct.pack("<I", len(nb)))
        out.append(nb)
        out.append(struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes(order="C"))
    return b"".join(out)


def decode(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise CheckpointError("bad magic bytes")
    if len(blob) < 8:
        raise CheckpointError("truncated header")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 8
    tensors = {}
    try:
        while pos < len(blob):
            (n,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            count = int(np.prod(shape)) if rank else 1
            nbytes = 8 * count
            if pos + nbytes > len(blob):
                raise CheckpointError(f"truncated data for {name!r}")
            arr = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(shape)
            tensors[name] = arr.astype(np.float64)
            pos += nbytes
    except struct.error as e:
        raise CheckpointError(f"truncated checkpoint: {e}") from None
    return tensors


def save(path, tensors: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode(tensors))


def load(path) -> dict[str, np.ndarray]:
    return decode(Path(path).read_bytes())


def params_checksum(params: dict[str, np.ndarray]) -> str:
    return hashlib.sha256(encode({k: params[k] for k in sorted(params)})).hexdigest()
