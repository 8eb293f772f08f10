"""Binary tensor container used for all model files.

Layout (all integers little-endian):
    magic   4 bytes  "AGEN"
    version u16
    then zero or more tensor records until end of file:
        name_len u16, name ASCII (name_len bytes)
        rank     u8
        dims     rank × u32
        data     prod(dims) × f64 little-endian, C order
"""

from __future__ import annotations

import io
import struct

import numpy as np

MAGIC = b"AGEN"
VERSION = 1

_MAX_RANK = 8


class ContainerError(ValueError):
    """Raised on malformed container bytes."""


def dump_tensors(tensors: dict[str, np.ndarray]) -> bytes:
    """Serialize named tensors, preserving insertion order."""
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<H", VERSION))
    for name, arr in tensors.items():
        raw = name.encode("ascii")
        if not (0 < len(raw) < 2**16):
            raise ContainerError(f"bad tensor name {name!r}")
        a = np.asarray(arr, dtype="<f8")
        if a.ndim > _MAX_RANK:
            raise ContainerError(f"tensor {name!r} rank {a.ndim} > {_MAX_RANK}")
        if a.ndim:
            a = np.ascontiguousarray(a)  # 0-d would be promoted to 1-d
        out.write(struct.pack("<H", len(raw)))
        out.write(raw)
        out.write(struct.pack("<B", a.ndim))
        out.write(struct.pack(f"<{a.ndim}I", *a.shape))
        out.write(a.tobytes())
    return out.getvalue()


def parse_tensors(blob: bytes) -> dict[str, np.ndarray]:
    """Inverse of dump_tensors; validates structure strictly."""
    if blob[:4] != MAGIC:
        raise ContainerError("bad magic (not an AGEN file)")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    pos = 6
    tensors: dict[str, np.ndarray] = {}

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise ContainerError("truncated container")
        chunk = blob[pos : pos + n]
        pos += n
        return chunk

    while pos < len(blob):
        (name_len,) = struct.unpack("<H", take(2))
        try:
            name = take(name_len).decode("ascii")
        except UnicodeDecodeError as exc:
            raise ContainerError("non-ASCII tensor name") from exc
        (rank,) = struct.unpack("<B", take(1))
        if rank > _MAX_RANK:
            raise ContainerError(f"tensor {name!r} rank {rank} > {_MAX_RANK}")
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        data = np.frombuffer(take(8 * count), dtype="<f8")
        if name in tensors:
            raise ContainerError(f"duplicate tensor {name!r}")
        tensors[name] = data.reshape(dims).astype(np.float64)
    return tensors


def save_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(dump_tensors(tensors))


def load_tensors(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return parse_tensors(fh.read())
