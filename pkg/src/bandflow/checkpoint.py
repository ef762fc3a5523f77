"""Binary checkpoint format.

Layout: magic b"VBND", version u32 LE, tensor count u32 LE, then per tensor:
name length u16 LE + UTF-8 name, rank u8, extents u32 LE each, payload as
float32 little-endian row-major.  Round trips are value-exact at f32.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import DataError
from .tensor import ParameterStore

MAGIC = b"VBND"
VERSION = 1


def save_checkpoint(params, path) -> None:
    """Write named arrays; accepts a ParameterStore or a name->array dict."""
    if isinstance(params, ParameterStore):
        items = [(name, t.data) for name, t in params.items()]
    else:
        items = sorted((str(k), np.asarray(v)) for k, v in params.items())
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(items)))
        for name, arr in items:
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", arr.ndim))
            for ext in arr.shape:
                f.write(struct.pack("<I", ext))
            payload = np.ascontiguousarray(arr, dtype="<f4")
            f.write(payload.tobytes())


def load_checkpoint(path) -> dict:
    """Read a checkpoint into a name -> float64 ndarray dict."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise DataError(f"{path}: bad magic {blob[:4]!r}")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    off = 12
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<B", blob, off)
        off += 1
        shape = struct.unpack_from(f"<{rank}I", blob, off) if rank else ()
        off += 4 * rank
        n = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(shape)
        off += 4 * n
        out[name] = arr.astype(np.float64)
    return out


def load_into(store: ParameterStore, path) -> None:
    """Overwrite store parameters from a checkpoint; names must match."""
    arrays = load_checkpoint(path)
    for name, t in store.items():
        if name not in arrays:
            raise DataError(f"checkpoint missing parameter {name!r}")
        if arrays[name].shape != t.data.shape:
            raise DataError(
                f"shape mismatch for {name!r}: {arrays[name].shape} vs {t.data.shape}"
            )
        t.data[...] = arrays[name]
