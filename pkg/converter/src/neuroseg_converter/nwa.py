"""Standalone NWA1 archive writer/reader.

The format is the neuroseg toolkit's external interface, re-implemented
here so this package stays independent of the toolkit's internals:
little-endian, magic "NWA1", u32 version 1, u32 tensor count, then per
tensor (sorted by name): u16 name length, UTF-8 name, u8 ndim, ndim x
u32 dims, u8 dtype (0 = f32), row-major f32 payload.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import ConverterError

MAGIC = b"NWA1"
VERSION = 1


def write_nwa(tensors: dict[str, np.ndarray], path) -> None:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name in sorted(tensors):
        data = np.ascontiguousarray(tensors[name], dtype="<f4")
        if data.size == 0:
            raise ConverterError(f"tensor {name!r} is empty")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", data.ndim))
        parts.append(struct.pack(f"<{data.ndim}I", *data.shape))
        parts.append(struct.pack("<B", 0))
        parts.append(data.tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(parts))


def read_nwa(path) -> dict[str, np.ndarray]:
    buf = open(path, "rb").read()
    if buf[:4] != MAGIC:
        raise ConverterError("not an NWA1 archive")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise ConverterError(f"unsupported version {version}")
    off = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off:off + nlen].decode("utf-8")
        off += nlen
        ndim = buf[off]
        off += 1
        dims = struct.unpack_from(f"<{ndim}I", buf, off)
        off += 4 * ndim
        dtype = buf[off]
        off += 1
        if dtype != 0:
            raise ConverterError(f"unsupported dtype {dtype}")
        n = int(np.prod(dims))
        out[name] = np.frombuffer(buf, dtype="<f4", count=n, offset=off).reshape(dims).copy()
        off += 4 * n
    return out
