"""Little-endian binary containers for maps, weights, codebooks and models.

Tensor container layout::

    magic      8 bytes
    version    1 byte (currently 1)
    count      u32   number of tensors
    per tensor:
        ndim   u32
        dims   ndim x u32
        data   prod(dims) x f32, row-major

A feature map is a single 3-D tensor ``(H, W, C)``. Codebooks have their own
layout (see :mod:`digisem.converter`) but share the magic/version prefix.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

VERSION = 1

MAGIC_FEATURE_MAP = b"DSFMAP\x00\x01"
MAGIC_CODEC = b"DSCODEC\x01"
MAGIC_CODEBOOK = b"DSCDBK\x00\x01"
MAGIC_DECOUPLE = b"DSDCPL\x00\x01"
MAGIC_UAN = b"DSUAN\x00\x00\x01"


class Reader:
    """Cursor over a bytes buffer with typed little-endian reads."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ValueError("truncated container")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u32s(self, n: int) -> tuple:
        return struct.unpack(f"<{n}I", self.take(4 * n))

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def array(self, dtype, count: int) -> np.ndarray:
        dt = np.dtype(dtype).newbyteorder("<")
        return np.frombuffer(self.take(dt.itemsize * count), dtype=dt).astype(dt.newbyteorder("="))

    def done(self):
        if self.pos != len(self.data):
            raise ValueError(f"{len(self.data) - self.pos} trailing bytes in container")


def header(magic: bytes) -> bytes:
    if len(magic) != 8:
        raise ValueError("magic must be 8 bytes")
    return magic + bytes([VERSION])


def open_reader(data: bytes, magic: bytes) -> Reader:
    r = Reader(data)
    got = r.take(8)
    if got != magic:
        raise ValueError(f"bad magic {got!r}, expected {magic!r}")
    ver = r.take(1)[0]
    if ver != VERSION:
        raise ValueError(f"unsupported container version {ver}")
    return r


def pack_tensors(magic: bytes, tensors) -> bytes:
    parts = [header(magic), struct.pack("<I", len(tensors))]
    for t in tensors:
        t = np.asarray(t, dtype="<f4")
        parts.append(struct.pack(f"<I{t.ndim}I", t.ndim, *t.shape))
        parts.append(np.ascontiguousarray(t).tobytes())
    return b"".join(parts)


def unpack_tensors(data: bytes, magic: bytes) -> list[np.ndarray]:
    r = open_reader(data, magic)
    out = []
    for _ in range(r.u32()):
        ndim = r.u32()
        dims = r.u32s(ndim)
        out.append(r.array("f4", int(np.prod(dims, dtype=np.int64))).reshape(dims).astype(np.float64))
    r.done()
    return out


def save_tensors(path, magic: bytes, tensors) -> None:
    Path(path).write_bytes(pack_tensors(magic, tensors))


def load_tensors(path, magic: bytes) -> list[np.ndarray]:
    return unpack_tensors(Path(path).read_bytes(), magic)


def save_feature_map(path, fmap: np.ndarray) -> None:
    fmap = np.asarray(fmap)
    if fmap.ndim != 3:
        raise ValueError("feature map must be H x W x C")
    save_tensors(path, MAGIC_FEATURE_MAP, [fmap])


def load_feature_map(path) -> np.ndarray:
    (fmap,) = load_tensors(path, MAGIC_FEATURE_MAP)
    return fmap


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
