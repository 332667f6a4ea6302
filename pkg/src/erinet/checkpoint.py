"""Versioned, bit-exact checkpoint serialization.

Layout (all integers little-endian):

    magic   b"ERIC"
    u32     format version (currently 1)
    u32     config length; that many bytes of UTF-8 config JSON
    u32     entry count
    entries u16 name length, UTF-8 name,
            u8 flags (bit0 frozen, bit1 buffer), u8 ndim, u32 extents...
    payload raw 32-bit little-endian floats, one block per entry in order
    u32     CRC32 (IEEE) of every preceding byte

Loading rebuilds the models from the embedded config (or fills caller-built
models), refuses on CRC mismatch, and restores every parameter bit-exactly
along with its freeze flag.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .config import RunConfig, build_models
from .eri_head import EriHead
from .errors import ChecksumFailure, NameTableMismatch, VersionUnsupported
from .mtl_dan import MtlDanModel

MAGIC = b"ERIC"
FORMAT_VERSION = 1

_FLAG_FROZEN = 1
_FLAG_BUFFER = 2


def _entries(extractor: MtlDanModel, head: EriHead):
    """Canonical (name, array, flags) enumeration shared by save and load."""
    out = []
    for name, p in extractor.named_parameters("extractor."):
        flags = 0 if p.requires_grad else _FLAG_FROZEN
        out.append((name, p, flags))
    for name, p in head.named_parameters("head."):
        flags = 0 if p.requires_grad else _FLAG_FROZEN
        out.append((name, p, flags))
    for name, buf in extractor.named_buffers("extractor."):
        out.append((name, buf, _FLAG_BUFFER))
    return out


def save_checkpoint(extractor: MtlDanModel, head: EriHead, config: RunConfig, path) -> None:
    blob = config.to_json().encode("utf-8")
    body = bytearray()
    body += MAGIC
    body += struct.pack("<I", FORMAT_VERSION)
    body += struct.pack("<I", len(blob))
    body += blob
    entries = _entries(extractor, head)
    body += struct.pack("<I", len(entries))
    payloads = bytearray()
    for name, array, flags in entries:
        data = array.data if hasattr(array, "requires_grad") else array
        name_bytes = name.encode("utf-8")
        body += struct.pack("<H", len(name_bytes))
        body += name_bytes
        body += struct.pack("<BB", flags, data.ndim)
        body += struct.pack(f"<{data.ndim}I", *data.shape)
        payloads += np.ascontiguousarray(data, dtype="<f4").tobytes()
    body += payloads
    body += struct.pack("<I", zlib.crc32(bytes(body)))
    Path(path).write_bytes(bytes(body))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ChecksumFailure("checkpoint truncated")
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path, into: tuple[MtlDanModel, EriHead] | None = None):
    """Read a checkpoint; returns (extractor, head, config).

    With ``into`` the caller's models are filled and must match the stored
    name table exactly; otherwise fresh models are built from the embedded
    config.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise ChecksumFailure("checkpoint too short")
    stored_crc = struct.unpack("<I", raw[-4:])[0]
    if zlib.crc32(raw[:-4]) != stored_crc:
        raise ChecksumFailure("checkpoint CRC32 mismatch")
    reader = _Reader(raw[:-4])
    if reader.take(4) != MAGIC:
        raise VersionUnsupported("not a checkpoint file (bad magic)")
    version = reader.u32()
    if version != FORMAT_VERSION:
        raise VersionUnsupported(f"checkpoint format version {version} unsupported")
    config = RunConfig.from_json(reader.take(reader.u32()).decode("utf-8"))
    n_entries = reader.u32()
    table = []
    for _ in range(n_entries):
        name = reader.take(reader.u16()).decode("utf-8")
        flags = reader.u8()
        ndim = reader.u8()
        shape = struct.unpack(f"<{ndim}I", reader.take(4 * ndim))
        table.append((name, flags, shape))
    if into is None:
        extractor, head = build_models(config)
    else:
        extractor, head = into
    expected = _entries(extractor, head)
    if len(expected) != len(table):
        raise NameTableMismatch(f"checkpoint has {len(table)} entries, models have {len(expected)}")
    for (name, flags, shape), (want_name, array, _) in zip(table, expected):
        data = array.data if hasattr(array, "requires_grad") else array
        if name != want_name:
            raise NameTableMismatch(f"parameter {name!r} does not match expected {want_name!r}")
        if tuple(shape) != tuple(data.shape):
            raise NameTableMismatch(f"parameter {name!r} has shape {shape}, expected {tuple(data.shape)}")
    for (name, flags, shape), (_, array, _) in zip(table, expected):
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        values = np.frombuffer(reader.take(4 * count), dtype="<f4").reshape(shape)
        if hasattr(array, "requires_grad"):
            array.data = values.astype(array.data.dtype)
            array.requires_grad = not (flags & _FLAG_FROZEN)
            array.grad = None
        else:
            array[...] = values.astype(array.dtype)
    return extractor, head, config
