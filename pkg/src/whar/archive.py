"""Checksummed, versioned container for named weight tensors.

One archive file is one deployed model: every tensor the networks need
plus an embedded JSON configuration describing how to assemble them.

File layout, all little-endian:

    magic "WHAR" | version u32 | entry_count u32 | config_len u32 |
    config bytes (utf-8 JSON) |
    per entry: name_len u16, name bytes, dtype u8 (0=f32, 1=f16),
               rank u8, dims u32 x rank, payload bytes, crc32 u32

The crc32 covers the payload bytes of its own entry so corruption reports
can name the damaged tensor.
"""

from __future__ import annotations

import io
import json
import struct
import zlib

from .errors import CorruptionError, FormatError, ValidationError, VersionError
from .tensor import DTYPE_SIZES, Tensor

MAGIC = b"WHAR"
CURRENT_VERSION = 1

_DTYPE_CODES = {"f32": 0, "f16": 1}
_CODE_DTYPES = {0: "f32", 1: "f16"}

# Config keys whose string values are, by convention, references to archive
# entry names. Model loaders additionally enforce their own per-model
# completeness checks.
_REF_KEY_SUFFIXES = ("_weights", "_bias", "_tensor")


def _referenced_names(node, found):
    if isinstance(node, dict):
        for key, value in node.items():
            if isinstance(value, str) and key.endswith(_REF_KEY_SUFFIXES):
                found.append(value)
            else:
                _referenced_names(value, found)
    elif isinstance(node, list):
        for value in node:
            _referenced_names(value, found)


class WeightArchive:
    """Ordered name -> Tensor map with an embedded JSON configuration."""

    def __init__(self, entries: dict[str, Tensor] | None = None, config: str = "{}",
                 version: int = CURRENT_VERSION):
        self.version = int(version)
        self.entries: dict[str, Tensor] = dict(entries or {})
        self.config = config
        self.validate()

    def validate(self):
        for name in self.entries:
            if not name:
                raise ValidationError("entry names must be non-empty")
            if len(name.encode("utf-8")) > 0xFFFF:
                raise ValidationError(f"entry name too long: {name[:40]}...")
        try:
            cfg = json.loads(self.config)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(cfg, dict):
            raise ValidationError("config must be a JSON object")
        refs: list[str] = []
        _referenced_names(cfg, refs)
        missing = [r for r in refs if r not in self.entries]
        if missing:
            raise ValidationError(f"config references absent entries: {missing}")

    @property
    def config_dict(self) -> dict:
        return json.loads(self.config)

    def payload_nbytes(self) -> int:
        return sum(t.nbytes for t in self.entries.values())

    def __eq__(self, other) -> bool:
        if not isinstance(other, WeightArchive):
            return NotImplemented
        return (
            self.version == other.version
            and self.config == other.config
            and list(self.entries) == list(other.entries)
            and all(self.entries[k] == other.entries[k] for k in self.entries)
        )

    def __repr__(self):
        return f"WeightArchive(version={self.version}, entries={len(self.entries)})"


def write_archive(archive: WeightArchive, path) -> None:
    """Serialize an archive; read_archive(write_archive(a)) == a bit-exactly."""
    archive.validate()
    buf = io.BytesIO()
    config_bytes = archive.config.encode("utf-8")
    buf.write(struct.pack("<4sIII", MAGIC, archive.version,
                          len(archive.entries), len(config_bytes)))
    buf.write(config_bytes)
    for name, tensor in archive.entries.items():
        name_bytes = name.encode("utf-8")
        payload = tensor.tobytes()
        buf.write(struct.pack("<H", len(name_bytes)))
        buf.write(name_bytes)
        buf.write(struct.pack("<BB", _DTYPE_CODES[tensor.dtype], len(tensor.shape)))
        for dim in tensor.shape:
            buf.write(struct.pack("<I", dim))
        buf.write(payload)
        buf.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated archive: wanted {n} bytes at offset {self.pos}, "
                              f"file has {len(self.data)}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_archive(path) -> WeightArchive:
    """Load and fully re-validate an archive; any crc mismatch is fatal."""
    with open(path, "rb") as fh:
        cur = _Cursor(fh.read())
    magic, version, entry_count, config_len = cur.unpack("<4sIII")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != CURRENT_VERSION:
        raise VersionError(f"unsupported archive version {version}")
    try:
        config = cur.take(config_len).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"config bytes are not valid utf-8: {exc}") from exc
    entries: dict[str, Tensor] = {}
    for _ in range(entry_count):
        (name_len,) = cur.unpack("<H")
        name = cur.take(name_len).decode("utf-8")
        dtype_code, rank = cur.unpack("<BB")
        if dtype_code not in _CODE_DTYPES:
            raise FormatError(f"entry {name!r}: unknown dtype code {dtype_code}")
        dtype = _CODE_DTYPES[dtype_code]
        dims = [cur.unpack("<I")[0] for _ in range(rank)]
        n_scalars = 1
        for dim in dims:
            n_scalars *= dim
        payload = cur.take(n_scalars * DTYPE_SIZES[dtype])
        (crc_stored,) = cur.unpack("<I")
        crc_actual = zlib.crc32(payload) & 0xFFFFFFFF
        if crc_actual != crc_stored:
            raise CorruptionError(f"entry {name!r}: crc mismatch "
                                  f"(stored {crc_stored:#010x}, actual {crc_actual:#010x})")
        if name in entries:
            raise ValidationError(f"duplicate entry name {name!r}")
        try:
            entries[name] = Tensor.frombytes(payload, dtype, dims)
        except ValueError as exc:
            raise ValidationError(f"entry {name!r}: {exc}") from exc
    if cur.pos != len(cur.data):
        raise FormatError(f"{len(cur.data) - cur.pos} trailing bytes after last entry")
    return WeightArchive(entries, config, version)
