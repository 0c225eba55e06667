"""Binary tensor archive for weights and fixtures.

Layout (little-endian throughout):

    magic "MSNT"            4 bytes
    format version          u32 (currently 1)
    entry count             u32
    per entry:
        name length         u16, then UTF-8 name bytes
        rank                u8
        extents             u32 each
        values              extent-product f64, row-major

Round trips are bit-exact; malformed input is rejected with the byte
offset of the problem.
"""

from __future__ import annotations

import struct

import numpy as np

__all__ = ["ArchiveError", "load_archive", "save_archive"]

MAGIC = b"MSNT"
VERSION = 1


class ArchiveError(ValueError):
    """Malformed archive; the message carries the byte offset."""


def save_archive(entries: dict[str, np.ndarray], path) -> None:
    """Write named float64 arrays; iteration order of ``entries`` is preserved."""
    chunks = [MAGIC, struct.pack("<II", VERSION, len(entries))]
    seen = set()
    for name, value in entries.items():
        if name in seen:
            raise ArchiveError(f"duplicate entry name {name!r}")
        seen.add(name)
        raw_name = name.encode("utf-8")
        if len(raw_name) > 0xFFFF:
            raise ArchiveError(f"entry name too long: {name!r}")
        arr = np.asarray(value, dtype=np.float64)
        if arr.ndim > 0xFF:
            raise ArchiveError(f"entry {name!r} has unsupported rank {arr.ndim}")
        chunks.append(struct.pack("<H", len(raw_name)))
        chunks.append(raw_name)
        chunks.append(struct.pack("<B", arr.ndim))
        for extent in arr.shape:
            chunks.append(struct.pack("<I", extent))
        chunks.append(arr.astype("<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.offset = 0

    def take(self, count: int, what: str) -> bytes:
        if self.offset + count > len(self.blob):
            raise ArchiveError(
                f"truncated archive: needed {count} bytes for {what} at byte {self.offset}"
            )
        piece = self.blob[self.offset : self.offset + count]
        self.offset += count
        return piece

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def u16(self, what: str) -> int:
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def load_archive(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise ArchiveError(f"bad magic {magic!r} at byte 0 (expected {MAGIC!r})")
    version = r.u32("format version")
    if version != VERSION:
        raise ArchiveError(f"unsupported format version {version} at byte 4")
    count = r.u32("entry count")
    entries: dict[str, np.ndarray] = {}
    for index in range(count):
        name_start = r.offset
        name_len = r.u16(f"entry {index} name length")
        raw_name = r.take(name_len, f"entry {index} name")
        try:
            name = raw_name.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ArchiveError(
                f"entry {index}: invalid UTF-8 name at byte {name_start + 2}: {exc}"
            ) from None
        if name in entries:
            raise ArchiveError(f"duplicate entry name {name!r} at byte {name_start}")
        rank = r.u8(f"entry {name!r} rank")
        shape = tuple(r.u32(f"entry {name!r} extent {d}") for d in range(rank))
        total = 1
        for extent in shape:
            total *= extent
        raw = r.take(8 * total, f"entry {name!r} values")
        entries[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
    if r.offset != len(blob):
        raise ArchiveError(
            f"trailing garbage: {len(blob) - r.offset} unread bytes at byte {r.offset}"
        )
    return entries
