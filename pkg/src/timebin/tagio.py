"""Time-tag files.

TTG1 binary layout (all little-endian)::

    offset 0   4 bytes   magic b"TTG1"
    offset 4   float64   tick resolution in ps
    offset 12  uint8     number of detector channels in the setup
    offset 13  records, 9 bytes each: uint64 ticks, uint8 channel

The CSV alternative has a ``ticks,channel`` header line and one tag per row.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"TTG1"
HEADER = struct.Struct("<4sdB")
RECORD_DTYPE = np.dtype([("ticks", "<u8"), ("channel", "u1")])  # packed, 9 bytes


class TagFileError(ValueError):
    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")


@dataclass
class TagStream:
    """Sorted tags of one or several channels."""

    ticks: np.ndarray  # uint64
    channel: np.ndarray  # uint8
    tick_ps: float = 1.0
    channel_count: int = 2

    def __len__(self):
        return len(self.ticks)

    @classmethod
    def merge(cls, per_channel: dict, tick_ps: float = 1.0, channel_count: int | None = None):
        ticks = [np.asarray(t, dtype=np.uint64) for t in per_channel.values()]
        chans = [np.full(len(t), ch, dtype=np.uint8) for ch, t in zip(per_channel, ticks)]
        ticks = np.concatenate(ticks) if ticks else np.empty(0, np.uint64)
        chans = np.concatenate(chans) if chans else np.empty(0, np.uint8)
        order = np.lexsort((chans, ticks))
        n = channel_count if channel_count is not None else len(per_channel)
        return cls(ticks[order], chans[order], tick_ps, n)

    def channel_ticks(self, channel: int) -> np.ndarray:
        return self.ticks[self.channel == channel]

    def channels(self) -> list[int]:
        return sorted(int(c) for c in np.unique(self.channel))


def to_ttg1_bytes(stream: TagStream) -> bytes:
    rec = np.empty(len(stream), dtype=RECORD_DTYPE)
    rec["ticks"] = stream.ticks
    rec["channel"] = stream.channel
    return HEADER.pack(MAGIC, float(stream.tick_ps), int(stream.channel_count)) + rec.tobytes()


def from_ttg1_bytes(data: bytes) -> TagStream:
    if len(data) < HEADER.size:
        raise TagFileError("truncated TTG1 header", len(data))
    magic, tick_ps, nch = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise TagFileError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if not tick_ps > 0:
        raise TagFileError("tick resolution must be > 0", 4)
    body = len(data) - HEADER.size
    whole, rest = divmod(body, RECORD_DTYPE.itemsize)
    if rest:
        raise TagFileError("truncated TTG1 record", HEADER.size + whole * RECORD_DTYPE.itemsize)
    rec = np.frombuffer(data, dtype=RECORD_DTYPE, offset=HEADER.size, count=whole)
    ticks = rec["ticks"].astype(np.uint64)
    if ticks.size > 1:
        bad = np.flatnonzero(np.diff(ticks.astype(np.int64)) < 0)
        if bad.size:
            raise TagFileError("tags not sorted by ticks", HEADER.size + (int(bad[0]) + 1) * RECORD_DTYPE.itemsize)
    return TagStream(ticks, rec["channel"].astype(np.uint8), float(tick_ps), int(nch))


def to_csv_text(stream: TagStream) -> str:
    lines = ["ticks,channel"]
    lines.extend(f"{int(t)},{int(c)}" for t, c in zip(stream.ticks, stream.channel))
    return "\n".join(lines) + "\n"


def from_csv_text(text: str, tick_ps: float = 1.0) -> TagStream:
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ticks,channel":
        raise TagFileError("missing 'ticks,channel' header", 0)
    ticks, chans = [], []
    offset = len(lines[0]) + 1
    for line in lines[1:]:
        if line.strip():
            try:
                t, c = line.split(",")
                ticks.append(int(t))
                chans.append(int(c))
            except ValueError:
                raise TagFileError(f"malformed CSV row {line!r}", offset) from None
        offset += len(line) + 1
    ticks = np.array(ticks, dtype=np.uint64)
    chans = np.array(chans, dtype=np.uint8)
    order = np.lexsort((chans, ticks))
    n = int(chans.max()) + 1 if chans.size else 0
    return TagStream(ticks[order], chans[order], tick_ps, n)


def write_tags(path, stream: TagStream) -> None:
    path = Path(path)
    if path.suffix == ".csv":
        path.write_text(to_csv_text(stream), encoding="utf-8")
    else:
        path.write_bytes(to_ttg1_bytes(stream))


def read_tags(path, tick_ps: float = 1.0) -> TagStream:
    """Read a TTG1 file, or a CSV file when the name ends in ``.csv``."""
    path = Path(path)
    if path.suffix == ".csv":
        return from_csv_text(path.read_text(encoding="utf-8"), tick_ps)
    return from_ttg1_bytes(path.read_bytes())


def read_many(paths, tick_ps: float = 1.0) -> TagStream:
    streams = [read_tags(p, tick_ps) for p in paths]
    if not streams:
        return TagStream(np.empty(0, np.uint64), np.empty(0, np.uint8), tick_ps, 0)
    ticks = np.concatenate([s.ticks for s in streams])
    chans = np.concatenate([s.channel for s in streams])
    order = np.lexsort((chans, ticks))
    n = max(s.channel_count for s in streams)
    return TagStream(ticks[order], chans[order], streams[0].tick_ps, n)
