"""Multi-channel time-tag streams and their on-disk encodings.

Binary layout (little-endian)::

    b"TTG1" | u16 version=1 | u16 channel_count | u64 record_count
    record_count x { u8 channel | u64 timestamp_ns }

Records are sorted by (timestamp, channel). The CSV alternative has the header
``channel,timestamp_ns`` and one record per line, channels written by name.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"TTG1"
VERSION = 1
HEADER = struct.Struct("<4sHHQ")
RECORD = np.dtype([("channel", "u1"), ("t", "<u8")])  # packed, 9 bytes
CSV_HEADER = "channel,timestamp_ns"


class Channel(enum.IntEnum):
    PMT = 0
    APD = 1
    CYCLE_START = 2
    DETECT_START = 3


N_CHANNELS = len(Channel)


class TagFormatError(ValueError):
    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        where = f" at byte offset {offset}" if offset is not None else ""
        super().__init__(f"{message}{where}")


@dataclass(frozen=True)
class TimeTag:
    channel: Channel
    t: int


@dataclass
class TagStream:
    channels: np.ndarray = field(default_factory=lambda: np.zeros(0, np.uint8))
    times: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    version: int = VERSION
    resolution_ns: int = 1

    def __post_init__(self):
        self.channels = np.ascontiguousarray(self.channels, dtype=np.uint8)
        self.times = np.ascontiguousarray(self.times, dtype=np.int64)
        if self.channels.shape != self.times.shape:
            raise ValueError("channels and times differ in length")

    def __len__(self):
        return len(self.times)

    def __eq__(self, other):
        if not isinstance(other, TagStream):
            return NotImplemented
        return (np.array_equal(self.channels, other.channels)
                and np.array_equal(self.times, other.times))

    @classmethod
    def from_tags(cls, tags) -> "TagStream":
        tags = list(tags)
        return cls(np.array([int(t.channel) for t in tags], np.uint8),
                   np.array([t.t for t in tags], np.int64))

    @classmethod
    def merge(cls, parts) -> "TagStream":
        """Concatenate (channel, time) arrays and sort by (time, channel)."""
        parts = list(parts)
        ch = np.concatenate([np.asarray(c, np.uint8) for c, _ in parts]) if parts else np.zeros(0, np.uint8)
        t = np.concatenate([np.asarray(x, np.int64) for _, x in parts]) if parts else np.zeros(0, np.int64)
        order = np.lexsort((ch, t))
        return cls(ch[order], t[order])

    def select(self, channel: Channel) -> np.ndarray:
        return self.times[self.channels == int(channel)]

    def tags(self) -> list[TimeTag]:
        return [TimeTag(Channel(int(c)), int(t)) for c, t in zip(self.channels, self.times)]

    def first_disorder(self) -> int | None:
        """Index of the first record out of (time, channel) order, or None."""
        if len(self) < 2:
            return None
        dt = np.diff(self.times)
        dc = np.diff(self.channels.astype(np.int16))
        bad = (dt < 0) | ((dt == 0) & (dc < 0))
        idx = np.flatnonzero(bad)
        return int(idx[0]) + 1 if idx.size else None

    def validate(self):
        if np.any(self.channels >= N_CHANNELS):
            i = int(np.flatnonzero(self.channels >= N_CHANNELS)[0])
            raise TagFormatError(f"unknown channel {self.channels[i]} in record {i}")
        if len(self) and self.times[0] < 0:
            raise TagFormatError("negative timestamp in record 0")
        i = self.first_disorder()
        if i is not None:
            raise TagFormatError(f"record {i} out of order")


def write_tags(stream: TagStream, path, fmt: str | None = None):
    path = Path(path)
    fmt = fmt or ("csv" if path.suffix.lower() == ".csv" else "binary")
    stream.validate()
    if fmt == "csv":
        names = np.array([c.name for c in Channel])
        with open(path, "w", newline="\n") as fh:
            fh.write(CSV_HEADER + "\n")
            if len(stream):
                lines = np.char.add(np.char.add(names[stream.channels], ","),
                                    stream.times.astype(str))
                fh.write("\n".join(lines.tolist()))
                fh.write("\n")
        return
    rec = np.empty(len(stream), dtype=RECORD)
    rec["channel"] = stream.channels
    rec["t"] = stream.times.astype(np.uint64)
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, N_CHANNELS, len(stream)))
        fh.write(rec.tobytes())


def read_tags(path, fmt: str | None = None) -> TagStream:
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(4)
    if not head and fmt is None:
        return TagStream()  # a zero-byte file holds no records
    if fmt is None:
        fmt = "binary" if head == MAGIC else "csv"
    if fmt == "csv":
        return _read_csv(path)
    return _read_binary(path)


def _read_binary(path: Path) -> TagStream:
    data = path.read_bytes()
    if len(data) < HEADER.size:
        raise TagFormatError("truncated header", len(data))
    magic, version, n_channels, count = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise TagFormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise TagFormatError(f"unsupported version {version}", 4)
    if n_channels != N_CHANNELS:
        raise TagFormatError(f"unexpected channel count {n_channels}", 6)
    body = len(data) - HEADER.size
    if body != count * RECORD.itemsize:
        have = body // RECORD.itemsize
        raise TagFormatError(
            f"header announces {count} records but file holds {body} bytes ({have} whole records)",
            HEADER.size + min(have, count) * RECORD.itemsize,
        )
    rec = np.frombuffer(data, dtype=RECORD, count=count, offset=HEADER.size)
    ch = rec["channel"].copy()
    t = rec["t"]
    if count and t.max() > np.iinfo(np.int64).max:
        i = int(np.argmax(t > np.iinfo(np.int64).max))
        raise TagFormatError("timestamp overflow", HEADER.size + i * RECORD.itemsize)
    stream = TagStream(ch, t.astype(np.int64))
    bad_ch = np.flatnonzero(ch >= N_CHANNELS)
    if bad_ch.size:
        i = int(bad_ch[0])
        raise TagFormatError(f"unknown channel {ch[i]}", HEADER.size + i * RECORD.itemsize)
    i = stream.first_disorder()
    if i is not None:
        raise TagFormatError(f"record {i} out of order", HEADER.size + i * RECORD.itemsize)
    return stream


def _parse_channel(token: str) -> int:
    token = token.strip()
    if token.isdigit():
        return int(token)
    try:
        return int(Channel[token.upper()])
    except KeyError:
        return -1


def _read_csv(path: Path) -> TagStream:
    raw = path.read_bytes()
    text = raw.decode("ascii")
    first_nl = text.find("\n")
    header = text if first_nl < 0 else text[:first_nl]
    if header.strip() != CSV_HEADER:
        raise TagFormatError(f"bad CSV header {header.strip()!r}", 0)
    chans, times = [], []
    offset = first_nl + 1
    body = text[offset:] if first_nl >= 0 else ""
    for line in body.split("\n"):
        here = offset
        offset += len(line) + 1
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise TagFormatError(f"malformed record {line!r}", here)
        c = _parse_channel(parts[0])
        if not 0 <= c < N_CHANNELS:
            raise TagFormatError(f"unknown channel {parts[0]!r}", here)
        try:
            t = int(parts[1])
        except ValueError:
            raise TagFormatError(f"bad timestamp {parts[1]!r}", here) from None
        if t < 0:
            raise TagFormatError(f"negative timestamp {t}", here)
        if chans and (t < times[-1] or (t == times[-1] and c < chans[-1])):
            raise TagFormatError("record out of order", here)
        chans.append(c)
        times.append(t)
    if body and not body.endswith("\n"):
        raise TagFormatError("truncated final record (missing newline)", len(raw))
    return TagStream(np.array(chans, np.uint8), np.array(times, np.int64))
