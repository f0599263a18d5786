"""Event stream and tagged-event containers with their file formats.

Streams hold events and projector trigger edges as column arrays, which
keeps per-element cost off the hot paths. Binary layouts are little-endian
and fully pinned:

Event stream file (extension ``.evs``)::

    header: magic b"EVS1" | version u16 | width u16 | height u16 | start_time u64
    record: x u16 | y u16 | t u64 | polarity u8 | kind u8        (14 bytes)

``kind`` is 0 for sensor events, 1 for trigger rising edges, 2 for
trigger falling edges; trigger records carry x = y = polarity = 0.

Tagged-event file (extension ``.tev``)::

    header: magic b"TEV1" | version u16 | width u16 | height u16 | start_time u64
    record: x u16 | y u16 | t u64 | depth_mm f32 | channel u8 | disparity f32   (21 bytes)

CSV mirrors use one header line and the same field order.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

STREAM_MAGIC = b"EVS1"
TAGGED_MAGIC = b"TEV1"
FORMAT_VERSION = 1

POLARITY_OFF = 0
POLARITY_ON = 1

KIND_EVENT = 0
KIND_TRIGGER_RISING = 1
KIND_TRIGGER_FALLING = 2

_HEADER_DTYPE = np.dtype(
    [("magic", "S4"), ("version", "<u2"), ("width", "<u2"), ("height", "<u2"), ("start_time", "<u8")]
)
_STREAM_DTYPE = np.dtype(
    [("x", "<u2"), ("y", "<u2"), ("t", "<u8"), ("polarity", "u1"), ("kind", "u1")]
)
_TAGGED_DTYPE = np.dtype(
    [("x", "<u2"), ("y", "<u2"), ("t", "<u8"), ("depth_mm", "<f4"), ("channel", "u1"), ("disparity", "<f4")]
)


class StreamFormatError(ValueError):
    """Raised when a stream or tagged file fails structural checks."""


@dataclass(frozen=True)
class EventRecord:
    x: int
    y: int
    t: int
    polarity: int


@dataclass(frozen=True)
class TriggerRecord:
    t: int
    edge: int  # KIND_TRIGGER_RISING or KIND_TRIGGER_FALLING


@dataclass
class EventStream:
    """Sensor events plus trigger edges, both sorted by timestamp."""

    width: int
    height: int
    start_time: int
    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    polarity: np.ndarray
    trigger_t: np.ndarray
    trigger_edge: np.ndarray

    def __post_init__(self) -> None:
        lengths = {len(self.x), len(self.y), len(self.t), len(self.polarity)}
        if len(lengths) != 1:
            raise ValueError("event arrays must share one length")
        if len(self.trigger_t) != len(self.trigger_edge):
            raise ValueError("trigger arrays must share one length")
        if len(self.t) and np.any(np.diff(self.t.astype(np.int64)) < 0):
            raise StreamFormatError("event timestamps must be non-decreasing")
        if len(self.trigger_t) and np.any(np.diff(self.trigger_t.astype(np.int64)) < 0):
            raise StreamFormatError("trigger timestamps must be non-decreasing")

    def __len__(self) -> int:
        return len(self.t)

    @property
    def trigger_count(self) -> int:
        return len(self.trigger_t)

    def events(self) -> list[EventRecord]:
        return [
            EventRecord(int(x), int(y), int(t), int(p))
            for x, y, t, p in zip(self.x, self.y, self.t, self.polarity)
        ]

    def triggers(self) -> list[TriggerRecord]:
        return [TriggerRecord(int(t), int(e)) for t, e in zip(self.trigger_t, self.trigger_edge)]

    @classmethod
    def empty(cls, width: int, height: int, start_time: int = 0) -> "EventStream":
        return cls(
            width=width,
            height=height,
            start_time=start_time,
            x=np.zeros(0, dtype=np.uint16),
            y=np.zeros(0, dtype=np.uint16),
            t=np.zeros(0, dtype=np.int64),
            polarity=np.zeros(0, dtype=np.uint8),
            trigger_t=np.zeros(0, dtype=np.int64),
            trigger_edge=np.zeros(0, dtype=np.uint8),
        )


@dataclass
class TaggedEvents:
    """Column-array result of tagging; order follows the input stream.

    ``column_index`` (-1 for color-only tags) and ``source_index`` (row of
    the originating event in the input stream) exist in memory only and
    are not part of the file format.
    """

    width: int
    height: int
    start_time: int
    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    depth_mm: np.ndarray
    channel: np.ndarray
    disparity: np.ndarray
    column_index: np.ndarray
    source_index: np.ndarray

    def __len__(self) -> int:
        return len(self.t)

    @classmethod
    def empty(cls, width: int, height: int, start_time: int = 0) -> "TaggedEvents":
        return cls(
            width=width,
            height=height,
            start_time=start_time,
            x=np.zeros(0, dtype=np.uint16),
            y=np.zeros(0, dtype=np.uint16),
            t=np.zeros(0, dtype=np.int64),
            depth_mm=np.zeros(0, dtype=np.float64),
            channel=np.zeros(0, dtype=np.uint8),
            disparity=np.zeros(0, dtype=np.float64),
            column_index=np.full(0, -1, dtype=np.int32),
            source_index=np.zeros(0, dtype=np.int64),
        )


def _pack_header(magic: bytes, width: int, height: int, start_time: int) -> np.ndarray:
    header = np.zeros(1, dtype=_HEADER_DTYPE)
    header["magic"] = magic
    header["version"] = FORMAT_VERSION
    header["width"] = width
    header["height"] = height
    header["start_time"] = start_time
    return header


def _read_header(buffer: bytes, magic: bytes, path: Path) -> tuple[dict, int]:
    if len(buffer) < _HEADER_DTYPE.itemsize:
        raise StreamFormatError(f"{path} is too short to hold a header")
    header = np.frombuffer(buffer[: _HEADER_DTYPE.itemsize], dtype=_HEADER_DTYPE)[0]
    if bytes(header["magic"]) != magic:
        raise StreamFormatError(f"{path} has magic {bytes(header['magic'])!r}, expected {magic!r}")
    if int(header["version"]) != FORMAT_VERSION:
        raise StreamFormatError(f"{path} has unsupported version {int(header['version'])}")
    meta = {
        "width": int(header["width"]),
        "height": int(header["height"]),
        "start_time": int(header["start_time"]),
    }
    return meta, _HEADER_DTYPE.itemsize


def save_stream(stream: EventStream, path: str | Path) -> None:
    """Write events and triggers merged by time into the binary layout."""
    n_ev = len(stream)
    n_tr = stream.trigger_count
    records = np.zeros(n_ev + n_tr, dtype=_STREAM_DTYPE)
    all_t = np.concatenate([stream.t.astype(np.int64), stream.trigger_t.astype(np.int64)])
    kind = np.concatenate(
        [np.full(n_ev, KIND_EVENT, dtype=np.uint8), stream.trigger_edge.astype(np.uint8)]
    )
    x = np.concatenate([stream.x.astype(np.uint16), np.zeros(n_tr, dtype=np.uint16)])
    y = np.concatenate([stream.y.astype(np.uint16), np.zeros(n_tr, dtype=np.uint16)])
    pol = np.concatenate([stream.polarity.astype(np.uint8), np.zeros(n_tr, dtype=np.uint8)])
    order = np.argsort(all_t, kind="stable")
    records["x"] = x[order]
    records["y"] = y[order]
    records["t"] = all_t[order]
    records["polarity"] = pol[order]
    records["kind"] = kind[order]
    with open(path, "wb") as fh:
        fh.write(_pack_header(STREAM_MAGIC, stream.width, stream.height, stream.start_time).tobytes())
        fh.write(records.tobytes())


def load_stream(path: str | Path) -> EventStream:
    path = Path(path)
    buffer = path.read_bytes()
    meta, offset = _read_header(buffer, STREAM_MAGIC, path)
    body = buffer[offset:]
    if len(body) % _STREAM_DTYPE.itemsize != 0:
        raise StreamFormatError(f"{path} record section is not a whole number of records")
    records = np.frombuffer(body, dtype=_STREAM_DTYPE)
    is_event = records["kind"] == KIND_EVENT
    events = records[is_event]
    triggers = records[~is_event]
    if np.any((triggers["kind"] != KIND_TRIGGER_RISING) & (triggers["kind"] != KIND_TRIGGER_FALLING)):
        raise StreamFormatError(f"{path} contains unknown record kinds")
    return EventStream(
        width=meta["width"],
        height=meta["height"],
        start_time=meta["start_time"],
        x=events["x"].astype(np.uint16),
        y=events["y"].astype(np.uint16),
        t=events["t"].astype(np.int64),
        polarity=events["polarity"].astype(np.uint8),
        trigger_t=triggers["t"].astype(np.int64),
        trigger_edge=triggers["kind"].astype(np.uint8),
    )


def save_stream_csv(stream: EventStream, path: str | Path) -> None:
    n_ev = len(stream)
    n_tr = stream.trigger_count
    all_t = np.concatenate([stream.t.astype(np.int64), stream.trigger_t.astype(np.int64)])
    kind = np.concatenate(
        [np.full(n_ev, KIND_EVENT, dtype=np.uint8), stream.trigger_edge.astype(np.uint8)]
    )
    x = np.concatenate([stream.x.astype(np.int64), np.zeros(n_tr, dtype=np.int64)])
    y = np.concatenate([stream.y.astype(np.int64), np.zeros(n_tr, dtype=np.int64)])
    pol = np.concatenate([stream.polarity.astype(np.int64), np.zeros(n_tr, dtype=np.int64)])
    order = np.argsort(all_t, kind="stable")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "t_us", "polarity", "kind"])
        for idx in order:
            writer.writerow([int(x[idx]), int(y[idx]), int(all_t[idx]), int(pol[idx]), int(kind[idx])])


def save_tagged(tagged: TaggedEvents, path: str | Path) -> None:
    records = np.zeros(len(tagged), dtype=_TAGGED_DTYPE)
    records["x"] = tagged.x
    records["y"] = tagged.y
    records["t"] = tagged.t
    records["depth_mm"] = tagged.depth_mm.astype(np.float32)
    records["channel"] = tagged.channel
    records["disparity"] = tagged.disparity.astype(np.float32)
    with open(path, "wb") as fh:
        fh.write(_pack_header(TAGGED_MAGIC, tagged.width, tagged.height, tagged.start_time).tobytes())
        fh.write(records.tobytes())


def load_tagged(path: str | Path) -> TaggedEvents:
    path = Path(path)
    buffer = path.read_bytes()
    meta, offset = _read_header(buffer, TAGGED_MAGIC, path)
    body = buffer[offset:]
    if len(body) % _TAGGED_DTYPE.itemsize != 0:
        raise StreamFormatError(f"{path} record section is not a whole number of records")
    records = np.frombuffer(body, dtype=_TAGGED_DTYPE)
    count = len(records)
    return TaggedEvents(
        width=meta["width"],
        height=meta["height"],
        start_time=meta["start_time"],
        x=records["x"].astype(np.uint16),
        y=records["y"].astype(np.uint16),
        t=records["t"].astype(np.int64),
        depth_mm=records["depth_mm"].astype(np.float64),
        channel=records["channel"].astype(np.uint8),
        disparity=records["disparity"].astype(np.float64),
        column_index=np.full(count, -1, dtype=np.int32),
        source_index=np.arange(count, dtype=np.int64),
    )


def save_tagged_csv(tagged: TaggedEvents, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "t_us", "depth_mm", "channel", "disparity"])
        for i in range(len(tagged)):
            writer.writerow(
                [
                    int(tagged.x[i]),
                    int(tagged.y[i]),
                    int(tagged.t[i]),
                    f"{float(np.float32(tagged.depth_mm[i])):.6g}",
                    int(tagged.channel[i]),
                    f"{float(np.float32(tagged.disparity[i])):.6g}",
                ]
            )
