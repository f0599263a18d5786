"""Event tagging against the projector trigger stream.

The projector raises a sync line while each pattern is lit and drops it at
the end of the exposure, so the trigger stream alternates rising/falling
edges. The tagger keys everything off the falling edges: the gap between a
rising edge and the next falling edge is the exposure length, and the
sequence's opening exposure doubles as a mode announcement (each scan mode
opens with a distinct exposure). Once synchronized, the tagger knows which
sequence entry is lit during any time span and stamps every ON event that
arrives inside a depth exposure with metric depth.

Depth comes from a direct lookup, not a solver. Each projected line lives
at a known native column whose rectified image is a near-vertical segment;
the rectified projector x at the event's rectified y follows from the two
segment endpoints. Disparity is that x minus the event's own rectified x,
and depth = focal * baseline / disparity. Events failing the positivity or
range gates are dropped and counted, never guessed.

Rejection bookkeeping distinguishes events that arrive before the first
sync (idle), during the announcement pattern itself (id_pattern), with the
wrong polarity inside a depth window (off_polarity), outside the lens's
calibrated footprint (out_of_bounds), behind the rectification epipole
(non_positive_disparity), and outside the plausible working range
(depth_gate).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import RectificationLut, RectifiedRig
from .patterns import ID_EXPOSURES_US, Role, SequenceEntry
from .streams import KIND_TRIGGER_RISING, POLARITY_ON, EventStream, TaggedEvents

# Trigger pulse widths jitter by a couple of clock ticks on real hardware;
# the announcement exposures are 10 us apart so +-5 us splits the bands.
TOL_ID_US = 5.0

DEPTH_MIN_MM = 200.0
DEPTH_MAX_MM = 5000.0


@dataclass
class RejectionStats:
    """Why events were left untagged, by cause."""

    idle: int = 0
    id_pattern: int = 0
    off_polarity: int = 0
    out_of_bounds: int = 0
    non_positive_disparity: int = 0
    depth_gate: int = 0

    @property
    def total(self) -> int:
        return (
            self.idle
            + self.id_pattern
            + self.off_polarity
            + self.out_of_bounds
            + self.non_positive_disparity
            + self.depth_gate
        )

    def as_dict(self) -> dict[str, int]:
        return {
            "idle": self.idle,
            "id_pattern": self.id_pattern,
            "off_polarity": self.off_polarity,
            "out_of_bounds": self.out_of_bounds,
            "non_positive_disparity": self.non_positive_disparity,
            "depth_gate": self.depth_gate,
        }


@dataclass
class LineGeometry:
    """Rectified endpoints of one projected line, cached per native column."""

    x_top: float
    y_top: float
    slope: float  # dx per unit y along the rectified segment


@dataclass(frozen=True)
class TagResult:
    """One successfully tagged event; depth_mm is 0 for color-only tags."""

    depth_mm: float
    channel: int
    disparity: float
    column_index: int


@dataclass
class Tagger:
    """Streaming tagger; feed triggers and events in time order."""

    rig: RectifiedRig
    lut: RectificationLut
    sequence: tuple[SequenceEntry, ...] = ()
    depth_min_mm: float = DEPTH_MIN_MM
    depth_max_mm: float = DEPTH_MAX_MM

    synchronized: bool = field(default=False, init=False)
    entry_index: int = field(default=-1, init=False)
    mode: int = field(default=0, init=False)
    _mode_sequences: dict[int, tuple[SequenceEntry, ...]] = field(default_factory=dict, init=False)
    _pending_rise_us: float | None = field(default=None, init=False)
    _lines: dict[int, LineGeometry] = field(default_factory=dict, init=False)

    def __post_init__(self) -> None:
        if self.sequence:
            mode = _mode_of(self.sequence)
            self._mode_sequences[mode] = tuple(self.sequence)
        for entry in self.sequence:
            if entry.role is Role.DEPTH:
                self._line_geometry(entry.column_px)

    def register_sequence(self, mode: int, sequence: tuple[SequenceEntry, ...]) -> None:
        """Teach the tagger the entry layout announced by a given exposure."""
        if _mode_of(sequence) != mode:
            raise ValueError("sequence opener does not announce the claimed mode")
        self._mode_sequences[mode] = tuple(sequence)
        for entry in sequence:
            if entry.role is Role.DEPTH:
                self._line_geometry(entry.column_px)

    @property
    def active_entry(self) -> SequenceEntry | None:
        if not self.synchronized:
            return None
        return self._mode_sequences[self.mode][self.entry_index]

    def _line_geometry(self, column_px: int) -> LineGeometry:
        cached = self._lines.get(column_px)
        if cached is not None:
            return cached
        # The lookup table carries one extra row so row index `height`
        # addresses the bottom edge of the panel directly.
        height = self.rig.projector_size[1]
        top = self.lut.projector_map[0, column_px]
        bottom = self.lut.projector_map[height, column_px]
        dy = bottom[1] - top[1]
        if abs(dy) < 1e-9:
            raise ValueError(f"projected column {column_px} rectifies to a horizontal segment")
        geom = LineGeometry(
            x_top=float(top[0]),
            y_top=float(top[1]),
            slope=float((bottom[0] - top[0]) / dy),
        )
        self._lines[column_px] = geom
        return geom

    def on_trigger(self, t_us: int, rising: bool) -> None:
        """Advance the entry state machine on a sync edge."""
        if rising:
            self._pending_rise_us = float(t_us)
            return
        if self._pending_rise_us is None:
            # Stream started mid-exposure; wait for a clean pulse.
            self.synchronized = False
            return
        exposure = float(t_us) - self._pending_rise_us
        self._pending_rise_us = None

        announced = _match_id_exposure(exposure)
        if announced is not None and announced in self._mode_sequences:
            # Any announcement resynchronizes, even mid-sequence.
            self.mode = announced
            self.entry_index = 0
            self.synchronized = True
            self._advance()
            return
        if not self.synchronized:
            return
        expected = self._mode_sequences[self.mode][self.entry_index]
        if abs(exposure - expected.exposure_us) > TOL_ID_US:
            # Lost a pulse or the projector changed programs; hold off
            # tagging until the next announcement.
            self.synchronized = False
            return
        self._advance()

    def _advance(self) -> None:
        """Point entry_index at the entry lit after the pulse just closed."""
        seq = self._mode_sequences[self.mode]
        if self.entry_index + 1 >= len(seq):
            # Sequence exhausted; the next pulse must be an announcement.
            self.synchronized = False
            self.entry_index = -1
        else:
            self.entry_index += 1

    def tag_event(self, x: int, y: int, t_us: int, polarity: int) -> TagResult | str:
        """Tag one event; returns a :class:`TagResult` or a rejection cause."""
        entry = self.active_entry
        if entry is None:
            return "idle"
        if entry.role is Role.ID:
            return "id_pattern"
        if polarity != POLARITY_ON:
            # OFF bursts belong to the exposure that just ended; counting
            # them here would double color counts and smear depth windows.
            return "off_polarity"
        rows, cols = self.lut.camera_map.shape[:2]
        if not (0 <= x < cols and 0 <= y < rows):
            return "out_of_bounds"
        if entry.role is Role.COLOR:
            return TagResult(depth_mm=0.0, channel=int(entry.channel), disparity=0.0, column_index=-1)
        rect = self.lut.camera_map[y, x]
        geom = self._line_geometry(entry.column_px)
        x_proj = geom.x_top + (rect[1] - geom.y_top) * geom.slope
        disparity = x_proj - rect[0]
        if disparity <= 0:
            return "non_positive_disparity"
        depth = self.rig.rectified_focal_px * self.rig.baseline_mm / disparity
        if not (self.depth_min_mm <= depth <= self.depth_max_mm):
            return "depth_gate"
        channel = int(entry.channel) if entry.channel else 0
        return TagResult(
            depth_mm=float(depth),
            channel=channel,
            disparity=float(disparity),
            column_index=int(entry.column_index),
        )


def recover_column_indices(
    tagged: TaggedEvents,
    rig: RectifiedRig,
    lut: RectificationLut,
    columns: Sequence[int],
) -> np.ndarray:
    """Reassign sweep indices to depth tags loaded from disk.

    The tagged file stores disparity but not which line produced it; the
    rectified projector x implied by each event's disparity sits on
    exactly one line, so the nearest line at the event's rectified y
    recovers the index. Returns -1 for color-only tags.
    """
    out = np.full(len(tagged), -1, dtype=np.int32)
    has_depth = tagged.depth_mm > 0
    if not np.any(has_depth) or len(columns) == 0:
        return out
    scratch = Tagger(rig=rig, lut=lut)
    geoms = [scratch._line_geometry(int(col)) for col in columns]
    rect = lut.camera_map[tagged.y[has_depth], tagged.x[has_depth]]
    x_implied = rect[:, 0] + tagged.disparity[has_depth]
    # (events, lines) distance table; n is small so this stays cheap.
    x_lines = np.stack(
        [g.x_top + (rect[:, 1] - g.y_top) * g.slope for g in geoms], axis=1
    )
    out[has_depth] = np.argmin(np.abs(x_lines - x_implied[:, None]), axis=1).astype(np.int32)
    return out


def _mode_of(sequence: tuple[SequenceEntry, ...]) -> int:
    if not sequence or sequence[0].role is not Role.ID:
        raise ValueError("sequence must open with an announcement entry")
    mode = _match_id_exposure(sequence[0].exposure_us)
    if mode is None:
        raise ValueError(
            f"opening exposure {sequence[0].exposure_us} us is not an announcement width"
        )
    return mode


def _match_id_exposure(exposure_us: float) -> int | None:
    for mode, width in ID_EXPOSURES_US.items():
        if abs(exposure_us - width) <= TOL_ID_US:
            return mode
    return None


def process_stream(
    stream: EventStream,
    rig: RectifiedRig,
    lut: RectificationLut,
    sequences: dict[int, tuple[SequenceEntry, ...]] | tuple[SequenceEntry, ...],
) -> tuple[TaggedEvents, RejectionStats]:
    """Tag a recorded stream in one vectorized pass.

    Equivalent to feeding the stream through :class:`Tagger` one record at
    a time, but events are batched per exposure window so the rectified
    lookup and the disparity arithmetic run over whole arrays. Input order
    is preserved in the output; ``source_index`` maps each tagged event
    back to its position in the stream.
    """
    tagger = Tagger(rig=rig, lut=lut)
    if isinstance(sequences, dict):
        for mode, seq in sequences.items():
            tagger.register_sequence(mode, seq)
    else:
        tagger.register_sequence(_mode_of(tuple(sequences)), tuple(sequences))

    stats = RejectionStats()
    n = len(stream.t)
    out_depth = np.zeros(n)
    out_channel = np.zeros(n, dtype=np.uint8)
    out_disparity = np.zeros(n)
    out_column = np.full(n, -1, dtype=np.int32)
    tagged_mask = np.zeros(n, dtype=bool)

    # Window i spans [falling_{i-1}, falling_i); the state that tags it is
    # whatever the machine held after processing falling_{i-1}.
    bounds = [np.int64(np.iinfo(np.int64).min)]
    window_states: list[SequenceEntry | None] = [tagger.active_entry]
    for t_edge, edge_kind in zip(stream.trigger_t, stream.trigger_edge):
        is_rising = int(edge_kind) == KIND_TRIGGER_RISING
        tagger.on_trigger(int(t_edge), is_rising)
        if not is_rising:
            bounds.append(np.int64(t_edge))
            window_states.append(tagger.active_entry)
    bounds_arr = np.asarray(bounds, dtype=np.int64)

    # side="right" puts an event exactly on a falling edge into the next
    # window, matching the streaming tagger which processes edges first.
    window_of = np.searchsorted(bounds_arr, stream.t, side="right") - 1

    for w, entry in enumerate(window_states):
        sel = window_of == w
        count = int(np.count_nonzero(sel))
        if count == 0:
            continue
        if entry is None:
            stats.idle += count
            continue
        if entry.role is Role.ID:
            stats.id_pattern += count
            continue
        idx = np.nonzero(sel)[0]
        on = stream.polarity[idx] == POLARITY_ON
        stats.off_polarity += int(np.count_nonzero(~on))
        idx = idx[on]
        if len(idx) == 0:
            continue
        rows, cols = lut.camera_map.shape[:2]
        xs = stream.x[idx].astype(np.int64)
        ys = stream.y[idx].astype(np.int64)
        in_map = (xs >= 0) & (xs < cols) & (ys >= 0) & (ys < rows)
        stats.out_of_bounds += int(np.count_nonzero(~in_map))
        idx = idx[in_map]
        if len(idx) == 0:
            continue
        if entry.role is Role.COLOR:
            tagged_mask[idx] = True
            out_channel[idx] = int(entry.channel)
            continue
        rect = lut.camera_map[ys[in_map], xs[in_map]]
        geom = tagger._line_geometry(entry.column_px)
        x_proj = geom.x_top + (rect[:, 1] - geom.y_top) * geom.slope
        disparity = x_proj - rect[:, 0]
        positive = disparity > 0
        stats.non_positive_disparity += int(np.count_nonzero(~positive))
        idx = idx[positive]
        disparity = disparity[positive]
        depth = rig.rectified_focal_px * rig.baseline_mm / disparity
        in_range = (depth >= tagger.depth_min_mm) & (depth <= tagger.depth_max_mm)
        stats.depth_gate += int(np.count_nonzero(~in_range))
        idx = idx[in_range]
        if len(idx) == 0:
            continue
        tagged_mask[idx] = True
        out_depth[idx] = depth[in_range]
        out_disparity[idx] = disparity[in_range]
        out_column[idx] = entry.column_index
        if entry.channel:
            out_channel[idx] = int(entry.channel)

    keep = np.nonzero(tagged_mask)[0]
    tagged = TaggedEvents(
        width=stream.width,
        height=stream.height,
        start_time=stream.start_time,
        x=stream.x[keep].copy(),
        y=stream.y[keep].copy(),
        t=stream.t[keep].copy(),
        depth_mm=out_depth[keep],
        channel=out_channel[keep],
        disparity=out_disparity[keep],
        column_index=out_column[keep],
        source_index=keep.astype(np.int64),
    )
    return tagged, stats
