"""Projection patterns and trigger-encoded sequences.

Patterns are binary bitmaps on the projector's orthogonal logical grid.
A sequence interleaves one identifying blank entry with depth and color
entries; the identifying entry's exposure encodes which of the four
sequence layouts follows, so a receiver can lock on from triggers alone:

    mode 1: ID, R, G, B                      (color only)
    mode 2: ID, D1..Dn                       (depth only)
    mode 3: ID, D1..Dn, R, G, B              (depth then color)
    mode 4: ID, (D1..Dn) per R, G, B block   (depth and color together)

Depth entries in mode 4 carry the block's color channel, so a single
line answers both "how far" and "which channel" for every event it
causes. Exposure metadata lives here; actual trigger emission is the
simulator's job.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml
from PIL import Image

ID_EXPOSURES_US = {1: 250.0, 2: 260.0, 3: 270.0, 4: 280.0}
DEFAULT_EXPOSURE_US = 235.0
DEFAULT_SPAN = (56, 856)
DEFAULT_LINE_WIDTH = 2
MODES = (1, 2, 3, 4)


class Role(enum.IntEnum):
    ID = 0
    DEPTH = 1
    COLOR = 2


class Channel(enum.IntEnum):
    NONE = 0
    R = 1
    G = 2
    B = 3


@dataclass(frozen=True)
class PatternImage:
    """Binary bitmap, shape (height, width), read-only."""

    bitmap: np.ndarray
    on_pixel_count: int

    def __post_init__(self) -> None:
        if self.bitmap.ndim != 2 or self.bitmap.dtype != bool:
            raise ValueError("bitmap must be a 2-D boolean array")
        actual = int(self.bitmap.sum())
        if actual != self.on_pixel_count:
            raise ValueError(f"on_pixel_count {self.on_pixel_count} does not match bitmap sum {actual}")
        self.bitmap.flags.writeable = False

    @classmethod
    def from_bitmap(cls, bitmap: np.ndarray) -> "PatternImage":
        bitmap = np.ascontiguousarray(bitmap, dtype=bool)
        return cls(bitmap=bitmap, on_pixel_count=int(bitmap.sum()))

    @property
    def height(self) -> int:
        return self.bitmap.shape[0]

    @property
    def width(self) -> int:
        return self.bitmap.shape[1]


@dataclass(frozen=True)
class ColumnTable:
    """Center columns of the depth lines, strictly increasing."""

    columns: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.columns) == 0:
            raise ValueError("column table cannot be empty")
        diffs = np.diff(self.columns)
        if len(diffs) and np.min(diffs) <= 0:
            raise ValueError(f"columns must be strictly increasing, got {self.columns}")
        if min(self.columns) < 0:
            raise ValueError("columns cannot be negative")

    def __len__(self) -> int:
        return len(self.columns)

    def __getitem__(self, idx: int) -> int:
        return self.columns[idx]


@dataclass(frozen=True)
class SequenceEntry:
    """One exposure: what is lit, for how long, and where the line sits.

    ``column_index`` is the line's ordinal position in the sweep (drives
    the temporal map); ``column_px`` is the grid column of its center
    (drives the depth lookup).
    """

    role: Role
    exposure_us: float
    channel: Channel = Channel.NONE
    column_index: int | None = None
    column_px: int | None = None
    pattern: PatternImage | None = None

    def __post_init__(self) -> None:
        if self.exposure_us <= 0:
            raise ValueError("exposure must be positive")
        if self.role == Role.DEPTH and (self.column_index is None or self.column_px is None):
            raise ValueError("depth entries need a column index and a center column")


@dataclass(frozen=True)
class PatternSequence:
    mode: int
    entries: tuple[SequenceEntry, ...]
    n: int
    blank_us: float = 0.0
    columns: ColumnTable | None = None

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode}")
        if self.blank_us < 0:
            raise ValueError("blank must be non-negative")
        if not self.entries or self.entries[0].role != Role.ID:
            raise ValueError("sequence must open with the identifying entry")
        if abs(self.entries[0].exposure_us - ID_EXPOSURES_US[self.mode]) > 1e-9:
            raise ValueError(
                f"mode {self.mode} identifier must expose {ID_EXPOSURES_US[self.mode]} us, "
                f"got {self.entries[0].exposure_us}"
            )


@dataclass(frozen=True)
class CoverageReport:
    coverage_pct: float
    active_span: tuple[int, int]
    on_pixels: int
    span_pixels: int


def _line_columns(n: int, span: tuple[int, int], width: int, feature_width: int) -> list[int]:
    first, last = int(span[0]), int(span[1])
    if not (0 <= first < last < width):
        raise ValueError(f"span {span} invalid for grid width {width}")
    half_left = (feature_width - 1) // 2
    half_right = feature_width // 2
    if first - half_left < 0 or last + half_right >= width:
        raise ValueError(f"features of width {feature_width} at span {span} poke past the grid")
    if n < 1:
        raise ValueError("need at least one line")
    if n == 1:
        return [round((first + last) / 2)]
    spacing = (last - first) / (n - 1)
    if spacing - feature_width < 1:
        raise ValueError(
            f"span {span} too small for {n} lines of width {feature_width} with unit gaps "
            f"(spacing {spacing:.2f} px)"
        )
    return [round(first + k * spacing) for k in range(n)]


def generate_line_pattern(
    n: int,
    line_width: int = DEFAULT_LINE_WIDTH,
    span: tuple[int, int] = DEFAULT_SPAN,
    width: int = 912,
    height: int = 1140,
) -> tuple[list[PatternImage], ColumnTable]:
    """One full-height vertical line per pattern, centers equally spaced."""
    if line_width < 1:
        raise ValueError("line width must be at least 1 px")
    centers = _line_columns(n, span, width, line_width)
    half_left = (line_width - 1) // 2
    patterns = []
    for center in centers:
        bitmap = np.zeros((height, width), dtype=bool)
        bitmap[:, center - half_left : center - half_left + line_width] = True
        patterns.append(PatternImage.from_bitmap(bitmap))
    return patterns, ColumnTable(tuple(centers))


def generate_dot_pattern(
    n: int,
    rows: int,
    dot_size: int = 3,
    span: tuple[int, int] = DEFAULT_SPAN,
    width: int = 912,
    height: int = 1140,
) -> tuple[list[PatternImage], ColumnTable]:
    """Dots sampled down each line's column; all dots of a pattern share it."""
    if dot_size < 1:
        raise ValueError("dot size must be at least 1 px")
    if rows < 1:
        raise ValueError("need at least one dot row")
    centers = _line_columns(n, span, width, dot_size)
    margin = dot_size // 2
    low = margin
    high = height - 1 - (dot_size - 1 - margin)
    if rows == 1:
        row_centers = [round((low + high) / 2)]
    else:
        vertical_spacing = (high - low) / (rows - 1)
        if vertical_spacing < dot_size:
            raise ValueError(f"{rows} dot rows of size {dot_size} overlap on height {height}")
        row_centers = [round(low + j * vertical_spacing) for j in range(rows)]
    patterns = []
    for center in centers:
        bitmap = np.zeros((height, width), dtype=bool)
        col0 = center - margin
        for row in row_centers:
            row0 = row - margin
            bitmap[row0 : row0 + dot_size, col0 : col0 + dot_size] = True
        image = PatternImage.from_bitmap(bitmap)
        if image.on_pixel_count != dot_size * dot_size * rows:
            raise ValueError("dot layout clipped or overlapped, counts are off")
        patterns.append(image)
    return patterns, ColumnTable(tuple(centers))


def solid_pattern(
    span: tuple[int, int] | None = None, width: int = 912, height: int = 1140
) -> PatternImage:
    """Dense block used as the color illumination pattern."""
    bitmap = np.zeros((height, width), dtype=bool)
    if span is None:
        bitmap[:, :] = True
    else:
        first, last = int(span[0]), int(span[1])
        if not (0 <= first < last < width):
            raise ValueError(f"span {span} invalid for grid width {width}")
        bitmap[:, first : last + 1] = True
    return PatternImage.from_bitmap(bitmap)


def build_sequence(
    mode: int,
    depth: tuple[list[PatternImage], ColumnTable] | None = None,
    color_pattern: PatternImage | None = None,
    exposure_us: float = DEFAULT_EXPOSURE_US,
    blank_us: float = 0.0,
) -> PatternSequence:
    """Assemble the entry list for one of the four sequence layouts.

    Mode 4 reuses the depth patterns as its color patterns, one full depth
    block per channel, matching the projector behavior the identifier
    exposure announces.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode}")
    if exposure_us <= 0:
        raise ValueError("exposure must be positive")
    if mode in (2, 3, 4):
        if depth is None or len(depth[0]) == 0:
            raise ValueError(f"mode {mode} needs depth patterns")
        depth_patterns, columns = depth
        if len(depth_patterns) != len(columns):
            raise ValueError("one pattern per column required")
    else:
        depth_patterns, columns = [], None
    if mode in (1, 3) and color_pattern is None:
        raise ValueError(f"mode {mode} needs a color pattern")

    entries: list[SequenceEntry] = [SequenceEntry(role=Role.ID, exposure_us=ID_EXPOSURES_US[mode])]
    if mode == 1:
        for channel in (Channel.R, Channel.G, Channel.B):
            entries.append(
                SequenceEntry(Role.COLOR, exposure_us, channel=channel, pattern=color_pattern)
            )
    elif mode == 2:
        for idx, pattern in enumerate(depth_patterns):
            entries.append(
                SequenceEntry(
                    Role.DEPTH, exposure_us, column_index=idx, column_px=columns[idx], pattern=pattern
                )
            )
    elif mode == 3:
        for idx, pattern in enumerate(depth_patterns):
            entries.append(
                SequenceEntry(
                    Role.DEPTH, exposure_us, column_index=idx, column_px=columns[idx], pattern=pattern
                )
            )
        for channel in (Channel.R, Channel.G, Channel.B):
            entries.append(
                SequenceEntry(Role.COLOR, exposure_us, channel=channel, pattern=color_pattern)
            )
    else:
        for channel in (Channel.R, Channel.G, Channel.B):
            for idx, pattern in enumerate(depth_patterns):
                entries.append(
                    SequenceEntry(
                        Role.DEPTH,
                        exposure_us,
                        channel=channel,
                        column_index=idx,
                        column_px=columns[idx],
                        pattern=pattern,
                    )
                )
    return PatternSequence(
        mode=mode,
        entries=tuple(entries),
        n=len(depth_patterns),
        blank_us=float(blank_us),
        columns=columns,
    )


def sequence_duration(seq: PatternSequence) -> float:
    """Total microseconds: sum of entry exposures plus one blank per entry."""
    return float(sum(entry.exposure_us for entry in seq.entries)) + seq.blank_us * len(seq.entries)


def coverage_percentage(patterns: list[PatternImage], span: tuple[int, int]) -> CoverageReport:
    """Share of the span area the union of ON pixels covers."""
    if not patterns:
        raise ValueError("need at least one pattern")
    first, last = int(span[0]), int(span[1])
    if last <= first:
        raise ValueError(f"span {span} has zero width")
    union = np.zeros_like(patterns[0].bitmap)
    for pattern in patterns:
        if pattern.bitmap.shape != union.shape:
            raise ValueError("patterns must share one grid")
        union = union | pattern.bitmap
    on_pixels = int(union.sum())
    span_pixels = (last - first) * union.shape[0]
    on_columns = np.flatnonzero(union.any(axis=0))
    active = (int(on_columns[0]), int(on_columns[-1])) if len(on_columns) else (0, 0)
    return CoverageReport(
        coverage_pct=100.0 * on_pixels / span_pixels,
        active_span=active,
        on_pixels=on_pixels,
        span_pixels=span_pixels,
    )


def _diamond_offsets(width: int, height: int) -> tuple[int, int]:
    # Align the logical center with the native center; native grid is
    # (height) rows by (width) columns, same cell count as the logical grid.
    row0, col0 = height // 2, width // 2
    x0, y0 = width // 2, height // 2
    off_x = x0 - col0 + row0 // 2
    off_y = col0 + (row0 + 1) // 2 - y0
    return off_x, off_y


def diamond_compensate(pattern: PatternImage) -> np.ndarray:
    """Native DMD bitmap whose rendering shows the pattern rotated 45 degrees.

    The DMD's offset rows form a quincunx on the projection surface; its
    points are exactly the integer lattice of a 45-degree rotated frame.
    Each logical pixel therefore owns one native mirror. Logical content
    whose mirror falls outside the DMD (the corners of the rotated frame)
    cannot be displayed and is dropped; ``diamond_mappable_mask`` reports
    the displayable region.
    """
    height, width = pattern.bitmap.shape
    off_x, off_y = _diamond_offsets(width, height)
    native = np.zeros((height, width), dtype=bool)
    ys, xs = np.nonzero(pattern.bitmap)
    rows = ys - xs + (off_x + off_y)
    valid = (rows >= 0) & (rows < height)
    xs, ys, rows = xs[valid], ys[valid], rows[valid]
    cols = xs + rows // 2 - off_x
    valid = (cols >= 0) & (cols < width)
    native[rows[valid], cols[valid]] = True
    return native


def diamond_render(native: np.ndarray, width: int | None = None, height: int | None = None) -> np.ndarray:
    """Logical-grid appearance of a native DMD bitmap (inverse of compensate)."""
    native = np.asarray(native, dtype=bool)
    n_rows, n_cols = native.shape
    height = n_rows if height is None else height
    width = n_cols if width is None else width
    off_x, off_y = _diamond_offsets(width, height)
    logical = np.zeros((height, width), dtype=bool)
    rows, cols = np.nonzero(native)
    xs = cols - rows // 2 + off_x
    ys = cols + (rows + 1) // 2 - off_y
    valid = (xs >= 0) & (xs < width) & (ys >= 0) & (ys < height)
    logical[ys[valid], xs[valid]] = True
    return logical


def diamond_surface_positions(native: np.ndarray) -> np.ndarray:
    """Surface (x, y) of every ON mirror: x = col + 0.5*(row odd), y = row/2."""
    rows, cols = np.nonzero(np.asarray(native, dtype=bool))
    return np.stack([cols + 0.5 * (rows % 2), rows / 2.0], axis=1)


def diamond_mappable_mask(width: int = 912, height: int = 1140) -> np.ndarray:
    """Logical pixels whose dedicated mirror lies inside the native grid."""
    off_x, off_y = _diamond_offsets(width, height)
    xs, ys = np.meshgrid(np.arange(width), np.arange(height))
    rows = ys - xs + (off_x + off_y)
    cols = xs + np.where(rows >= 0, rows // 2, 0) - off_x
    return (rows >= 0) & (rows < height) & (cols >= 0) & (cols < width)


_ROLE_NAMES = {Role.ID: "ID", Role.DEPTH: "DEPTH", Role.COLOR: "COLOR"}
_CHANNEL_NAMES = {Channel.NONE: "NONE", Channel.R: "R", Channel.G: "G", Channel.B: "B"}


def save_pattern_set(seq: PatternSequence, out_dir: str | Path, write_bitmaps: bool = True) -> Path:
    """Write the sequence manifest plus one 1-bit bitmap per entry."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries_meta = []
    for idx, entry in enumerate(seq.entries):
        name = f"entry_{idx:03d}.png"
        meta = {
            "role": _ROLE_NAMES[entry.role],
            "exposure_us": float(entry.exposure_us),
            "channel": _CHANNEL_NAMES[entry.channel],
            "column_index": entry.column_index,
            "column_px": entry.column_px,
            "bitmap": name if (write_bitmaps and entry.pattern is not None) else None,
        }
        entries_meta.append(meta)
        if write_bitmaps and entry.pattern is not None:
            img = Image.fromarray(entry.pattern.bitmap.astype(np.uint8) * 255).convert("1")
            img.save(out_dir / name)
    manifest = {
        "mode": seq.mode,
        "n": seq.n,
        "blank_us": float(seq.blank_us),
        "columns": list(seq.columns.columns) if seq.columns is not None else [],
        "entries": entries_meta,
    }
    manifest_path = out_dir / "manifest.yaml"
    manifest_path.write_text(yaml.safe_dump(manifest, sort_keys=False))
    return manifest_path


def load_manifest(path: str | Path, load_bitmaps: bool = False) -> PatternSequence:
    """Rebuild a sequence from its manifest; bitmaps are optional.

    Tagging only needs the entry structure and the column table, so by
    default patterns come back as None.
    """
    path = Path(path)
    raw = yaml.safe_load(path.read_text())
    for key in ("mode", "n", "blank_us", "columns", "entries"):
        if key not in raw:
            raise ValueError(f"manifest missing field {key!r}")
    role_lookup = {v: k for k, v in _ROLE_NAMES.items()}
    channel_lookup = {v: k for k, v in _CHANNEL_NAMES.items()}
    entries = []
    for meta in raw["entries"]:
        pattern = None
        if load_bitmaps and meta.get("bitmap"):
            img = np.array(Image.open(path.parent / meta["bitmap"]).convert("1"))
            pattern = PatternImage.from_bitmap(img)
        entries.append(
            SequenceEntry(
                role=role_lookup[meta["role"]],
                exposure_us=float(meta["exposure_us"]),
                channel=channel_lookup[meta["channel"]],
                column_index=meta["column_index"],
                column_px=meta["column_px"],
                pattern=pattern,
            )
        )
    columns = ColumnTable(tuple(int(c) for c in raw["columns"])) if raw["columns"] else None
    return PatternSequence(
        mode=int(raw["mode"]),
        entries=tuple(entries),
        n=int(raw["n"]),
        blank_us=float(raw["blank_us"]),
        columns=columns,
    )
