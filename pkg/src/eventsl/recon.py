"""Frame reconstruction from tagged events.

Frames are cut from the tagged stream by wall-clock windows [t0, t1).
Depth pixels combine their events with a selectable policy; the median is
the default because it tolerates the occasional mis-tagged straggler
without smearing depth across plateaus the way a mean would. Color counts
events per channel and inverts the reflectance transfer. The temporal map
keeps the line index of the newest depth tag per pixel, which visualizes
sweep progress.

Image and point-cloud export formats:

- depth: 16-bit grayscale PNG, one millimeter per level, 0 where empty
- color: 8-bit RGB PNG, masked-off pixels black
- temporal: 8-bit grayscale PNG holding the 1-based line index, 0 empty
- cloud: ASCII PLY with x, y, z in mm and red, green, blue
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import CameraIntrinsics, RectifiedRig
from .streams import TaggedEvents

POLICY_LAST = "last"
POLICY_MEAN = "mean"
POLICY_MEDIAN = "median"
POLICIES = (POLICY_LAST, POLICY_MEAN, POLICY_MEDIAN)
DEFAULT_POLICY = POLICY_MEDIAN


@dataclass(frozen=True)
class DepthFrame:
    """Depth in mm, 0 marks no data; ``window`` is the source time span."""

    data: np.ndarray
    window: tuple[int, int]

    def __post_init__(self) -> None:
        if self.data.ndim != 2:
            raise ValueError("depth frame must be 2-D")
        self.data.flags.writeable = False

    @property
    def data_pixel_count(self) -> int:
        return int(np.count_nonzero(self.data))


@dataclass(frozen=True)
class ColorFrame:
    rgb: np.ndarray
    mask: np.ndarray
    window: tuple[int, int]

    def __post_init__(self) -> None:
        if self.rgb.ndim != 3 or self.rgb.shape[2] != 3 or self.rgb.dtype != np.uint8:
            raise ValueError("color frame must be (H, W, 3) uint8")
        if self.mask.shape != self.rgb.shape[:2] or self.mask.dtype != bool:
            raise ValueError("mask must be (H, W) bool")
        if np.any(self.rgb[~self.mask] != 0):
            raise ValueError("masked-off pixels must be black")
        self.rgb.flags.writeable = False
        self.mask.flags.writeable = False

    @property
    def data_pixel_count(self) -> int:
        return int(np.count_nonzero(self.mask))


@dataclass(frozen=True)
class TemporalMap:
    """1-based line index of the newest depth tag per pixel, 0 empty."""

    index: np.ndarray
    window: tuple[int, int]

    def __post_init__(self) -> None:
        if self.index.ndim != 2 or not np.issubdtype(self.index.dtype, np.integer):
            raise ValueError("temporal map must be a 2-D integer array")
        if np.any(self.index < 0):
            raise ValueError("temporal map entries cannot be negative")
        self.index.flags.writeable = False


@dataclass(frozen=True)
class PointCloud:
    xyz_mm: np.ndarray
    rgb: np.ndarray

    def __post_init__(self) -> None:
        if self.xyz_mm.ndim != 2 or self.xyz_mm.shape[1] != 3:
            raise ValueError("point cloud coordinates must be (N, 3)")
        if self.rgb.shape != self.xyz_mm.shape or self.rgb.dtype != np.uint8:
            raise ValueError("point colors must be (N, 3) uint8")
        self.xyz_mm.flags.writeable = False
        self.rgb.flags.writeable = False

    def __len__(self) -> int:
        return len(self.xyz_mm)


def _window_slice(tagged: TaggedEvents, window: tuple[int, int]) -> np.ndarray:
    t0, t1 = window
    if t1 < t0:
        raise ValueError(f"window {window} ends before it starts")
    return (tagged.t >= t0) & (tagged.t < t1)


def _group_reduce(pix_id: np.ndarray, values: np.ndarray, policy: str) -> tuple[np.ndarray, np.ndarray]:
    """Reduce values sharing a pixel id; returns (unique ids, reduced values).

    Stable sort keeps arrival order inside each pixel group, so "last"
    means latest in stream order.
    """
    order = np.argsort(pix_id, kind="stable")
    pix_sorted = pix_id[order]
    val_sorted = values[order]
    unique_ids, starts = np.unique(pix_sorted, return_index=True)
    ends = np.append(starts[1:], len(pix_sorted))
    if policy == POLICY_LAST:
        reduced = val_sorted[ends - 1]
    elif policy == POLICY_MEAN:
        sums = np.add.reduceat(val_sorted, starts)
        reduced = sums / (ends - starts)
    elif policy == POLICY_MEDIAN:
        # Sort values inside each group, then index the middle directly.
        order2 = np.lexsort((values, pix_id))
        val_by_group = values[order2]
        counts = ends - starts
        mid_hi = starts + counts // 2
        mid_lo = starts + (counts - 1) // 2
        reduced = 0.5 * (val_by_group[mid_lo] + val_by_group[mid_hi])
    else:
        raise ValueError(f"unknown policy {policy!r}, expected one of {POLICIES}")
    return unique_ids, reduced


def accumulate_depth(
    tagged: TaggedEvents,
    window: tuple[int, int],
    policy: str = DEFAULT_POLICY,
    min_events: int = 1,
) -> DepthFrame:
    """Combine depth-tagged events into a per-pixel frame."""
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}, expected one of {POLICIES}")
    if min_events < 1:
        raise ValueError("min_events must be at least 1")
    select = _window_slice(tagged, window) & (tagged.depth_mm > 0)
    frame = np.zeros((tagged.height, tagged.width))
    if np.any(select):
        pix_id = tagged.y[select].astype(np.int64) * tagged.width + tagged.x[select].astype(np.int64)
        values = tagged.depth_mm[select].astype(np.float64)
        unique_ids, reduced = _group_reduce(pix_id, values, policy)
        if min_events > 1:
            counts = np.bincount(
                np.searchsorted(unique_ids, pix_id), minlength=len(unique_ids)
            )
            keep = counts >= min_events
            unique_ids, reduced = unique_ids[keep], reduced[keep]
        frame.ravel()[unique_ids] = reduced
    return DepthFrame(data=frame, window=(int(window[0]), int(window[1])))


def accumulate_color(
    tagged: TaggedEvents, window: tuple[int, int], k_max: int = 4
) -> ColorFrame:
    """Invert the reflectance transfer: value = 255 * min(count / k_max, 1)."""
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    select = _window_slice(tagged, window) & (tagged.channel > 0)
    counts = np.zeros((tagged.height, tagged.width, 3), dtype=np.int64)
    if np.any(select):
        chan = tagged.channel[select].astype(np.int64) - 1
        ys = tagged.y[select].astype(np.int64)
        xs = tagged.x[select].astype(np.int64)
        np.add.at(counts, (ys, xs, chan), 1)
    mask = counts.sum(axis=2) > 0
    scaled = np.minimum(counts / float(k_max), 1.0) * 255.0
    rgb = np.rint(scaled).astype(np.uint8)
    rgb[~mask] = 0
    return ColorFrame(rgb=rgb, mask=mask, window=(int(window[0]), int(window[1])))


def temporal_map(tagged: TaggedEvents, window: tuple[int, int]) -> TemporalMap:
    """Per pixel, the 1-based column index of the latest depth tag."""
    select = _window_slice(tagged, window) & (tagged.depth_mm > 0) & (tagged.column_index >= 0)
    index = np.zeros((tagged.height, tagged.width), dtype=np.int32)
    if np.any(select):
        pix_id = tagged.y[select].astype(np.int64) * tagged.width + tagged.x[select].astype(np.int64)
        values = tagged.column_index[select].astype(np.float64) + 1.0
        unique_ids, reduced = _group_reduce(pix_id, values, POLICY_LAST)
        index.ravel()[unique_ids] = reduced.astype(np.int32)
    return TemporalMap(index=index, window=(int(window[0]), int(window[1])))


def build_point_cloud(
    depth: DepthFrame,
    color: ColorFrame | None,
    rig: RectifiedRig,
    camera: CameraIntrinsics,
) -> PointCloud:
    """Back-project a depth frame through the camera model.

    Depth values measure distance along the rectified optical axis, so each
    pixel's ray is scaled to put its rectified-z at the stored value. For an
    axis-aligned rig this reduces to z = depth.
    """
    ys, xs = np.nonzero(depth.data > 0)
    if len(xs) == 0:
        return PointCloud(xyz_mm=np.zeros((0, 3)), rgb=np.zeros((0, 3), dtype=np.uint8))
    dirs = camera.back_project(np.stack([xs.astype(float), ys.astype(float)], axis=1))
    rect_z_rate = dirs @ rig.rectifying_rotation[2]
    if np.any(rect_z_rate <= 0):
        raise ValueError("depth frame contains pixels behind the rectified image plane")
    scale = depth.data[ys, xs] / rect_z_rate
    xyz = dirs * scale[:, None]
    if color is not None:
        rgb = np.where(
            color.mask[ys, xs, None], color.rgb[ys, xs], np.uint8(255)
        ).astype(np.uint8)
    else:
        rgb = np.full((len(xs), 3), 255, dtype=np.uint8)
    return PointCloud(xyz_mm=xyz, rgb=rgb)


def save_depth_png(frame: DepthFrame, path: str | Path) -> None:
    data = np.clip(np.rint(frame.data), 0, 65535).astype(np.uint16)
    Image.fromarray(data).save(path)


def load_depth_png(path: str | Path) -> DepthFrame:
    img = Image.open(path)
    data = np.array(img, dtype=np.float64)
    if data.ndim != 2:
        raise ValueError(f"{path} is not a single-channel depth image")
    return DepthFrame(data=data, window=(0, 0))


def save_color_png(frame: ColorFrame, path: str | Path) -> None:
    Image.fromarray(frame.rgb, mode="RGB").save(path)


def load_color_png(path: str | Path) -> ColorFrame:
    rgb = np.array(Image.open(path).convert("RGB"), dtype=np.uint8)
    mask = rgb.sum(axis=2) > 0
    return ColorFrame(rgb=rgb, mask=mask, window=(0, 0))


def save_temporal_png(tmap: TemporalMap, path: str | Path) -> None:
    if np.any(tmap.index > 255):
        raise ValueError("temporal map index exceeds 8-bit range")
    Image.fromarray(tmap.index.astype(np.uint8), mode="L").save(path)


def save_ply(cloud: PointCloud, path: str | Path) -> None:
    with open(path, "w") as fh:
        fh.write("ply\n")
        fh.write("format ascii 1.0\n")
        fh.write(f"element vertex {len(cloud)}\n")
        fh.write("property float x\n")
        fh.write("property float y\n")
        fh.write("property float z\n")
        fh.write("property uchar red\n")
        fh.write("property uchar green\n")
        fh.write("property uchar blue\n")
        fh.write("end_header\n")
        for point, color in zip(cloud.xyz_mm, cloud.rgb):
            fh.write(
                f"{point[0]:.4f} {point[1]:.4f} {point[2]:.4f} "
                f"{int(color[0])} {int(color[1])} {int(color[2])}\n"
            )


def load_ply(path: str | Path) -> PointCloud:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ValueError(f"{path} is not a PLY file")
    count = 0
    body_at = 0
    for idx, line in enumerate(lines):
        if line.startswith("element vertex"):
            count = int(line.split()[-1])
        if line.strip() == "end_header":
            body_at = idx + 1
            break
    rows = [line.split() for line in lines[body_at : body_at + count]]
    xyz = np.array([[float(v) for v in row[:3]] for row in rows]).reshape(count, 3)
    rgb = np.array([[int(v) for v in row[3:6]] for row in rows], dtype=np.uint8).reshape(count, 3)
    return PointCloud(xyz_mm=xyz, rgb=rgb)
