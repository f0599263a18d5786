"""Synthetic camera-projector rig emitting event streams.

For each sequence entry the projector casts one ray per ON logical pixel
into the scene. Every scene point that survives camera visibility and
occlusion checks lights the camera pixel it projects into, and that pixel
emits a burst of ON events at entry onset (plus latency and jitter) and a
matching OFF burst at entry offset. Burst size follows the reflectance
transfer ``k = round(albedo_channel * k_max)`` for color-carrying entries
and ``k = k_max`` for plain depth entries. The reflectance that drives a
pixel's burst is sampled along that pixel's own line of sight, so the
count a pixel reports is exactly invertible from its viewpoint.

Trigger edges delimit every entry. Timestamps are integer microseconds.
With a fixed seed the output stream is bit-identical between runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CameraIntrinsics, Extrinsics, ProjectorModel
from .patterns import Channel, PatternSequence, Role
from .recon import ColorFrame, DepthFrame
from .scene import SceneModel
from .streams import (
    KIND_TRIGGER_FALLING,
    KIND_TRIGGER_RISING,
    POLARITY_OFF,
    POLARITY_ON,
    EventStream,
)

DEFAULT_K_MAX = 4
_OCCLUSION_REL_TOL = 1e-6


@dataclass(frozen=True)
class NoiseConfig:
    """Sensor imperfections; the defaults model the real part.

    ``background_rate_hz`` is whole-sensor uniform noise. ``bus_cap_per_ms``
    truncates each millisecond bucket to that many events (0 means
    unlimited). ``drop_probability`` loses events uniformly at random.
    """

    background_rate_hz: float = 0.0
    latency_mean_us: float = 200.0
    latency_jitter_us: float = 50.0
    drop_probability: float = 0.0
    bus_cap_per_ms: int = 0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.background_rate_hz < 0 or self.latency_mean_us < 0 or self.latency_jitter_us < 0:
            raise ValueError("noise magnitudes cannot be negative")
        if not (0.0 <= self.drop_probability <= 1.0):
            raise ValueError("drop probability must lie in [0, 1]")
        if self.bus_cap_per_ms < 0:
            raise ValueError("bus cap cannot be negative")


NOISELESS = NoiseConfig(
    background_rate_hz=0.0,
    latency_mean_us=0.0,
    latency_jitter_us=0.0,
    drop_probability=0.0,
    bus_cap_per_ms=0,
    seed=0,
)


def _pattern_footprint(
    pattern,
    scene: SceneModel,
    camera: CameraIntrinsics,
    projector: ProjectorModel,
    extrinsics: Extrinsics,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Camera pixels a pattern lights, with per-pixel surface reflectance.

    Returns (pixel_x, pixel_y, albedo_rgb), deduplicated per camera pixel.
    The footprint depends only on geometry, so one pattern is traced once
    no matter how many entries reuse it.
    """
    rows, cols = np.nonzero(pattern.bitmap)
    empty = (np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros((0, 3)))
    if len(rows) == 0:
        return empty
    pixels = np.stack([cols.astype(float), rows.astype(float)], axis=1)
    dirs_p = projector.intrinsics.back_project(pixels)
    dirs = dirs_p @ extrinsics.rotation  # row-vector form of R^T @ d
    origin = extrinsics.projector_center_in_camera()

    t_hit, _ = scene.intersect(origin, dirs)
    hit = np.isfinite(t_hit)
    points = origin + t_hit[hit, None] * dirs[hit]
    points = points[points[:, 2] > 0]
    if len(points) == 0:
        return empty

    cam_pix = camera.project_points(points)
    px = np.rint(cam_pix[:, 0]).astype(np.int64)
    py = np.rint(cam_pix[:, 1]).astype(np.int64)
    visible = (px >= 0) & (px < camera.width) & (py >= 0) & (py < camera.height)
    points, px, py = points[visible], px[visible], py[visible]
    if len(points) == 0:
        return empty

    # Geometric shadowing: the camera must see the lit point first.
    ranges = np.linalg.norm(points, axis=1)
    view_dirs = points / ranges[:, None]
    t_cam, _ = scene.intersect(np.zeros(3), view_dirs)
    unoccluded = np.abs(t_cam - ranges) <= _OCCLUSION_REL_TOL * ranges + 1e-9
    px, py = px[unoccluded], py[unoccluded]
    if len(px) == 0:
        return empty

    pix_id = py * camera.width + px
    _, keep = np.unique(pix_id, return_index=True)
    px, py = px[keep], py[keep]

    # Reflectance along each lit pixel's own center ray.
    center_dirs = camera.back_project(np.stack([px.astype(float), py.astype(float)], axis=1))
    t_center, prim_center = scene.intersect(np.zeros(3), center_dirs)
    seen = np.isfinite(t_center)
    px, py = px[seen], py[seen]
    center_points = t_center[seen, None] * center_dirs[seen]
    albedo = scene.albedo_at(prim_center[seen], center_points)
    return px, py, albedo


def coverage_mask(
    scene: SceneModel,
    camera: CameraIntrinsics,
    projector: ProjectorModel,
    extrinsics: Extrinsics,
    seq: PatternSequence,
) -> np.ndarray:
    """Camera pixels any depth entry of the sequence can illuminate.

    This is the fair fill-rate denominator for a sparse sweep: pixels the
    patterns never reach are not holes, they were never on the menu.
    """
    mask = np.zeros((camera.height, camera.width), dtype=bool)
    seen: set[int] = set()
    for entry in seq.entries:
        if entry.role is not Role.DEPTH or entry.pattern is None:
            continue
        if id(entry.pattern) in seen:
            continue
        seen.add(id(entry.pattern))
        px, py, _ = _pattern_footprint(entry.pattern, scene, camera, projector, extrinsics)
        mask[py, px] = True
    return mask


def _entry_counts(entry, albedo: np.ndarray, pixel_count: int, k_max: int) -> np.ndarray:
    if entry.role == Role.DEPTH and entry.channel == Channel.NONE:
        return np.full(pixel_count, k_max, dtype=np.int64)
    return np.rint(albedo[:, int(entry.channel) - 1] * k_max).astype(np.int64)


def render_events(
    scene: SceneModel,
    camera: CameraIntrinsics,
    projector: ProjectorModel,
    extrinsics: Extrinsics,
    seq: PatternSequence,
    noise: NoiseConfig = NOISELESS,
    k_max: int = DEFAULT_K_MAX,
    repeats: int = 1,
    start_time_us: int = 0,
) -> EventStream:
    """Simulate the sequence ``repeats`` times back to back.

    Every entry contributes a rising and a falling trigger edge; entries
    with a pattern contribute ON bursts at onset and OFF bursts at offset
    for each lit camera pixel.
    """
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    rng = np.random.default_rng(noise.seed)

    footprints: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
    for entry in seq.entries:
        if entry.pattern is not None and id(entry.pattern) not in footprints:
            footprints[id(entry.pattern)] = _pattern_footprint(
                entry.pattern, scene, camera, projector, extrinsics
            )

    chunks_x: list[np.ndarray] = []
    chunks_y: list[np.ndarray] = []
    chunks_t: list[np.ndarray] = []
    chunks_p: list[np.ndarray] = []
    trig_t: list[int] = []
    trig_edge: list[int] = []

    cursor = float(start_time_us)
    for _ in range(repeats):
        for entry in seq.entries:
            rising = int(round(cursor))
            falling = int(round(cursor + entry.exposure_us))
            trig_t.extend([rising, falling])
            trig_edge.extend([KIND_TRIGGER_RISING, KIND_TRIGGER_FALLING])
            if entry.pattern is not None:
                px, py, albedo = footprints[id(entry.pattern)]
                if len(px):
                    counts = _entry_counts(entry, albedo, len(px), k_max)
                    active = counts > 0
                    if np.any(active):
                        burst_x = np.repeat(px[active], counts[active])
                        burst_y = np.repeat(py[active], counts[active])
                        for base_t, polarity in (
                            (float(rising), POLARITY_ON),
                            (float(falling), POLARITY_OFF),
                        ):
                            offsets = np.full(len(burst_x), noise.latency_mean_us)
                            if noise.latency_jitter_us > 0:
                                offsets += rng.uniform(
                                    -noise.latency_jitter_us, noise.latency_jitter_us, len(burst_x)
                                )
                            chunks_x.append(burst_x)
                            chunks_y.append(burst_y)
                            chunks_t.append(np.rint(base_t + np.maximum(offsets, 0.0)).astype(np.int64))
                            chunks_p.append(np.full(len(burst_x), polarity, dtype=np.uint8))
            cursor += entry.exposure_us + seq.blank_us
    end_time = int(round(cursor))

    if chunks_x:
        x = np.concatenate(chunks_x)
        y = np.concatenate(chunks_y)
        t = np.concatenate(chunks_t)
        p = np.concatenate(chunks_p)
    else:
        x = np.zeros(0, dtype=np.int64)
        y = np.zeros(0, dtype=np.int64)
        t = np.zeros(0, dtype=np.int64)
        p = np.zeros(0, dtype=np.uint8)

    if noise.background_rate_hz > 0:
        duration_s = max(end_time - start_time_us, 0) / 1e6
        n_noise = int(rng.poisson(noise.background_rate_hz * duration_s))
        if n_noise:
            x = np.concatenate([x, rng.integers(0, camera.width, n_noise)])
            y = np.concatenate([y, rng.integers(0, camera.height, n_noise)])
            t = np.concatenate(
                [t, rng.integers(start_time_us, max(end_time, start_time_us + 1), n_noise)]
            )
            p = np.concatenate([p, rng.integers(0, 2, n_noise).astype(np.uint8)])

    order = np.argsort(t, kind="stable")
    x, y, t, p = x[order], y[order], t[order], p[order]

    if noise.drop_probability > 0 and len(t):
        keep = rng.random(len(t)) >= noise.drop_probability
        x, y, t, p = x[keep], y[keep], t[keep], p[keep]

    if noise.bus_cap_per_ms > 0 and len(t):
        bucket = t // 1000
        uniq, counts = np.unique(bucket, return_counts=True)
        if np.any(counts > noise.bus_cap_per_ms):
            keep_mask = np.ones(len(t), dtype=bool)
            starts = np.searchsorted(bucket, uniq, side="left")
            for bucket_start, count in zip(starts, counts):
                if count > noise.bus_cap_per_ms:
                    drop_count = count - noise.bus_cap_per_ms
                    local = rng.choice(count, size=drop_count, replace=False)
                    keep_mask[bucket_start + local] = False
            x, y, t, p = x[keep_mask], y[keep_mask], t[keep_mask], p[keep_mask]

    return EventStream(
        width=camera.width,
        height=camera.height,
        start_time=int(start_time_us),
        x=x.astype(np.uint16),
        y=y.astype(np.uint16),
        t=t.astype(np.int64),
        polarity=p.astype(np.uint8),
        trigger_t=np.asarray(trig_t, dtype=np.int64),
        trigger_edge=np.asarray(trig_edge, dtype=np.uint8),
    )


def _camera_rays(camera: CameraIntrinsics) -> np.ndarray:
    xs, ys = np.meshgrid(np.arange(camera.width, dtype=float), np.arange(camera.height, dtype=float))
    pixels = np.stack([xs.ravel(), ys.ravel()], axis=1)
    return camera.back_project(pixels)


def ground_truth_depth(scene: SceneModel, camera: CameraIntrinsics) -> DepthFrame:
    """Per-pixel first-intersection depth in mm via ray casting, 0 at misses."""
    dirs = _camera_rays(camera)  # z-normalized, so the hit parameter equals depth
    t_hit, _ = scene.intersect(np.zeros(3), dirs)
    depth = np.where(np.isfinite(t_hit), t_hit, 0.0)
    return DepthFrame(data=depth.reshape(camera.height, camera.width), window=(0, 0))


def ground_truth_color(scene: SceneModel, camera: CameraIntrinsics) -> ColorFrame:
    """Per-pixel first-hit albedo quantized to 8 bits, mask where geometry exists."""
    dirs = _camera_rays(camera)
    t_hit, prim_idx = scene.intersect(np.zeros(3), dirs)
    hit = np.isfinite(t_hit)
    rgb = np.zeros((camera.height * camera.width, 3), dtype=np.uint8)
    if np.any(hit):
        points = t_hit[hit, None] * dirs[hit]
        albedo = scene.albedo_at(prim_idx[hit], points)
        rgb[hit] = np.rint(albedo * 255.0).astype(np.uint8)
    return ColorFrame(
        rgb=rgb.reshape(camera.height, camera.width, 3),
        mask=hit.reshape(camera.height, camera.width),
        window=(0, 0),
    )
