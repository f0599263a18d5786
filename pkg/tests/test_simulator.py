"""Event synthesis checks, including both halves of the visibility logic.

The occlusion tests use a distortion-free rig so every projected point
is hand-computable: camera at the origin, projector at (-300, 0, 0),
both looking down +z. A projector ray through logical column c satisfies
x(z) = -300 + z * (c - 346) / 1100.
"""

from __future__ import annotations

import numpy as np
import pytest

from eventsl.geometry import CalibrationBundle, CameraIntrinsics, Extrinsics, ProjectorModel
from eventsl.patterns import build_sequence, generate_line_pattern, solid_pattern
from eventsl.scene import Box, Plane, SceneModel
from eventsl.simulator import (
    NOISELESS,
    NoiseConfig,
    coverage_mask,
    ground_truth_color,
    ground_truth_depth,
    render_events,
)
from eventsl import presets


def _clean_calib() -> CalibrationBundle:
    cam = CameraIntrinsics(
        focal_x=700.0, focal_y=700.0, principal_x=320.0, principal_y=240.0,
        k1=0.0, k2=0.0, width=640, height=480,
    )
    proj = ProjectorModel(
        intrinsics=CameraIntrinsics(
            focal_x=1100.0, focal_y=1100.0, principal_x=346.0, principal_y=570.0,
            k1=0.0, k2=0.0, width=912, height=1140,
        ),
        native_width=912, native_height=1140, diamond_layout=True,
    )
    return CalibrationBundle(
        camera=cam, projector=proj,
        extrinsics=Extrinsics(rotation=np.eye(3), translation_mm=np.array([300.0, 0.0, 0.0])),
    )


def _render(scene, seq, calib=None, **kw):
    calib = calib or presets.default_calibration()
    return render_events(scene, calib.camera, calib.projector, calib.extrinsics, seq, **kw)


def _plane(albedo=(1.0, 1.0, 1.0), z=1500.0):
    return SceneModel(
        primitives=(
            Plane(point=np.array([0, 0, z]), normal=np.array([0, 0, -1.0]), albedo=albedo),
        )
    )


# ------------------------------------------------------------ basic geometry


def test_single_line_events_form_near_vertical_curve():
    seq = build_sequence(2, depth=generate_line_pattern(1))
    stream = _render(_plane(), seq)
    on = stream.polarity == 1
    assert on.sum() > 1000
    xs, ys = stream.x[on].astype(int), stream.y[on].astype(int)
    # one line -> each camera row lit in a thin contiguous run
    for row in np.unique(ys):
        run = xs[ys == row]
        assert run.max() - run.min() <= 2
    # lens distortion bows the line slightly but it stays near-vertical
    assert xs.max() - xs.min() < 15


def test_single_line_event_pixels_sit_on_the_plane():
    seq = build_sequence(2, depth=generate_line_pattern(1))
    calib = presets.default_calibration()
    scene = _plane()
    stream = _render(scene, seq, calib)
    gt = ground_truth_depth(scene, calib.camera)
    on = stream.polarity == 1
    depths = gt.data[stream.y[on].astype(int), stream.x[on].astype(int)]
    assert np.all(np.abs(depths - 1500.0) <= 1e-6)


def test_mode_1_transfer_function_counts():
    """Albedo (1.0, 0.5, 0.0) with K_max=4: per pixel 4 R, 2 G, 0 B events."""
    seq = build_sequence(1, color_pattern=solid_pattern())
    stream = _render(_plane(albedo=(1.0, 0.5, 0.0)), seq)
    on = stream.polarity == 1
    t_on = stream.t[on]
    pix = stream.y[on].astype(np.int64) * 640 + stream.x[on].astype(np.int64)
    rising = stream.trigger_t[stream.trigger_edge == 1]
    falling = stream.trigger_t[stream.trigger_edge == 2]
    # entries: ID, R, G, B; ID emits nothing (identification is edge timing)
    assert len(rising) == 4
    windows = list(zip(rising, falling))
    in_id = (t_on >= windows[0][0]) & (t_on < windows[0][1])
    assert in_id.sum() == 0
    per_window_counts = []
    for t0, t1 in windows[1:]:
        sel = (t_on >= t0) & (t_on < t1)
        if sel.sum() == 0:
            per_window_counts.append(0)
            continue
        counts = np.bincount(pix[sel])
        counts = counts[counts > 0]
        assert counts.min() == counts.max()
        per_window_counts.append(int(counts[0]))
    assert per_window_counts == [4, 2, 0]


def test_off_burst_matches_on_burst():
    seq = build_sequence(2, depth=generate_line_pattern(3))
    stream = _render(_plane(), seq)
    assert (stream.polarity == 1).sum() == (stream.polarity == 0).sum()


def test_trigger_edges_alternate_and_encode_exposures():
    seq = build_sequence(2, depth=generate_line_pattern(1))
    stream = _render(_plane(), seq)
    assert stream.trigger_count == 4  # ID + one depth entry, rising+falling each
    edges = stream.trigger_edge
    assert list(edges) == [1, 2, 1, 2]
    durations = stream.trigger_t[1::2] - stream.trigger_t[0::2]
    assert list(durations) == [260, 235]


def test_fractional_blank_keeps_exposures_within_a_microsecond():
    # edges are stamped on an integer microsecond clock; a half-us blank
    # makes measured exposures wobble by at most 1 us around nominal
    seq = build_sequence(2, depth=generate_line_pattern(5), blank_us=10.5)
    stream = _render(_plane(), seq)
    durations = stream.trigger_t[1::2] - stream.trigger_t[0::2]
    assert abs(durations[0] - 260) <= 1
    assert np.all(np.abs(durations[1:] - 235) <= 1)


def test_empty_scene_view_yields_no_events_but_triggers():
    # a tiny plane far off-axis that no projector ray reaches
    scene = SceneModel(
        primitives=(
            Plane(
                point=np.array([600.0, 0, 1500.0]),
                normal=np.array([0, 0, -1.0]),
                albedo=(1, 1, 1),
                extent_mm=(10.0, 10.0),
            ),
        )
    )
    seq = build_sequence(2, depth=generate_line_pattern(1))
    stream = _render(scene, seq)
    assert len(stream) == 0
    assert stream.trigger_count == 4


# ----------------------------------------------------------------- occlusion


def test_projector_shadow_suppresses_events():
    """A blocker on the projector ray kills events; the camera still sees
    the plane, so ground truth there stays 1500."""
    calib = _clean_calib()
    seq = build_sequence(2, depth=generate_line_pattern(1))  # line at column 456
    # ray through col 456 hits z=1500 at x = -300 + 1500*0.1 = -150 -> camera x=250
    # at z=750 the ray passes x=-225; park the blocker there for |y| < 30
    blocker = Box(
        min_corner=np.array([-235.0, -30.0, 740.0]),
        max_corner=np.array([-215.0, 30.0, 760.0]),
        albedo=(1, 1, 1),
    )
    plane = Plane(point=np.array([0, 0, 1500.0]), normal=np.array([0, 0, -1.0]), albedo=(1, 1, 1))
    clear = render_events(
        SceneModel((plane,)), calib.camera, calib.projector, calib.extrinsics, seq
    )
    shadowed = render_events(
        SceneModel((plane, blocker)), calib.camera, calib.projector, calib.extrinsics, seq
    )

    def on_pixels(stream):
        on = stream.polarity == 1
        return set(zip(stream.x[on].astype(int), stream.y[on].astype(int)))

    near_center = lambda pts: {p for p in pts if abs(p[0] - 250) <= 3 and abs(p[1] - 240) <= 8}
    assert near_center(on_pixels(clear))
    assert not near_center(on_pixels(shadowed))
    # pixels outside the shadow band keep their events
    assert {p for p in on_pixels(shadowed) if p[1] < 180}
    # the camera's own view of the shadowed patch is unchanged
    gt = ground_truth_depth(SceneModel((plane, blocker)), calib.camera)
    assert gt.data[240, 250] == pytest.approx(1500.0)


def test_camera_occlusion_suppresses_events():
    """A blocker on the camera's line of sight hides lit surface: the lit
    point must not register an event at the pixel now showing the blocker."""
    calib = _clean_calib()
    seq = build_sequence(2, depth=generate_line_pattern(1))
    # camera ray to the lit point (-150, y, 1500) passes x=-75 at z=750
    blocker = Box(
        min_corner=np.array([-85.0, -30.0, 740.0]),
        max_corner=np.array([-65.0, 30.0, 760.0]),
        albedo=(1, 1, 1),
    )
    plane = Plane(point=np.array([0, 0, 1500.0]), normal=np.array([0, 0, -1.0]), albedo=(1, 1, 1))
    scene = SceneModel((plane, blocker))
    stream = render_events(scene, calib.camera, calib.projector, calib.extrinsics, seq)
    on = stream.polarity == 1
    xs, ys = stream.x[on].astype(int), stream.y[on].astype(int)
    hidden = (np.abs(xs - 250) <= 3) & (np.abs(ys - 240) <= 8)
    assert hidden.sum() == 0
    assert ((ys < 180) | (ys > 300)).sum() > 0  # line survives outside the blocker
    # that pixel now images the blocker's front face at z=740
    gt = ground_truth_depth(scene, calib.camera)
    assert gt.data[240, 250] == pytest.approx(740.0)


# --------------------------------------------------------------------- noise


def test_deterministic_under_seed():
    seq = build_sequence(2, depth=generate_line_pattern(3))
    noise = NoiseConfig(
        background_rate_hz=20000.0, latency_mean_us=200.0, latency_jitter_us=50.0,
        drop_probability=0.1, bus_cap_per_ms=0, seed=42,
    )
    a = _render(_plane(), seq, noise=noise)
    b = _render(_plane(), seq, noise=noise)
    assert np.array_equal(a.t, b.t) and np.array_equal(a.x, b.x)
    c = _render(_plane(), seq, noise=NoiseConfig(
        background_rate_hz=20000.0, latency_mean_us=200.0, latency_jitter_us=50.0,
        drop_probability=0.1, bus_cap_per_ms=0, seed=43,
    ))
    assert len(c) != len(a) or not np.array_equal(c.t, a.t)


def test_latency_shifts_events_after_edges():
    seq = build_sequence(2, depth=generate_line_pattern(1))
    noise = NoiseConfig(latency_mean_us=200.0, latency_jitter_us=50.0, seed=1)
    stream = _render(_plane(), seq, noise=noise)
    rising = stream.trigger_t[stream.trigger_edge == 1]
    on = stream.polarity == 1
    delays = stream.t[on] - rising[1]  # single depth entry
    assert delays.min() >= 0
    assert 150 < np.mean(delays) < 250


def test_background_noise_is_poisson_scaled():
    seq = build_sequence(2, depth=generate_line_pattern(1))
    scene = SceneModel(
        primitives=(
            Plane(
                point=np.array([600.0, 0, 1500.0]),
                normal=np.array([0, 0, -1.0]),
                albedo=(1, 1, 1),
                extent_mm=(10.0, 10.0),
            ),
        )
    )  # no signal events at all
    rate = 1e6
    stream = _render(scene, seq, noise=NoiseConfig(background_rate_hz=rate, seed=3))
    span_s = (stream.trigger_t[-1] - stream.trigger_t[0]) * 1e-6
    expected = rate * span_s
    assert 0.8 * expected < len(stream) < 1.2 * expected
    assert set(np.unique(stream.polarity)) <= {0, 1}


def test_drop_probability_one_empties_the_stream():
    seq = build_sequence(2, depth=generate_line_pattern(2))
    stream = _render(_plane(), seq, noise=NoiseConfig(drop_probability=1.0, seed=0))
    assert len(stream) == 0
    assert stream.trigger_count == 6


def test_bus_cap_limits_millisecond_buckets():
    seq = build_sequence(2, depth=generate_line_pattern(3))
    noise = NoiseConfig(background_rate_hz=5e6, bus_cap_per_ms=100, seed=9)
    stream = _render(_plane(), seq, noise=noise)
    buckets = np.bincount((stream.t // 1000).astype(np.int64))
    assert buckets.max() <= 100


def test_repeats_double_the_scan():
    seq = build_sequence(2, depth=generate_line_pattern(2), blank_us=10.5)
    one = _render(_plane(), seq)
    two = _render(_plane(), seq, repeats=2)
    assert len(two) == 2 * len(one)
    assert two.trigger_count == 2 * one.trigger_count


# -------------------------------------------------------------- ground truth


def test_ground_truth_depth_plane():
    calib = presets.default_calibration()
    gt = ground_truth_depth(_plane(), calib.camera)
    hit = gt.data > 0
    assert hit.all()
    assert np.allclose(gt.data[hit], 1500.0)


def test_ground_truth_color_quantizes_albedo():
    calib = presets.default_calibration()
    gt = ground_truth_color(_plane(albedo=(1.0, 0.5, 0.25)), calib.camera)
    assert gt.mask.all()
    assert tuple(gt.rgb[240, 320]) == (255, 128, 64)


def test_ground_truth_depth_miss_is_zero():
    calib = presets.default_calibration()
    scene = SceneModel(
        primitives=(
            Plane(
                point=np.array([0, 0, 1500.0]),
                normal=np.array([0, 0, -1.0]),
                albedo=(1, 1, 1),
                extent_mm=(100.0, 100.0),
                axes=(np.array([1.0, 0, 0]), np.array([0, 1.0, 0])),
            ),
        )
    )
    gt = ground_truth_depth(scene, calib.camera)
    assert gt.data[240, 320] == pytest.approx(1500.0)
    assert gt.data[0, 0] == 0.0


def test_coverage_mask_is_union_of_depth_footprints():
    calib = presets.default_calibration()
    scene = _plane()
    seq = build_sequence(3, depth=generate_line_pattern(5), color_pattern=solid_pattern())
    mask = coverage_mask(scene, calib.camera, calib.projector, calib.extrinsics, seq)
    stream = _render(scene, seq, calib)
    # color entries light the whole frame; the mask must only hold line pixels
    assert 0 < mask.sum() < 0.1 * mask.size
    seq2 = build_sequence(2, depth=generate_line_pattern(5))
    stream2 = _render(scene, seq2, calib)
    on = stream2.polarity == 1
    lit = np.zeros_like(mask)
    lit[stream2.y[on].astype(int), stream2.x[on].astype(int)] = True
    assert np.array_equal(mask, lit)
