"""Rectification and projection model tests.

The load-bearing property: after rectification, a 3D point seen by both
devices lands on the same row (shared y), and the column difference is
focal * baseline / depth. Everything here checks that chain piece by
piece with hand-built pinhole oracles.
"""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from eventsl.geometry import (
    EPSILON_RECT,
    CalibrationBundle,
    CalibrationError,
    CameraIntrinsics,
    Extrinsics,
    ProjectorModel,
    build_rectification,
    cast_camera_ray,
    cast_projector_ray,
    depth_from_disparity,
    load_calibration,
    rectify_camera_pixel,
    rectify_projector_pixel,
    save_calibration,
)
from eventsl import presets


def _pinhole(fx=700.0, fy=700.0, cx=320.0, cy=240.0, k1=0.0, k2=0.0, w=640, h=480):
    return CameraIntrinsics(
        focal_x=fx, focal_y=fy, principal_x=cx, principal_y=cy, k1=k1, k2=k2, width=w, height=h
    )


# ---------------------------------------------------------------- intrinsics


def test_project_pinhole_hand_values():
    cam = _pinhole()
    pix = cam.project_points(np.array([[150.0, -75.0, 1500.0]]))
    # u = fx * X/Z + cx = 700*0.1 + 320, v = 700*(-0.05) + 240
    assert pix[0] == pytest.approx([390.0, 205.0], abs=1e-12)


def test_project_then_back_project_roundtrip_with_distortion():
    cam = _pinhole(k1=-0.08, k2=0.01)
    pts = np.array([[100.0, 50.0, 1200.0], [-300.0, 200.0, 2000.0], [0.0, 0.0, 900.0]])
    pix = cam.project_points(pts)
    dirs = cam.back_project(pix)
    recon = dirs * pts[:, 2:3]
    assert np.allclose(recon, pts, atol=1e-6)


def test_back_project_is_z_normalized():
    cam = _pinhole(k1=-0.05)
    dirs = cam.back_project(np.array([[17.0, 452.0]]))
    assert dirs[0, 2] == 1.0


def test_project_rejects_points_behind_camera():
    cam = _pinhole()
    with pytest.raises(ValueError):
        cam.project_points(np.array([[0.0, 0.0, -10.0]]))


def test_projector_intrinsics_must_match_native_grid():
    with pytest.raises(CalibrationError):
        ProjectorModel(intrinsics=_pinhole(w=912, h=1139), native_width=912, native_height=1140)


def test_extrinsics_reject_non_orthonormal_rotation():
    with pytest.raises(CalibrationError):
        Extrinsics(rotation=np.eye(3) * 1.001, translation_mm=np.array([300.0, 0, 0]))


def test_extrinsics_reject_zero_translation():
    with pytest.raises(CalibrationError):
        Extrinsics(rotation=np.eye(3), translation_mm=np.zeros(3))


def test_projector_center_in_camera():
    ext = presets.default_extrinsics()
    # identity rotation, t = (300, 0, 0): projector sits 300 mm left of camera
    assert np.allclose(ext.projector_center_in_camera(), [-300.0, 0.0, 0.0])


# ------------------------------------------------------------- rectification


def test_identity_rig_rectification_is_identity():
    """Fronto-parallel distortion-free rig: rectified coords == pixel coords."""
    cam = _pinhole()
    proj = ProjectorModel(intrinsics=_pinhole(fx=1100, fy=1100, cx=456, cy=570, w=912, h=1140))
    ext = Extrinsics(rotation=np.eye(3), translation_mm=np.array([300.0, 0.0, 0.0]))
    rig, lut = build_rectification(cam, proj, ext)
    assert rig.baseline_mm == pytest.approx(300.0)
    assert rig.rectified_focal_px == pytest.approx(700.0)
    xs, ys = np.meshgrid(np.arange(640), np.arange(480))
    assert np.allclose(lut.camera_map[..., 0], xs, atol=1e-9)
    assert np.allclose(lut.camera_map[..., 1], ys, atol=1e-9)


def test_rectified_rows_align_between_devices(calib, rig_lut):
    """A 3D point projected into both devices gets the same rectified y."""
    rig, lut = rig_lut
    rng = np.random.default_rng(0)
    pts = np.column_stack(
        [rng.uniform(-200, 200, 50), rng.uniform(-150, 150, 50), rng.uniform(1000, 2500, 50)]
    )
    cam_pix = calib.camera.project_points(pts)
    pts_p = pts @ calib.extrinsics.rotation.T + calib.extrinsics.translation_mm
    proj_pix = calib.projector.intrinsics.project_points(pts_p)
    for pc, pp in zip(cam_pix, proj_pix):
        if not (0 <= pc[0] <= 639 and 0 <= pc[1] <= 479):
            continue
        if not (0 <= pp[0] <= 911 and 0 <= pp[1] <= 1139):
            continue
        rc = rectify_camera_pixel(lut, pc)
        rp = rectify_projector_pixel(lut, pp)
        assert abs(rc[1] - rp[1]) < EPSILON_RECT


def test_rectified_disparity_encodes_depth(calib, rig_lut):
    """Column difference between the two rectified views is f*B/Z."""
    rig, lut = rig_lut
    rng = np.random.default_rng(1)
    checked = 0
    for _ in range(200):
        pt = np.array(
            [rng.uniform(-150, 150), rng.uniform(-100, 100), rng.uniform(1100, 2200)]
        )
        pc = calib.camera.project_points(pt[None])[0]
        pp = calib.projector.intrinsics.project_points(
            (calib.extrinsics.rotation @ pt + calib.extrinsics.translation_mm)[None]
        )[0]
        if not (0 <= pc[0] <= 639 and 0 <= pc[1] <= 479):
            continue
        if not (0 <= pp[0] <= 911 and 0 <= pp[1] <= 1139):
            continue
        rc = rectify_camera_pixel(lut, pc)
        rp = rectify_projector_pixel(lut, pp)
        disparity = rp[0] - rc[0]
        # rectified z equals camera z for the identity-rotation stock rig
        expected = rig.rectified_focal_px * rig.baseline_mm / pt[2]
        # bilinear interpolation of the distorted map costs a few millipixels
        assert disparity == pytest.approx(expected, abs=2e-2)
        checked += 1
    assert checked > 100


def test_projector_map_has_one_extra_row(calib, rig_lut):
    _, lut = rig_lut
    assert lut.projector_map.shape == (1141, 912, 2)
    assert lut.camera_map.shape == (480, 640, 2)


def test_vertical_rig_rejected():
    cam = _pinhole()
    proj = ProjectorModel(intrinsics=_pinhole(fx=1100, fy=1100, cx=456, cy=570, w=912, h=1140))
    ext = Extrinsics(rotation=np.eye(3), translation_mm=np.array([0.0, 300.0, 0.0]))
    with pytest.raises(CalibrationError):
        build_rectification(cam, proj, ext)


def test_lookup_outside_table_raises(rig_lut):
    _, lut = rig_lut
    with pytest.raises(ValueError):
        lut.camera_lookup(640.0, 0.0)


# --------------------------------------------------------- disparity / rays


@given(
    focal=st.floats(100.0, 5000.0),
    baseline=st.floats(10.0, 1000.0),
    depth=st.floats(200.0, 5000.0),
)
def test_depth_disparity_inversion(focal, baseline, depth):
    rig = _stub_rig(focal, baseline)
    assert depth_from_disparity(rig, focal * baseline / depth) == pytest.approx(
        depth, rel=1e-12
    )


def test_depth_from_disparity_rejects_non_positive():
    rig = _stub_rig(700.0, 300.0)
    with pytest.raises(ValueError):
        depth_from_disparity(rig, 0.0)
    with pytest.raises(ValueError):
        depth_from_disparity(rig, -5.0)


def _stub_rig(focal: float, baseline: float):
    from eventsl.geometry import RectifiedRig

    return RectifiedRig(
        rectified_focal_px=focal,
        baseline_mm=baseline,
        rectified_principal=(320.0, 240.0),
        camera_size=(640, 480),
        projector_size=(912, 1140),
        camera_homography=np.eye(3),
        projector_homography=np.eye(3),
        rectifying_rotation=np.eye(3),
    )


def test_camera_ray_through_principal_point_is_optical_axis():
    cam = _pinhole()
    ray = cast_camera_ray(cam, (320.0, 240.0))
    assert np.allclose(ray.origin, 0.0)
    assert np.allclose(ray.direction, [0.0, 0.0, 1.0])


def test_camera_ray_rejects_out_of_sensor_pixel():
    with pytest.raises(ValueError):
        cast_camera_ray(_pinhole(), (-1.0, 0.0))


def test_projector_ray_originates_at_projector_center(calib):
    ray = cast_projector_ray(calib.projector, calib.extrinsics, (456.0, 570.0))
    assert np.allclose(ray.origin, calib.extrinsics.projector_center_in_camera())
    assert np.linalg.norm(ray.direction) == pytest.approx(1.0)


def test_projector_ray_hits_projected_pixel(calib):
    """Cast from a projector pixel, land a point on the ray, reproject: same pixel."""
    pixel = (300.0, 600.0)
    ray = cast_projector_ray(calib.projector, calib.extrinsics, pixel)
    point = ray.origin + 1700.0 * ray.direction
    in_proj = calib.extrinsics.rotation @ point + calib.extrinsics.translation_mm
    repro = calib.projector.intrinsics.project_points(in_proj[None])[0]
    assert repro == pytest.approx(pixel, abs=1e-9)


# ------------------------------------------------------------ file roundtrip


def test_calibration_roundtrip(tmp_path, calib):
    path = tmp_path / "calib.yaml"
    save_calibration(calib, path)
    loaded = load_calibration(path)
    assert loaded.camera == calib.camera
    assert loaded.projector.native_width == calib.projector.native_width
    assert loaded.projector.diamond_layout == calib.projector.diamond_layout
    assert np.array_equal(loaded.extrinsics.rotation, calib.extrinsics.rotation)
    assert np.array_equal(loaded.extrinsics.translation_mm, calib.extrinsics.translation_mm)


def test_calibration_missing_field_rejected(tmp_path, calib):
    path = tmp_path / "calib.yaml"
    save_calibration(calib, path)
    text = path.read_text().replace("focal_x:", "focal_was:")
    bad = tmp_path / "bad.yaml"
    bad.write_text(text)
    with pytest.raises(CalibrationError):
        load_calibration(bad)
