"""Shared fixtures: the stock rig and a few pre-rendered scans.

Rendering a full scan takes a second or so; anything reused across test
modules is built once per session here.
"""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from eventsl import patterns, presets, simulator, tagger
from eventsl.geometry import build_rectification

settings.register_profile(
    "ci",
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ci")


@pytest.fixture(scope="session")
def calib():
    return presets.default_calibration()


@pytest.fixture(scope="session")
def rig_lut(calib):
    return build_rectification(calib.camera, calib.projector, calib.extrinsics)


@pytest.fixture(scope="session")
def plane():
    return presets.plane_scene()


@pytest.fixture(scope="session")
def plane_scan(calib, rig_lut, plane):
    """Noiseless mode-2 n=45 scan of the stock plane, already tagged."""
    rig, lut = rig_lut
    seq = patterns.build_sequence(2, depth=patterns.generate_line_pattern(45))
    stream = simulator.render_events(
        plane, calib.camera, calib.projector, calib.extrinsics, seq
    )
    tagged, stats = tagger.process_stream(stream, rig, lut, tuple(seq.entries))
    return seq, stream, tagged, stats


@pytest.fixture(scope="session")
def plane_gt(calib, plane):
    return simulator.ground_truth_depth(plane, calib.camera)


def rel_depth_errors(tagged, gt) -> np.ndarray:
    """|Z_tagged - Z_raycast| / Z_raycast at each depth-tagged event pixel."""
    sel = tagged.depth_mm > 0
    gt_at = gt.data[tagged.y[sel], tagged.x[sel]]
    assert np.all(gt_at > 0), "tagged event at a pixel the oracle says is empty"
    return np.abs(tagged.depth_mm[sel] - gt_at) / gt_at
