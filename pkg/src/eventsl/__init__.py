"""Frameless structured-light RGB-D from event cameras.

A projector sweeps identifiable line patterns across the scene while an
event camera watches; every event is independently stamped with metric
depth (direct disparity lookup against the known projected column) and a
color channel. The package contains the calibration geometry, pattern
toolkit, a synthetic rig for hardware-free verification, the streaming
tagger, frame reconstruction, and quality metrics.
"""

from .geometry import (
    CalibrationBundle,
    CameraIntrinsics,
    Extrinsics,
    ProjectorModel,
    RectificationLut,
    RectifiedRig,
    build_rectification,
    depth_from_disparity,
    load_calibration,
    save_calibration,
)
from .metrics import MetricsReport, average_ground_truth, color_psnr, depth_rmse, fill_rate
from .patterns import (
    ID_EXPOSURES_US,
    Channel,
    ColumnTable,
    PatternImage,
    PatternSequence,
    Role,
    SequenceEntry,
    build_sequence,
    coverage_percentage,
    diamond_compensate,
    diamond_render,
    generate_dot_pattern,
    generate_line_pattern,
    load_manifest,
    save_pattern_set,
    sequence_duration,
    solid_pattern,
)
from .presets import build_scene, default_calibration
from .recon import (
    ColorFrame,
    DepthFrame,
    PointCloud,
    TemporalMap,
    accumulate_color,
    accumulate_depth,
    build_point_cloud,
    temporal_map,
)
from .scene import Box, PatchGrid, Plane, SceneModel, Sphere, load_scene, save_scene
from .simulator import (
    NOISELESS,
    NoiseConfig,
    coverage_mask,
    ground_truth_color,
    ground_truth_depth,
    render_events,
)
from .streams import (
    EventStream,
    TaggedEvents,
    load_stream,
    load_tagged,
    save_stream,
    save_tagged,
)
from .tagger import RejectionStats, Tagger, process_stream, recover_column_indices

__version__ = "0.1.0"

__all__ = [
    "CalibrationBundle",
    "CameraIntrinsics",
    "Extrinsics",
    "ProjectorModel",
    "RectificationLut",
    "RectifiedRig",
    "build_rectification",
    "depth_from_disparity",
    "load_calibration",
    "save_calibration",
    "MetricsReport",
    "average_ground_truth",
    "color_psnr",
    "depth_rmse",
    "fill_rate",
    "ID_EXPOSURES_US",
    "Channel",
    "ColumnTable",
    "PatternImage",
    "PatternSequence",
    "Role",
    "SequenceEntry",
    "build_sequence",
    "coverage_percentage",
    "diamond_compensate",
    "diamond_render",
    "generate_dot_pattern",
    "generate_line_pattern",
    "load_manifest",
    "save_pattern_set",
    "sequence_duration",
    "solid_pattern",
    "build_scene",
    "default_calibration",
    "ColorFrame",
    "DepthFrame",
    "PointCloud",
    "TemporalMap",
    "accumulate_color",
    "accumulate_depth",
    "build_point_cloud",
    "temporal_map",
    "Box",
    "PatchGrid",
    "Plane",
    "SceneModel",
    "Sphere",
    "load_scene",
    "save_scene",
    "NOISELESS",
    "NoiseConfig",
    "coverage_mask",
    "ground_truth_color",
    "ground_truth_depth",
    "render_events",
    "EventStream",
    "TaggedEvents",
    "load_stream",
    "load_tagged",
    "save_stream",
    "save_tagged",
    "RejectionStats",
    "Tagger",
    "process_stream",
    "recover_column_indices",
]
