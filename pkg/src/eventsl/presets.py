"""Stock calibration and scenes for tests, demos, and the CLI.

The default rig is sized so the direct-lookup depth stays well inside its
error budget at the working range: rectified focal 700 px and a 300 mm
baseline give about 140 px of disparity at 1.5 m, so half-pixel rounding
and the finite line width cost well under one percent of depth.

The staircase edge positions look arbitrary but are not: they sit mid-gap
between the landing strips of the default 45-line sweep at every depth
involved (steps and backdrop), so no projected line straddles a depth
discontinuity. Tests assert these margins; regenerate the numbers if the
rig or the sweep changes.
"""

from __future__ import annotations

import numpy as np

from .geometry import CalibrationBundle, CameraIntrinsics, Extrinsics, ProjectorModel
from .scene import Box, PatchGrid, Plane, SceneModel, Sphere

DEFAULT_BLANK_US = 10.5

# 24 chart colors, all components multiples of 1/4 so the event transfer
# (k = round(albedo * 4)) is exactly invertible. Order is row-major,
# bottom row is the gray ramp plus one black patch for mask coverage.
CHART_ALBEDOS: tuple[tuple[float, float, float], ...] = (
    (0.75, 0.50, 0.50), (1.00, 0.75, 0.75), (0.50, 0.50, 0.75), (0.50, 0.75, 0.25),
    (0.75, 0.50, 1.00), (0.50, 1.00, 0.75),
    (1.00, 0.50, 0.25), (0.25, 0.50, 1.00), (1.00, 0.25, 0.50), (0.50, 0.25, 0.50),
    (0.75, 1.00, 0.25), (1.00, 0.75, 0.25),
    (0.25, 0.25, 1.00), (0.25, 0.75, 0.25), (1.00, 0.25, 0.25), (1.00, 1.00, 0.25),
    (1.00, 0.25, 0.75), (0.25, 0.75, 1.00),
    (1.00, 1.00, 1.00), (0.75, 0.75, 0.75), (0.50, 0.50, 0.50), (0.25, 0.25, 0.25),
    (0.00, 0.00, 0.00), (0.75, 0.50, 0.25),
)


def default_camera() -> CameraIntrinsics:
    return CameraIntrinsics(
        focal_x=700.0,
        focal_y=700.0,
        principal_x=320.0,
        principal_y=240.0,
        k1=-0.08,
        k2=0.01,
        width=640,
        height=480,
    )


def default_projector() -> ProjectorModel:
    # Principal x sits left of the grid center so the default sweep lands
    # on the camera's view at the 1.5 m working distance.
    return ProjectorModel(
        intrinsics=CameraIntrinsics(
            focal_x=1100.0,
            focal_y=1100.0,
            principal_x=346.0,
            principal_y=570.0,
            k1=0.0,
            k2=0.0,
            width=912,
            height=1140,
        ),
        native_width=912,
        native_height=1140,
        diamond_layout=True,
    )


def default_extrinsics() -> Extrinsics:
    # Projector 300 mm to the camera's left, optical axes parallel.
    return Extrinsics(rotation=np.eye(3), translation_mm=np.array([300.0, 0.0, 0.0]))


def default_calibration() -> CalibrationBundle:
    return CalibrationBundle(
        camera=default_camera(),
        projector=default_projector(),
        extrinsics=default_extrinsics(),
    )


def plane_scene(depth_mm: float = 1500.0, albedo: float = 0.75) -> SceneModel:
    """Fronto-parallel wall; the canonical accuracy scene."""
    return SceneModel(
        primitives=(
            Plane(
                point=np.array([0.0, 0.0, depth_mm]),
                normal=np.array([0.0, 0.0, -1.0]),
                albedo=np.array([albedo, albedo, albedo]),
            ),
        )
    )


def dome_scene() -> SceneModel:
    """Large sphere bulging toward the rig; every camera ray hits it.

    The radius and standoff keep the silhouette outside both frustums, so
    there are no depth discontinuities anywhere in view. Depth runs from
    1300 mm on axis to roughly 1700 mm at the image corners.
    """
    return SceneModel(
        primitives=(
            Sphere(
                center=np.array([0.0, 0.0, 2700.0]),
                radius_mm=1400.0,
                albedo=np.array([0.75, 0.75, 0.75]),
            ),
        )
    )


def staircase_scene() -> SceneModel:
    """Two full-height steps in front of a backdrop: plateaus at 1300,
    1500, and 1700 mm.

    Edge x positions are snapped between the default sweep's line landings
    (see module docstring); the far slab tucks 50 mm behind the near one
    so no backdrop sliver shows between the steps.
    """
    tall = 2000.0
    return SceneModel(
        primitives=(
            Box(
                min_corner=np.array([-437.0, -tall, 1300.0]),
                max_corner=np.array([-141.0, tall, 1650.0]),
                albedo=np.array([1.0, 1.0, 1.0]),
            ),
            Box(
                min_corner=np.array([-191.0, -tall, 1500.0]),
                max_corner=np.array([116.0, tall, 1650.0]),
                albedo=np.array([0.75, 0.75, 0.75]),
            ),
            Plane(
                point=np.array([0.0, 0.0, 1700.0]),
                normal=np.array([0.0, 0.0, -1.0]),
                albedo=np.array([0.5, 0.5, 0.5]),
            ),
        )
    )


def chart_scene(depth_mm: float = 1500.0) -> SceneModel:
    """24-patch reflectance chart on a wall, fully inside the lit region.

    Patch albedos are quarter-step values (see ``CHART_ALBEDOS``), so a
    noiseless color scan reconstructs them exactly.
    """
    return SceneModel(
        primitives=(
            Plane(
                point=np.array([-140.0, 0.0, depth_mm]),
                normal=np.array([0.0, 0.0, -1.0]),
                albedo=np.array([0.5, 0.5, 0.5]),
                axes=(np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])),
                patches=PatchGrid(
                    cols=6,
                    rows=4,
                    cell_size_mm=(160.0, 160.0),
                    albedos=np.array(CHART_ALBEDOS),
                ),
            ),
        )
    )


SCENE_BUILDERS = {
    "plane": plane_scene,
    "dome": dome_scene,
    "staircase": staircase_scene,
    "chart": chart_scene,
}


def build_scene(name: str) -> SceneModel:
    """Look up a stock scene by name."""
    try:
        return SCENE_BUILDERS[name]()
    except KeyError:
        raise ValueError(
            f"unknown scene {name!r}, expected one of {sorted(SCENE_BUILDERS)}"
        ) from None
