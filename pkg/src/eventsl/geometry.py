"""Camera and projector geometry for the structured-light engine.

Coordinate conventions
----------------------
The camera frame is the world frame: X right, Y down, Z forward along the
optical axis, millimeters everywhere. Pixel coordinates put integer values
at pixel centers, x along columns and y along rows. Extrinsics map
camera-frame points into projector-frame points:

    X_proj = rotation @ X_cam + translation_mm

Rectification places both devices on a shared virtual image plane built
from a common rotation and a shared pinhole. Corresponding scene points
then land on equal rows on both devices, and the horizontal offset
(projector x minus camera x) is the disparity that converts to metric
depth as ``depth = focal * baseline / disparity``. The rectified x axis is
chosen along the device baseline with the sign that makes disparity
positive for every finite depth.

The dense per-pixel maps from native to rectified coordinates are the
lookup tables the tagger reads on its hot path. The projector table keeps
one extra row (row ``native_height``) so the endpoints of a full-height
line evaluate without extrapolation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

# Rectified rows of the two devices must agree within this tolerance (px)
# for the rig to be usable; tests and diagnostics share the constant.
EPSILON_RECT = 0.5

_ORTHONORMAL_TOL = 1e-9
_UNDISTORT_ITERS = 20
_UNDISTORT_TOL = 1e-12


class CalibrationError(ValueError):
    """Raised for invalid or inconsistent calibration input."""


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics with two radial distortion coefficients."""

    focal_x: float
    focal_y: float
    principal_x: float
    principal_y: float
    k1: float = 0.0
    k2: float = 0.0
    width: int = 640
    height: int = 480

    def __post_init__(self) -> None:
        if self.focal_x <= 0 or self.focal_y <= 0:
            raise CalibrationError(f"focal lengths must be positive, got ({self.focal_x}, {self.focal_y})")
        if self.width <= 0 or self.height <= 0:
            raise CalibrationError(f"sensor size must be positive, got {self.width}x{self.height}")
        if not (0.0 <= self.principal_x < self.width and 0.0 <= self.principal_y < self.height):
            raise CalibrationError(
                f"principal point ({self.principal_x}, {self.principal_y}) outside "
                f"{self.width}x{self.height} sensor"
            )

    def matrix(self) -> np.ndarray:
        return np.array(
            [
                [self.focal_x, 0.0, self.principal_x],
                [0.0, self.focal_y, self.principal_y],
                [0.0, 0.0, 1.0],
            ]
        )

    def distort_normalized(self, pts: np.ndarray) -> np.ndarray:
        """Apply the radial model to normalized image coordinates (N, 2)."""
        pts = np.asarray(pts, dtype=float)
        r2 = np.sum(pts * pts, axis=-1, keepdims=True)
        factor = 1.0 + self.k1 * r2 + self.k2 * r2 * r2
        return pts * factor

    def undistort_normalized(self, pts: np.ndarray) -> np.ndarray:
        """Invert the radial model by fixed-point iteration."""
        distorted = np.asarray(pts, dtype=float)
        undist = distorted.copy()
        for _ in range(_UNDISTORT_ITERS):
            r2 = np.sum(undist * undist, axis=-1, keepdims=True)
            factor = 1.0 + self.k1 * r2 + self.k2 * r2 * r2
            new = distorted / factor
            if np.max(np.abs(new - undist)) < _UNDISTORT_TOL:
                undist = new
                break
            undist = new
        return undist

    def project_points(self, points: np.ndarray) -> np.ndarray:
        """Project camera-frame points (N, 3) to distorted pixels (N, 2).

        Points must have positive Z; callers cull behind-camera points.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        z = points[:, 2:3]
        if np.any(z <= 0):
            raise ValueError("cannot project points at or behind the image plane")
        normalized = points[:, :2] / z
        distorted = self.distort_normalized(normalized)
        pix = np.empty_like(distorted)
        pix[:, 0] = self.focal_x * distorted[:, 0] + self.principal_x
        pix[:, 1] = self.focal_y * distorted[:, 1] + self.principal_y
        return pix

    def back_project(self, pixels: np.ndarray) -> np.ndarray:
        """Back-project pixels (N, 2) to z-normalized ray directions (N, 3)."""
        pixels = np.atleast_2d(np.asarray(pixels, dtype=float))
        normalized = np.empty_like(pixels)
        normalized[:, 0] = (pixels[:, 0] - self.principal_x) / self.focal_x
        normalized[:, 1] = (pixels[:, 1] - self.principal_y) / self.focal_y
        undist = self.undistort_normalized(normalized)
        dirs = np.empty((pixels.shape[0], 3))
        dirs[:, :2] = undist
        dirs[:, 2] = 1.0
        return dirs


@dataclass(frozen=True)
class ProjectorModel:
    """Projector treated as an inverse camera on its orthogonal logical grid.

    ``native_width`` and ``native_height`` describe the DMD; the intrinsics
    live on the orthogonal logical grid of the same size. ``diamond_layout``
    records whether bitmaps must pass through diamond compensation before
    being loaded onto the physical device (see the patterns module).
    """

    intrinsics: CameraIntrinsics
    native_width: int = 912
    native_height: int = 1140
    diamond_layout: bool = False

    def __post_init__(self) -> None:
        if self.native_width <= 0 or self.native_height <= 0:
            raise CalibrationError("projector native size must be positive")
        if (self.intrinsics.width, self.intrinsics.height) != (self.native_width, self.native_height):
            raise CalibrationError(
                f"projector intrinsics sized {self.intrinsics.width}x{self.intrinsics.height} "
                f"do not match native grid {self.native_width}x{self.native_height}"
            )


@dataclass(frozen=True)
class Extrinsics:
    """Rigid camera-to-projector transform, translation in millimeters."""

    rotation: np.ndarray
    translation_mm: np.ndarray

    def __post_init__(self) -> None:
        rot = np.array(self.rotation, dtype=float)
        trans = np.array(self.translation_mm, dtype=float).reshape(3)
        if rot.shape != (3, 3):
            raise CalibrationError(f"rotation must be 3x3, got {rot.shape}")
        if np.max(np.abs(rot.T @ rot - np.eye(3))) > _ORTHONORMAL_TOL:
            raise CalibrationError("rotation is not orthonormal within 1e-9")
        if np.linalg.norm(trans) == 0.0:
            raise CalibrationError("translation must be nonzero, devices cannot be coincident")
        rot.flags.writeable = False
        trans.flags.writeable = False
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation_mm", trans)

    def projector_center_in_camera(self) -> np.ndarray:
        return -self.rotation.T @ self.translation_mm


@dataclass(frozen=True)
class CalibrationBundle:
    camera: CameraIntrinsics
    projector: ProjectorModel
    extrinsics: Extrinsics


@dataclass(frozen=True)
class Ray:
    """Half-line in the camera frame: origin plus unit direction."""

    origin: np.ndarray
    direction: np.ndarray


@dataclass(frozen=True)
class RectifiedRig:
    """Shared rectified frame of a camera-projector pair."""

    rectified_focal_px: float
    baseline_mm: float
    rectified_principal: tuple[float, float]
    camera_size: tuple[int, int]
    projector_size: tuple[int, int]
    camera_homography: np.ndarray
    projector_homography: np.ndarray
    rectifying_rotation: np.ndarray

    def __post_init__(self) -> None:
        if self.rectified_focal_px <= 0:
            raise CalibrationError("rectified focal must be positive")
        if self.baseline_mm <= 0:
            raise CalibrationError("baseline must be positive")
        for name in ("camera_homography", "projector_homography", "rectifying_rotation"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)


@dataclass(frozen=True)
class RectificationLut:
    """Dense per-pixel maps from native to rectified coordinates.

    ``camera_map[y, x]`` holds the rectified (x, y) of camera pixel (x, y).
    ``projector_map`` covers rows 0..native_height inclusive so that both
    endpoints of a full-height projected line are direct reads.
    """

    camera_map: np.ndarray
    projector_map: np.ndarray

    def __post_init__(self) -> None:
        for name in ("camera_map", "projector_map"):
            arr = getattr(self, name)
            if arr.ndim != 3 or arr.shape[2] != 2:
                raise CalibrationError(f"{name} must have shape (rows, cols, 2)")
            if not np.all(np.isfinite(arr)):
                raise CalibrationError(f"{name} contains non-finite entries")
            arr.flags.writeable = False

    def camera_lookup(self, x: float, y: float) -> np.ndarray:
        return _bilinear(self.camera_map, x, y)

    def projector_lookup(self, x: float, y: float) -> np.ndarray:
        return _bilinear(self.projector_map, x, y)


def _bilinear(table: np.ndarray, x: float, y: float) -> np.ndarray:
    rows, cols = table.shape[:2]
    if not (0.0 <= x <= cols - 1 and 0.0 <= y <= rows - 1):
        raise ValueError(f"lookup ({x}, {y}) outside table extent {cols}x{rows}")
    x0 = int(np.floor(x))
    y0 = int(np.floor(y))
    x1 = min(x0 + 1, cols - 1)
    y1 = min(y0 + 1, rows - 1)
    fx = x - x0
    fy = y - y0
    top = table[y0, x0] * (1.0 - fx) + table[y0, x1] * fx
    bottom = table[y1, x0] * (1.0 - fx) + table[y1, x1] * fx
    return top * (1.0 - fy) + bottom * fy


def _rectified_grid(
    intr: CameraIntrinsics,
    combined_rotation: np.ndarray,
    rect_focal: float,
    rect_principal: tuple[float, float],
    rows: int,
    cols: int,
) -> np.ndarray:
    """Map every integer pixel of a device into rectified coordinates."""
    xs, ys = np.meshgrid(np.arange(cols, dtype=float), np.arange(rows, dtype=float))
    pixels = np.stack([xs.ravel(), ys.ravel()], axis=1)
    dirs = intr.back_project(pixels)
    rotated = dirs @ combined_rotation.T
    z = rotated[:, 2]
    if np.any(z <= 0):
        raise CalibrationError("rectifying rotation pushes part of the grid behind the image plane")
    out = np.empty_like(pixels)
    out[:, 0] = rect_focal * rotated[:, 0] / z + rect_principal[0]
    out[:, 1] = rect_focal * rotated[:, 1] / z + rect_principal[1]
    return out.reshape(rows, cols, 2)


def build_rectification(
    camera: CameraIntrinsics,
    projector: ProjectorModel,
    extrinsics: Extrinsics,
) -> tuple[RectifiedRig, RectificationLut]:
    """Compute the shared rectified frame and the dense rectification maps.

    The rectified x axis runs along the baseline, oriented so disparity
    (projector x minus camera x) is positive at every finite depth. The
    remaining axes complete a right-handed frame around the mean optical
    axis of the two devices. The shared rectified pinhole reuses the
    camera's mean focal length and principal point, which makes an
    already-rectified rig map to the identity.
    """
    trans = extrinsics.translation_mm
    if not (abs(trans[0]) > abs(trans[1]) and abs(trans[0]) > abs(trans[2])):
        raise CalibrationError(
            f"rig must be predominantly horizontal stereo, translation {trans.tolist()} is not"
        )
    baseline = float(np.linalg.norm(trans))

    axis_x = extrinsics.rotation.T @ trans / baseline
    cam_axis = np.array([0.0, 0.0, 1.0])
    proj_axis = extrinsics.rotation.T @ cam_axis
    mean_axis = cam_axis + proj_axis
    mean_axis /= np.linalg.norm(mean_axis)
    axis_y = np.cross(mean_axis, axis_x)
    norm_y = np.linalg.norm(axis_y)
    if norm_y < 1e-6:
        raise CalibrationError("baseline is parallel to the mean optical axis, rig is degenerate")
    axis_y /= norm_y
    axis_z = np.cross(axis_x, axis_y)
    rect_rotation = np.stack([axis_x, axis_y, axis_z], axis=0)

    rect_focal = 0.5 * (camera.focal_x + camera.focal_y)
    rect_principal = (camera.principal_x, camera.principal_y)
    k_rect = np.array(
        [
            [rect_focal, 0.0, rect_principal[0]],
            [0.0, rect_focal, rect_principal[1]],
            [0.0, 0.0, 1.0],
        ]
    )

    cam_h = k_rect @ rect_rotation @ np.linalg.inv(camera.matrix())
    proj_rotation = rect_rotation @ extrinsics.rotation.T
    proj_h = k_rect @ proj_rotation @ np.linalg.inv(projector.intrinsics.matrix())

    rig = RectifiedRig(
        rectified_focal_px=rect_focal,
        baseline_mm=baseline,
        rectified_principal=rect_principal,
        camera_size=(camera.width, camera.height),
        projector_size=(projector.native_width, projector.native_height),
        camera_homography=cam_h,
        projector_homography=proj_h,
        rectifying_rotation=rect_rotation,
    )

    camera_map = _rectified_grid(
        camera, rect_rotation, rect_focal, rect_principal, camera.height, camera.width
    )
    projector_map = _rectified_grid(
        projector.intrinsics,
        proj_rotation,
        rect_focal,
        rect_principal,
        projector.native_height + 1,
        projector.native_width,
    )
    lut = RectificationLut(camera_map=camera_map, projector_map=projector_map)
    return rig, lut


def rectify_camera_pixel(lut: RectificationLut, pixel: tuple[float, float]) -> np.ndarray:
    """Rectified coordinates of a camera pixel, bilinear for sub-pixel input."""
    return lut.camera_lookup(float(pixel[0]), float(pixel[1]))


def rectify_projector_pixel(lut: RectificationLut, pixel: tuple[float, float]) -> np.ndarray:
    return lut.projector_lookup(float(pixel[0]), float(pixel[1]))


def depth_from_disparity(rig: RectifiedRig, disparity: float) -> float:
    """Metric depth along the rectified axis: focal * baseline / disparity."""
    if disparity <= 0:
        raise ValueError(f"disparity must be positive, got {disparity}")
    return rig.rectified_focal_px * rig.baseline_mm / disparity


def cast_camera_ray(camera: CameraIntrinsics, pixel: tuple[float, float]) -> Ray:
    """Camera-frame ray through a pixel, distortion inverted before casting."""
    x, y = float(pixel[0]), float(pixel[1])
    if not (0.0 <= x <= camera.width - 1 and 0.0 <= y <= camera.height - 1):
        raise ValueError(f"pixel ({x}, {y}) outside {camera.width}x{camera.height} sensor")
    direction = camera.back_project(np.array([[x, y]]))[0]
    direction = direction / np.linalg.norm(direction)
    return Ray(origin=np.zeros(3), direction=direction)


def cast_projector_ray(
    projector: ProjectorModel, extrinsics: Extrinsics, pixel: tuple[float, float]
) -> Ray:
    """Camera-frame ray from the projector center through a logical pixel."""
    direction_p = projector.intrinsics.back_project(np.array([pixel], dtype=float))[0]
    direction = extrinsics.rotation.T @ direction_p
    direction = direction / np.linalg.norm(direction)
    return Ray(origin=extrinsics.projector_center_in_camera(), direction=direction)


_CAMERA_FIELDS = ("focal_x", "focal_y", "principal_x", "principal_y", "k1", "k2", "width", "height")
_PROJECTOR_FIELDS = (
    "focal_x",
    "focal_y",
    "principal_x",
    "principal_y",
    "k1",
    "k2",
    "native_width",
    "native_height",
    "diamond",
)


def _require(section: dict, keys, where: str) -> None:
    missing = [key for key in keys if key not in section]
    if missing:
        raise CalibrationError(f"calibration {where} section missing fields: {missing}")


def load_calibration(path: str | Path) -> CalibrationBundle:
    """Parse a calibration file; every field is required, none default."""
    raw = yaml.safe_load(Path(path).read_text())
    if not isinstance(raw, dict):
        raise CalibrationError(f"{path} is not a mapping")
    _require(raw, ("camera", "projector", "rotation", "translation_mm"), "top-level")
    cam_raw = raw["camera"]
    proj_raw = raw["projector"]
    _require(cam_raw, _CAMERA_FIELDS, "camera")
    _require(proj_raw, _PROJECTOR_FIELDS, "projector")

    camera = CameraIntrinsics(
        focal_x=float(cam_raw["focal_x"]),
        focal_y=float(cam_raw["focal_y"]),
        principal_x=float(cam_raw["principal_x"]),
        principal_y=float(cam_raw["principal_y"]),
        k1=float(cam_raw["k1"]),
        k2=float(cam_raw["k2"]),
        width=int(cam_raw["width"]),
        height=int(cam_raw["height"]),
    )
    projector = ProjectorModel(
        intrinsics=CameraIntrinsics(
            focal_x=float(proj_raw["focal_x"]),
            focal_y=float(proj_raw["focal_y"]),
            principal_x=float(proj_raw["principal_x"]),
            principal_y=float(proj_raw["principal_y"]),
            k1=float(proj_raw["k1"]),
            k2=float(proj_raw["k2"]),
            width=int(proj_raw["native_width"]),
            height=int(proj_raw["native_height"]),
        ),
        native_width=int(proj_raw["native_width"]),
        native_height=int(proj_raw["native_height"]),
        diamond_layout=bool(proj_raw["diamond"]),
    )
    rotation = np.array(raw["rotation"], dtype=float)
    if rotation.size != 9:
        raise CalibrationError("rotation must hold 9 numbers, row-major")
    extrinsics = Extrinsics(
        rotation=rotation.reshape(3, 3),
        translation_mm=np.array(raw["translation_mm"], dtype=float),
    )
    return CalibrationBundle(camera=camera, projector=projector, extrinsics=extrinsics)


def save_calibration(bundle: CalibrationBundle, path: str | Path) -> None:
    cam = bundle.camera
    proj = bundle.projector
    payload = {
        "camera": {
            "focal_x": float(cam.focal_x),
            "focal_y": float(cam.focal_y),
            "principal_x": float(cam.principal_x),
            "principal_y": float(cam.principal_y),
            "k1": float(cam.k1),
            "k2": float(cam.k2),
            "width": int(cam.width),
            "height": int(cam.height),
        },
        "projector": {
            "focal_x": float(proj.intrinsics.focal_x),
            "focal_y": float(proj.intrinsics.focal_y),
            "principal_x": float(proj.intrinsics.principal_x),
            "principal_y": float(proj.intrinsics.principal_y),
            "k1": float(proj.intrinsics.k1),
            "k2": float(proj.intrinsics.k2),
            "native_width": int(proj.native_width),
            "native_height": int(proj.native_height),
            "diamond": bool(proj.diamond_layout),
        },
        "rotation": [float(v) for v in np.asarray(bundle.extrinsics.rotation).ravel()],
        "translation_mm": [float(v) for v in bundle.extrinsics.translation_mm],
    }
    Path(path).write_text(yaml.safe_dump(payload, sort_keys=False))
