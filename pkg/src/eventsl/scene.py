"""Analytic scene primitives for the synthetic rig.

Scenes are small lists of closed-form primitives (planes, spheres,
axis-aligned boxes) in the camera frame, millimeters. Intersections are
exact, which is what makes the simulator usable as an oracle: every
event's true depth is computable independently of the tagging path.

Plane primitives may carry a rectangular extent and a patch grid of
per-cell albedos, enough to build reflectance charts without textures.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

_MIN_HIT_T = 1e-6


def _unit(vec: np.ndarray) -> np.ndarray:
    vec = np.asarray(vec, dtype=float)
    norm = np.linalg.norm(vec)
    if norm == 0:
        raise ValueError("zero-length vector")
    return vec / norm


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.flags.writeable = False
    return arr


def _check_albedo(albedo: np.ndarray) -> np.ndarray:
    albedo = np.array(albedo, dtype=float).reshape(3)
    if np.any(albedo < 0) or np.any(albedo > 1):
        raise ValueError(f"albedo components must lie in [0, 1], got {albedo.tolist()}")
    albedo.flags.writeable = False
    return albedo


@dataclass(frozen=True)
class PatchGrid:
    """Per-cell albedos on a plane, cells indexed row-major from the corner."""

    cols: int
    rows: int
    cell_size_mm: tuple[float, float]
    albedos: np.ndarray  # (rows * cols, 3)

    def __post_init__(self) -> None:
        albedos = np.array(self.albedos, dtype=float).reshape(self.rows * self.cols, 3)
        if np.any(albedos < 0) or np.any(albedos > 1):
            raise ValueError("patch albedos must lie in [0, 1]")
        albedos.flags.writeable = False
        object.__setattr__(self, "albedos", albedos)


@dataclass(frozen=True)
class Plane:
    """Plane through ``point`` with unit ``normal``; optionally bounded.

    ``axes`` are the in-plane directions that extent and patch grids are
    measured along; they default to a deterministic frame built from the
    normal.
    """

    point: np.ndarray
    normal: np.ndarray
    albedo: np.ndarray
    extent_mm: tuple[float, float] | None = None
    axes: tuple[np.ndarray, np.ndarray] | None = None
    patches: PatchGrid | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "point", _frozen(self.point))
        object.__setattr__(self, "normal", _frozen(_unit(self.normal)))
        object.__setattr__(self, "albedo", _check_albedo(self.albedo))
        if self.axes is None:
            helper = np.array([0.0, 1.0, 0.0])
            if abs(self.normal @ helper) > 0.9:
                helper = np.array([1.0, 0.0, 0.0])
            axis_u = _unit(np.cross(helper, self.normal))
            axis_v = np.cross(self.normal, axis_u)
            object.__setattr__(self, "axes", (_frozen(axis_u), _frozen(axis_v)))
        else:
            object.__setattr__(self, "axes", (_frozen(_unit(self.axes[0])), _frozen(_unit(self.axes[1]))))

    def intersect(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        denom = dirs @ self.normal
        offset = (self.point - origin) @ self.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(np.abs(denom) > 1e-12, offset / denom, np.inf)
        t = np.where(t > _MIN_HIT_T, t, np.inf)
        if self.extent_mm is not None:
            hits = origin + t[:, None] * dirs
            local = hits - self.point
            u = local @ self.axes[0]
            v = local @ self.axes[1]
            inside = (np.abs(u) <= self.extent_mm[0]) & (np.abs(v) <= self.extent_mm[1])
            t = np.where(inside, t, np.inf)
        return t

    def albedo_at(self, points: np.ndarray) -> np.ndarray:
        out = np.broadcast_to(self.albedo, (points.shape[0], 3)).copy()
        if self.patches is not None:
            grid = self.patches
            local = points - self.point
            u = local @ self.axes[0]
            v = local @ self.axes[1]
            # Grid is centered on the plane point.
            col = np.floor(u / grid.cell_size_mm[0] + grid.cols / 2.0).astype(int)
            row = np.floor(v / grid.cell_size_mm[1] + grid.rows / 2.0).astype(int)
            inside = (col >= 0) & (col < grid.cols) & (row >= 0) & (row < grid.rows)
            idx = np.clip(row, 0, grid.rows - 1) * grid.cols + np.clip(col, 0, grid.cols - 1)
            out[inside] = grid.albedos[idx[inside]]
        return out


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius_mm: float
    albedo: np.ndarray

    def __post_init__(self) -> None:
        if self.radius_mm <= 0:
            raise ValueError("sphere radius must be positive")
        object.__setattr__(self, "center", _frozen(self.center))
        object.__setattr__(self, "albedo", _check_albedo(self.albedo))

    def intersect(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        oc = origin - self.center
        # dirs need not be unit length; solve the full quadratic.
        a = np.sum(dirs * dirs, axis=1)
        b = 2.0 * (dirs @ oc)
        c = oc @ oc - self.radius_mm**2
        disc = b * b - 4.0 * a * c
        sqrt_disc = np.sqrt(np.maximum(disc, 0.0))
        t_near = (-b - sqrt_disc) / (2.0 * a)
        t_far = (-b + sqrt_disc) / (2.0 * a)
        t = np.where(t_near > _MIN_HIT_T, t_near, t_far)
        return np.where((disc >= 0) & (t > _MIN_HIT_T), t, np.inf)

    def albedo_at(self, points: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.albedo, (points.shape[0], 3))


@dataclass(frozen=True)
class Box:
    """Axis-aligned box given by two corners."""

    min_corner: np.ndarray
    max_corner: np.ndarray
    albedo: np.ndarray

    def __post_init__(self) -> None:
        min_c = np.array(self.min_corner, dtype=float)
        max_c = np.array(self.max_corner, dtype=float)
        if np.any(min_c >= max_c):
            raise ValueError("box min corner must be strictly below max corner on every axis")
        object.__setattr__(self, "min_corner", _frozen(min_c))
        object.__setattr__(self, "max_corner", _frozen(max_c))
        object.__setattr__(self, "albedo", _check_albedo(self.albedo))

    def intersect(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = np.where(dirs != 0.0, 1.0 / dirs, np.inf)
        t_low = (self.min_corner - origin) * inv
        t_high = (self.max_corner - origin) * inv
        # A zero direction component never crosses its slab planes; inf*0
        # would poison the result, patch it by hand. Outside a parallel slab
        # both bounds go +inf so the min/max below cannot reorder them back
        # into a fake crossing.
        parallel = dirs == 0.0
        inside = (origin >= self.min_corner) & (origin <= self.max_corner)
        t_low = np.where(parallel, np.where(inside, -np.inf, np.inf), t_low)
        t_high = np.where(parallel, np.where(inside, np.inf, np.inf), t_high)
        t_enter = np.max(np.minimum(t_low, t_high), axis=1)
        t_exit = np.min(np.maximum(t_low, t_high), axis=1)
        t = np.where(t_enter > _MIN_HIT_T, t_enter, t_exit)
        valid = (t_exit >= t_enter) & (t > _MIN_HIT_T)
        return np.where(valid, t, np.inf)

    def albedo_at(self, points: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.albedo, (points.shape[0], 3))


Primitive = Plane | Sphere | Box


@dataclass(frozen=True)
class SceneModel:
    primitives: tuple[Primitive, ...]

    def __post_init__(self) -> None:
        if not self.primitives:
            raise ValueError("scene needs at least one primitive")
        object.__setattr__(self, "primitives", tuple(self.primitives))

    def intersect(self, origin: np.ndarray, dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """First hit along each ray: (t, primitive index), inf and -1 for miss."""
        origin = np.asarray(origin, dtype=float)
        dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
        best_t = np.full(dirs.shape[0], np.inf)
        best_idx = np.full(dirs.shape[0], -1, dtype=np.int64)
        for idx, prim in enumerate(self.primitives):
            t = prim.intersect(origin, dirs)
            closer = t < best_t
            best_t = np.where(closer, t, best_t)
            best_idx = np.where(closer, idx, best_idx)
        return best_t, best_idx

    def albedo_at(self, prim_idx: np.ndarray, points: np.ndarray) -> np.ndarray:
        out = np.zeros((points.shape[0], 3))
        for idx, prim in enumerate(self.primitives):
            mask = prim_idx == idx
            if np.any(mask):
                out[mask] = prim.albedo_at(points[mask])
        return out


def _plane_from_dict(raw: dict) -> Plane:
    patches = None
    if raw.get("patches"):
        p = raw["patches"]
        patches = PatchGrid(
            cols=int(p["cols"]),
            rows=int(p["rows"]),
            cell_size_mm=(float(p["cell_size_mm"][0]), float(p["cell_size_mm"][1])),
            albedos=np.array(p["albedos"], dtype=float),
        )
    extent = raw.get("extent_mm")
    axes = raw.get("axes")
    return Plane(
        point=np.array(raw["point"], dtype=float),
        normal=np.array(raw["normal"], dtype=float),
        albedo=np.array(raw["albedo"], dtype=float),
        extent_mm=(float(extent[0]), float(extent[1])) if extent else None,
        axes=(np.array(axes[0], dtype=float), np.array(axes[1], dtype=float)) if axes else None,
        patches=patches,
    )


def load_scene(path: str | Path) -> SceneModel:
    raw = yaml.safe_load(Path(path).read_text())
    if not isinstance(raw, dict) or "primitives" not in raw:
        raise ValueError(f"{path} does not describe a scene (missing 'primitives')")
    prims: list[Primitive] = []
    for entry in raw["primitives"]:
        kind = entry.get("type")
        if kind == "plane":
            prims.append(_plane_from_dict(entry))
        elif kind == "sphere":
            prims.append(
                Sphere(
                    center=np.array(entry["center"], dtype=float),
                    radius_mm=float(entry["radius_mm"]),
                    albedo=np.array(entry["albedo"], dtype=float),
                )
            )
        elif kind == "box":
            prims.append(
                Box(
                    min_corner=np.array(entry["min_corner"], dtype=float),
                    max_corner=np.array(entry["max_corner"], dtype=float),
                    albedo=np.array(entry["albedo"], dtype=float),
                )
            )
        else:
            raise ValueError(f"unknown primitive type {kind!r}")
    return SceneModel(primitives=tuple(prims))


def save_scene(scene: SceneModel, path: str | Path) -> None:
    entries = []
    for prim in scene.primitives:
        if isinstance(prim, Plane):
            entry = {
                "type": "plane",
                "point": prim.point.tolist(),
                "normal": prim.normal.tolist(),
                "albedo": prim.albedo.tolist(),
                "axes": [prim.axes[0].tolist(), prim.axes[1].tolist()],
            }
            if prim.extent_mm is not None:
                entry["extent_mm"] = list(prim.extent_mm)
            if prim.patches is not None:
                entry["patches"] = {
                    "cols": prim.patches.cols,
                    "rows": prim.patches.rows,
                    "cell_size_mm": list(prim.patches.cell_size_mm),
                    "albedos": prim.patches.albedos.tolist(),
                }
        elif isinstance(prim, Sphere):
            entry = {
                "type": "sphere",
                "center": prim.center.tolist(),
                "radius_mm": float(prim.radius_mm),
                "albedo": prim.albedo.tolist(),
            }
        else:
            entry = {
                "type": "box",
                "min_corner": prim.min_corner.tolist(),
                "max_corner": prim.max_corner.tolist(),
                "albedo": prim.albedo.tolist(),
            }
        entries.append(entry)
    Path(path).write_text(yaml.safe_dump({"primitives": entries}, sort_keys=False))
