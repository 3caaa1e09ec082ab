import math
from typing import Optional, Tuple

import numpy as np

from bevfuse.errors import GeometryError
from bevfuse.models.geometry import GridSpec, Pose2D, normalize_angle

Point = Tuple[float, float]

# Fractional index distance treated as lying on a cell boundary
_BOUNDARY_SNAP = 1e-9


class GeometryService:
    """SE(2) pose algebra and metric grid indexing"""

    # Poses
    @staticmethod
    def pose_apply(pose: Pose2D, p: Point) -> Point:
        c, s = math.cos(pose.yaw), math.sin(pose.yaw)
        x, y = p
        return (c * x - s * y + pose.x, s * x + c * y + pose.y)

    @staticmethod
    def pose_apply_many(pose: Pose2D, points: np.ndarray) -> np.ndarray:
        """Apply to an (..., 2) array"""
        c, s = math.cos(pose.yaw), math.sin(pose.yaw)
        pts = np.asarray(points, dtype=np.float64)
        out = np.empty_like(pts)
        out[..., 0] = c * pts[..., 0] - s * pts[..., 1] + pose.x
        out[..., 1] = s * pts[..., 0] + c * pts[..., 1] + pose.y
        return out

    @staticmethod
    def pose_compose(a: Pose2D, b: Pose2D) -> Pose2D:
        """a after b: apply(compose(a, b), p) == apply(a, apply(b, p))"""
        x, y = GeometryService.pose_apply(a, (b.x, b.y))
        return Pose2D(x=x, y=y, yaw=normalize_angle(a.yaw + b.yaw))

    @staticmethod
    def pose_inverse(a: Pose2D) -> Pose2D:
        c, s = math.cos(a.yaw), math.sin(a.yaw)
        return Pose2D(x=-(c * a.x + s * a.y), y=s * a.x - c * a.y, yaw=-a.yaw)

    # Grid indexing
    @staticmethod
    def _to_local(spec: GridSpec, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Rearward and leftmost-edge offsets of vehicle-frame points in meters"""
        local = GeometryService.pose_apply_many(GeometryService.pose_inverse(spec.anchor), points)
        back = -local[..., 0]
        from_left = spec.lateral_half_extent - local[..., 1]
        return back, from_left

    @staticmethod
    def _floor_index(q: float) -> int:
        # boundary points land on the larger index despite rounding in q
        nearest = round(q)
        if abs(q - nearest) < _BOUNDARY_SNAP:
            return int(nearest)
        return math.floor(q)

    @staticmethod
    def world_to_cell(spec: GridSpec, p: Point) -> Optional[Tuple[int, int]]:
        back, from_left = GeometryService._to_local(spec, np.asarray(p, dtype=np.float64))
        row = GeometryService._floor_index(float(back) / spec.cell_size)
        col = GeometryService._floor_index(float(from_left) / spec.cell_size)
        if 0 <= row < spec.rows and 0 <= col < spec.cols:
            return (row, col)
        return None

    @staticmethod
    def world_to_cell_continuous(spec: GridSpec, points: np.ndarray) -> np.ndarray:
        """Fractional (row, col) with cell centers on integers, shape (..., 2)"""
        back, from_left = GeometryService._to_local(spec, points)
        return np.stack([back / spec.cell_size - 0.5, from_left / spec.cell_size - 0.5], axis=-1)

    @staticmethod
    def cell_center(spec: GridSpec, idx: Tuple[int, int]) -> Point:
        row, col = idx
        if not (0 <= row < spec.rows and 0 <= col < spec.cols):
            raise GeometryError(f"cell index {idx} outside grid {spec.rows} x {spec.cols}")
        local = (-(row + 0.5) * spec.cell_size, spec.lateral_half_extent - (col + 0.5) * spec.cell_size)
        return GeometryService.pose_apply(spec.anchor, local)

    @staticmethod
    def cell_centers(spec: GridSpec) -> np.ndarray:
        """Vehicle-frame centers of every cell, shape (rows, cols, 2)"""
        rows = np.arange(spec.rows, dtype=np.float64)
        cols = np.arange(spec.cols, dtype=np.float64)
        local = np.empty((spec.rows, spec.cols, 2))
        local[..., 0] = -(rows[:, None] + 0.5) * spec.cell_size
        local[..., 1] = spec.lateral_half_extent - (cols[None, :] + 0.5) * spec.cell_size
        return GeometryService.pose_apply_many(spec.anchor, local)

    @staticmethod
    def rear_azimuth(origin: Point, p: Point) -> float:
        """Angle of p seen from origin, 0 straight rearward, positive towards +y"""
        dx, dy = p[0] - origin[0], p[1] - origin[1]
        return math.atan2(dy, -dx)


# Create singleton instance
geometry_service = GeometryService()
