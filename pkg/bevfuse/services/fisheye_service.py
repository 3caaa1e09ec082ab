import math
from typing import List, Sequence, Tuple

import numpy as np

from bevfuse.config import settings
from bevfuse.errors import ConvergenceError, FisheyeError
from bevfuse.models.camera import CameraExtrinsics, DepthBand, FisheyeIntrinsics, default_depth_bands


# Vehicle frame -> camera frame of a camera looking rearward with zero angles:
# camera x = vehicle +y, camera y = vehicle -z, camera z = vehicle -x
_REAR_BASE = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, -1.0], [-1.0, 0.0, 0.0]])


def _rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


class FisheyeService:
    """Kannala-Brandt projection, Newton unprojection and pyramid crop bounds"""

    @staticmethod
    def distortion(theta: float, intrinsics: FisheyeIntrinsics) -> float:
        if not 0.0 <= theta <= intrinsics.theta_max:
            raise FisheyeError(f"theta {theta:.6f} outside [0, {intrinsics.theta_max:.6f}]")
        return float(intrinsics.polynomial(theta))

    @staticmethod
    def distortion_derivative(theta: float, intrinsics: FisheyeIntrinsics) -> float:
        return float(intrinsics.polynomial_derivative(theta))

    # Extrinsics
    @staticmethod
    def rotation_matrix(extrinsics: CameraExtrinsics) -> np.ndarray:
        """Vehicle -> camera rotation: pitch, then yaw, then roll in the camera frame"""
        return _rot_z(extrinsics.roll) @ _rot_y(extrinsics.yaw) @ _rot_x(extrinsics.pitch) @ _REAR_BASE

    @staticmethod
    def vehicle_to_camera(extrinsics: CameraExtrinsics, points: np.ndarray) -> np.ndarray:
        rot = FisheyeService.rotation_matrix(extrinsics)
        return (np.asarray(points, dtype=np.float64) - extrinsics.position) @ rot.T

    @staticmethod
    def camera_to_vehicle(extrinsics: CameraExtrinsics, points: np.ndarray) -> np.ndarray:
        rot = FisheyeService.rotation_matrix(extrinsics)
        return np.asarray(points, dtype=np.float64) @ rot + extrinsics.position

    # Projection
    @staticmethod
    def project(p: Sequence[float], intrinsics: FisheyeIntrinsics) -> Tuple[float, float]:
        x, y, z = (float(c) for c in p)
        r = math.hypot(x, y)
        if r == 0.0:
            if z == 0.0:
                raise FisheyeError("cannot project the camera center")
            if z < 0.0:
                raise FisheyeError("on-axis point behind the camera")
            return (intrinsics.cx, intrinsics.cy)
        theta = math.atan2(r, z)
        d = FisheyeService.distortion(theta, intrinsics)
        return (intrinsics.fx * d * x / r + intrinsics.cx, intrinsics.fy * d * y / r + intrinsics.cy)

    @staticmethod
    def project_many(points: np.ndarray, intrinsics: FisheyeIntrinsics) -> Tuple[np.ndarray, np.ndarray]:
        """Project an (..., 3) array; returns (uv, valid) where invalid points exceed theta_max"""
        pts = np.asarray(points, dtype=np.float64)
        x, y, z = pts[..., 0], pts[..., 1], pts[..., 2]
        r = np.hypot(x, y)
        theta = np.arctan2(r, z)
        valid = (theta <= intrinsics.theta_max) & ((r > 0) | (z > 0))
        d = intrinsics.polynomial(theta)
        safe_r = np.where(r > 0, r, 1.0)
        scale = np.where(r > 0, d / safe_r, 0.0)
        uv = np.stack([intrinsics.fx * scale * x + intrinsics.cx, intrinsics.fy * scale * y + intrinsics.cy], axis=-1)
        return uv, valid

    @staticmethod
    def _solve_theta(rd: float, intrinsics: FisheyeIntrinsics) -> float:
        """Newton on d(theta) = rd, bracketed to [0, theta_max]"""
        tol = settings.NEWTON_TOLERANCE_RAD
        lo, hi = 0.0, intrinsics.theta_max
        theta = min(rd, hi)
        residual = float(intrinsics.polynomial(theta)) - rd
        for _ in range(settings.NEWTON_MAX_ITERATIONS):
            if residual > 0.0:
                hi = theta
            else:
                lo = theta
            step = residual / FisheyeService.distortion_derivative(theta, intrinsics)
            candidate = theta - step
            if not lo <= candidate <= hi:
                candidate = 0.5 * (lo + hi)
                step = theta - candidate
            theta = candidate
            residual = float(intrinsics.polynomial(theta)) - rd
            if abs(step) < tol:
                return theta
        raise ConvergenceError(f"Newton unprojection did not converge for r_d={rd:.6f}", abs(residual))

    @staticmethod
    def unproject(pixel: Sequence[float], intrinsics: FisheyeIntrinsics) -> np.ndarray:
        """Unit ray in the camera frame"""
        u, v = float(pixel[0]), float(pixel[1])
        if not (0.0 <= u <= intrinsics.width - 1 and 0.0 <= v <= intrinsics.height - 1):
            raise FisheyeError(f"pixel ({u:.2f}, {v:.2f}) outside the {intrinsics.width}x{intrinsics.height} image")
        mx = (u - intrinsics.cx) / intrinsics.fx
        my = (v - intrinsics.cy) / intrinsics.fy
        rd = math.hypot(mx, my)
        if rd == 0.0:
            return np.array([0.0, 0.0, 1.0])
        if rd > intrinsics.max_distorted_radius:
            raise FisheyeError(f"pixel ({u:.2f}, {v:.2f}) beyond the valid radius d(theta_max)")
        theta = FisheyeService._solve_theta(rd, intrinsics)
        s = math.sin(theta)
        return np.array([s * mx / rd, s * my / rd, math.cos(theta)])

    @staticmethod
    def optical_axis_azimuth(extrinsics: CameraExtrinsics) -> np.ndarray:
        """Unit ground-plane direction of the optical axis"""
        axis = FisheyeService.camera_to_vehicle(extrinsics, np.array([0.0, 0.0, 1.0])) - extrinsics.position
        horizontal = axis[:2]
        norm = float(np.linalg.norm(horizontal))
        if norm < 1e-9:
            raise FisheyeError("optical axis is vertical; central azimuth undefined")
        return horizontal / norm

    @staticmethod
    def crop_bounds(
        intrinsics: FisheyeIntrinsics, extrinsics: CameraExtrinsics, band: DepthBand
    ) -> Tuple[float, float]:
        """Image rows (v_min, v_max) spanned by a depth band along the central azimuth"""
        if not band.z_min < band.z_max:
            raise FisheyeError("degenerate depth band")
        direction = FisheyeService.optical_axis_azimuth(extrinsics)
        corners = np.array(
            [
                [extrinsics.x + z * direction[0], extrinsics.y + z * direction[1], h]
                for z in (band.z_min, band.z_max)
                for h in (band.y_min, band.y_max)
            ]
        )
        uv, valid = FisheyeService.project_many(FisheyeService.vehicle_to_camera(extrinsics, corners), intrinsics)
        if not np.any(valid):
            raise FisheyeError(f"depth band {band.z_min}-{band.z_max} m is outside the field of view")
        rows = uv[valid, 1]
        if rows.max() < 0.0 or rows.min() > intrinsics.height - 1:
            raise FisheyeError(f"depth band {band.z_min}-{band.z_max} m projects outside the image")
        v_min = float(np.clip(rows.min(), 0.0, intrinsics.height - 1))
        v_max = float(np.clip(rows.max(), 0.0, intrinsics.height - 1))
        if not v_min < v_max:
            raise FisheyeError(f"depth band {band.z_min}-{band.z_max} m collapses to a single row")
        return v_min, v_max

    @staticmethod
    def column_azimuths(
        intrinsics: FisheyeIntrinsics, extrinsics: CameraExtrinsics, columns: np.ndarray
    ) -> np.ndarray:
        """Rear azimuth (0 rearward, positive towards +y) of each image column at the principal row"""
        out = np.empty(len(columns))
        for i, u in enumerate(columns):
            ray = FisheyeService.unproject((float(u), intrinsics.cy), intrinsics)
            direction = FisheyeService.camera_to_vehicle(extrinsics, ray) - extrinsics.position
            out[i] = math.atan2(direction[1], -direction[0])
        return out

    @staticmethod
    def depth_bands(levels: int, y_min: float = 0.0, y_max: float = 1.2) -> List[DepthBand]:
        return default_depth_bands(levels, y_min, y_max)


# Create singleton instance
fisheye_service = FisheyeService()
