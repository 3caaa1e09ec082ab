import bisect
import logging
import math
from typing import List, Sequence

import numpy as np
from scipy import ndimage

from bevfuse.config import settings
from bevfuse.errors import SyncError
from bevfuse.models.geometry import BevGrid, Pose2D, normalize_angle
from bevfuse.models.sync import FramePair, OdometrySample
from bevfuse.models.ultrasonic import UltrasonicFrame
from bevfuse.services.geometry_service import geometry_service

logger = logging.getLogger(__name__)

# Sample coordinates this close to an integer are snapped so whole-cell shifts stay exact
_INDEX_SNAP = 1e-9


class SyncService:
    """Camera/ultrasonic association and ego-motion compensation"""

    @staticmethod
    def _check_sorted(values: Sequence[float], name: str, strict: bool = False) -> None:
        for a, b in zip(values, values[1:]):
            if b < a or (strict and b == a):
                raise SyncError(f"{name} timestamps must be {'strictly ' if strict else ''}increasing")

    @staticmethod
    def interpolate_pose(odometry: List[OdometrySample], t: float) -> Pose2D:
        """Linear in x, y and shortest-arc linear in yaw between the bracketing samples"""
        if not odometry:
            raise SyncError("odometry track is empty")
        times = [s.timestamp for s in odometry]
        if t < times[0] or t > times[-1]:
            raise SyncError(f"odometry [{times[0]:.1f}, {times[-1]:.1f}] ms does not cover t={t:.1f} ms")
        i = bisect.bisect_left(times, t)
        if times[i] == t:
            return odometry[i].pose
        a, b = odometry[i - 1], odometry[i]
        gap = b.timestamp - a.timestamp
        if gap > settings.ODOMETRY_MAX_GAP_MS:
            raise SyncError(f"odometry gap of {gap:.1f} ms around t={t:.1f} ms exceeds {settings.ODOMETRY_MAX_GAP_MS} ms")
        s = (t - a.timestamp) / gap
        dyaw = normalize_angle(b.pose.yaw - a.pose.yaw)
        return Pose2D(
            x=a.pose.x + s * (b.pose.x - a.pose.x),
            y=a.pose.y + s * (b.pose.y - a.pose.y),
            yaw=a.pose.yaw + s * dyaw,
        )

    @staticmethod
    def _check_gaps(odometry: List[OdometrySample], t0: float, t1: float) -> None:
        times = [s.timestamp for s in odometry]
        lo = max(bisect.bisect_right(times, t0) - 1, 0)
        hi = min(bisect.bisect_left(times, t1), len(times) - 1)
        for k in range(lo, hi):
            gap = times[k + 1] - times[k]
            if gap > settings.ODOMETRY_MAX_GAP_MS:
                raise SyncError(
                    f"odometry gap of {gap:.1f} ms between {t0:.1f} and {t1:.1f} ms exceeds "
                    f"{settings.ODOMETRY_MAX_GAP_MS} ms"
                )

    @staticmethod
    def pose_delta(odometry: List[OdometrySample], t_from: float, t_to: float) -> Pose2D:
        """Vehicle pose at t_to expressed in the vehicle frame at t_from"""
        SyncService._check_gaps(odometry, t_from, t_to)
        start = SyncService.interpolate_pose(odometry, t_from)
        end = SyncService.interpolate_pose(odometry, t_to)
        return geometry_service.pose_compose(geometry_service.pose_inverse(start), end)

    @staticmethod
    def match_frames(
        camera_ts: List[float], uls_frames: List[UltrasonicFrame], odometry: List[OdometrySample]
    ) -> List[FramePair]:
        """Pair each camera frame with the latest ultrasonic frame at or before it"""
        if not uls_frames:
            raise SyncError("ultrasonic stream is empty")
        uls_ts = [f.timestamp for f in uls_frames]
        SyncService._check_sorted(camera_ts, "camera")
        SyncService._check_sorted(uls_ts, "ultrasonic")
        SyncService._check_sorted([s.timestamp for s in odometry], "odometry", strict=True)

        pairs = []
        dropped = 0
        for cam in camera_ts:
            k = bisect.bisect_right(uls_ts, cam) - 1
            if k < 0:
                dropped += 1
                continue
            delta = SyncService.pose_delta(odometry, uls_ts[k], cam)
            pairs.append(FramePair(camera_ts=cam, uls_ts=uls_ts[k], uls_index=k, pose_delta=delta))
        if dropped:
            logger.info("⏭️  Dropped %d camera frames preceding the first ultrasonic frame", dropped)
        return pairs

    @staticmethod
    def ego_speed_kmh(odometry: List[OdometrySample], t: float) -> float:
        """Speed over the odometry interval containing t"""
        if len(odometry) < 2:
            return 0.0
        times = [s.timestamp for s in odometry]
        i = min(max(bisect.bisect_right(times, t), 1), len(times) - 1)
        a, b = odometry[i - 1], odometry[i]
        meters = math.hypot(b.pose.x - a.pose.x, b.pose.y - a.pose.y)
        return 3.6 * meters / ((b.timestamp - a.timestamp) / 1000.0)

    @staticmethod
    def content_motion(ego_delta: Pose2D) -> Pose2D:
        """Motion of static content in the vehicle frame while the vehicle moves by ego_delta"""
        return geometry_service.pose_inverse(ego_delta)

    @staticmethod
    def compensate_ego_motion(grid: BevGrid, pose_delta: Pose2D) -> BevGrid:
        """Move grid content by the rigid motion pose_delta.

        Each target cell samples the source bilinearly under the inverse motion;
        samples outside the source extent read 0. Warps compose like poses:
        compensating by a∘b equals compensating by b and then by a.

        To carry a grid measured at ultrasonic time into the vehicle frame at
        camera time, pass the inverse of the ego displacement (see
        `content_motion`).
        """
        if pose_delta.is_identity():
            return BevGrid(spec=grid.spec, data=grid.data.copy())

        spec = grid.spec
        centers = geometry_service.cell_centers(spec)
        source_points = geometry_service.pose_apply_many(geometry_service.pose_inverse(pose_delta), centers)
        coords = geometry_service.world_to_cell_continuous(spec, source_points)
        snapped = np.round(coords)
        coords = np.where(np.abs(coords - snapped) < _INDEX_SNAP, snapped, coords)
        sample_at = np.stack([coords[..., 0], coords[..., 1]])

        out = np.zeros(grid.data.shape, dtype=np.float64)
        for ch in range(grid.channels):
            out[:, :, ch] = ndimage.map_coordinates(
                grid.data[:, :, ch].astype(np.float64), sample_at, order=1, mode="grid-constant", cval=0.0
            )
        return BevGrid(spec=spec, data=out)


# Create singleton instance
sync_service = SyncService()
