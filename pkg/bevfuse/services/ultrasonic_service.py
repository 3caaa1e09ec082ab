import logging
import math
from typing import Tuple

import numpy as np

from bevfuse.errors import UltrasonicError
from bevfuse.models.geometry import BevGrid, GridSpec, normalize_angle
from bevfuse.models.ultrasonic import EchoEnvelope, SensorLayout, SensorMount, UltrasonicFrame
from bevfuse.services.geometry_service import geometry_service

logger = logging.getLogger(__name__)


class UltrasonicService:
    """Echo envelopes to BEV amplitude grids"""

    @staticmethod
    def attenuation_weight(alpha: float, half_angle: float) -> float:
        """Beta(2,2) density scaled to 1 on the boresight"""
        if half_angle <= 0:
            raise UltrasonicError("half_angle must be positive")
        if abs(alpha) > half_angle:
            return 0.0
        ratio = alpha / half_angle
        return 1.0 - ratio * ratio

    @staticmethod
    def sample_envelope(env: EchoEnvelope, round_trip: float) -> float:
        if round_trip < 0:
            raise UltrasonicError(f"negative round-trip distance {round_trip}")
        if round_trip > env.max_distance:
            return 0.0
        position = round_trip / env.sample_spacing
        k = min(int(math.floor(position)), env.amplitudes.size - 2)
        frac = position - k
        return float(env.amplitudes[k] * (1.0 - frac) + env.amplitudes[k + 1] * frac)

    @staticmethod
    def effective_half_angle(layout: SensorLayout, distance: float) -> float:
        """Opening narrows linearly from half_angle_near at 0 to half_angle_far at max_range"""
        if distance < 0:
            raise UltrasonicError(f"negative range {distance}")
        t = min(distance / layout.max_range, 1.0)
        return layout.half_angle_near + (layout.half_angle_far - layout.half_angle_near) * t

    @staticmethod
    def _resolve_sensors(env: EchoEnvelope, layout: SensorLayout) -> Tuple[SensorMount, SensorMount]:
        try:
            return layout.sensor(env.emitter_id), layout.sensor(env.receiver_id)
        except KeyError as e:
            raise UltrasonicError(f"signalway {env.emitter_id}->{env.receiver_id} uses unknown sensor {e.args[0]}")

    @staticmethod
    def _check_frame(frame: UltrasonicFrame, layout: SensorLayout) -> None:
        limit = 2.0 * layout.max_range
        for env in frame.envelopes:
            UltrasonicService._resolve_sensors(env, layout)
            if env.max_distance >= limit:
                raise UltrasonicError(
                    f"envelope {env.emitter_id}->{env.receiver_id} listens to {env.max_distance:.2f} m, "
                    f"beyond the {limit:.2f} m round trip of the radial field of view"
                )

    @staticmethod
    def _boresight_weights(
        mount: SensorMount, centers: np.ndarray, layout: SensorLayout
    ) -> Tuple[np.ndarray, np.ndarray]:
        """Distances and angular weights from one sensor to every cell center"""
        dx = centers[..., 0] - mount.pose.x
        dy = centers[..., 1] - mount.pose.y
        dist = np.hypot(dx, dy)
        alpha = np.remainder(np.arctan2(dy, dx) - mount.pose.yaw + np.pi, 2.0 * np.pi) - np.pi
        alpha = np.where(dist > 0.0, alpha, 0.0)
        t = np.minimum(dist / layout.max_range, 1.0)
        half = layout.half_angle_near + (layout.half_angle_far - layout.half_angle_near) * t
        ratio = alpha / half
        weight = np.where(np.abs(alpha) <= half, 1.0 - ratio * ratio, 0.0)
        return dist, weight

    @staticmethod
    def fill_grid(frame: UltrasonicFrame, layout: SensorLayout, spec: GridSpec) -> BevGrid:
        UltrasonicService._check_frame(frame, layout)
        centers = geometry_service.cell_centers(spec)
        grid = np.zeros(spec.shape)
        # fixed summation order over signalways
        for env in frame.envelopes:
            tx, rx = UltrasonicService._resolve_sensors(env, layout)
            d1, w1 = UltrasonicService._boresight_weights(tx, centers, layout)
            if rx.id == tx.id:
                d2, w2 = d1, w1
            else:
                d2, w2 = UltrasonicService._boresight_weights(rx, centers, layout)
            samples = np.arange(env.amplitudes.size) * env.sample_spacing
            amp = np.interp(d1 + d2, samples, env.amplitudes, right=0.0)
            grid += amp * w1 * w2
        logger.debug("🔊 Mapped %d signalways onto a %dx%d grid", len(frame.envelopes), spec.rows, spec.cols)
        return BevGrid(spec=spec, data=grid)

    @staticmethod
    def fill_grid_oracle(frame: UltrasonicFrame, layout: SensorLayout, spec: GridSpec) -> BevGrid:
        """Literal per-cell, per-signalway evaluation for differential testing"""
        UltrasonicService._check_frame(frame, layout)
        grid = np.zeros(spec.shape)
        for row in range(spec.rows):
            for col in range(spec.cols):
                cx, cy = geometry_service.cell_center(spec, (row, col))
                total = 0.0
                for env in frame.envelopes:
                    s1 = layout.sensor(env.emitter_id).pose
                    s2 = layout.sensor(env.receiver_id).pose
                    d1 = math.hypot(cx - s1.x, cy - s1.y)
                    d2 = math.hypot(cx - s2.x, cy - s2.y)
                    a1 = normalize_angle(math.atan2(cy - s1.y, cx - s1.x) - s1.yaw) if d1 > 0 else 0.0
                    a2 = normalize_angle(math.atan2(cy - s2.y, cx - s2.x) - s2.yaw) if d2 > 0 else 0.0
                    w1 = UltrasonicService.attenuation_weight(a1, UltrasonicService.effective_half_angle(layout, d1))
                    w2 = UltrasonicService.attenuation_weight(a2, UltrasonicService.effective_half_angle(layout, d2))
                    total += UltrasonicService.sample_envelope(env, d1 + d2) * w1 * w2
                grid[row, col] = total
        return BevGrid(spec=spec, data=grid)


# Create singleton instance
ultrasonic_service = UltrasonicService()
