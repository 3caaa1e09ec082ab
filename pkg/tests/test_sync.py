import math

import numpy as np
import pytest
from pydantic import ValidationError

from bevfuse.errors import SyncError
from bevfuse.models.geometry import BevGrid, Pose2D
from bevfuse.models.sync import FramePair, OdometrySample
from bevfuse.models.ultrasonic import EchoEnvelope, UltrasonicFrame
from bevfuse.services.geometry_service import geometry_service
from bevfuse.services.sync_service import sync_service


# ── Helpers ──────────────────────────────────────────────────────────────

def _uls(timestamps):
    env = EchoEnvelope(emitter_id=0, receiver_id=0, amplitudes=[0.0, 0.0])
    return [UltrasonicFrame(timestamp=t, envelopes=[env]) for t in timestamps]


def _track(times, speed_m_per_ms=0.0, yaw_rate=0.0):
    return [
        OdometrySample(timestamp=t, pose=Pose2D(x=speed_m_per_ms * t, y=0.0, yaw=yaw_rate * t)) for t in times
    ]


def _hot(spec, row, col):
    data = np.zeros(spec.shape)
    data[row, col] = 1.0
    return BevGrid(spec=spec, data=data)


def _compensate_ego(grid, ego_delta):
    return sync_service.compensate_ego_motion(grid, sync_service.content_motion(ego_delta))


def _turn_about_center(spec, yaw):
    """Rotation by yaw about the middle of the grid"""
    cx, cy = geometry_service.cell_centers(spec).reshape(-1, 2).mean(axis=0)
    rx, ry = geometry_service.pose_apply(Pose2D(yaw=yaw), (cx, cy))
    return Pose2D(x=cx - rx, y=cy - ry, yaw=yaw)


# ── Pairing ──────────────────────────────────────────────────────────────

class TestMatchFrames:
    def test_latest_earlier_frame(self):
        camera = [k * 100.0 / 3.0 for k in range(7)]
        uls = [0.0, 40.0, 120.0, 160.0]
        pairs = sync_service.match_frames(camera, _uls(uls), _track(np.arange(0.0, 250.0, 10.0)))
        assert [p.uls_ts for p in pairs] == [0.0, 0.0, 40.0, 40.0, 120.0, 160.0, 160.0]
        assert [p.uls_index for p in pairs] == [0, 0, 1, 1, 2, 3, 3]

    def test_camera_frames_before_first_arrival_are_dropped(self):
        pairs = sync_service.match_frames([0.0, 10.0, 20.0], _uls([15.0]), _track([0.0, 20.0]))
        assert [p.camera_ts for p in pairs] == [20.0]

    def test_pairing_is_monotone(self, rng):
        uls = np.cumsum(rng.choice([40.0, 80.0], 30))
        camera = list(np.arange(50.0, uls[-1], 100.0 / 3.0))
        pairs = sync_service.match_frames(camera, _uls(list(uls)), _track(np.arange(0.0, uls[-1] + 10.0, 10.0)))
        indices = [p.uls_index for p in pairs]
        assert indices == sorted(indices)
        assert all(p.uls_ts <= p.camera_ts for p in pairs)

    def test_stationary_ego_gives_identity(self):
        pairs = sync_service.match_frames([50.0, 90.0], _uls([0.0, 40.0]), _track([0.0, 50.0, 100.0]))
        assert all(p.pose_delta.is_identity() for p in pairs)

    def test_constant_speed_delta(self):
        # 1 m/s forward, 50 ms lag
        track = _track(np.arange(0.0, 210.0, 10.0), speed_m_per_ms=0.001)
        pairs = sync_service.match_frames([150.0], _uls([100.0]), track)
        delta = pairs[0].pose_delta
        assert delta.x == pytest.approx(0.05)
        assert delta.y == pytest.approx(0.0, abs=1e-12)
        assert delta.yaw == pytest.approx(0.0, abs=1e-12)

    def test_empty_ultrasonic_stream(self):
        with pytest.raises(SyncError):
            sync_service.match_frames([0.0], [], _track([0.0, 10.0]))

    def test_unsorted_input(self):
        with pytest.raises(SyncError):
            sync_service.match_frames([20.0, 10.0], _uls([0.0]), _track([0.0, 20.0]))

    def test_odometry_gap_too_large(self):
        with pytest.raises(SyncError):
            sync_service.match_frames([300.0], _uls([0.0]), _track([0.0, 250.0, 300.0]))

    def test_odometry_must_cover_pair(self):
        with pytest.raises(SyncError):
            sync_service.match_frames([150.0], _uls([100.0]), _track([0.0, 100.0]))

    def test_pair_rejects_future_ultrasonic_frame(self):
        with pytest.raises(ValidationError):
            FramePair(camera_ts=10.0, uls_ts=20.0, uls_index=0, pose_delta=Pose2D())


class TestInterpolation:
    def test_shortest_arc_yaw(self):
        track = [
            OdometrySample(timestamp=0.0, pose=Pose2D(yaw=3.0)),
            OdometrySample(timestamp=10.0, pose=Pose2D(yaw=-3.0)),
        ]
        mid = sync_service.interpolate_pose(track, 5.0)
        assert abs(abs(mid.yaw) - math.pi) < 1e-3

    def test_exact_sample(self):
        track = _track([0.0, 10.0, 20.0], speed_m_per_ms=0.002)
        assert sync_service.interpolate_pose(track, 10.0).x == pytest.approx(0.02)

    def test_ego_speed(self):
        track = _track(np.arange(0.0, 110.0, 10.0), speed_m_per_ms=0.001)
        assert sync_service.ego_speed_kmh(track, 55.0) == pytest.approx(3.6)


# ── Ego-motion compensation ─────────────────────────────────────────────

class TestCompensation:
    def test_identity_is_bitwise(self, tiny_grid, rng):
        grid = BevGrid(spec=tiny_grid, data=rng.uniform(size=tiny_grid.shape))
        out = sync_service.compensate_ego_motion(grid, Pose2D.identity())
        np.testing.assert_array_equal(out.data, grid.data)

    def test_content_moves_with_the_motion(self, tiny_grid):
        out = sync_service.compensate_ego_motion(_hot(tiny_grid, 5, 4), Pose2D(x=0.2))
        assert out.data[3, 4, 0] == pytest.approx(1.0)
        assert out.data.sum() == pytest.approx(1.0)

    def test_forward_motion_shifts_content_rearward(self, tiny_grid):
        out = _compensate_ego(_hot(tiny_grid, 3, 4), Pose2D(x=0.2))
        assert out.data[5, 4, 0] == pytest.approx(1.0)
        assert out.data.sum() == pytest.approx(1.0)
        # vacated leading rows read zero
        assert not np.any(out.data[:2])

    def test_lateral_motion(self, tiny_grid):
        # vehicle moved left, content moves right
        out = _compensate_ego(_hot(tiny_grid, 4, 4), Pose2D(y=0.1))
        assert out.data[4, 5, 0] == pytest.approx(1.0)

    def test_content_leaving_the_grid_is_dropped(self, tiny_grid):
        out = _compensate_ego(_hot(tiny_grid, 9, 4), Pose2D(x=0.3))
        assert not np.any(out.data)

    def test_quarter_turn_about_anchor(self, tiny_grid, quarter_turn):
        anchor = tiny_grid.anchor
        rotated = geometry_service.pose_apply(Pose2D(yaw=quarter_turn), (anchor.x, anchor.y))
        delta = Pose2D(x=anchor.x - rotated[0], y=anchor.y - rotated[1], yaw=quarter_turn)
        out = _compensate_ego(_hot(tiny_grid, 2, 8), delta)
        assert out.data[3, 2, 0] == pytest.approx(1.0, abs=1e-9)
        assert out.data.sum() == pytest.approx(1.0, abs=1e-9)

    def test_rotation_and_translation_compose(self, tiny_grid, rng, quarter_turn):
        data = np.zeros(tiny_grid.shape)
        data[3:7, 3:7] = rng.uniform(0.5, 1.0, size=(4, 4))
        grid = BevGrid(spec=tiny_grid, data=data)
        a = _turn_about_center(tiny_grid, quarter_turn)
        b = Pose2D(x=0.1)

        once = sync_service.compensate_ego_motion(grid, geometry_service.pose_compose(a, b))
        twice = sync_service.compensate_ego_motion(sync_service.compensate_ego_motion(grid, b), a)
        assert np.max(np.abs(once.data - twice.data)) <= 1e-6

        # the two motions do not commute
        swapped = sync_service.compensate_ego_motion(grid, geometry_service.pose_compose(b, a))
        assert np.max(np.abs(once.data - swapped.data)) > 0.1

    def test_translation_composition(self, tiny_grid, rng):
        data = np.zeros(tiny_grid.shape)
        data[3:6, 3:6] = rng.uniform(size=(3, 3))
        grid = BevGrid(spec=tiny_grid, data=data)
        a, b = Pose2D(x=0.1), Pose2D(y=-0.1)
        once = sync_service.compensate_ego_motion(grid, geometry_service.pose_compose(a, b))
        twice = sync_service.compensate_ego_motion(sync_service.compensate_ego_motion(grid, b), a)
        assert np.max(np.abs(once.data - twice.data)) <= 1e-6

    def test_mass_conserved_for_interior_shift(self, tiny_grid, rng):
        data = np.zeros(tiny_grid.shape)
        data[2:5, 3:7] = rng.uniform(size=(3, 4))
        out = _compensate_ego(BevGrid(spec=tiny_grid, data=data), Pose2D(x=0.2, y=0.1))
        assert out.data.sum() == pytest.approx(data.sum(), rel=0.02)

    def test_multi_channel(self, tiny_grid, rng):
        data = rng.uniform(size=tiny_grid.shape + (3,))
        out = _compensate_ego(BevGrid(spec=tiny_grid, data=data), Pose2D(x=0.1))
        assert out.channels == 3
        np.testing.assert_allclose(out.data[1:], data[:-1], atol=1e-12)
