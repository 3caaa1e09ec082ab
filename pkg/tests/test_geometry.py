import math

import numpy as np
import pytest
from pydantic import ValidationError

from bevfuse.errors import GeometryError
from bevfuse.models.geometry import BevGrid, GridSpec, Pose2D, normalize_angle
from bevfuse.services.geometry_service import geometry_service


class TestPoseAlgebra:
    def test_yaw_is_normalized(self):
        assert Pose2D(yaw=3.0 * math.pi).yaw == pytest.approx(math.pi)
        assert Pose2D(yaw=-math.pi).yaw == pytest.approx(math.pi)
        assert normalize_angle(2.0 * math.pi) == pytest.approx(0.0)

    def test_non_finite_yaw_rejected(self):
        with pytest.raises(ValidationError):
            Pose2D(yaw=float("nan"))

    def test_compose_applies_right_operand_first(self):
        a = Pose2D(x=1.0, y=-2.0, yaw=0.7)
        b = Pose2D(x=-0.3, y=0.5, yaw=-1.9)
        p = (0.4, 1.1)
        lhs = geometry_service.pose_apply(geometry_service.pose_compose(a, b), p)
        rhs = geometry_service.pose_apply(a, geometry_service.pose_apply(b, p))
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_inverse_cancels(self):
        a = Pose2D(x=2.5, y=-1.0, yaw=2.2)
        ident = geometry_service.pose_compose(a, geometry_service.pose_inverse(a))
        np.testing.assert_allclose([ident.x, ident.y, ident.yaw], [0.0, 0.0, 0.0], atol=1e-12)

    def test_quarter_turn(self, quarter_turn):
        x, y = geometry_service.pose_apply(Pose2D(yaw=quarter_turn), (1.0, 0.0))
        assert x == pytest.approx(0.0, abs=1e-12)
        assert y == pytest.approx(1.0)

    def test_apply_many_matches_apply(self, rng):
        pose = Pose2D(x=0.3, y=0.1, yaw=-0.4)
        pts = rng.normal(size=(7, 2))
        many = geometry_service.pose_apply_many(pose, pts)
        for p, q in zip(pts, many):
            np.testing.assert_allclose(geometry_service.pose_apply(pose, tuple(p)), q, atol=1e-12)


class TestGridSpec:
    def test_desk_grid_shape(self, desk_grid):
        assert desk_grid.shape == (120, 240)

    def test_fidelity_grid_is_centimeter(self):
        spec = GridSpec.centimeter()
        assert spec.shape == (600, 1200)
        assert spec.cell_size == pytest.approx(0.01)

    def test_non_integral_extent_rejected(self):
        with pytest.raises(ValidationError):
            GridSpec(lateral_half_extent=1.0, rear_extent=1.03, cell_size=0.05)

    @pytest.mark.parametrize("field", ["cell_size", "rear_extent", "lateral_half_extent"])
    def test_non_positive_rejected(self, field):
        with pytest.raises(ValidationError):
            GridSpec(**{field: 0.0})

    def test_coarsened_keeps_extent(self, desk_grid):
        coarse = desk_grid.coarsened(2)
        assert coarse.shape == (60, 120)
        assert coarse.anchor == desk_grid.anchor

    def test_bev_grid_shape_must_match(self, tiny_grid):
        with pytest.raises(ValidationError):
            BevGrid(spec=tiny_grid, data=np.zeros((9, 10)))
        assert BevGrid.zeros(tiny_grid, channels=3).channels == 3


class TestCellIndexing:
    def test_first_cell_is_at_anchor_left_edge(self, tiny_grid):
        assert geometry_service.world_to_cell(tiny_grid, (-1.05, 0.45)) == (0, 0)

    def test_boundary_goes_to_larger_index(self, tiny_grid):
        # exactly one cell rearward of the anchor and on the centre line
        assert geometry_service.world_to_cell(tiny_grid, (-1.1, 0.0)) == (1, 5)

    @pytest.mark.parametrize("point", [(-0.9, 0.0), (-2.05, 0.0), (-1.5, 0.55), (-1.5, -0.51)])
    def test_outside_is_none(self, tiny_grid, point):
        assert geometry_service.world_to_cell(tiny_grid, point) is None

    def test_center_round_trip(self, desk_grid, rng):
        for row, col in zip(rng.integers(0, desk_grid.rows, 50), rng.integers(0, desk_grid.cols, 50)):
            center = geometry_service.cell_center(desk_grid, (int(row), int(col)))
            assert geometry_service.world_to_cell(desk_grid, center) == (row, col)

    def test_rotated_anchor_round_trip(self):
        spec = GridSpec(lateral_half_extent=1.0, rear_extent=2.0, cell_size=0.1, anchor=Pose2D(x=0.5, y=-0.2, yaw=0.6))
        for row in range(spec.rows):
            for col in range(0, spec.cols, 3):
                assert geometry_service.world_to_cell(spec, geometry_service.cell_center(spec, (row, col))) == (row, col)

    def test_cell_centers_match_cell_center(self, tiny_grid):
        centers = geometry_service.cell_centers(tiny_grid)
        np.testing.assert_allclose(centers[3, 7], geometry_service.cell_center(tiny_grid, (3, 7)), atol=1e-12)

    def test_continuous_index_puts_centers_on_integers(self, tiny_grid):
        coords = geometry_service.world_to_cell_continuous(tiny_grid, geometry_service.cell_centers(tiny_grid))
        rows, cols = np.mgrid[0:10, 0:10]
        np.testing.assert_allclose(coords[..., 0], rows, atol=1e-9)
        np.testing.assert_allclose(coords[..., 1], cols, atol=1e-9)

    def test_cell_center_out_of_range(self, tiny_grid):
        with pytest.raises(GeometryError):
            geometry_service.cell_center(tiny_grid, (10, 0))

    def test_rear_azimuth(self):
        assert geometry_service.rear_azimuth((0.0, 0.0), (-1.0, 0.0)) == pytest.approx(0.0)
        assert geometry_service.rear_azimuth((0.0, 0.0), (-1.0, 1.0)) == pytest.approx(math.pi / 4)
