import math

import numpy as np
import pytest

from bevfuse.errors import MetricsError
from bevfuse.models.geometry import BevGrid, GridSpec, Pose2D
from bevfuse.models.metrics import FrameEvaluation, InstanceScore, MetricsReport, ObstacleInstance
from bevfuse.services.metrics_service import metrics_service


# ── Helpers ──────────────────────────────────────────────────────────────

def _mask(spec: GridSpec, cells) -> BevGrid:
    data = np.zeros(spec.shape, dtype=np.uint8)
    for r, c in cells:
        data[r, c] = 1
    return BevGrid.labels(spec, data)


def _score(range_m: float, azimuth: float = 0.0, matched: bool = True, e: float = 0.1) -> InstanceScore:
    return InstanceScore(distance_D=e, norm_distance_ND=e / max(range_m, 1e-3), euclidean_E=e, matched=matched,
                         range_m=range_m, azimuth=azimuth)


# ── Fraction metrics ─────────────────────────────────────────────────────

class TestFractions:
    def test_three_cell_example(self, tiny_grid):
        pred = _mask(tiny_grid, [(0, 0), (0, 1), (0, 2)])
        gt = _mask(tiny_grid, [(0, 0), (0, 1), (5, 5)])
        assert metrics_service.confusion_counts(pred, gt) == (2, 1, 1)
        recall, dice, precision, iou = metrics_service.occupancy_metrics(pred, gt)
        assert recall == pytest.approx(2 / 3)
        assert precision == pytest.approx(2 / 3)
        assert dice == pytest.approx(0.6667, abs=1e-4)
        assert iou == pytest.approx(0.5)

    def test_both_empty_is_perfect(self, tiny_grid):
        empty = _mask(tiny_grid, [])
        assert metrics_service.occupancy_metrics(empty, empty) == (1.0, 1.0, 1.0, 1.0)

    def test_missed_everything(self, tiny_grid):
        recall, dice, precision, iou = metrics_service.occupancy_metrics(_mask(tiny_grid, []), _mask(tiny_grid, [(1, 1)]))
        assert recall == 0.0 and dice == 0.0 and iou == 0.0
        # no positive predictions at all
        assert precision == 1.0

    def test_dice_iou_identity(self):
        spec = GridSpec(lateral_half_extent=0.4, rear_extent=0.8, cell_size=0.1)
        rng = np.random.default_rng(3)
        for _ in range(1000):
            pred = BevGrid.labels(spec, rng.random(spec.shape) < 0.3)
            gt = BevGrid.labels(spec, rng.random(spec.shape) < 0.3)
            _, dice, _, iou = metrics_service.occupancy_metrics(pred, gt)
            assert dice == pytest.approx(2 * iou / (1 + iou), abs=1e-12)

    def test_spec_mismatch(self, tiny_grid, small_grid):
        with pytest.raises(MetricsError):
            metrics_service.confusion_counts(BevGrid.zeros(tiny_grid), BevGrid.zeros(small_grid))


# ── Instances and matching ───────────────────────────────────────────────

class TestInstances:
    def test_diagonal_cells_are_separate(self, tiny_grid):
        instances = metrics_service.extract_obstacles(_mask(tiny_grid, [(2, 2), (3, 3)]))
        assert len(instances) == 2

    def test_sorted_by_min_index(self, tiny_grid):
        instances = metrics_service.extract_obstacles(_mask(tiny_grid, [(7, 0), (7, 1), (1, 8), (2, 8)]))
        assert [inst.min_index for inst in instances] == [(1, 8), (7, 0)]

    def test_centroid_is_mean_of_centers(self, tiny_grid):
        inst = metrics_service.extract_obstacles(_mask(tiny_grid, [(0, 4), (0, 5)]))[0]
        assert inst.centroid[0] == pytest.approx(-1.05)
        assert inst.centroid[1] == pytest.approx(0.0, abs=1e-12)

    def test_disconnected_instance_rejected(self):
        with pytest.raises(ValueError):
            ObstacleInstance(cells=[(0, 0), (1, 1)], centroid=(0.0, 0.0))

    def test_greedy_takes_closest_pair_first(self):
        gt = [(0.0, 0.0), (1.0, 0.0)]
        pred = [(0.9, 0.0), (2.5, 0.0)]
        # gt 1 claims pred 0 first, leaving gt 0 the far prediction
        assert metrics_service.match_greedy(pred, gt) == {1: 0, 0: 1}

    def test_greedy_tie_prefers_smaller_gt_index(self):
        assert metrics_service.match_greedy([(0.0, 0.0)], [(1.0, 0.0), (-1.0, 0.0)]) == {0: 0}

    def test_more_gt_than_predictions(self):
        matches = metrics_service.match_greedy([(0.0, 0.1)], [(0.0, 0.0), (3.0, 3.0)])
        assert matches == {0: 0}


# ── Distance metrics ─────────────────────────────────────────────────────

class TestDistanceMetrics:
    def test_matched_pair(self):
        dm = metrics_service.distance_metrics([(1.0, 2.0)], [(1.0, 1.0)], Pose2D.identity(), 6.0)
        assert dm.euclidean_E == pytest.approx(1.0)
        assert dm.distance_D == pytest.approx(1.0)
        assert dm.norm_distance_ND == pytest.approx(0.70711, abs=1e-5)
        assert (dm.matched, dm.missed, dm.spurious) == (1, 0, 0)

    def test_missed_instance_scored_at_far_side(self):
        dm = metrics_service.distance_metrics([], [(0.0, 2.0)], Pose2D.identity(), 6.0)
        assert dm.euclidean_E == pytest.approx(8.0)
        assert dm.norm_distance_ND == pytest.approx(4.0)
        assert dm.distance_D == pytest.approx(8.0)
        assert dm.missed == 1

    def test_nd_cap(self):
        dm = metrics_service.distance_metrics([], [(0.0, 2.0)], Pose2D.identity(), 6.0, nd_cap=1.0)
        assert dm.norm_distance_ND == pytest.approx(1.0)

    def test_spurious_predictions_counted(self):
        dm = metrics_service.distance_metrics([(0.0, 1.0), (5.0, 5.0)], [(0.0, 1.0)], Pose2D.identity(), 6.0)
        assert dm.spurious == 1
        assert dm.euclidean_E == pytest.approx(0.0)

    def test_no_ground_truth(self):
        with pytest.raises(MetricsError):
            metrics_service.distance_metrics([(0.0, 1.0)], [], Pose2D.identity(), 6.0)

    def test_non_positive_camera_range(self):
        with pytest.raises(MetricsError):
            metrics_service.distance_metrics([], [(0.0, 1.0)], Pose2D.identity(), 0.0)

    def test_bev_plane_depth_axis_is_rearward(self, tiny_grid):
        lateral, rearward = metrics_service.to_bev_plane(tiny_grid, (-3.0, 0.5))
        assert lateral == pytest.approx(0.5)
        assert rearward == pytest.approx(2.0)


# ── Frames, aggregation and grouping ─────────────────────────────────────

class TestAggregation:
    def test_frame_without_grids_has_no_fractions(self, tiny_grid):
        inst = metrics_service.extract_obstacles(_mask(tiny_grid, [(4, 4)]))
        ev = metrics_service.evaluate_frame("f0", inst, inst, tiny_grid, 6.0)
        assert ev.report.recall is None
        assert ev.report.euclidean_E == pytest.approx(0.0)
        assert ev.report.matched == 1

    def test_frame_with_grids(self, tiny_grid):
        gt = _mask(tiny_grid, [(4, 4), (4, 5)])
        pred = _mask(tiny_grid, [(4, 5)])
        ev = metrics_service.evaluate_frame(
            "f1", metrics_service.extract_obstacles(gt), metrics_service.extract_obstacles(pred), tiny_grid, 6.0,
            pred=pred, gt=gt,
        )
        assert ev.report.recall == pytest.approx(0.5)
        assert ev.report.precision == pytest.approx(1.0)
        assert ev.report.euclidean_E == pytest.approx(0.05)

    def test_frame_without_ground_truth_counts_spurious(self, tiny_grid):
        pred = metrics_service.extract_obstacles(_mask(tiny_grid, [(1, 1), (6, 6)]))
        ev = metrics_service.evaluate_frame("f2", [], pred, tiny_grid, 6.0)
        assert ev.report.spurious == 2
        assert ev.report.distance_D is None

    def test_aggregate_pools_cells(self, tiny_grid):
        frames = []
        for pred_cells, gt_cells in [([(0, 0)], [(0, 0)]), ([(0, 0), (5, 5)], [(9, 9)])]:
            pred, gt = _mask(tiny_grid, pred_cells), _mask(tiny_grid, gt_cells)
            frames.append(
                metrics_service.evaluate_frame(
                    "f", metrics_service.extract_obstacles(gt), metrics_service.extract_obstacles(pred), tiny_grid,
                    6.0, pred=pred, gt=gt,
                )
            )
        report = metrics_service.aggregate(frames)
        assert (report.tp, report.fp, report.fn) == (1, 2, 1)
        assert report.recall == pytest.approx(0.5)
        assert report.frame == "aggregate"

    def test_range_bands(self):
        assert metrics_service.range_band(0.0) == "0-1.45"
        assert metrics_service.range_band(1.45) == "1.45-2.9"
        assert metrics_service.range_band(4.0) == "2.9-4.35"
        assert metrics_service.range_band(7.0) == "4.35-5.8"
        with pytest.raises(MetricsError):
            metrics_service.range_band(-0.1)

    def test_position_classes(self):
        assert metrics_service.position_class(math.radians(9.9)) == "central"
        assert metrics_service.position_class(math.radians(-30.0)) == "eccentric"
        assert metrics_service.position_class(math.radians(50.1)) == "corner"

    def test_speed_bands(self):
        assert metrics_service.speed_band(0.0) == "0-0.5"
        assert metrics_service.speed_band(2.0) == "0.5-3"
        assert metrics_service.speed_band(7.9) == "5-8"

    def test_grouped_by_range(self):
        frames = [FrameEvaluation(report=MetricsReport(frame="f"), instances=[_score(0.5), _score(3.0), _score(3.5)])]
        rows = {r.frame: r for r in metrics_service.grouped_reports(frames, "range")}
        assert rows["range:2.9-4.35"].matched == 2
        assert rows["range:0-1.45"].matched == 1
        assert rows["range:4.35-5.8"].euclidean_E is None

    def test_grouped_by_speed(self):
        frames = [
            FrameEvaluation(report=MetricsReport(frame="a", spurious=1), ego_speed_kmh=0.2),
            FrameEvaluation(report=MetricsReport(frame="b", spurious=2), ego_speed_kmh=4.0),
        ]
        rows = {r.frame: r for r in metrics_service.grouped_reports(frames, "speed")}
        assert rows["speed:0-0.5"].spurious == 1
        assert rows["speed:3-5"].spurious == 2
        assert rows["speed:5-8"].spurious == 0

    def test_unknown_grouping(self):
        with pytest.raises(MetricsError):
            metrics_service.grouped_reports([], "color")

    def test_report_row_blanks_missing_values(self):
        row = MetricsReport(frame="x").to_row()
        assert row["recall"] == ""
        assert list(row) == MetricsReport.columns()
