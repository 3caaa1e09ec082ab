import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from bevfuse.errors import MetricsError
from bevfuse.models.geometry import BevGrid, GridSpec, Pose2D
from bevfuse.models.metrics import (
    DistanceMetrics,
    FrameEvaluation,
    InstanceScore,
    MetricsReport,
    ObstacleInstance,
)
from bevfuse.services.geometry_service import geometry_service

# 4-connectivity
_FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])

RANGE_BANDS: List[Tuple[str, float, float]] = [
    ("0-1.45", 0.0, 1.45),
    ("1.45-2.9", 1.45, 2.9),
    ("2.9-4.35", 2.9, 4.35),
    ("4.35-5.8", 4.35, math.inf),
]
SPEED_BANDS: List[Tuple[str, float, float]] = [
    ("0-0.5", 0.0, 0.5),
    ("0.5-3", 0.5, 3.0),
    ("3-5", 3.0, 5.0),
    ("5-8", 5.0, math.inf),
]
CENTRAL_MAX_DEG = 10.0
CORNER_MIN_DEG = 50.0


def _ratio(num: float, den: float) -> float:
    # vacuous 0/0 counts as perfect
    return 1.0 if den == 0 else num / den


class MetricsService:
    """Occupancy and obstacle-localisation metrics"""

    @staticmethod
    def confusion_counts(pred: BevGrid, gt: BevGrid) -> Tuple[int, int, int]:
        if pred.spec != gt.spec:
            raise MetricsError("prediction and ground truth grids have different specs")
        p, t = pred.mask(), gt.mask()
        tp = int(np.count_nonzero(p & t))
        fp = int(np.count_nonzero(p & ~t))
        fn = int(np.count_nonzero(~p & t))
        return tp, fp, fn

    @staticmethod
    def fractions(tp: int, fp: int, fn: int) -> Tuple[float, float, float, float]:
        """(recall, dice, precision, iou)"""
        return (
            _ratio(tp, tp + fn),
            _ratio(2 * tp, 2 * tp + fp + fn),
            _ratio(tp, tp + fp),
            _ratio(tp, tp + fp + fn),
        )

    @staticmethod
    def occupancy_metrics(pred: BevGrid, gt: BevGrid) -> Tuple[float, float, float, float]:
        return MetricsService.fractions(*MetricsService.confusion_counts(pred, gt))

    @staticmethod
    def extract_obstacles(mask: BevGrid) -> List[ObstacleInstance]:
        labels, count = ndimage.label(mask.mask(), structure=_FOUR_CONNECTED)
        instances = []
        for label in range(1, count + 1):
            rows, cols = np.nonzero(labels == label)
            cells = sorted(zip(rows.tolist(), cols.tolist()))
            centers = np.array([geometry_service.cell_center(mask.spec, c) for c in cells])
            centroid = centers.mean(axis=0)
            instances.append(ObstacleInstance(cells=cells, centroid=(float(centroid[0]), float(centroid[1]))))
        instances.sort(key=lambda inst: inst.min_index)
        return instances

    @staticmethod
    def match_greedy(pred: Sequence[Tuple[float, float]], gt: Sequence[Tuple[float, float]]) -> Dict[int, int]:
        """gt index -> pred index, by ascending centroid distance; smaller gt index wins ties"""
        candidates = sorted(
            (math.hypot(g[0] - p[0], g[1] - p[1]), i, j) for i, g in enumerate(gt) for j, p in enumerate(pred)
        )
        taken_gt, taken_pred, matches = set(), set(), {}
        for _, i, j in candidates:
            if i in taken_gt or j in taken_pred:
                continue
            matches[i] = j
            taken_gt.add(i)
            taken_pred.add(j)
        return matches

    @staticmethod
    def distance_metrics(
        pred: Sequence[Tuple[float, float]],
        gt: Sequence[Tuple[float, float]],
        ego: Pose2D,
        camera_range: float,
        nd_cap: Optional[float] = None,
    ) -> DistanceMetrics:
        """Centroid errors in a planar frame whose second axis is the depth axis.

        Unmatched ground truth is scored against the farthest point of the
        camera-range disk, i.e. at distance r + camera_range along the ray
        from the ego through the obstacle.
        """
        if camera_range <= 0:
            raise MetricsError("camera_range must be positive")
        if not gt:
            raise MetricsError("no ground-truth instances; distance metrics are undefined")

        matches = MetricsService.match_greedy(pred, gt)
        scores = []
        for i, (tx, ty) in enumerate(gt):
            rx, ry = tx - ego.x, ty - ego.y
            r = math.hypot(rx, ry)
            if i in matches:
                px, py = pred[matches[i]]
            else:
                # farthest point of the disk, opposite the obstacle
                ux, uy = (rx / r, ry / r) if r > 0 else (0.0, 1.0)
                px, py = ego.x - camera_range * ux, ego.y - camera_range * uy
            e = math.hypot(tx - px, ty - py)
            nd = e / max(r, 1e-12)
            if nd_cap is not None:
                nd = min(nd, nd_cap)
            scores.append(
                InstanceScore(
                    distance_D=abs(ty - py),
                    norm_distance_ND=nd,
                    euclidean_E=e,
                    matched=i in matches,
                    range_m=r,
                    azimuth=math.atan2(rx, ry),
                )
            )
        n = len(scores)
        return DistanceMetrics(
            distance_D=sum(s.distance_D for s in scores) / n,
            norm_distance_ND=sum(s.norm_distance_ND for s in scores) / n,
            euclidean_E=sum(s.euclidean_E for s in scores) / n,
            matched=len(matches),
            missed=n - len(matches),
            spurious=len(pred) - len(matches),
            per_instance=scores,
        )

    @staticmethod
    def to_bev_plane(spec: GridSpec, point: Tuple[float, float]) -> Tuple[float, float]:
        """Vehicle point -> (lateral, rearward) about the grid anchor; rearward is the depth axis"""
        lx, ly = geometry_service.pose_apply(geometry_service.pose_inverse(spec.anchor), point)
        return (ly, -lx)

    @staticmethod
    def evaluate_frame(
        frame: str,
        gt_instances: List[ObstacleInstance],
        pred_instances: List[ObstacleInstance],
        spec: GridSpec,
        camera_range: float,
        pred: Optional[BevGrid] = None,
        gt: Optional[BevGrid] = None,
        ego_speed_kmh: float = 0.0,
        nd_cap: Optional[float] = None,
    ) -> FrameEvaluation:
        """One report row; fraction metrics only when both label grids are given"""
        fields: Dict[str, object] = {"frame": frame}
        if pred is not None and gt is not None:
            tp, fp, fn = MetricsService.confusion_counts(pred, gt)
            recall, dice, precision, iou = MetricsService.fractions(tp, fp, fn)
            fields.update(tp=tp, fp=fp, fn=fn, recall=recall, dice=dice, precision=precision, iou=iou)

        instances: List[InstanceScore] = []
        if gt_instances:
            dm = MetricsService.distance_metrics(
                [MetricsService.to_bev_plane(spec, p.centroid) for p in pred_instances],
                [MetricsService.to_bev_plane(spec, g.centroid) for g in gt_instances],
                Pose2D.identity(),
                camera_range,
                nd_cap=nd_cap,
            )
            instances = dm.per_instance
            fields.update(
                distance_D=dm.distance_D,
                norm_distance_ND=dm.norm_distance_ND,
                euclidean_E=dm.euclidean_E,
                matched=dm.matched,
                missed=dm.missed,
                spurious=dm.spurious,
            )
        else:
            fields["spurious"] = len(pred_instances)
        return FrameEvaluation(report=MetricsReport(**fields), instances=instances, ego_speed_kmh=ego_speed_kmh)

    @staticmethod
    def _pooled_report(label: str, frames: List[FrameEvaluation], instances: List[InstanceScore]) -> MetricsReport:
        fields: Dict[str, object] = {"frame": label}
        with_fractions = [f for f in frames if f.report.recall is not None]
        if with_fractions:
            tp = sum(f.report.tp for f in with_fractions)
            fp = sum(f.report.fp for f in with_fractions)
            fn = sum(f.report.fn for f in with_fractions)
            recall, dice, precision, iou = MetricsService.fractions(tp, fp, fn)
            fields.update(tp=tp, fp=fp, fn=fn, recall=recall, dice=dice, precision=precision, iou=iou)
        if instances:
            n = len(instances)
            fields.update(
                distance_D=sum(s.distance_D for s in instances) / n,
                norm_distance_ND=sum(s.norm_distance_ND for s in instances) / n,
                euclidean_E=sum(s.euclidean_E for s in instances) / n,
                matched=sum(1 for s in instances if s.matched),
                missed=sum(1 for s in instances if not s.matched),
            )
        fields["spurious"] = sum(f.report.spurious for f in frames)
        return MetricsReport(**fields)

    @staticmethod
    def aggregate(frames: List[FrameEvaluation], label: str = "aggregate") -> MetricsReport:
        """Cell counts pooled over frames; distance metrics pooled over all instances"""
        return MetricsService._pooled_report(label, frames, [s for f in frames for s in f.instances])

    # Groupings
    @staticmethod
    def range_band(range_m: float) -> str:
        for name, lo, hi in RANGE_BANDS:
            if lo <= range_m < hi:
                return name
        raise MetricsError(f"negative range {range_m}")

    @staticmethod
    def position_class(azimuth: float) -> str:
        deg = abs(math.degrees(azimuth))
        if deg <= CENTRAL_MAX_DEG:
            return "central"
        if deg >= CORNER_MIN_DEG:
            return "corner"
        return "eccentric"

    @staticmethod
    def speed_band(speed_kmh: float) -> str:
        for name, lo, hi in SPEED_BANDS:
            if lo <= speed_kmh < hi:
                return name
        raise MetricsError(f"negative speed {speed_kmh}")

    @staticmethod
    def group_instances(frames: List[FrameEvaluation], by: str) -> Dict[str, List[InstanceScore]]:
        if by == "range":
            key, order = MetricsService.range_band, [b[0] for b in RANGE_BANDS]
        elif by == "position":
            key, order = None, ["central", "eccentric", "corner"]
        else:
            raise MetricsError(f"unknown instance grouping '{by}'")
        groups: Dict[str, List[InstanceScore]] = {name: [] for name in order}
        for f in frames:
            for s in f.instances:
                name = key(s.range_m) if key else MetricsService.position_class(s.azimuth)
                groups[name].append(s)
        return groups

    @staticmethod
    def grouped_reports(frames: List[FrameEvaluation], by: str) -> List[MetricsReport]:
        """One pooled row per group; instance groupings carry only distance metrics"""
        if by == "speed":
            reports = []
            for name, _, _ in SPEED_BANDS:
                members = [f for f in frames if MetricsService.speed_band(f.ego_speed_kmh) == name]
                reports.append(MetricsService.aggregate(members, label=f"speed:{name}"))
            return reports
        groups = MetricsService.group_instances(frames, by)
        return [MetricsService._pooled_report(f"{by}:{name}", [], members) for name, members in groups.items()]


# Create singleton instance
metrics_service = MetricsService()
