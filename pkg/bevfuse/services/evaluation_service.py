import logging
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np
from pydantic import BaseModel
from scipy import ndimage

from bevfuse.models.camera import Calibration
from bevfuse.models.geometry import BevGrid, GridSpec
from bevfuse.models.metrics import FrameEvaluation, MetricsReport, ObstacleInstance
from bevfuse.models.network import Mode
from bevfuse.models.run import RunConfig
from bevfuse.services.geometry_service import geometry_service
from bevfuse.services.metrics_service import metrics_service
from bevfuse.services.nn.checkpoint import load_checkpoint
from bevfuse.services.nn.model import BevFuseNet
from bevfuse.services.storage_service import storage_service
from bevfuse.services.training_service import FrameSample, training_service

logger = logging.getLogger(__name__)

# Heatmap peaks below this value are not reported as obstacles
PEAK_THRESHOLD = 0.5
GROUPINGS = ("range", "position", "speed")


class EvaluationResult(BaseModel):
    frames: List[FrameEvaluation]
    aggregate: MetricsReport
    reports: Dict[str, Path]


class EvaluationService:
    """Checkpoint inference and metric reports"""

    @staticmethod
    def load_network(config: RunConfig, calibration: Calibration, checkpoint: Path) -> BevFuseNet:
        net = BevFuseNet(config.network, calibration, seed=config.trainer.seed)
        net.load_state_dict(load_checkpoint(checkpoint))
        net.set_hard_dilation(config.network.hard_dilation)
        return net.eval()

    @staticmethod
    def predict(net: BevFuseNet, samples: Sequence[FrameSample], batch_size: int) -> List[np.ndarray]:
        """Network outputs (channels, rows, cols) per sample"""
        outputs = []
        for start in range(0, len(samples), batch_size):
            images, uls = training_service.batch_inputs(samples[start : start + batch_size])
            outputs.extend(net(images, uls).data)
        return outputs

    @staticmethod
    def labels_from_logits(logits: np.ndarray) -> np.ndarray:
        """Obstacle where class 1 wins the argmax"""
        return (np.argmax(logits, axis=0) == 1).astype(np.uint8)

    @staticmethod
    def heatmap_peaks(heat: np.ndarray, spec: GridSpec, threshold: float = PEAK_THRESHOLD) -> List[ObstacleInstance]:
        """3x3 local maxima at or above the threshold, one single-cell instance each"""
        peaks = (heat >= threshold) & (heat == ndimage.maximum_filter(heat, size=3, mode="constant", cval=-np.inf))
        instances = []
        for r, c in zip(*np.nonzero(peaks)):
            center = geometry_service.cell_center(spec, (int(r), int(c)))
            instances.append(ObstacleInstance(cells=[(int(r), int(c))], centroid=center))
        return instances

    @staticmethod
    def evaluate_sample(sample: FrameSample, output: np.ndarray, mode: Mode, spec: GridSpec, camera_range: float) -> FrameEvaluation:
        gt = BevGrid.labels(spec, sample.labels)
        if mode == Mode.ULS:
            return metrics_service.evaluate_frame(
                sample.name,
                sample.instances,
                EvaluationService.heatmap_peaks(output[0], spec),
                spec,
                camera_range,
                ego_speed_kmh=sample.ego_speed_kmh,
            )
        pred = BevGrid.labels(spec, EvaluationService.labels_from_logits(output))
        return metrics_service.evaluate_frame(
            sample.name,
            sample.instances,
            metrics_service.extract_obstacles(pred),
            spec,
            camera_range,
            pred=pred,
            gt=gt,
            ego_speed_kmh=sample.ego_speed_kmh,
        )

    @staticmethod
    def write_reports(frames: List[FrameEvaluation], out_dir: Path) -> Dict[str, Path]:
        """report.csv (frames + aggregate row) and one CSV per grouping"""
        columns = MetricsReport.columns()
        aggregate = metrics_service.aggregate(frames)
        paths = {
            "report": storage_service.write_csv(
                out_dir / "report.csv", columns, [f.report.to_row() for f in frames] + [aggregate.to_row()]
            )
        }
        for by in GROUPINGS:
            rows = [r.to_row() for r in metrics_service.grouped_reports(frames, by)]
            paths[by] = storage_service.write_csv(out_dir / f"report_by_{by}.csv", columns, rows)
        return paths

    @staticmethod
    def evaluate(config: RunConfig, calibration: Calibration, checkpoint: Path, split: str, out_dir: Path) -> EvaluationResult:
        net = EvaluationService.load_network(config, calibration, checkpoint)
        samples = training_service.load_split(config, split)
        outputs = EvaluationService.predict(net, samples, config.trainer.batch_size)
        spec = config.network.grid
        frames = [
            EvaluationService.evaluate_sample(s, o, config.network.mode, spec, config.camera_range)
            for s, o in zip(samples, outputs)
        ]
        paths = EvaluationService.write_reports(frames, Path(out_dir))
        aggregate = metrics_service.aggregate(frames)
        logger.info("✅ evaluated %d %s frames, report at %s", len(frames), split, paths["report"])
        return EvaluationResult(frames=frames, aggregate=aggregate, reports=paths)


# Create singleton instance
evaluation_service = EvaluationService()
