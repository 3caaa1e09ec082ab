import logging
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from bevfuse.config import thread_count
from bevfuse.errors import NNError
from bevfuse.models.camera import Calibration
from bevfuse.models.geometry import GridSpec
from bevfuse.models.metrics import ObstacleInstance
from bevfuse.models.network import LossKind, Mode
from bevfuse.models.run import RunConfig
from bevfuse.services.geometry_service import geometry_service
from bevfuse.services.mapping_service import mapping_service
from bevfuse.services.nn.checkpoint import save_checkpoint
from bevfuse.services.nn.losses import loss_fn
from bevfuse.services.nn.model import BevFuseNet
from bevfuse.services.nn.optim import Adam
from bevfuse.services.sim_service import sim_service
from bevfuse.services.storage_service import storage_service
from bevfuse.services.sync_service import sync_service

logger = logging.getLogger(__name__)

# Gaussian width of the centroid heatmap target, in cells
HEATMAP_SIGMA_CELLS = 1.0
# Amplitude compression applied to the ultrasonic input grid
ULS_INPUT_GAIN = 10.0

LOSS_LOG_COLUMNS = ["epoch", "loss", "tau"]


class FrameSample(BaseModel):
    """Network-ready arrays for one camera frame"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    scene_id: str
    frame: int = Field(..., ge=0)
    image: np.ndarray = Field(..., description="(1, H, W) normalised intensities")
    uls: np.ndarray = Field(..., description="(1, rows, cols) compressed amplitudes on the network grid")
    labels: np.ndarray = Field(..., description="(rows, cols) 0/1 ground truth on the network grid")
    instances: List[ObstacleInstance] = Field(default_factory=list)
    ego_speed_kmh: float = 0.0

    @property
    def name(self) -> str:
        return f"{self.scene_id}/{self.frame:06d}"


class TrainingResult(BaseModel):
    losses: List[float]
    checkpoint: Path
    loss_log: Path


class TrainingService:
    """Dataset loading and target construction for the network"""

    @staticmethod
    def normalize_image(image: np.ndarray) -> np.ndarray:
        return np.asarray(image, dtype=np.float64)[None] / 255.0 - 0.5

    @staticmethod
    def normalize_uls(amplitudes: np.ndarray) -> np.ndarray:
        return np.log1p(ULS_INPUT_GAIN * np.clip(np.asarray(amplitudes, dtype=np.float64), 0.0, None))[None]

    @staticmethod
    def one_hot(labels: np.ndarray, classes: int) -> np.ndarray:
        """(rows, cols) -> (classes, rows, cols)"""
        labels = np.asarray(labels, dtype=np.int64)
        return (np.arange(classes)[:, None, None] == labels[None]).astype(np.float64)

    @staticmethod
    def centroid_heatmap(spec: GridSpec, instances: Sequence[ObstacleInstance], sigma: float = HEATMAP_SIGMA_CELLS) -> np.ndarray:
        """Peak 1 at every instance centroid, Gaussian falloff, max over instances"""
        rows, cols = np.mgrid[0 : spec.rows, 0 : spec.cols]
        heat = np.zeros(spec.shape)
        if not instances:
            return heat
        centers = geometry_service.world_to_cell_continuous(spec, np.array([inst.centroid for inst in instances]))
        for r, c in centers:
            heat = np.maximum(heat, np.exp(-0.5 * ((rows - r) ** 2 + (cols - c) ** 2) / (sigma * sigma)))
        return heat

    @staticmethod
    def targets(samples: Sequence[FrameSample], mode: Mode, spec: GridSpec, classes: int) -> np.ndarray:
        if mode == Mode.ULS:
            return np.stack([TrainingService.centroid_heatmap(spec, s.instances)[None] for s in samples])
        return np.stack([TrainingService.one_hot(s.labels, classes) for s in samples])

    @staticmethod
    def load_scene(scene_dir: Path, config: RunConfig) -> List[FrameSample]:
        spec = config.network.grid
        scene = storage_service.load_scene(scene_dir)
        index = storage_service.load_scene_index(scene_dir)
        grids = mapping_service.scene_grids(scene_dir, spec, scene.layout)
        samples = []
        for k in range(0, len(grids), config.trainer.frame_stride):
            camera_ts = index.camera_ts[k]
            gt, instances = sim_service.rasterize_gt(scene, camera_ts, spec)
            image = storage_service.load_pgm(Path(scene_dir) / "images" / f"{k:06d}.pgm")
            samples.append(
                FrameSample(
                    scene_id=scene.scene_id,
                    frame=k,
                    image=TrainingService.normalize_image(image),
                    uls=TrainingService.normalize_uls(grids[k].data[:, :, 0]),
                    labels=gt.data[:, :, 0].astype(np.uint8),
                    instances=instances,
                    ego_speed_kmh=sync_service.ego_speed_kmh(scene.ego_track, camera_ts),
                )
            )
        return samples

    @staticmethod
    def load_split(config: RunConfig, split: str, dataset_root: Optional[Path] = None) -> List[FrameSample]:
        """Frames of every scene in a split, in scene order"""
        scene_dirs = storage_service.scene_dirs(dataset_root or config.dataset_root, split)
        with ThreadPoolExecutor(max_workers=thread_count()) as executor:
            per_scene = list(executor.map(lambda d: TrainingService.load_scene(d, config), scene_dirs))
        samples = [s for scene in per_scene for s in scene]
        logger.info("📂 %s: %d scenes, %d frames", split, len(scene_dirs), len(samples))
        return samples

    @staticmethod
    def batch_inputs(samples: Sequence[FrameSample]) -> Tuple[np.ndarray, np.ndarray]:
        return np.stack([s.image for s in samples]), np.stack([s.uls for s in samples])


class Trainer:
    """Adam training with Gumbel temperature annealing and a CSV loss log"""

    def __init__(self, config: RunConfig, calibration: Calibration, out_dir: Path):
        self.config = config
        self.out_dir = Path(out_dir)
        self.net = BevFuseNet(config.network, calibration, seed=config.trainer.seed)
        self.loss_kind: LossKind = config.trainer.loss_for(config.network.mode)
        self.loss = loss_fn(self.loss_kind)
        t = config.trainer
        self.optimizer = Adam(self.net.parameters(), t.lr, t.beta1, t.beta2, t.eps)

    def tau_at(self, epoch: int) -> float:
        t = self.config.trainer
        return max(self.config.network.tau * t.tau_decay**epoch, t.tau_min)

    def train_step(self, batch: Sequence[FrameSample], rng: np.random.Generator) -> float:
        net_cfg = self.config.network
        images, uls = training_service.batch_inputs(batch)
        target = training_service.targets(batch, net_cfg.mode, net_cfg.grid, net_cfg.output_channels)
        self.optimizer.zero_grad()
        logits = self.net(images, uls, rng=rng)
        loss = self.loss(logits, target)
        if not math.isfinite(float(loss.data)):
            raise NNError("training diverged (non-finite loss)")
        loss.backward()
        self.optimizer.step()
        return float(loss.data)

    def fit(self, samples: List[FrameSample]) -> TrainingResult:
        if not samples:
            raise NNError("no training frames")
        t = self.config.trainer
        rng = np.random.default_rng(t.seed)
        self.net.train()
        rows, losses = [], []
        for epoch in range(t.epochs):
            tau = self.tau_at(epoch)
            self.net.set_tau(tau)
            order = rng.permutation(len(samples))
            batch_losses = []
            for start in range(0, len(order), t.batch_size):
                batch = [samples[i] for i in order[start : start + t.batch_size]]
                batch_losses.append(self.train_step(batch, rng))
            epoch_loss = float(np.mean(batch_losses))
            losses.append(epoch_loss)
            rows.append({"epoch": epoch, "loss": repr(epoch_loss), "tau": repr(tau)})
            logger.info("🔥 epoch %d/%d loss %.6f tau %.3f", epoch + 1, t.epochs, epoch_loss, tau)

        mode = self.config.network.mode.value
        checkpoint = save_checkpoint(self.out_dir / f"{mode}.bvf", self.net.state_dict())
        loss_log = storage_service.write_csv(self.out_dir / f"{mode}_loss.csv", LOSS_LOG_COLUMNS, rows)
        logger.info("✅ checkpoint written to %s", checkpoint)
        return TrainingResult(losses=losses, checkpoint=checkpoint, loss_log=loss_log)


# Create singleton instance
training_service = TrainingService()
