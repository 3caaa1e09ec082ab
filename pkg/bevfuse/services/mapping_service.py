import logging
from pathlib import Path
from typing import List, Optional

import numpy as np

from bevfuse.errors import UltrasonicError
from bevfuse.models.geometry import BevGrid, GridSpec, Pose2D
from bevfuse.models.sync import FramePair
from bevfuse.models.ultrasonic import SensorLayout, UltrasonicFrame
from bevfuse.services.storage_service import storage_service
from bevfuse.services.sync_service import sync_service
from bevfuse.services.ultrasonic_service import ultrasonic_service

logger = logging.getLogger(__name__)


class MappingService:
    """Ultrasonic BEV maps aligned to camera frames"""

    @staticmethod
    def map_frame(frame: UltrasonicFrame, layout: SensorLayout, spec: GridSpec, pose_delta: Pose2D) -> BevGrid:
        """Amplitude grid at the ultrasonic timestamp, warped to the paired camera time.

        pose_delta is the ego displacement from ultrasonic to camera time, as stored on a FramePair.
        """
        grid = ultrasonic_service.fill_grid(frame, layout, spec)
        return sync_service.compensate_ego_motion(grid, sync_service.content_motion(pose_delta))

    @staticmethod
    def scene_pairs(scene_dir: Path) -> List[FramePair]:
        index = storage_service.load_scene_index(scene_dir)
        return [FramePair.from_dict(p) for p in index.pairs]

    @staticmethod
    def scene_grids(scene_dir: Path, spec: GridSpec, layout: Optional[SensorLayout] = None) -> List[BevGrid]:
        """One compensated grid per camera frame of a generated scene"""
        scene_dir = Path(scene_dir)
        layout = layout or storage_service.load_layout(scene_dir / "layout.json")
        frames = storage_service.read_uls_frames(scene_dir / "uls.jsonl")
        grids = []
        for pair in MappingService.scene_pairs(scene_dir):
            if pair.uls_index >= len(frames):
                raise UltrasonicError(f"{scene_dir}: pair refers to ultrasonic frame {pair.uls_index} of {len(frames)}")
            grids.append(MappingService.map_frame(frames[pair.uls_index], layout, spec, pair.pose_delta))
        return grids

    @staticmethod
    def normalized(grid: BevGrid) -> np.ndarray:
        """Per-frame min/max stretch of channel 0 to 0..255"""
        data = grid.data[:, :, 0].astype(np.float64)
        lo, hi = float(data.min()), float(data.max())
        if hi <= lo:
            return np.zeros(data.shape, dtype=np.uint8)
        return np.round((data - lo) / (hi - lo) * 255.0).astype(np.uint8)

    @staticmethod
    def map_scene(scene_dir: Path, out_dir: Path, spec: GridSpec) -> int:
        """Write NNNNNN.npy (exact) and NNNNNN.pgm (viewing) per camera frame"""
        grids = MappingService.scene_grids(scene_dir, spec)
        out_dir = Path(out_dir)
        for k, grid in enumerate(grids):
            storage_service.save_float_grid(out_dir / f"{k:06d}.npy", grid.data[:, :, 0])
            storage_service.save_pgm(out_dir / f"{k:06d}.pgm", MappingService.normalized(grid))
        logger.info("🔊 %s: %d ultrasonic maps written to %s", Path(scene_dir).name, len(grids), out_dir)
        return len(grids)


# Create singleton instance
mapping_service = MappingService()
