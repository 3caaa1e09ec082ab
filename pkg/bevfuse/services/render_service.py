import logging
from pathlib import Path
from typing import List

import numpy as np

from bevfuse.errors import RenderError
from bevfuse.services.storage_service import storage_service

logger = logging.getLogger(__name__)

RENDER_TYPES = ("grid", "mask", "overlay")


class RenderService:
    """Grayscale grids, binary masks and prediction/ground-truth overlays"""

    @staticmethod
    def amplitude_image(grid: np.ndarray) -> np.ndarray:
        """Min maps to 0, max to 255; a constant grid renders black"""
        data = np.asarray(grid, dtype=np.float64)
        if data.ndim == 3:
            data = data[:, :, 0]
        if data.ndim != 2:
            raise RenderError(f"amplitude grid must be 2-D, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise RenderError("amplitude grid contains non-finite values")
        lo, hi = float(data.min()), float(data.max())
        if hi <= lo:
            return np.zeros(data.shape, dtype=np.uint8)
        return np.round((data - lo) / (hi - lo) * 255.0).astype(np.uint8)

    @staticmethod
    def mask_image(mask: np.ndarray) -> np.ndarray:
        return np.where(np.asarray(mask) > 0, 255, 0).astype(np.uint8)

    @staticmethod
    def overlay_image(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
        """Red = prediction, green = ground truth, yellow where both"""
        pred, gt = np.asarray(pred), np.asarray(gt)
        if pred.shape != gt.shape:
            raise RenderError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
        image = np.zeros(pred.shape + (3,), dtype=np.uint8)
        image[..., 0] = RenderService.mask_image(pred)
        image[..., 1] = RenderService.mask_image(gt)
        return image

    @staticmethod
    def load_raster(path: Path) -> np.ndarray:
        path = Path(path)
        if path.suffix == ".npy":
            return storage_service.load_float_grid(path)
        if path.suffix == ".pgm":
            return storage_service.load_pgm(path)
        raise RenderError(f"cannot read {path}: expected a .npy or .pgm file")

    @staticmethod
    def render(kind: str, inputs: List[Path], out: Path) -> Path:
        if kind not in RENDER_TYPES:
            raise RenderError(f"unknown input type '{kind}', expected one of {', '.join(RENDER_TYPES)}")
        expected = 2 if kind == "overlay" else 1
        if len(inputs) != expected:
            raise RenderError(f"'{kind}' takes {expected} input file(s), got {len(inputs)}")
        rasters = [RenderService.load_raster(p) for p in inputs]
        if kind == "grid":
            path = storage_service.save_pgm(out, RenderService.amplitude_image(rasters[0]))
        elif kind == "mask":
            path = storage_service.save_pgm(out, RenderService.mask_image(rasters[0]))
        else:
            path = storage_service.save_ppm(out, RenderService.overlay_image(rasters[0], rasters[1]))
        logger.info("🖼️  %s rendered to %s", kind, path)
        return path


# Create singleton instance
render_service = RenderService()
