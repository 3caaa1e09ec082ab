import logging
from typing import List

import numpy as np

from bevfuse.errors import NNError
from bevfuse.models.camera import Calibration
from bevfuse.models.network import NetworkConfig
from bevfuse.services.nn import functional as F
from bevfuse.services.nn.bev import PolarHead, crop_rows_for_stride, polar_to_ortho, polar_to_ortho_matrix
from bevfuse.services.nn.layers import ConvBlock, Module
from bevfuse.services.nn.tensor import Tensor

logger = logging.getLogger(__name__)


def _halved(size: int) -> int:
    # output size of a 3x3 stride-2 convolution with padding 1
    return (size + 1) // 2


class CameraEncoder(Module):
    """Feature pyramid over the fisheye image, projected level by level to the BEV feature grid.

    Level 0 is the finest map and covers the farthest depth band. Coarser
    maps are upsampled and concatenated onto the next finer one before
    each level is reduced to `bev_channels`, cropped to its band's rows,
    mapped to polar bins and resampled onto the grid. The per-level BEV
    maps are summed.
    """

    def __init__(self, rng: np.random.Generator, config: NetworkConfig, calibration: Calibration):
        super().__init__()
        intrinsics = calibration.intrinsics()
        extrinsics = calibration.extrinsics()
        self.image_shape = (intrinsics.height, intrinsics.width)
        self.grid = config.feature_grid
        self.activation = config.activation

        heights, widths = [], []
        h, w = intrinsics.height, intrinsics.width
        for _ in range(config.levels):
            h, w = _halved(h), _halved(w)
            if h < 1 or w < 2:
                raise NNError(f"image {intrinsics.width}x{intrinsics.height} too small for {config.levels} levels")
            heights.append(h)
            widths.append(w)
        self.feature_shapes = list(zip(heights, widths))

        channels = config.encoder_channels
        self.down = [
            ConvBlock(rng, 1 if i == 0 else channels[i - 1], channels[i], config.activation, stride=2)
            for i in range(config.levels)
        ]
        merged = [0] * config.levels
        merged[-1] = channels[-1]
        for i in range(config.levels - 2, -1, -1):
            merged[i] = channels[i] + merged[i + 1]
        self.reduce = [ConvBlock(rng, merged[i], config.bev_channels, config.activation) for i in range(config.levels)]

        self.crops = []
        self.heads = []
        self.maps = []
        for i, band in enumerate(config.depth_bands):
            stride = intrinsics.width / widths[i]
            start, stop = crop_rows_for_stride(intrinsics, extrinsics, band, stride, heights[i])
            self.crops.append((start, stop))
            self.heads.append(PolarHead(rng, config.bev_channels, stop - start, config.depth_bins[i]))
            self.maps.append(
                polar_to_ortho_matrix(
                    intrinsics, extrinsics, band, config.depth_bins[i], widths[i], stride, self.grid
                )
            )
            logger.debug(
                "📐 level %d: %dx%d features, rows %d-%d, band %.1f-%.1f m",
                i, heights[i], widths[i], start, stop, band.z_min, band.z_max,
            )

    def pyramid(self, image: Tensor) -> List[Tensor]:
        """Top-down merged feature maps, finest first"""
        feats = []
        x = image
        for block in self.down:
            x = block(x)
            feats.append(x)
        merged: List[Tensor] = [feats[-1]]
        for f in reversed(feats[:-1]):
            up = F.upsample2x(merged[0])
            if up.shape[2:] != f.shape[2:]:
                up = up[:, :, : f.shape[2], : f.shape[3]]
            merged.insert(0, F.concat([f, up], axis=1))
        return merged

    def __call__(self, image: Tensor) -> Tensor:
        if image.ndim != 4 or image.shape[1] != 1 or tuple(image.shape[2:]) != self.image_shape:
            raise NNError(f"camera input must be (N, 1, {self.image_shape[0]}, {self.image_shape[1]}), got {image.shape}")
        bev = None
        for level, feats in enumerate(self.pyramid(image)):
            reduced = self.reduce[level](feats)
            start, stop = self.crops[level]
            polar = self.heads[level](F.crop_rows(reduced, start, stop))
            ortho = polar_to_ortho(polar, self.maps[level], self.grid)
            bev = ortho if bev is None else bev + ortho
        return bev


class UltrasonicEncoder(Module):
    """Ultrasonic amplitude grid at logit resolution -> features at half resolution"""

    def __init__(self, rng: np.random.Generator, config: NetworkConfig, hidden: int = 8):
        super().__init__()
        self.grid = config.grid
        self.stem = ConvBlock(rng, 1, hidden, config.activation)
        self.down = ConvBlock(rng, hidden, config.uls_channels, config.activation, stride=2)

    def __call__(self, grid: Tensor) -> Tensor:
        if grid.ndim != 4 or grid.shape[1] != 1 or tuple(grid.shape[2:]) != self.grid.shape:
            raise NNError(f"ultrasonic input must be (N, 1, {self.grid.rows}, {self.grid.cols}), got {grid.shape}")
        return self.down(self.stem(grid))
