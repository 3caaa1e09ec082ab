import logging
from typing import List, Optional

import numpy as np

from bevfuse.errors import NNError
from bevfuse.models.camera import Calibration
from bevfuse.models.network import FusionStrategy, Mode, NetworkConfig
from bevfuse.services.nn.camfuse import CaMFuse, ConcatFusion
from bevfuse.services.nn.decoder import Decoder
from bevfuse.services.nn.encoder import CameraEncoder, UltrasonicEncoder
from bevfuse.services.nn.functional import DilationField
from bevfuse.services.nn.layers import Module
from bevfuse.services.nn.tensor import Tensor

logger = logging.getLogger(__name__)


class BevFuseNet(Module):
    """Camera and/or ultrasonic inputs -> BEV logits on the network grid.

    multimodal: camera encoder + ultrasonic encoder -> fusion -> decoder
    visible:    camera encoder -> decoder
    uls:        ultrasonic encoder -> decoder (one heatmap channel)
    """

    def __init__(self, config: NetworkConfig, calibration: Optional[Calibration] = None, seed: int = 0):
        super().__init__()
        self.config = config
        rng = np.random.default_rng(seed)
        self.camera: Optional[CameraEncoder] = None
        self.ultrasonic: Optional[UltrasonicEncoder] = None
        self.fusion: Optional[ConcatFusion] = None

        if config.uses_camera:
            if calibration is None:
                raise NNError(f"{config.mode.value} mode needs a camera calibration")
            self.camera = CameraEncoder(rng, config, calibration)
        if config.uses_ultrasonic:
            self.ultrasonic = UltrasonicEncoder(rng, config)

        if config.mode == Mode.MULTIMODAL:
            if config.fusion == FusionStrategy.CAMFUSE:
                self.fusion = CaMFuse(rng, config)
            else:
                self.fusion = ConcatFusion(rng, config.bev_channels, config.uls_channels, config.fused_channels)
            decoder_in = config.fused_channels
        elif config.mode == Mode.VISIBLE:
            decoder_in = config.bev_channels
        else:
            decoder_in = config.uls_channels
        self.decoder = Decoder(rng, decoder_in, config.output_channels, config.decoder_channels, config.activation)
        logger.info(
            "✅ %s network: %d parameters", config.mode.value, sum(p.data.size for p in self.parameters())
        )

    @property
    def dilation_fields(self) -> List[DilationField]:
        return list(self.fusion.fields) if self.fusion is not None else []

    def set_tau(self, tau: float) -> None:
        if isinstance(self.fusion, CaMFuse):
            self.fusion.set_tau(tau)

    def set_hard_dilation(self, hard: bool) -> None:
        if isinstance(self.fusion, CaMFuse):
            self.fusion.set_hard(hard)

    def __call__(
        self,
        image: Optional[np.ndarray] = None,
        uls: Optional[np.ndarray] = None,
        rng: Optional[np.random.Generator] = None,
    ) -> Tensor:
        """image (N, 1, H, W) normalised intensities, uls (N, 1, rows, cols) on the logit grid"""
        cam_bev = uls_feat = None
        if self.camera is not None:
            if image is None:
                raise NNError(f"{self.config.mode.value} mode needs a camera image")
            cam_bev = self.camera(Tensor(image))
        if self.ultrasonic is not None:
            if uls is None:
                raise NNError(f"{self.config.mode.value} mode needs an ultrasonic grid")
            uls_feat = self.ultrasonic(Tensor(uls))
        if self.fusion is not None:
            features = self.fusion(cam_bev, uls_feat, rng)
        else:
            features = cam_bev if cam_bev is not None else uls_feat
        return self.decoder(features)
