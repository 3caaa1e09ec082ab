from typing import List, Optional, Tuple

import numpy as np

from bevfuse.errors import NNError
from bevfuse.models.network import Activation, ConvSpec, NetworkConfig, PriorMode
from bevfuse.services.nn import functional as F
from bevfuse.services.nn.functional import DilationField
from bevfuse.services.nn.layers import AdaptiveDilatedConv2d, Conv2d, Module, activate
from bevfuse.services.nn.tensor import Tensor


class ConcatFusion(Module):
    """Baseline: concatenate camera and ultrasonic features, project with a 1x1 convolution"""

    def __init__(self, rng: np.random.Generator, cam_channels: int, uls_channels: int, out_channels: int):
        super().__init__()
        self.cam_channels = cam_channels
        self.uls_channels = uls_channels
        self.projection = Conv2d.from_spec(
            rng, ConvSpec(in_channels=cam_channels + uls_channels, out_channels=out_channels, kernel=(1, 1))
        )
        self.fields: List[DilationField] = []

    def identity_projection(self) -> None:
        """Pass the camera features straight through"""
        out_channels = self.projection.weight.shape[0]
        weight = np.zeros_like(self.projection.weight.data)
        for i in range(min(out_channels, self.cam_channels)):
            weight[i, i, 0, 0] = 1.0
        self.projection.weight.data = weight
        self.projection.bias.data = np.zeros(out_channels)

    def _check(self, cam: Tensor, uls: Tensor) -> None:
        if cam.shape[0] != uls.shape[0] or cam.shape[2:] != uls.shape[2:]:
            raise NNError(f"camera features {cam.shape} and ultrasonic features {uls.shape} are not aligned")
        if cam.shape[1] != self.cam_channels or uls.shape[1] != self.uls_channels:
            raise NNError("fusion input channel counts do not match the configuration")

    def __call__(self, cam: Tensor, uls: Tensor, rng: Optional[np.random.Generator] = None) -> Tensor:
        self._check(cam, uls)
        return self.projection(F.concat([cam, uls], axis=1))


class CaMFuse(ConcatFusion):
    """Content-aware fusion: the ultrasonic features pass through adaptive
    dilated convolutions before being concatenated with the camera BEV."""

    def __init__(self, rng: np.random.Generator, config: NetworkConfig):
        super().__init__(rng, config.bev_channels, config.uls_channels, config.fused_channels)
        self.activation: Activation = config.activation
        self.prior_mode = config.prior_mode
        self.adaptive = [
            AdaptiveDilatedConv2d.from_spec(rng, config.adaptive_spec, config.tau, config.prior_mode)
            for _ in range(config.adaptive_layers)
        ]

    def set_tau(self, tau: float) -> None:
        for layer in self.adaptive:
            layer.tau = tau

    def set_hard(self, hard: bool) -> None:
        for layer in self.adaptive:
            layer.hard = hard

    def refine(self, uls: Tensor, rng: Optional[np.random.Generator] = None) -> Tuple[Tensor, List[DilationField]]:
        fields: List[DilationField] = []
        hidden = None
        x = uls
        for layer in self.adaptive:
            out, field = layer(x, rng=rng, prev_hidden=hidden if self.prior_mode == PriorMode.RECURRENT else None)
            x = activate(out, self.activation)
            hidden = field.hidden
            fields.append(field)
        return x, fields

    def __call__(self, cam: Tensor, uls: Tensor, rng: Optional[np.random.Generator] = None) -> Tensor:
        self._check(cam, uls)
        refined, self.fields = self.refine(uls, rng)
        return self.projection(F.concat([cam, refined], axis=1))
