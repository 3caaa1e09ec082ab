import numpy as np

from bevfuse.errors import NNError
from bevfuse.models.network import Activation
from bevfuse.services.nn import functional as F
from bevfuse.services.nn.layers import Conv2d, ConvTranspose2d, Module, activate
from bevfuse.services.nn.tensor import Tensor

# Smallest feature map the upsampling stage accepts
MIN_DECODER_SIZE = 4


class DenseStage(Module):
    """Two rounds of conv3x3 -> conv3x3 -> concat with the round's input"""

    def __init__(self, rng: np.random.Generator, in_channels: int, out_channels: int, activation: Activation):
        super().__init__()
        if (out_channels - in_channels) % 2 or out_channels <= in_channels:
            raise NNError(f"dense stage cannot grow {in_channels} channels to {out_channels} in two equal steps")
        growth = (out_channels - in_channels) // 2
        self.activation = activation
        self.convs = [
            Conv2d(rng, in_channels, growth),
            Conv2d(rng, growth, growth),
            Conv2d(rng, in_channels + growth, growth),
            Conv2d(rng, growth, growth),
        ]

    def __call__(self, x: Tensor) -> Tensor:
        for k in range(2):
            y = activate(self.convs[2 * k](x), self.activation)
            y = activate(self.convs[2 * k + 1](y), self.activation)
            x = F.concat([x, y], axis=1)
        return x


class UpsampleStage(Module):
    """Two parallel 2x upsamplers (4x4 and 2x2 transposed convolutions) merged and refined"""

    def __init__(self, rng: np.random.Generator, channels: int, out_channels: int, activation: Activation):
        super().__init__()
        half = channels // 2
        self.activation = activation
        self.up4 = ConvTranspose2d(rng, channels, half, kernel=4, stride=2, padding=1)
        self.after_up4 = Conv2d(rng, half, half)
        self.up2 = ConvTranspose2d(rng, channels, half, kernel=2, stride=2)
        self.refine = [Conv2d(rng, 2 * half, 2 * half), Conv2d(rng, 2 * half, 2 * half)]
        self.squeeze = Conv2d(rng, 4 * half, channels, kernel=1, padding=0)
        self.head = Conv2d(rng, channels, out_channels, kernel=1, padding=0)

    def __call__(self, x: Tensor) -> Tensor:
        a = activate(self.up4(x), self.activation)
        a = activate(self.after_up4(a), self.activation)
        b = activate(self.up2(x), self.activation)
        merged = F.concat([a, b], axis=1)
        y = merged
        for conv in self.refine:
            y = activate(conv(y), self.activation)
        y = F.concat([y, merged], axis=1)
        y = activate(self.squeeze(y), self.activation)
        return self.head(y)


class Decoder(Module):
    """(N, C_in, H, W) features -> (N, n_out, 2H, 2W) logits"""

    def __init__(
        self,
        rng: np.random.Generator,
        in_channels: int,
        out_channels: int,
        channels: int = 32,
        activation: Activation = Activation.RELU,
    ):
        super().__init__()
        self.in_channels = in_channels
        self.dense = DenseStage(rng, in_channels, channels, activation)
        self.upsample = UpsampleStage(rng, channels, out_channels, activation)

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise NNError(f"decoder expects (N, {self.in_channels}, H, W), got {x.shape}")
        if x.shape[2] < MIN_DECODER_SIZE or x.shape[3] < MIN_DECODER_SIZE:
            raise NNError(f"decoder input {x.shape[2]}x{x.shape[3]} is smaller than {MIN_DECODER_SIZE}x{MIN_DECODER_SIZE}")
        return self.upsample(self.dense(x))
