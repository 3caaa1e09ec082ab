from enum import Enum
from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from bevfuse.models.camera import DepthBand, default_depth_bands
from bevfuse.models.geometry import GridSpec, Pose2D


# Enums
class Mode(str, Enum):
    MULTIMODAL = "multimodal"
    VISIBLE = "visible"
    ULS = "uls"


class FusionStrategy(str, Enum):
    CAMFUSE = "camfuse"
    CONCAT = "concat"


class LossKind(str, Enum):
    CCE = "cce"
    BCE = "bce"
    DICE = "dice"
    MSE = "mse"


class PriorMode(str, Enum):
    MARKOV = "markov"
    RECURRENT = "recurrent"


class Activation(str, Enum):
    RELU = "relu"
    TANH = "tanh"


class ConvSpec(BaseModel):
    """Convolution geometry; `dilation_options` switches to content-aware dilation"""

    model_config = ConfigDict(frozen=True)

    in_channels: int = Field(..., ge=1)
    out_channels: int = Field(..., ge=1)
    kernel: Tuple[int, int] = Field((3, 3), description="(kh, kw)")
    stride: int = Field(1, ge=1)
    padding: int = Field(0, ge=0)
    dilation: int = Field(1, ge=1, description="Static dilation")
    dilation_options: Optional[List[int]] = Field(None, description="Candidate dilations D for adaptive mode")

    @field_validator("kernel")
    @classmethod
    def validate_kernel(cls, v: Tuple[int, int]) -> Tuple[int, int]:
        if v[0] < 1 or v[1] < 1:
            raise ValueError("kernel dimensions must be positive")
        return v

    @field_validator("dilation_options")
    @classmethod
    def validate_options(cls, v: Optional[List[int]]) -> Optional[List[int]]:
        """Distinct positive dilations, one or more.

        A real choice needs two candidates, but a single option is accepted: D = {d}
        must reduce to a static conv with dilation d, and that reduction is checked
        by building exactly this spec.
        """
        if v is None:
            return v
        if not v:
            raise ValueError("adaptive mode needs at least one dilation option")
        if any(d < 1 for d in v):
            raise ValueError("dilation options must be positive")
        if len(set(v)) != len(v):
            raise ValueError("dilation options must be distinct")
        return v

    @property
    def is_adaptive(self) -> bool:
        return self.dilation_options is not None

    def output_size(self, height: int, width: int) -> Tuple[int, int]:
        kh, kw = self.kernel
        oh = (height + 2 * self.padding - self.dilation * (kh - 1) - 1) // self.stride + 1
        ow = (width + 2 * self.padding - self.dilation * (kw - 1) - 1) // self.stride + 1
        return oh, ow


def desk_network_grid() -> GridSpec:
    """6.4 m rear x 3.2 m each side at 20 cm: 32 x 32 logits"""
    return GridSpec(lateral_half_extent=3.2, rear_extent=6.4, cell_size=0.2, anchor=Pose2D(x=-1.0, y=0.0, yaw=0.0))


class NetworkConfig(BaseModel):
    """Architecture of the camera/ultrasonic fusion network"""

    mode: Mode = Mode.MULTIMODAL
    levels: int = Field(3, ge=1, description="Pyramid level count N")
    encoder_channels: List[int] = Field(default_factory=lambda: [8, 16, 16], description="Channels per pyramid level")
    bev_channels: int = Field(16, ge=1, description="Channels after the per-level conv block")
    depth_bins: List[int] = Field(default_factory=lambda: [6, 6, 4], description="Polar range bins per band")
    depth_bands: List[DepthBand] = Field(default_factory=lambda: default_depth_bands(3))
    uls_channels: int = Field(16, ge=1, description="Ultrasonic BEV feature channels before fusion")
    fused_channels: int = Field(16, ge=1, description="Decoder input channels")
    decoder_channels: int = Field(32, ge=2)
    dilation_options: List[int] = Field(default_factory=lambda: [1, 2, 3, 4])
    adaptive_layers: int = Field(1, ge=1, description="Content-aware layers applied to the ultrasonic features")
    tau: float = Field(1.0, gt=0, description="Gumbel-softmax temperature")
    num_classes: int = Field(2, ge=1, description="Obstacles and the background")
    fusion: FusionStrategy = FusionStrategy.CAMFUSE
    prior_mode: PriorMode = PriorMode.MARKOV
    activation: Activation = Activation.RELU
    hard_dilation: bool = Field(False, description="Hard argmax over D at inference")
    grid: GridSpec = Field(default_factory=desk_network_grid, description="Logit grid; features run at half resolution")

    @model_validator(mode="after")
    def validate_network(self) -> "NetworkConfig":
        if len(self.encoder_channels) != self.levels:
            raise ValueError(f"encoder_channels needs {self.levels} entries")
        if len(self.depth_bins) != self.levels or len(self.depth_bands) != self.levels:
            raise ValueError(f"depth_bins and depth_bands need {self.levels} entries")
        if any(b < 1 for b in self.depth_bins):
            raise ValueError("depth bin counts must be positive")
        if len(self.dilation_options) < 1 or any(d < 1 for d in self.dilation_options):
            raise ValueError("dilation options must be positive")
        if len(set(self.dilation_options)) != len(self.dilation_options):
            raise ValueError("dilation options must be distinct")
        if self.grid.rows % 2 or self.grid.cols % 2:
            raise ValueError("network grid dimensions must be even")
        if self.grid.rows < 8 or self.grid.cols < 8:
            raise ValueError("network grid must be at least 8 x 8")
        return self

    @property
    def feature_grid(self) -> GridSpec:
        return self.grid.coarsened(2)

    @property
    def adaptive_spec(self) -> ConvSpec:
        """Content-aware 3x3 layer on the ultrasonic features"""
        return ConvSpec(
            in_channels=self.uls_channels, out_channels=self.uls_channels, dilation_options=self.dilation_options
        )

    @property
    def output_channels(self) -> int:
        # the ultrasonic-only model regresses a centroid heatmap
        return 1 if self.mode == Mode.ULS else self.num_classes

    @property
    def uses_camera(self) -> bool:
        return self.mode in (Mode.MULTIMODAL, Mode.VISIBLE)

    @property
    def uses_ultrasonic(self) -> bool:
        return self.mode in (Mode.MULTIMODAL, Mode.ULS)


class TrainerConfig(BaseModel):
    lr: float = Field(1e-3, gt=0, description="Base learning rate")
    batch_size: int = Field(8, ge=1)
    epochs: int = Field(100, ge=1)
    seed: int = 0
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    tau_decay: float = Field(0.95, gt=0, le=1, description="Per-epoch Gumbel temperature factor")
    tau_min: float = Field(0.1, gt=0)
    frame_stride: int = Field(1, ge=1, description="Use every n-th frame of each scene")
    loss: Optional[LossKind] = Field(None, description="Defaults to cce, or mse for the ultrasonic-only mode")

    def loss_for(self, mode: Mode) -> LossKind:
        if self.loss is not None:
            return self.loss
        return LossKind.MSE if mode == Mode.ULS else LossKind.CCE
