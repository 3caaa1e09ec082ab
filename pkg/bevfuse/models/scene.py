from enum import Enum
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from bevfuse.models.camera import Calibration
from bevfuse.models.geometry import BevGrid, Pose2D
from bevfuse.models.metrics import ObstacleInstance
from bevfuse.models.sync import OdometrySample
from bevfuse.models.ultrasonic import SensorLayout, UltrasonicFrame


# Enums
class ObstacleShape(str, Enum):
    POINT = "point"
    BOX = "box"
    CYLINDER = "cylinder"


class ObstacleKind(str, Enum):
    DUMMY_PEDESTRIAN = "dummy_pedestrian"
    CARTON = "carton"
    BICYCLE = "bicycle"
    ROUND_PILLAR = "round_pillar"
    BOTTLE_CASE = "bottle_case"
    SQUARE_PILLAR = "square_pillar"
    CAR = "car"
    VEGETATION = "vegetation"


class ArrivalModel(str, Enum):
    BIMODAL = "bimodal"  # P(40 ms) / P(80 ms) mixture with jitter
    SCHEDULE = "schedule"  # ~66 ms measurements published on the 40 ms odometry cycle


class Split(str, Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


class Obstacle(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: ObstacleKind = Field(ObstacleKind.CARTON, description="Obstacle category")
    shape: ObstacleShape = Field(..., description="Footprint shape")
    pose: Pose2D = Field(..., description="Footprint center and heading in the world frame")
    width: float = Field(0.0, ge=0, description="Box extent along its local y, meters")
    length: float = Field(0.0, ge=0, description="Box extent along its local x, meters")
    radius: float = Field(0.0, ge=0, description="Cylinder radius, meters")
    height: float = Field(..., gt=0, description="Meters")
    reflectivity: float = Field(..., gt=0, le=1, description="Acoustic reflectivity in (0, 1]")

    @model_validator(mode="after")
    def validate_dimensions(self) -> "Obstacle":
        if self.shape == ObstacleShape.BOX and (self.width <= 0 or self.length <= 0):
            raise ValueError("box obstacles need positive width and length")
        if self.shape == ObstacleShape.CYLINDER and self.radius <= 0:
            raise ValueError("cylinder obstacles need a positive radius")
        return self


# Footprint / height / reflectivity per category
OBSTACLE_CATALOG: Dict[ObstacleKind, Dict[str, Any]] = {
    ObstacleKind.DUMMY_PEDESTRIAN: {"shape": ObstacleShape.CYLINDER, "radius": 0.25, "height": 1.2, "reflectivity": 0.5},
    ObstacleKind.CARTON: {"shape": ObstacleShape.BOX, "width": 0.5, "length": 0.5, "height": 0.5, "reflectivity": 0.6},
    ObstacleKind.BICYCLE: {"shape": ObstacleShape.BOX, "width": 0.3, "length": 1.6, "height": 1.0, "reflectivity": 0.3},
    ObstacleKind.ROUND_PILLAR: {"shape": ObstacleShape.CYLINDER, "radius": 0.2, "height": 1.2, "reflectivity": 0.9},
    ObstacleKind.BOTTLE_CASE: {"shape": ObstacleShape.BOX, "width": 0.3, "length": 0.4, "height": 0.3, "reflectivity": 0.7},
    ObstacleKind.SQUARE_PILLAR: {"shape": ObstacleShape.BOX, "width": 0.4, "length": 0.4, "height": 1.2, "reflectivity": 1.0},
    ObstacleKind.CAR: {"shape": ObstacleShape.BOX, "width": 1.8, "length": 1.2, "height": 1.2, "reflectivity": 1.0},
    ObstacleKind.VEGETATION: {"shape": ObstacleShape.CYLINDER, "radius": 0.35, "height": 0.8, "reflectivity": 0.2},
}


class Scene(BaseModel):
    """Simulator ground truth for one recording"""

    scene_id: str = Field(..., description="Scene directory name")
    seed: int = Field(..., description="Scene RNG seed derived from (master seed, scene index)")
    obstacles: List[Obstacle] = Field(default_factory=list)
    ego_track: List[OdometrySample] = Field(..., min_length=1, description="Vehicle poses over time")
    layout: SensorLayout
    calibration: Calibration
    noise_level: float = Field(0.0, ge=0, description="Upper bound of the uniform envelope noise floor")
    sample_spacing: float = Field(0.02, gt=0, description="Envelope sample spacing, meters")
    envelope_samples: int = Field(450, ge=2, description="Samples per envelope")
    speed_of_sound_mps: Optional[float] = Field(
        None, gt=0, description="Actual speed of sound; None means the value the receiver assumes"
    )

    def to_dict(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Scene":
        return cls(**data)


class SyntheticSample(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    image: np.ndarray = Field(..., description="8-bit grayscale fisheye image")
    uls_frame: UltrasonicFrame
    gt_mask: BevGrid
    gt_instances: List[ObstacleInstance]
    camera_ts: float
    uls_ts: float


class SimConfig(BaseModel):
    """Dataset generation parameters"""

    splits: Dict[Split, int] = Field(
        default_factory=lambda: {Split.TRAIN: 12, Split.VAL: 2, Split.TEST: 2},
        description="Scene count per split",
    )
    duration_ms: float = Field(1000.0, gt=0, description="Scene duration")
    camera_period_ms: float = Field(1000.0 / 30.0, gt=0, description="30 fps camera cadence")
    arrival_model: ArrivalModel = ArrivalModel.BIMODAL
    gap_short_ms: float = 40.0
    gap_long_ms: float = 80.0
    p_short: float = Field(0.6, ge=0, le=1)
    gap_jitter_ms: float = Field(3.0, ge=0)
    gap_min_ms: float = 34.0
    gap_max_ms: float = 85.0
    measurement_period_ms: float = Field(66.0, gt=0, description="Schedule model measurement interval")
    obstacles_min: int = Field(1, ge=0)
    obstacles_max: int = Field(3, ge=0)
    range_min_m: float = Field(0.3, gt=0, description="Nearest obstacle placement from the bumper")
    range_max_m: float = Field(5.5, gt=0)
    range_gamma_shape: float = Field(2.0, gt=0, description="Gamma prior shape for placement range")
    range_gamma_scale: float = Field(0.6, gt=0, description="Gamma prior scale, mode = (shape-1)*scale")
    max_azimuth_deg: float = Field(60.0, gt=0, le=90, description="Placement azimuth bound from the rear axis")
    max_speed_kmh: float = Field(8.0, ge=0)
    p_stationary: float = Field(0.2, ge=0, le=1)
    noise_level: float = Field(0.002, ge=0)
    sample_spacing: float = Field(0.02, gt=0)
    envelope_samples: int = Field(450, ge=2)

    @model_validator(mode="after")
    def validate_config(self) -> "SimConfig":
        if self.obstacles_max < self.obstacles_min:
            raise ValueError("obstacles_max must be >= obstacles_min")
        if self.range_max_m <= self.range_min_m:
            raise ValueError("range_max_m must exceed range_min_m")
        if self.gap_max_ms < self.gap_min_ms:
            raise ValueError("gap_max_ms must be >= gap_min_ms")
        return self

    @property
    def scene_count(self) -> int:
        return sum(self.splits.values())

    def with_scene_count(self, total: int) -> "SimConfig":
        """Distribute `total` scenes over the splits in the 24/3/8 proportion"""
        if total < 1:
            raise ValueError("scene count must be >= 1")
        val = max(1, round(total * 3 / 35)) if total >= 3 else 0
        test = max(1, round(total * 8 / 35)) if total >= 3 else 0
        train = total - val - test
        return self.model_copy(update={"splits": {Split.TRAIN: train, Split.VAL: val, Split.TEST: test}})


class SceneIndex(BaseModel):
    """index.json: frame timestamps and camera/ultrasonic pairings"""

    scene_id: str
    split: Split
    camera_ts: List[float]
    uls_ts: List[float]
    pairs: List[Dict[str, Any]]
    ego_speed_kmh: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SceneIndex":
        return cls(**data)


def obstacle_from_catalog(kind: ObstacleKind, pose: Pose2D, reflectivity: Optional[float] = None) -> Obstacle:
    params = dict(OBSTACLE_CATALOG[kind])
    if reflectivity is not None:
        params["reflectivity"] = reflectivity
    return Obstacle(kind=kind, pose=pose, **params)
