import math
from typing import Any, Dict, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

# Relative slack when checking that an extent is an integral multiple of the cell size
_INTEGRALITY_TOLERANCE = 1e-6


def normalize_angle(angle: float) -> float:
    """Wrap an angle into (-pi, pi]"""
    wrapped = math.remainder(angle, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


class Pose2D(BaseModel):
    """Planar rigid pose in the ISO 8855 vehicle frame (x forward, y left)"""

    model_config = ConfigDict(
        frozen=True,
        json_schema_extra={"example": {"x": -1.0, "y": 0.0, "yaw": 3.141592653589793}},
    )

    x: float = Field(0.0, description="Position along x in meters")
    y: float = Field(0.0, description="Position along y in meters")
    yaw: float = Field(0.0, description="Heading in radians, normalized to (-pi, pi]")

    @field_validator("yaw")
    @classmethod
    def validate_yaw(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError("yaw must be finite")
        return normalize_angle(v)

    @classmethod
    def identity(cls) -> "Pose2D":
        return cls(x=0.0, y=0.0, yaw=0.0)

    @property
    def position(self) -> Tuple[float, float]:
        return (self.x, self.y)

    def is_identity(self) -> bool:
        return self.x == 0.0 and self.y == 0.0 and self.yaw == 0.0


class GridSpec(BaseModel):
    """Metric BEV raster anchored at the camera ground position.

    Row 0 is the edge at the camera and rows grow rearward; column 0 is the
    leftmost (+y) edge. Cells are half-open, so a point on a boundary belongs
    to the cell with the larger index.
    """

    model_config = ConfigDict(
        frozen=True,
        json_schema_extra={
            "example": {
                "lateral_half_extent": 6.0,
                "rear_extent": 6.0,
                "cell_size": 0.05,
                "anchor": {"x": -1.0, "y": 0.0, "yaw": 0.0},
            }
        },
    )

    lateral_half_extent: float = Field(6.0, gt=0, description="Extent to each side in meters")
    rear_extent: float = Field(6.0, gt=0, description="Extent to the rear in meters")
    cell_size: float = Field(0.05, gt=0, description="Cell edge length in meters")
    anchor: Pose2D = Field(default_factory=Pose2D.identity, description="Camera ground pose")

    @model_validator(mode="after")
    def validate_integral_extents(self) -> "GridSpec":
        for name, extent in (
            ("2*lateral_half_extent", 2.0 * self.lateral_half_extent),
            ("rear_extent", self.rear_extent),
        ):
            ratio = extent / self.cell_size
            count = round(ratio)
            if count < 1 or abs(ratio - count) > _INTEGRALITY_TOLERANCE * max(1.0, ratio):
                raise ValueError(f"{name} ({extent}) is not an integral multiple of cell_size ({self.cell_size})")
        return self

    @property
    def rows(self) -> int:
        return int(round(self.rear_extent / self.cell_size))

    @property
    def cols(self) -> int:
        return int(round(2.0 * self.lateral_half_extent / self.cell_size))

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.rows, self.cols)

    def coarsened(self, factor: int) -> "GridSpec":
        """Same extent and anchor with cells `factor` times larger"""
        return GridSpec(
            lateral_half_extent=self.lateral_half_extent,
            rear_extent=self.rear_extent,
            cell_size=self.cell_size * factor,
            anchor=self.anchor,
        )

    def to_dict(self) -> Dict[str, Any]:
        return self.model_dump()

    @classmethod
    def centimeter(cls, anchor: Pose2D = None) -> "GridSpec":
        """Six meters rear and to each side at 1 cm"""
        return cls(
            lateral_half_extent=6.0,
            rear_extent=6.0,
            cell_size=0.01,
            anchor=anchor or Pose2D.identity(),
        )


class BevGrid(BaseModel):
    """Row-major raster (rows x cols x channels) over a GridSpec"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    spec: GridSpec = Field(..., description="Grid geometry")
    data: np.ndarray = Field(..., description="Raster of shape (rows, cols, channels)")

    @field_validator("data")
    @classmethod
    def validate_data(cls, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v)
        if v.ndim == 2:
            v = v[:, :, None]
        if v.ndim != 3:
            raise ValueError(f"grid data must be 2-D or 3-D, got shape {v.shape}")
        return v

    @model_validator(mode="after")
    def validate_shape(self) -> "BevGrid":
        if self.data.shape[:2] != self.spec.shape:
            raise ValueError(f"grid data shape {self.data.shape[:2]} does not match spec {self.spec.shape}")
        return self

    @property
    def channels(self) -> int:
        return int(self.data.shape[2])

    @classmethod
    def zeros(cls, spec: GridSpec, channels: int = 1, dtype=np.float64) -> "BevGrid":
        return cls(spec=spec, data=np.zeros((spec.rows, spec.cols, channels), dtype=dtype))

    @classmethod
    def labels(cls, spec: GridSpec, mask: np.ndarray) -> "BevGrid":
        """Label grid (0 = background, 1 = obstacle) from a boolean or 0/1 mask"""
        return cls(spec=spec, data=(np.asarray(mask) > 0).astype(np.uint8)[:, :, None])

    def mask(self) -> np.ndarray:
        """Obstacle-class boolean mask of channel 0"""
        return self.data[:, :, 0] > 0

    def is_nonnegative(self) -> bool:
        return bool(np.all(self.data >= 0))
