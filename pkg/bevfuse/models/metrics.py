from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator


class ObstacleInstance(BaseModel):
    """4-connected obstacle component of a label grid"""

    model_config = ConfigDict(frozen=True)

    cells: List[Tuple[int, int]] = Field(..., min_length=1, description="Grid indices (row, col)")
    centroid: Tuple[float, float] = Field(..., description="Mean of the cell centers, meters")

    @field_validator("cells")
    @classmethod
    def validate_connected(cls, v: List[Tuple[int, int]]) -> List[Tuple[int, int]]:
        remaining = set(v)
        stack = [v[0]]
        remaining.discard(v[0])
        while stack:
            r, c = stack.pop()
            for nb in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
                if nb in remaining:
                    remaining.discard(nb)
                    stack.append(nb)
        if remaining:
            raise ValueError("instance cells must be 4-connected")
        return v

    @property
    def min_index(self) -> Tuple[int, int]:
        return min(self.cells)


class InstanceScore(BaseModel):
    """Localisation errors of one ground-truth obstacle"""

    model_config = ConfigDict(frozen=True)

    distance_D: float = Field(..., ge=0)
    norm_distance_ND: float = Field(..., ge=0)
    euclidean_E: float = Field(..., ge=0)
    matched: bool
    range_m: float = Field(..., ge=0, description="Ground-truth distance to the ego reference point")
    azimuth: float = Field(0.0, description="Ground-truth bearing from the rear axis, radians")


class DistanceMetrics(BaseModel):
    """Per-instance averages of the three localisation metrics"""

    distance_D: float = Field(..., ge=0, description="Mean absolute rearward-position error, meters")
    norm_distance_ND: float = Field(..., ge=0, description="Mean Euclidean error over gt distance to ego")
    euclidean_E: float = Field(..., ge=0, description="Mean Euclidean centroid error, meters")
    matched: int = Field(0, ge=0)
    missed: int = Field(0, ge=0)
    spurious: int = Field(0, ge=0)
    # kept for pooling across frames and groups
    per_instance: List[InstanceScore] = Field(default_factory=list)


class MetricsReport(BaseModel):
    """One CSV row: a frame or an aggregate"""

    model_config = ConfigDict(
        json_schema_extra={
            "example": {
                "frame": "scene_003/000012",
                "recall": 0.94,
                "dice": 0.81,
                "precision": 0.96,
                "iou": 0.69,
                "distance_D": 0.03,
                "norm_distance_ND": 0.02,
                "euclidean_E": 0.08,
                "matched": 1,
                "missed": 0,
                "spurious": 0,
                "tp": 40,
                "fp": 2,
                "fn": 3,
            }
        }
    )

    frame: str = Field(..., description="Frame label or 'aggregate'")
    recall: Optional[float] = Field(None, ge=0, le=1)
    dice: Optional[float] = Field(None, ge=0, le=1)
    precision: Optional[float] = Field(None, ge=0, le=1)
    iou: Optional[float] = Field(None, ge=0, le=1)
    distance_D: Optional[float] = Field(None, ge=0, description="Meters")
    norm_distance_ND: Optional[float] = Field(None, ge=0)
    euclidean_E: Optional[float] = Field(None, ge=0, description="Meters")
    matched: int = Field(0, ge=0)
    missed: int = Field(0, ge=0)
    spurious: int = Field(0, ge=0)
    tp: int = Field(0, ge=0)
    fp: int = Field(0, ge=0)
    fn: int = Field(0, ge=0)

    @classmethod
    def columns(cls) -> List[str]:
        return list(cls.model_fields.keys())

    def to_row(self) -> Dict[str, Any]:
        return {k: ("" if v is None else v) for k, v in self.model_dump().items()}


class FrameEvaluation(BaseModel):
    """Per-frame report plus what aggregation and grouping need"""

    report: MetricsReport
    instances: List[InstanceScore] = Field(default_factory=list)
    ego_speed_kmh: float = Field(0.0, ge=0)
