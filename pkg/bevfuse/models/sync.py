import math
from typing import Any, Dict

from pydantic import BaseModel, ConfigDict, Field, model_validator

from bevfuse.models.geometry import Pose2D


class OdometrySample(BaseModel):
    model_config = ConfigDict(frozen=True)

    timestamp: float = Field(..., description="Milliseconds")
    pose: Pose2D = Field(..., description="Vehicle pose in a fixed world frame")

    def to_row(self) -> Dict[str, Any]:
        """CSV row: ts_ms, x_m, y_m, yaw_rad"""
        return {"ts_ms": self.timestamp, "x_m": self.pose.x, "y_m": self.pose.y, "yaw_rad": self.pose.yaw}

    @classmethod
    def from_row(cls, row: Dict[str, Any]) -> "OdometrySample":
        return cls(
            timestamp=float(row["ts_ms"]),
            pose=Pose2D(x=float(row["x_m"]), y=float(row["y_m"]), yaw=float(row["yaw_rad"])),
        )


class FramePair(BaseModel):
    """A camera frame and the latest ultrasonic frame at or before it"""

    model_config = ConfigDict(frozen=True)

    camera_ts: float = Field(..., description="Camera timestamp, ms")
    uls_ts: float = Field(..., description="Paired ultrasonic timestamp, ms")
    uls_index: int = Field(..., ge=0, description="Index of the paired frame in the ultrasonic stream")
    pose_delta: Pose2D = Field(..., description="Vehicle motion from uls_ts to camera_ts")

    @model_validator(mode="after")
    def validate_pair(self) -> "FramePair":
        if self.uls_ts > self.camera_ts:
            raise ValueError("ultrasonic frame must not be later than the camera frame")
        if not all(math.isfinite(v) for v in (self.pose_delta.x, self.pose_delta.y, self.pose_delta.yaw)):
            raise ValueError("pose_delta must be finite")
        return self

    def to_dict(self) -> Dict[str, Any]:
        return self.model_dump()

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FramePair":
        return cls(**data)
