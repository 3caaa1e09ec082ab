import math
from typing import Any, Dict, List

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from bevfuse.models.geometry import Pose2D

# Radial field of view of the recorded measurement sequence
DEFAULT_MAX_RANGE_M = 4.5
# Opening angle of 130 degrees close to the sensor, 70 degrees at max range
DEFAULT_HALF_ANGLE_NEAR = math.radians(65.0)
DEFAULT_HALF_ANGLE_FAR = math.radians(35.0)
DEFAULT_SAMPLE_SPACING_M = 0.02


class EchoEnvelope(BaseModel):
    """Received echo amplitude over round-trip distance for one signalway"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    emitter_id: int = Field(..., description="Emitting sensor id")
    receiver_id: int = Field(..., description="Receiving sensor id")
    amplitudes: np.ndarray = Field(..., description="Non-negative amplitudes over uniform round-trip samples")
    sample_spacing: float = Field(DEFAULT_SAMPLE_SPACING_M, gt=0, description="Round-trip distance per sample, meters")

    @field_validator("amplitudes", mode="before")
    @classmethod
    def validate_amplitudes(cls, v) -> np.ndarray:
        arr = np.asarray(v, dtype=np.float64)
        if arr.ndim != 1 or arr.size < 2:
            raise ValueError("amplitudes must be a 1-D array with at least two samples")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise ValueError("amplitudes must be finite and non-negative")
        return arr

    @property
    def max_distance(self) -> float:
        return (self.amplitudes.size - 1) * self.sample_spacing

    def to_dict(self) -> Dict[str, Any]:
        return {
            "tx": self.emitter_id,
            "rx": self.receiver_id,
            "spacing_m": self.sample_spacing,
            "amps": [float(a) for a in self.amplitudes],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EchoEnvelope":
        return cls(
            emitter_id=data["tx"],
            receiver_id=data["rx"],
            sample_spacing=data["spacing_m"],
            amplitudes=data["amps"],
        )


class UltrasonicFrame(BaseModel):
    """One measurement step: an envelope per signalway"""

    timestamp: float = Field(..., description="Arrival time in milliseconds")
    envelopes: List[EchoEnvelope] = Field(..., min_length=1, description="One envelope per signalway")

    @model_validator(mode="after")
    def validate_spacing(self) -> "UltrasonicFrame":
        spacings = {env.sample_spacing for env in self.envelopes}
        if max(spacings) - min(spacings) > 1e-12:
            raise ValueError("all envelopes of a frame must share one sample spacing")
        return self

    def to_dict(self) -> Dict[str, Any]:
        """JSON Lines record"""
        return {"ts_ms": self.timestamp, "signalways": [env.to_dict() for env in self.envelopes]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "UltrasonicFrame":
        return cls(
            timestamp=data["ts_ms"],
            envelopes=[EchoEnvelope.from_dict(sw) for sw in data["signalways"]],
        )


class SensorMount(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: int = Field(..., description="Sensor id")
    pose: Pose2D = Field(..., description="Position on the bumper and boresight yaw")


class Signalway(BaseModel):
    model_config = ConfigDict(frozen=True)

    tx: int = Field(..., description="Emitting sensor id")
    rx: int = Field(..., description="Receiving sensor id")


class SensorLayout(BaseModel):
    """Ultrasonic sensor mounting and field-of-view model"""

    model_config = ConfigDict(
        json_schema_extra={
            "example": {
                "sensors": [{"id": 0, "pose": {"x": -1.05, "y": 0.75, "yaw": 2.4}}],
                "signalways": [{"tx": 0, "rx": 0}],
                "half_angle_near": 1.1345,
                "half_angle_far": 0.6109,
                "max_range": 4.5,
            }
        }
    )

    sensors: List[SensorMount] = Field(..., min_length=1, description="Mounted sensors")
    signalways: List[Signalway] = Field(default_factory=list, description="Emitter/receiver pairs per frame")
    half_angle_near: float = Field(DEFAULT_HALF_ANGLE_NEAR, description="Half opening angle at range 0, radians")
    half_angle_far: float = Field(DEFAULT_HALF_ANGLE_FAR, description="Half opening angle at max range, radians")
    max_range: float = Field(DEFAULT_MAX_RANGE_M, gt=0, description="Radial field of view, meters")

    @model_validator(mode="after")
    def validate_layout(self) -> "SensorLayout":
        if not 0 < self.half_angle_far <= self.half_angle_near <= math.pi / 2:
            raise ValueError("need 0 < half_angle_far <= half_angle_near <= pi/2")
        ids = [s.id for s in self.sensors]
        if len(set(ids)) != len(ids):
            raise ValueError("sensor ids must be unique")
        for sw in self.signalways:
            if sw.tx not in ids or sw.rx not in ids:
                raise ValueError(f"signalway {sw.tx}->{sw.rx} references an unknown sensor")
        return self

    def sensor(self, sensor_id: int) -> SensorMount:
        for mount in self.sensors:
            if mount.id == sensor_id:
                return mount
        raise KeyError(sensor_id)

    def to_dict(self) -> Dict[str, Any]:
        return self.model_dump()


def default_layout(bumper_x: float = -1.05) -> SensorLayout:
    """Six rear sensors, 6 mono-static + 2 bistatic signalways between the central sensors"""
    lateral = [0.75, 0.45, 0.15, -0.15, -0.45, -0.75]
    # outer sensors point diagonally rearward
    yaw_offsets = [0.6, 0.25, 0.05, -0.05, -0.25, -0.6]
    sensors = [
        SensorMount(id=i, pose=Pose2D(x=bumper_x, y=y, yaw=math.pi - off))
        for i, (y, off) in enumerate(zip(lateral, yaw_offsets))
    ]
    signalways = [Signalway(tx=i, rx=i) for i in range(6)]
    signalways += [Signalway(tx=1, rx=2), Signalway(tx=3, rx=4)]
    return SensorLayout(sensors=sensors, signalways=signalways)
