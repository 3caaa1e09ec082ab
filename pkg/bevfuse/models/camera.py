import math
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from bevfuse.errors import FisheyeError

# Sampling step used to verify that d(theta) is strictly increasing
MONOTONICITY_STEP_RAD = 1e-3


class FisheyeIntrinsics(BaseModel):
    """Kannala-Brandt intrinsics: d(theta) = theta + k1 theta^3 + k2 theta^5 + k3 theta^7 + k4 theta^9"""

    model_config = ConfigDict(frozen=True)

    fx: float = Field(..., gt=0, description="Focal length along u in pixels")
    fy: float = Field(..., gt=0, description="Focal length along v in pixels")
    cx: float = Field(..., ge=0, description="Principal point u in pixels")
    cy: float = Field(..., ge=0, description="Principal point v in pixels")
    k1: float = Field(0.0, description="3rd order distortion coefficient")
    k2: float = Field(0.0, description="5th order distortion coefficient")
    k3: float = Field(0.0, description="7th order distortion coefficient")
    k4: float = Field(0.0, description="9th order distortion coefficient")
    width: int = Field(..., ge=1, description="Image width in pixels")
    height: int = Field(..., ge=1, description="Image height in pixels")
    theta_max: float = Field(
        math.radians(100.0), gt=0, le=math.pi, description="Largest supported incidence angle in radians"
    )

    @model_validator(mode="after")
    def validate_model(self) -> "FisheyeIntrinsics":
        if not self.cx < self.width:
            raise FisheyeError(f"cx ({self.cx}) must lie inside the image width ({self.width})")
        if not self.cy < self.height:
            raise FisheyeError(f"cy ({self.cy}) must lie inside the image height ({self.height})")

        theta = np.append(np.arange(0.0, self.theta_max, MONOTONICITY_STEP_RAD), self.theta_max)
        d = self.polynomial(theta)
        if np.any(np.diff(d) <= 0.0):
            raise FisheyeError("d(theta) is not strictly increasing on [0, theta_max]")
        return self

    @property
    def coefficients(self) -> List[float]:
        return [self.k1, self.k2, self.k3, self.k4]

    def polynomial(self, theta):
        """Unchecked evaluation of d(theta), scalar or array"""
        t2 = theta * theta
        return theta * (1.0 + t2 * (self.k1 + t2 * (self.k2 + t2 * (self.k3 + t2 * self.k4))))

    def polynomial_derivative(self, theta):
        t2 = theta * theta
        return 1.0 + t2 * (3.0 * self.k1 + t2 * (5.0 * self.k2 + t2 * (7.0 * self.k3 + t2 * 9.0 * self.k4)))

    @property
    def max_distorted_radius(self) -> float:
        return float(self.polynomial(self.theta_max))


class CameraExtrinsics(BaseModel):
    """Camera mounting pose.

    With all angles zero the camera looks rearward (-x) and horizontally, image
    right points to +y and image down to -z. Pitch (positive tilts the optical
    axis down), then yaw, then roll are applied in the camera frame.
    """

    model_config = ConfigDict(frozen=True)

    x: float = Field(0.0, description="Mounting position x in the vehicle frame, meters")
    y: float = Field(0.0, description="Mounting position y in the vehicle frame, meters")
    z: float = Field(..., gt=0, description="Mounting height above ground, meters")
    pitch: float = Field(0.0, description="Downward tilt in radians")
    yaw: float = Field(0.0, description="Pan about the camera's vertical axis in radians")
    roll: float = Field(0.0, description="Rotation about the optical axis in radians")

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


class DepthBand(BaseModel):
    """Ground range interval covered by one pyramid level"""

    model_config = ConfigDict(frozen=True)

    z_min: float = Field(..., gt=0, description="Nearest range in meters")
    z_max: float = Field(..., gt=0, description="Farthest range in meters")
    y_min: float = Field(0.0, description="Lowest height in meters")
    y_max: float = Field(1.2, description="Highest height in meters")

    @model_validator(mode="after")
    def validate_band(self) -> "DepthBand":
        if not self.z_min < self.z_max:
            raise FisheyeError(f"depth band needs z_min < z_max, got {self.z_min} / {self.z_max}")
        if not self.y_min < self.y_max:
            raise FisheyeError(f"depth band needs y_min < y_max, got {self.y_min} / {self.y_max}")
        return self

    def contains(self, distance: float) -> bool:
        return self.z_min <= distance < self.z_max


# Five-level bands, farthest first
FIVE_LEVEL_DEPTH_BANDS = [(3.2, 6.0), (1.6, 3.2), (0.8, 1.6), (0.4, 0.8), (0.2, 0.4)]
DESK_DEPTH_BANDS = [(3.2, 6.0), (0.8, 3.2), (0.2, 0.8)]


def default_depth_bands(levels: int, y_min: float = 0.0, y_max: float = 1.2) -> List[DepthBand]:
    """Bands for a pyramid with `levels` levels, farthest band on the finest level"""
    if levels == 5:
        bounds = FIVE_LEVEL_DEPTH_BANDS
    elif levels == 3:
        bounds = DESK_DEPTH_BANDS
    else:
        edges = np.geomspace(6.0, 0.2, levels + 1)
        bounds = [(float(edges[i + 1]), float(edges[i])) for i in range(levels)]
    return [DepthBand(z_min=lo, z_max=hi, y_min=y_min, y_max=y_max) for lo, hi in bounds]


class CameraPose(BaseModel):
    x: float = 0.0
    y: float = 0.0
    z: float = 1.0
    pitch: float = 0.0
    yaw: float = 0.0
    roll: float = 0.0


class Calibration(BaseModel):
    """Calibration file: {fx, fy, cx, cy, k1..k4, width, height, cam_pose:{x,y,z,pitch,yaw,roll}}"""

    model_config = ConfigDict(
        json_schema_extra={
            "example": {
                "fx": 20.0,
                "fy": 20.0,
                "cx": 31.5,
                "cy": 31.5,
                "k1": -0.01,
                "k2": 0.0,
                "k3": 0.0,
                "k4": 0.0,
                "width": 64,
                "height": 64,
                "cam_pose": {"x": -1.0, "y": 0.0, "z": 0.95, "pitch": 0.52, "yaw": 0.0, "roll": 0.0},
            }
        }
    )

    fx: float
    fy: float
    cx: float
    cy: float
    k1: float = 0.0
    k2: float = 0.0
    k3: float = 0.0
    k4: float = 0.0
    width: int
    height: int
    theta_max: Optional[float] = None
    cam_pose: CameraPose

    def intrinsics(self) -> FisheyeIntrinsics:
        data = self.model_dump(exclude={"cam_pose", "theta_max"})
        if self.theta_max is not None:
            data["theta_max"] = self.theta_max
        return FisheyeIntrinsics(**data)

    def extrinsics(self) -> CameraExtrinsics:
        return CameraExtrinsics(**self.cam_pose.model_dump())

    def to_dict(self) -> Dict[str, Any]:
        return self.model_dump(exclude_none=True)


def desk_calibration() -> Calibration:
    """64 x 64 rear fisheye, ~180 degree field of view, mounted 0.95 m high and tilted 30 degrees"""
    return Calibration(
        fx=20.0,
        fy=20.0,
        cx=31.5,
        cy=31.5,
        k1=-0.01,
        k2=0.0,
        k3=0.0,
        k4=0.0,
        width=64,
        height=64,
        cam_pose=CameraPose(x=-1.0, y=0.0, z=0.95, pitch=math.radians(30.0), yaw=0.0, roll=0.0),
    )


def fidelity_calibration() -> Calibration:
    """2-megapixel (1920 x 1080) variant of the same camera"""
    return Calibration(
        fx=330.0,
        fy=330.0,
        cx=959.5,
        cy=539.5,
        k1=-0.01,
        k2=0.0,
        k3=0.0,
        k4=0.0,
        width=1920,
        height=1080,
        cam_pose=CameraPose(x=-1.0, y=0.0, z=0.95, pitch=math.radians(30.0), yaw=0.0, roll=0.0),
    )
