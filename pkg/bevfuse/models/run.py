from typing import Any, Dict, Optional

from pydantic import BaseModel, ConfigDict, Field

from bevfuse.models.camera import Calibration, default_depth_bands, desk_calibration, fidelity_calibration
from bevfuse.models.geometry import GridSpec, Pose2D
from bevfuse.models.network import NetworkConfig, TrainerConfig
from bevfuse.models.scene import SimConfig, Split

# Camera ground position; every grid of a preset is anchored here
CAMERA_ANCHOR = Pose2D(x=-1.0, y=0.0, yaw=0.0)


class RunConfig(BaseModel):
    """Everything a command needs, loaded from one JSON file"""

    model_config = ConfigDict(
        json_schema_extra={
            "example": {
                "preset": "desk",
                "grid": {"lateral_half_extent": 6.0, "rear_extent": 6.0, "cell_size": 0.05},
                "trainer": {"lr": 0.001, "batch_size": 8, "epochs": 100, "seed": 0},
                "layout_path": "configs/layout_default.json",
                "calibration_path": "configs/calib_desk.json",
                "dataset_root": "data/desk",
                "output_root": "runs/desk",
            }
        }
    )

    preset: str = Field("desk", description="Preset the file was derived from")
    grid: GridSpec = Field(
        default_factory=lambda: GridSpec(lateral_half_extent=6.0, rear_extent=6.0, cell_size=0.05, anchor=CAMERA_ANCHOR),
        description="Data grid for ultrasonic maps and ground truth",
    )
    network: NetworkConfig = Field(default_factory=NetworkConfig)
    trainer: TrainerConfig = Field(default_factory=TrainerConfig)
    sim: SimConfig = Field(default_factory=SimConfig)
    layout_path: Optional[str] = Field(None, description="Sensor layout JSON; default layout when absent")
    calibration_path: Optional[str] = Field(None, description="Calibration JSON; preset calibration when absent")
    dataset_root: str = Field("data", description="Dataset directory")
    output_root: str = Field("runs", description="Checkpoints, logs and reports")
    camera_range: float = Field(6.0, gt=0, description="Farthest-point miss rule radius, meters")

    @classmethod
    def desk(cls) -> "RunConfig":
        return cls(preset="desk")

    @classmethod
    def fidelity(cls) -> "RunConfig":
        """1 cm data grid, five pyramid levels and the 24/3/8 scene split"""
        network = NetworkConfig(
            levels=5,
            encoder_channels=[16, 16, 16, 16, 16],
            depth_bins=[8, 8, 6, 4, 4],
            depth_bands=default_depth_bands(5),
            grid=GridSpec(lateral_half_extent=6.4, rear_extent=6.4, cell_size=0.1, anchor=CAMERA_ANCHOR),
        )
        return cls(
            preset="fidelity",
            grid=GridSpec.centimeter(anchor=CAMERA_ANCHOR),
            network=network,
            sim=SimConfig(splits={Split.TRAIN: 24, Split.VAL: 3, Split.TEST: 8}),
            dataset_root="data/fidelity",
            output_root="runs/fidelity",
        )

    @classmethod
    def preset_named(cls, name: str) -> "RunConfig":
        if name == "desk":
            return cls.desk()
        if name == "fidelity":
            return cls.fidelity()
        raise ValueError(f"unknown preset '{name}'")

    def default_calibration(self) -> Calibration:
        return fidelity_calibration() if self.preset == "fidelity" else desk_calibration()

    def with_overrides(self, **overrides: Any) -> "RunConfig":
        """Apply command-line flags; None means 'not given'"""
        data = self.model_dump()
        trainer_keys = {"lr": "lr", "batch": "batch_size", "epochs": "epochs", "seed": "seed", "loss": "loss"}
        network_keys = {"mode": "mode", "fusion": "fusion"}
        for key, value in overrides.items():
            if value is None:
                continue
            if key in trainer_keys:
                data["trainer"][trainer_keys[key]] = value
            elif key in network_keys:
                data["network"][network_keys[key]] = value
            elif key == "scenes":
                data["sim"] = self.sim.with_scene_count(int(value)).model_dump()
            elif key in ("dataset_root", "output_root", "layout_path", "calibration_path"):
                data[key] = str(value)
            else:
                raise ValueError(f"unknown override '{key}'")
        return RunConfig(**data)

    def to_dict(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        return cls(**data)
