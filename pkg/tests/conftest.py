import math
from pathlib import Path

import numpy as np
import pytest

from bevfuse.models.camera import Calibration, desk_calibration
from bevfuse.models.geometry import GridSpec, Pose2D
from bevfuse.models.network import TrainerConfig
from bevfuse.models.run import CAMERA_ANCHOR, RunConfig
from bevfuse.models.scene import SimConfig, Split
from bevfuse.models.ultrasonic import SensorLayout, default_layout
from bevfuse.services.sim_service import sim_service


# ── Helpers ──────────────────────────────────────────────────────────────

def small_run_config(**trainer) -> RunConfig:
    """Desk preset cut down to 200 ms scenes and four scenes in total"""
    return RunConfig(
        sim=SimConfig(splits={Split.TRAIN: 2, Split.VAL: 1, Split.TEST: 1}, duration_ms=200.0),
        trainer=TrainerConfig(epochs=2, batch_size=4, **trainer),
    )


def random_envelope_amplitudes(rng: np.random.Generator, samples: int = 450) -> np.ndarray:
    return rng.uniform(0.0, 1.0, samples)


# ── Fixtures ─────────────────────────────────────────────────────────────

@pytest.fixture
def calibration() -> Calibration:
    return desk_calibration()


@pytest.fixture
def intrinsics(calibration):
    return calibration.intrinsics()


@pytest.fixture
def extrinsics(calibration):
    return calibration.extrinsics()


@pytest.fixture
def layout() -> SensorLayout:
    return default_layout()


@pytest.fixture
def desk_grid() -> GridSpec:
    """Default 5 cm data grid, 120 x 240"""
    return RunConfig.desk().grid


@pytest.fixture
def small_grid() -> GridSpec:
    """3 m rear, 1.5 m each side at 5 cm, anchored at the camera"""
    return GridSpec(lateral_half_extent=1.5, rear_extent=3.0, cell_size=0.05, anchor=CAMERA_ANCHOR)


@pytest.fixture
def tiny_grid() -> GridSpec:
    """10 x 10 cells of 10 cm"""
    return GridSpec(lateral_half_extent=0.5, rear_extent=1.0, cell_size=0.1, anchor=Pose2D(x=-1.0, y=0.0, yaw=0.0))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def dataset_config() -> RunConfig:
    return small_run_config()


@pytest.fixture(scope="session")
def dataset_root(tmp_path_factory, dataset_config) -> Path:
    """A four-scene synthetic dataset shared by the pipeline tests"""
    root = tmp_path_factory.mktemp("dataset")
    sim_service.generate_dataset(dataset_config, 7, root)
    return root


@pytest.fixture
def quarter_turn() -> float:
    return math.pi / 2.0
