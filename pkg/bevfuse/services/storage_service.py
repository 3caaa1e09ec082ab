import csv
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

import numpy as np
from pydantic import ValidationError

from bevfuse.errors import BevFuseError, ConfigError, FisheyeError, SimError, UltrasonicError, wrapped_error
from bevfuse.models.camera import Calibration
from bevfuse.models.run import RunConfig
from bevfuse.models.scene import Scene, SceneIndex
from bevfuse.models.sync import OdometrySample
from bevfuse.models.ultrasonic import SensorLayout, UltrasonicFrame, default_layout

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

ODOMETRY_COLUMNS = ["ts_ms", "x_m", "y_m", "yaw_rad"]


class StorageService:
    """File-backed persistence for configs, datasets, rasters and reports"""

    # Generic documents
    @staticmethod
    def write_json(path: PathLike, data: Dict[str, Any]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    @staticmethod
    def read_json(path: PathLike) -> Dict[str, Any]:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"missing file {path}")
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path} is not valid JSON: {e}")

    @staticmethod
    def write_jsonl(path: PathLike, records: Iterable[Dict[str, Any]]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as fh:
            for record in records:
                fh.write(json.dumps(record, separators=(",", ":")) + "\n")
        return path

    @staticmethod
    def read_jsonl(path: PathLike) -> List[Dict[str, Any]]:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"missing file {path}")
        with path.open(encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]

    @staticmethod
    def write_csv(path: PathLike, columns: List[str], rows: Iterable[Dict[str, Any]]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
            writer.writeheader()
            for row in rows:
                writer.writerow(row)
        return path

    @staticmethod
    def read_csv(path: PathLike) -> List[Dict[str, str]]:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"missing file {path}")
        with path.open(newline="", encoding="utf-8") as fh:
            return list(csv.DictReader(fh))

    # Rasters
    @staticmethod
    def save_pgm(path: PathLike, image: np.ndarray) -> Path:
        """Binary 8-bit P5"""
        img = np.asarray(image)
        if img.ndim != 2:
            raise BevFuseError(f"PGM needs a 2-D image, got shape {img.shape}")
        img = np.clip(img, 0, 255).astype(np.uint8)
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
        path.write_bytes(header + img.tobytes())
        return path

    @staticmethod
    def save_ppm(path: PathLike, image: np.ndarray) -> Path:
        """Binary 8-bit P6 from an (h, w, 3) array"""
        img = np.asarray(image)
        if img.ndim != 3 or img.shape[2] != 3:
            raise BevFuseError(f"PPM needs an (h, w, 3) image, got shape {img.shape}")
        img = np.clip(img, 0, 255).astype(np.uint8)
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        header = f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
        path.write_bytes(header + img.tobytes())
        return path

    @staticmethod
    def _read_netpbm(path: PathLike, magic: bytes, channels: int) -> np.ndarray:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"missing file {path}")
        raw = path.read_bytes()
        tokens: List[bytes] = []
        pos = 0
        while len(tokens) < 4:
            while pos < len(raw) and raw[pos : pos + 1].isspace():
                pos += 1
            if raw[pos : pos + 1] == b"#":
                while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                    pos += 1
                continue
            start = pos
            while pos < len(raw) and not raw[pos : pos + 1].isspace():
                pos += 1
            tokens.append(raw[start:pos])
        if tokens[0] != magic:
            raise BevFuseError(f"{path} is not a {magic.decode()} file")
        width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
        if maxval != 255:
            raise BevFuseError(f"{path}: only 8-bit images are supported")
        data = np.frombuffer(raw[pos + 1 : pos + 1 + width * height * channels], dtype=np.uint8)
        shape = (height, width) if channels == 1 else (height, width, channels)
        return data.reshape(shape).copy()

    @staticmethod
    def load_pgm(path: PathLike) -> np.ndarray:
        return StorageService._read_netpbm(path, b"P5", 1)

    @staticmethod
    def load_ppm(path: PathLike) -> np.ndarray:
        return StorageService._read_netpbm(path, b"P6", 3)

    @staticmethod
    def save_float_grid(path: PathLike, data: np.ndarray) -> Path:
        """Exact float64 dump (.npy)"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        np.save(path, np.asarray(data, dtype=np.float64), allow_pickle=False)
        return path

    @staticmethod
    def load_float_grid(path: PathLike) -> np.ndarray:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"missing file {path}")
        return np.load(path, allow_pickle=False)

    # Domain files
    @staticmethod
    def load_calibration(path: PathLike) -> Calibration:
        try:
            return Calibration(**StorageService.read_json(path))
        except ValidationError as e:
            raise wrapped_error(e) or FisheyeError(f"invalid calibration {path}: {e.errors()[0]['msg']}")

    @staticmethod
    def load_layout(path: PathLike) -> SensorLayout:
        try:
            return SensorLayout(**StorageService.read_json(path))
        except ValidationError as e:
            raise UltrasonicError(f"invalid sensor layout {path}: {e.errors()[0]['msg']}")

    @staticmethod
    def load_run_config(path: PathLike) -> RunConfig:
        """Run configuration; referenced calibration and layout files must exist"""
        try:
            config = RunConfig.from_dict(StorageService.read_json(path))
        except ValidationError as e:
            raise wrapped_error(e) or ConfigError(f"invalid config {path}: {e.errors()[0]['msg']}")
        base = Path(path).parent
        for name in ("layout_path", "calibration_path"):
            ref = getattr(config, name)
            if ref is not None and not StorageService.resolve(base, ref).exists():
                raise ConfigError(f"{name} '{ref}' referenced by {path} does not exist")
        return config

    @staticmethod
    def resolve(base: Path, ref: str) -> Path:
        candidate = Path(ref)
        if candidate.is_absolute() or candidate.exists():
            return candidate
        return base / candidate

    @staticmethod
    def config_layout(config: RunConfig, base: Optional[Path] = None) -> SensorLayout:
        if config.layout_path is None:
            return default_layout()
        return StorageService.load_layout(StorageService.resolve(base or Path("."), config.layout_path))

    @staticmethod
    def config_calibration(config: RunConfig, base: Optional[Path] = None) -> Calibration:
        if config.calibration_path is None:
            return config.default_calibration()
        return StorageService.load_calibration(StorageService.resolve(base or Path("."), config.calibration_path))

    @staticmethod
    def write_odometry(path: PathLike, track: List[OdometrySample]) -> Path:
        return StorageService.write_csv(path, ODOMETRY_COLUMNS, (s.to_row() for s in track))

    @staticmethod
    def read_odometry(path: PathLike) -> List[OdometrySample]:
        return [OdometrySample.from_row(row) for row in StorageService.read_csv(path)]

    @staticmethod
    def write_uls_frames(path: PathLike, frames: List[UltrasonicFrame]) -> Path:
        return StorageService.write_jsonl(path, (f.to_dict() for f in frames))

    @staticmethod
    def read_uls_frames(path: PathLike) -> List[UltrasonicFrame]:
        try:
            return [UltrasonicFrame.from_dict(r) for r in StorageService.read_jsonl(path)]
        except (ValidationError, KeyError) as e:
            raise UltrasonicError(f"invalid ultrasonic frame file {path}: {e}")

    # Datasets
    @staticmethod
    def scene_dirs(dataset_root: PathLike, split: str) -> List[Path]:
        root = Path(dataset_root) / split
        if not root.is_dir():
            raise SimError(f"dataset split directory {root} does not exist")
        return sorted(p for p in root.iterdir() if p.is_dir())

    @staticmethod
    def load_scene(scene_dir: PathLike) -> Scene:
        try:
            return Scene.from_dict(StorageService.read_json(Path(scene_dir) / "scene.json"))
        except ValidationError as e:
            raise SimError(f"invalid scene file in {scene_dir}: {e.errors()[0]['msg']}")

    @staticmethod
    def load_scene_index(scene_dir: PathLike) -> SceneIndex:
        try:
            return SceneIndex.from_dict(StorageService.read_json(Path(scene_dir) / "index.json"))
        except ValidationError as e:
            raise SimError(f"invalid index file in {scene_dir}: {e.errors()[0]['msg']}")


# Create singleton instance
storage_service = StorageService()
