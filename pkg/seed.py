import os
import sys
from pathlib import Path

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from bevfuse.models.camera import desk_calibration, fidelity_calibration
from bevfuse.models.run import RunConfig
from bevfuse.models.ultrasonic import default_layout
from bevfuse.services.storage_service import storage_service

CONFIG_DIR = Path("configs")


def seed_configs(config_dir: Path = CONFIG_DIR) -> list:
    """Write the preset run configurations and the files they reference"""
    written = []

    layout = storage_service.write_json(config_dir / "layout_default.json", default_layout().to_dict())
    print(f"✅ Sensor layout: {layout}")
    print(f"   🔊 {len(default_layout().sensors)} sensors, {len(default_layout().signalways)} signalways")
    written.append(layout)

    for name, calibration in (("desk", desk_calibration()), ("fidelity", fidelity_calibration())):
        calib = storage_service.write_json(config_dir / f"calib_{name}.json", calibration.to_dict())
        print(f"✅ Calibration: {calib}")
        print(f"   📷 {calibration.width}x{calibration.height}, f={calibration.fx}")
        written.append(calib)

        config = RunConfig.preset_named(name).with_overrides(
            layout_path="layout_default.json",
            calibration_path=f"calib_{name}.json",
        )
        path = storage_service.write_json(config_dir / f"{name}.json", config.to_dict())
        print(f"✅ Run config: {path}")
        print(f"   📐 data grid {config.grid.rows}x{config.grid.cols} at {config.grid.cell_size} m")
        print(f"   🎬 {config.sim.scene_count} scenes, {config.network.levels} pyramid levels")
        print()
        written.append(path)
    return written


def main():
    print("🚗 bevfuse - preset configuration seed")
    print("=" * 50)
    print()
    try:
        files = seed_configs()
    except OSError as e:
        print(f"❌ Error writing configuration files: {e}")
        sys.exit(1)
    print(f"🎉 {len(files)} files written to {CONFIG_DIR}/")


if __name__ == "__main__":
    main()
