import pytest

from bevfuse.config import Settings, settings, thread_count, validate_config
from bevfuse.errors import ConfigError
from bevfuse.models.camera import default_depth_bands
from bevfuse.models.run import CAMERA_ANCHOR, RunConfig
from bevfuse.models.scene import Split
from bevfuse.services.storage_service import storage_service
from seed import seed_configs


class TestPresets:
    def test_desk_defaults(self):
        config = RunConfig.desk()
        assert config.grid.shape == (120, 240)
        assert config.grid.anchor == CAMERA_ANCHOR
        assert config.network.num_classes == 2
        assert config.trainer.lr == pytest.approx(1e-3)
        assert config.trainer.batch_size == 8
        assert config.trainer.epochs == 100
        assert config.camera_range == 6.0

    def test_fidelity_grid_and_split(self):
        config = RunConfig.fidelity()
        assert config.grid.shape == (600, 1200)
        assert config.network.levels == 5
        assert config.sim.splits == {Split.TRAIN: 24, Split.VAL: 3, Split.TEST: 8}

    def test_five_level_bands_are_contiguous(self):
        bands = default_depth_bands(5)
        assert [(b.z_min, b.z_max) for b in bands] == [(3.2, 6.0), (1.6, 3.2), (0.8, 1.6), (0.4, 0.8), (0.2, 0.4)]
        for far, near in zip(bands, bands[1:]):
            assert near.z_max == far.z_min

    def test_unknown_preset(self):
        with pytest.raises(ValueError):
            RunConfig.preset_named("track")

    def test_unknown_override(self):
        with pytest.raises(ValueError):
            RunConfig.desk().with_overrides(colour="red")


class TestSettings:
    def test_environment_prefix(self, monkeypatch):
        monkeypatch.setenv("BEVFUSE_THREADS", "3")
        assert Settings().THREADS == 3

    def test_invalid_thread_count(self, monkeypatch):
        monkeypatch.setattr(settings, "THREADS", 0)
        with pytest.raises(ConfigError):
            validate_config()
        assert thread_count() == 1


class TestSeed:
    def test_seeded_configs_load(self, tmp_path, capsys):
        written = seed_configs(tmp_path)
        assert {p.name for p in written} == {
            "layout_default.json", "calib_desk.json", "desk.json", "calib_fidelity.json", "fidelity.json"
        }
        assert "✅" in capsys.readouterr().out

        config = storage_service.load_run_config(tmp_path / "fidelity.json")
        assert config.preset == "fidelity"
        calibration = storage_service.config_calibration(config, tmp_path)
        assert calibration == RunConfig.fidelity().default_calibration()
        layout = storage_service.config_layout(config, tmp_path)
        assert len(layout.signalways) > 0
