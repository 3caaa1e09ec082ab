import math

import numpy as np
import pytest

from bevfuse.config import settings
from bevfuse.errors import NNError, SimError
from bevfuse.models.metrics import ObstacleInstance
from bevfuse.models.network import Mode, TrainerConfig
from bevfuse.models.run import RunConfig
from bevfuse.models.scene import SimConfig, Split
from bevfuse.services.evaluation_service import evaluation_service
from bevfuse.services.geometry_service import geometry_service
from bevfuse.services.mapping_service import mapping_service
from bevfuse.services.nn.checkpoint import load_checkpoint
from bevfuse.services.sim_service import sim_service
from bevfuse.services.storage_service import storage_service
from bevfuse.services.training_service import Trainer, training_service

from conftest import small_run_config


# ── Helpers ──────────────────────────────────────────────────────────────

def _config(dataset_root, tmp_path, **overrides):
    return small_run_config().with_overrides(dataset_root=dataset_root, output_root=tmp_path, **overrides)


# ── Inputs and targets ───────────────────────────────────────────────────

class TestTargets:
    def test_normalize_image(self):
        out = training_service.normalize_image(np.array([[0, 255]], dtype=np.uint8))
        assert out.shape == (1, 1, 2)
        np.testing.assert_allclose(out[0, 0], [-0.5, 0.5])

    def test_normalize_uls_is_monotone_and_clipped(self):
        out = training_service.normalize_uls(np.array([[-1.0, 0.0, 0.1, 1.0]]))[0, 0]
        assert out[0] == 0.0 and out[1] == 0.0
        assert out[2] == pytest.approx(math.log(2.0))
        assert np.all(np.diff(out[1:]) > 0)

    def test_one_hot(self):
        out = training_service.one_hot(np.array([[0, 1], [1, 0]]), 2)
        assert out.shape == (2, 2, 2)
        np.testing.assert_array_equal(out.sum(axis=0), 1.0)
        assert out[1, 0, 1] == 1.0

    def test_centroid_heatmap_peaks_at_centroid(self, tiny_grid):
        center = geometry_service.cell_center(tiny_grid, (3, 6))
        heat = training_service.centroid_heatmap(tiny_grid, [ObstacleInstance(cells=[(3, 6)], centroid=center)])
        assert heat[3, 6] == pytest.approx(1.0)
        assert np.unravel_index(np.argmax(heat), heat.shape) == (3, 6)
        assert heat[3, 7] == pytest.approx(math.exp(-0.5))

    def test_empty_heatmap(self, tiny_grid):
        assert not np.any(training_service.centroid_heatmap(tiny_grid, []))

    def test_target_shapes(self, dataset_root, dataset_config):
        samples = training_service.load_split(dataset_config, "val", dataset_root)[:3]
        spec = dataset_config.network.grid
        assert training_service.targets(samples, Mode.MULTIMODAL, spec, 2).shape == (3, 2, 32, 32)
        assert training_service.targets(samples, Mode.ULS, spec, 1).shape == (3, 1, 32, 32)


# ── Dataset loading ──────────────────────────────────────────────────────

class TestLoading:
    def test_load_split(self, dataset_root, dataset_config):
        samples = training_service.load_split(dataset_config, "train", dataset_root)
        assert len(samples) == 14
        first = samples[0]
        assert first.image.shape == (1, 64, 64)
        assert first.uls.shape == (1, 32, 32)
        assert first.labels.shape == (32, 32)
        assert first.name.endswith("/000000")
        assert np.all(first.uls >= 0)

    def test_frame_stride(self, dataset_root):
        config = small_run_config(frame_stride=3)
        samples = training_service.load_split(config, "test", dataset_root)
        assert [s.frame for s in samples] == [0, 3, 6]

    def test_missing_split(self, tmp_path, dataset_config):
        with pytest.raises(SimError):
            training_service.load_split(dataset_config, "train", tmp_path)

    def test_map_scene(self, dataset_root, dataset_config, tmp_path):
        scene_dir = storage_service.scene_dirs(dataset_root, "val")[0]
        count = mapping_service.map_scene(scene_dir, tmp_path / "maps", dataset_config.grid)
        assert count == len(storage_service.load_scene_index(scene_dir).camera_ts)
        grid = storage_service.load_float_grid(tmp_path / "maps" / "000000.npy")
        assert grid.shape == dataset_config.grid.shape
        assert (tmp_path / "maps" / "000000.pgm").is_file()


# ── Training and evaluation ──────────────────────────────────────────────

class TestTrainer:
    def test_tau_schedule(self, calibration, dataset_root, tmp_path):
        trainer = Trainer(_config(dataset_root, tmp_path), calibration, tmp_path)
        assert trainer.tau_at(0) == 1.0
        assert trainer.tau_at(1) == pytest.approx(0.95)
        assert trainer.tau_at(500) == pytest.approx(0.1)

    def test_fit_and_evaluate_multimodal(self, calibration, dataset_root, tmp_path):
        config = _config(dataset_root, tmp_path)
        samples = training_service.load_split(config, "train")
        result = Trainer(config, calibration, tmp_path).fit(samples)

        assert len(result.losses) == 2
        assert all(math.isfinite(v) for v in result.losses)
        assert result.checkpoint.name == "multimodal.bvf"
        rows = storage_service.read_csv(result.loss_log)
        assert [int(r["epoch"]) for r in rows] == [0, 1]
        assert float(rows[1]["tau"]) == pytest.approx(0.95)

        evaluation = evaluation_service.evaluate(config, calibration, result.checkpoint, "test", tmp_path / "eval")
        assert len(evaluation.frames) == 7
        for name in ("report.csv", "report_by_range.csv", "report_by_position.csv", "report_by_speed.csv"):
            assert (tmp_path / "eval" / name).is_file()
        report = storage_service.read_csv(tmp_path / "eval" / "report.csv")
        assert report[-1]["frame"] == "aggregate"
        assert 0.0 <= evaluation.aggregate.recall <= 1.0

    def test_uls_training_is_deterministic(self, calibration, dataset_root, tmp_path):
        runs = []
        for name in ("a", "b"):
            config = _config(dataset_root, tmp_path / name, mode="uls")
            samples = training_service.load_split(config, "val")
            runs.append(Trainer(config, calibration, tmp_path / name).fit(samples))
        assert runs[0].losses == runs[1].losses
        assert runs[0].checkpoint.name == "uls.bvf"
        assert runs[0].checkpoint.read_bytes() == runs[1].checkpoint.read_bytes()

    def test_thread_count_does_not_change_training(self, calibration, dataset_root, tmp_path, monkeypatch):
        runs = []
        for threads in (1, 4):
            monkeypatch.setattr(settings, "THREADS", threads)
            out = tmp_path / f"threads_{threads}"
            config = _config(dataset_root, out)
            runs.append(Trainer(config, calibration, out).fit(training_service.load_split(config, "train")))
        assert runs[0].losses == runs[1].losses
        assert runs[0].checkpoint.read_bytes() == runs[1].checkpoint.read_bytes()
        assert runs[0].loss_log.read_bytes() == runs[1].loss_log.read_bytes()

    def test_uls_evaluation_reports_peaks(self, calibration, dataset_root, tmp_path):
        config = _config(dataset_root, tmp_path, mode="uls")
        result = Trainer(config, calibration, tmp_path).fit(training_service.load_split(config, "val"))
        evaluation = evaluation_service.evaluate(config, calibration, result.checkpoint, "test", tmp_path / "eval")
        # no label grid is compared in heatmap mode
        assert evaluation.aggregate.recall is None

    def test_checkpoint_must_match_mode(self, calibration, dataset_root, tmp_path):
        config = _config(dataset_root, tmp_path, mode="uls")
        result = Trainer(config, calibration, tmp_path).fit(training_service.load_split(config, "val"))
        assert load_checkpoint(result.checkpoint)
        with pytest.raises(NNError):
            evaluation_service.load_network(_config(dataset_root, tmp_path), calibration, result.checkpoint)

    def test_no_samples(self, calibration, dataset_root, tmp_path):
        with pytest.raises(NNError):
            Trainer(_config(dataset_root, tmp_path), calibration, tmp_path).fit([])


class TestPeaks:
    def test_heatmap_peaks(self, tiny_grid):
        heat = np.zeros(tiny_grid.shape)
        heat[2, 2] = 0.9
        heat[2, 3] = 0.8
        heat[7, 7] = 0.4
        peaks = evaluation_service.heatmap_peaks(heat, tiny_grid)
        assert [p.cells for p in peaks] == [[(2, 2)]]

    def test_labels_from_logits(self):
        logits = np.zeros((2, 1, 2))
        logits[1, 0, 1] = 1.0
        np.testing.assert_array_equal(evaluation_service.labels_from_logits(logits), [[0, 1]])


# ── Modality comparison ──────────────────────────────────────────────────

@pytest.mark.slow
class TestModalities:
    def test_multimodal_beats_single_sensor_modes(self, calibration, tmp_path):
        config = RunConfig(
            sim=SimConfig(splits={Split.TRAIN: 12, Split.VAL: 2, Split.TEST: 2}),
            trainer=TrainerConfig(epochs=30),
        ).with_overrides(dataset_root=tmp_path / "data")
        sim_service.generate_dataset(config, 0, tmp_path / "data")
        samples = training_service.load_split(config, "train")

        reports = {}
        for mode in Mode:
            out = tmp_path / mode.value
            run = config.with_overrides(mode=mode.value, output_root=out)
            result = Trainer(run, calibration, out).fit(samples)
            reports[mode] = evaluation_service.evaluate(run, calibration, result.checkpoint, "test", out / "eval").aggregate

        multimodal, visible, uls = reports[Mode.MULTIMODAL], reports[Mode.VISIBLE], reports[Mode.ULS]
        assert multimodal.iou >= 0.5
        assert multimodal.iou - visible.iou > 0.05
        assert multimodal.euclidean_E < visible.euclidean_E
        assert multimodal.euclidean_E < uls.euclidean_E
