"""
Tests for the depth reliability network: schedule, layers, gradients,
serialization and training.
"""

import pytest
import numpy as np
from pathlib import Path
from typing import Any, Dict

import sys

sys.path.insert(0, str(Path(__file__).parent.parent))

from drm import (
    REFERENCE_TOTAL_PARAMS,
    DrmModel,
    DrmSchedule,
    TrainBatch,
    TrainConfig,
    batch_loss,
    build_training_set,
    drm_backward,
    drm_forward,
    drm_inputs,
    drm_train,
    load_model,
    network_forward,
    resize,
    resize_matrix,
    save_model,
    write_loss_csv,
)
from errors import ModelError, ShapeError
from scenegen import (
    CameraIntrinsics,
    CorruptionParams,
    DepthFrame,
    RgbFrame,
    World,
    generate_sequence,
    load_dataset,
    trajectory_from_config,
)


def _toy_batch(n: int = 4, h: int = 8, w: int = 8, seed: int = 0) -> TrainBatch:
    rng = np.random.default_rng(seed)
    inputs = rng.random((n, 5, h, w))
    targets = (rng.random((n, h, w)) < 0.95).astype(np.float64)
    return TrainBatch(inputs, targets)


class TestSchedule:
    """Tests for parameter accounting."""

    def test_default_group_counts(self) -> None:
        groups = DrmSchedule().group_counts()
        assert groups == {"stem": 720, "encoder": 22864, "decoder": 23872, "head": 16}

    def test_default_total_and_reference(self) -> None:
        model = DrmModel.zeros()
        meta = model.metadata()
        assert meta["counts"]["total"] == 47472
        assert meta["counts"]["reference_total"] == REFERENCE_TOTAL_PARAMS
        assert meta["counts"]["deviation"] == 47472 - 61936

    def test_tiny_schedule_count(self, tiny_schedule: DrmSchedule) -> None:
        assert tiny_schedule.param_count() == 134

    def test_block_counts_sum_to_total(self) -> None:
        schedule = DrmSchedule()
        assert sum(schedule.block_counts().values()) == schedule.param_count()

    def test_macs_grow_with_resolution(self) -> None:
        schedule = DrmSchedule()
        assert schedule.macs(320, 240) > schedule.macs(160, 120) > 0

    def test_wrong_weight_count(self, tiny_schedule: DrmSchedule) -> None:
        with pytest.raises(ModelError):
            DrmModel(tiny_schedule, np.zeros(10))

    def test_empty_encoder_rejected(self) -> None:
        with pytest.raises(ModelError):
            DrmSchedule(stem_channels=4, encoder_channels=())


class TestLayers:
    """Tests for resampling and the forward pass."""

    def test_resize_matrix_identity(self) -> None:
        np.testing.assert_allclose(resize_matrix(5, 5), np.eye(5))

    def test_resize_matrix_rows_are_convex(self) -> None:
        m = resize_matrix(7, 3)
        np.testing.assert_allclose(m.sum(axis=1), 1.0)
        assert m.min() >= 0.0

    def test_resize_preserves_constant(self) -> None:
        out = resize(np.full((2, 4, 6), 0.25), 9, 5)
        np.testing.assert_allclose(out, 0.25)

    def test_zero_weights_give_half(self) -> None:
        model = DrmModel.zeros(work_size=(16, 12))
        rng = np.random.default_rng(1)
        rgb = RgbFrame(rng.random((10, 14, 3)))
        depth = DepthFrame.from_values(rng.uniform(0.5, 4.0, (10, 14)))
        rel = drm_forward(model, rgb, depth, np.zeros((10, 14)))
        assert rel.shape == (10, 14)
        np.testing.assert_allclose(rel.values, 0.5)

    def test_single_pixel_input(self, tiny_schedule: DrmSchedule) -> None:
        model = DrmModel.initialize(tiny_schedule, seed=2, work_size=(1, 1))
        out, _ = network_forward(model, np.ones((1, 5, 1, 1)))
        assert out.shape == (1, 1, 1)
        assert 0.0 < out[0, 0, 0] < 1.0

    def test_odd_sizes_restore_native_resolution(self, tiny_schedule: DrmSchedule) -> None:
        model = DrmModel.initialize(tiny_schedule, seed=0, work_size=(7, 5))
        out, _ = network_forward(model, np.random.default_rng(0).random((2, 5, 5, 7)))
        assert out.shape == (2, 5, 7)

    def test_wrong_channel_count(self, tiny_schedule: DrmSchedule) -> None:
        model = DrmModel.initialize(tiny_schedule)
        with pytest.raises(ShapeError):
            network_forward(model, np.zeros((1, 4, 4, 4)))

    def test_input_shape_mismatch(self) -> None:
        rgb = RgbFrame(np.zeros((4, 4, 3)))
        depth = DepthFrame.from_values(np.ones((4, 5)))
        with pytest.raises(ShapeError):
            drm_inputs(rgb, depth, np.zeros((4, 5)))

    def test_inputs_are_normalized(self) -> None:
        depth = DepthFrame.from_values(np.array([[5.0, 0.0]]))
        x = drm_inputs(RgbFrame(np.zeros((1, 2, 3))), depth, np.zeros((1, 2)))
        assert x.shape == (5, 1, 2)
        assert x[3].tolist() == [[0.5, 0.0]]


class TestGradients:
    """Tests for the analytic backward pass."""

    @staticmethod
    def _relu_masks(model: DrmModel, inputs: np.ndarray) -> list:
        _, tape = network_forward(model, inputs)
        masks = [tape.stem_pre > 0]
        masks += [b > 0 for _, _, b in tape.enc]
        masks += [b > 0 for _, _, _, b in tape.dec]
        return masks

    def _central_difference(
        self, model: DrmModel, batch: TrainBatch, k: int, eps: float
    ) -> float:
        """Central difference with a step that stays on one side of every ReLU."""
        base = self._relu_masks(model, batch.inputs)
        for _ in range(12):
            plus = model.weights.copy()
            minus = model.weights.copy()
            plus[k] += eps
            minus[k] -= eps
            up = DrmModel(model.schedule, plus)
            down = DrmModel(model.schedule, minus)
            same_side = all(
                np.array_equal(m0, m1) and np.array_equal(m0, m2)
                for m0, m1, m2 in zip(
                    base, self._relu_masks(up, batch.inputs), self._relu_masks(down, batch.inputs)
                )
            )
            if same_side:
                return (batch_loss(up, batch) - batch_loss(down, batch)) / (2 * eps)
            eps /= 2
        raise AssertionError(f"weight {k} sits on a ReLU boundary")

    @pytest.mark.parametrize("seed", [0, 1, 2, 3, 4, 5])
    def test_matches_finite_differences(self, tiny_schedule: DrmSchedule, seed: int) -> None:
        """Every weight agrees with central differences taken off the ReLU kinks."""
        model = DrmModel.initialize(tiny_schedule, seed=seed, work_size=(8, 6))
        batch = _toy_batch(n=2, h=6, w=8, seed=seed)
        out, _ = network_forward(model, batch.inputs)
        # 0/1 targets against a sigmoid keep the L1 sign fixed
        assert ((out > 0) & (out < 1)).all()
        analytic = drm_backward(model, batch)
        numeric = np.array([
            self._central_difference(model, batch, k, 1e-5) for k in range(model.weights.size)
        ])
        scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-3 * np.abs(analytic).max())
        assert np.abs(analytic).max() > 0
        assert np.max(np.abs(analytic - numeric) / scale) < 1e-4

    def test_duplicated_batch_same_gradient(self, tiny_schedule: DrmSchedule) -> None:
        model = DrmModel.initialize(tiny_schedule, seed=5)
        single = _toy_batch(n=1, seed=5)
        doubled = TrainBatch(
            np.concatenate([single.inputs, single.inputs]),
            np.concatenate([single.targets, single.targets]),
        )
        np.testing.assert_allclose(
            drm_backward(model, doubled), drm_backward(model, single), rtol=1e-10, atol=1e-14
        )

    def test_descent_step_reduces_loss(self) -> None:
        schedule = DrmSchedule(stem_channels=4, encoder_channels=(4,))
        model = DrmModel.initialize(schedule, seed=0)
        inputs = np.random.default_rng(0).random((1, 5, 4, 4))
        batch = TrainBatch(inputs, np.ones((1, 4, 4)))
        grad = drm_backward(model, batch)
        loss_before = batch_loss(model, batch)
        stepped = DrmModel(schedule, model.weights - 0.01 * grad)
        assert batch_loss(stepped, batch) < loss_before


class TestSerialization:
    """Tests for the model file format."""

    def test_round_trip(self, tmp_path: Path, tiny_schedule: DrmSchedule) -> None:
        model = DrmModel.initialize(tiny_schedule, seed=9, work_size=(16, 12))
        path = tmp_path / "m.bin"
        save_model(model, path)
        back = load_model(path)
        assert back.schedule == tiny_schedule
        assert back.work_size == (16, 12)
        np.testing.assert_array_equal(back.weights, model.weights.astype(np.float32))

    def test_header_is_json_line(self, tmp_path: Path) -> None:
        path = tmp_path / "m.bin"
        save_model(DrmModel.zeros(), path)
        header = path.read_bytes().split(b"\n", 1)[0]
        assert b'"total": 47472' in header

    def test_truncated_weights(self, tmp_path: Path, tiny_schedule: DrmSchedule) -> None:
        path = tmp_path / "m.bin"
        save_model(DrmModel.initialize(tiny_schedule), path)
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(ModelError):
            load_model(path)

    def test_foreign_format(self, tmp_path: Path) -> None:
        path = tmp_path / "m.bin"
        path.write_bytes(b'{"format": "other", "schedule": {"stem_channels": 1, "encoder_channels": [2]}}\n')
        with pytest.raises(ModelError, match="unsupported format"):
            load_model(path)

    def test_missing_file(self, tmp_path: Path) -> None:
        with pytest.raises(FileNotFoundError):
            load_model(tmp_path / "absent.bin")


class TestTraining:
    """Tests for SGD training."""

    def _config(self, **kwargs: Any) -> TrainConfig:
        base: Dict[str, Any] = dict(
            work_width=8, work_height=8, stem_channels=1, encoder_channels=(2, 3),
            epochs=30, batch_size=4, seed=0,
        )
        base.update(kwargs)
        return TrainConfig(**base)

    def test_loss_decreases_on_toy_set(self) -> None:
        model = drm_train(_toy_batch(), self._config())
        assert len(model.loss_curve) == 31
        assert model.loss_curve[-1] < model.loss_curve[0]

    def test_training_is_deterministic(self) -> None:
        a = drm_train(_toy_batch(), self._config(epochs=3))
        b = drm_train(_toy_batch(), self._config(epochs=3))
        np.testing.assert_array_equal(a.weights, b.weights)
        assert a.loss_curve == b.loss_curve

    def test_zero_epochs_returns_initialization(self) -> None:
        config = self._config(epochs=0)
        model = drm_train(_toy_batch(), config)
        init = DrmModel.initialize(config.schedule, seed=0, work_size=(8, 8))
        np.testing.assert_array_equal(model.weights, init.weights)
        assert len(model.loss_curve) == 1

    def test_wrong_working_resolution(self) -> None:
        with pytest.raises(ShapeError):
            drm_train(_toy_batch(h=6), self._config())

    def test_invalid_config(self) -> None:
        with pytest.raises(ValueError):
            TrainConfig(momentum=1.0)

    def test_loss_csv(self, tmp_path: Path) -> None:
        model = drm_train(_toy_batch(), self._config(epochs=2))
        path = tmp_path / "loss.csv"
        write_loss_csv(model, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "epoch,loss"
        assert len(lines) == 4

    def test_training_set_from_dataset(
        self,
        tmp_path: Path,
        corridor_world: World,
        corridor_config: Dict[str, Any],
        small_camera: CameraIntrinsics,
    ) -> None:
        poses = trajectory_from_config(corridor_config)
        generate_sequence(corridor_world, poses, small_camera, CorruptionParams(seed=2), tmp_path)
        ds = load_dataset(tmp_path)
        for reference in ("clean", "temporal"):
            config = self._config(work_width=16, work_height=12, reference=reference, reference_window=3)
            batch = build_training_set([ds], config)
            assert batch.inputs.shape == (6, 5, 12, 16)
            assert batch.targets.shape == (6, 12, 16)
            assert batch.targets.min() >= 0.0 and batch.targets.max() <= 1.0
