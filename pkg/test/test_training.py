import math

import numpy as np
import pytest

from lidar_odometry.autodiff import Tape, grad_check
from lidar_odometry.dataio import FramePair, SyntheticConfig, make_synthetic_pair
from lidar_odometry.errors import ConfigError, DivergedLoss
from lidar_odometry.geometry import PoseDelta, RigidTransform, compose, delta_to_transform
from lidar_odometry.network import ModelParams, tiny
from lidar_odometry.training import (
    TrainConfig,
    augment_swap,
    combined_loss,
    cos_dist,
    evaluate_loss,
    load_params,
    lr_at,
    mae_loss,
    reverse_delta,
    train,
)
from lidar_odometry.training.trainer import batch_chunks

CONSTANT_TARGET = PoseDelta((0.5, -0.5, 0.25), (1.5, -1.0, 0.5))


def with_target(pairs, target):
    return [FramePair(pair.p, pair.q, target) for pair in pairs]


def quick_config(**overrides):
    values = dict(epochs=2, lr_base=1e-2, batch_pairs=4, swap_probability=0.0, checkpoint_every=0)
    values.update(overrides)
    return TrainConfig(**values)


class TestLosses:
    def test_mae(self):
        assert mae_loss(np.zeros(6), [6, 0, 0, 0, 0, 0]) == pytest.approx(1.0)
        assert mae_loss(CONSTANT_TARGET, CONSTANT_TARGET) == 0.0

    def test_cos_dist(self):
        y = np.array([1.0, 2.0, -1.0, 0.5, 0.0, 3.0])
        assert cos_dist(y, 2 * y) == pytest.approx(0.0, abs=1e-12)
        assert cos_dist([1, 0, 0, 0, 0, 0], [0, 1, 0, 0, 0, 0]) == pytest.approx(1.0)
        assert cos_dist(y, -y) == pytest.approx(2.0)
        assert cos_dist(np.zeros(6), y) == 0.0

    @pytest.mark.parametrize("mode", ["translation", "full"])
    def test_combined_matches_scalar_definitions(self, rng, mode):
        pred = rng.normal(size=(3, 6))
        target = rng.normal(size=(3, 6))
        tape = Tape(np.float64)
        value = combined_loss(tape, tape.param(pred), target, 0.5, mode).item()
        part = slice(0, 3) if mode == "translation" else slice(0, 6)
        expected = np.mean(np.abs(pred - target)) + 0.5 * np.mean(
            [cos_dist(target[i, part], pred[i, part]) for i in range(3)]
        )
        assert value == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("mode", ["translation", "full"])
    def test_combined_gradient(self, rng, mode):
        pred = rng.normal(size=(4, 6))
        target = pred + rng.choice([-1.0, 1.0], size=(4, 6)) * rng.uniform(0.5, 1.0, size=(4, 6))
        error = grad_check(lambda tape, x: combined_loss(tape, x, target, 0.3, mode), [pred])
        assert error < 1e-6

    def test_unknown_mode(self, rng):
        tape = Tape(np.float64)
        with pytest.raises(ValueError):
            combined_loss(tape, tape.param(rng.normal(size=(2, 6))), np.zeros((2, 6)), 1.0, "rotation")


class TestAugmentation:
    def test_reverse_composes_to_identity(self, rng):
        for _ in range(50):
            delta = PoseDelta(rng.uniform(-2, 2, size=3), rng.uniform(-20, 20, size=3))
            both = compose(delta_to_transform(delta), delta_to_transform(reverse_delta(delta)))
            assert both.allclose(RigidTransform.identity(), atol=1e-9)

    def test_swap(self, small_pairs):
        pair = small_pairs[0]
        swapped = augment_swap(pair, np.random.default_rng(0), force=True)
        assert swapped.p is pair.q and swapped.q is pair.p
        np.testing.assert_allclose(reverse_delta(swapped.target).as_vector(), pair.target.as_vector(), atol=1e-9)
        assert augment_swap(pair, np.random.default_rng(0), probability=0.0) is pair

    def test_swap_always_draws(self, small_pairs):
        a, b = np.random.default_rng(5), np.random.default_rng(5)
        augment_swap(small_pairs[0], a, probability=0.0)
        augment_swap(small_pairs[0], b, probability=1.0)
        assert a.random() == b.random()


class TestSchedule:
    def test_default_steps(self):
        cfg = TrainConfig()
        assert lr_at(0, cfg) == pytest.approx(1e-3)
        assert lr_at(299, cfg) == pytest.approx(1e-3)
        assert lr_at(300, cfg) == pytest.approx(1e-4)
        assert lr_at(499, cfg) == pytest.approx(1e-5)

    def test_negative_epoch(self):
        with pytest.raises(ValueError):
            lr_at(-1, TrainConfig())


class TestConfigAndChunks:
    def test_chunks(self):
        assert batch_chunks(list(range(7)), 3) == [[0, 1, 2], [3, 4, 5, 6]]
        assert batch_chunks(list(range(6)), 3) == [[0, 1, 2], [3, 4, 5]]
        assert batch_chunks([0], 4) == [[0]]

    @pytest.mark.parametrize(
        "overrides",
        [
            {"batch_pairs": 1},
            {"epochs": -1},
            {"lr_decay_epochs": (400, 300)},
            {"swap_probability": 1.5},
            {"accumulate_batches": 0},
            {"precision": "float16"},
        ],
    )
    def test_invalid(self, overrides):
        with pytest.raises(ConfigError):
            TrainConfig(**overrides)


class TestTrain:
    def test_loss_decreases(self, small_pairs):
        pairs = with_target(small_pairs, CONSTANT_TARGET)
        _, history = train(pairs, tiny(), quick_config(epochs=30, lr_base=3e-2))
        assert len(history) == 30
        assert history.records[-1].train_loss < 0.5 * history.records[0].train_loss

    def test_deterministic(self, small_pairs):
        cfg = quick_config(epochs=2, swap_probability=0.5)
        a, history_a = train(small_pairs, tiny(), cfg)
        b, history_b = train(small_pairs, tiny(), cfg)
        assert history_a.to_csv(with_seconds=False) == history_b.to_csv(with_seconds=False)
        for name in a.tensors:
            np.testing.assert_array_equal(a.tensors[name], b.tensors[name])

    def test_zero_epochs(self, small_pairs):
        params, history = train(small_pairs, tiny(), quick_config(epochs=0))
        assert len(history) == 0
        initial = ModelParams.init(tiny(), seed=0)
        for name, value in initial.tensors.items():
            np.testing.assert_array_equal(params.tensors[name], value)

    def test_checkpoints(self, small_pairs, tmp_path):
        cfg = quick_config(epochs=3, checkpoint_every=2, checkpoint_dir=tmp_path)
        params, _ = train(small_pairs, tiny(), cfg)
        names = sorted(path.name for path in tmp_path.iterdir())
        assert names == ["epoch_0002.ckpt", "epoch_0003.ckpt", "last.ckpt"]
        restored = load_params(tmp_path / "last.ckpt")
        assert restored.config == tiny()
        for name, value in params.tensors.items():
            np.testing.assert_array_equal(restored.tensors[name], value)
        for name, value in params.buffers.items():
            np.testing.assert_array_equal(restored.buffers[name], value)

    def test_history_and_test_loss(self, small_pairs):
        cfg = quick_config(epochs=2, accumulate_batches=2, precision="float64")
        params, history = train(small_pairs[:6], tiny(), cfg, test_dataset=small_pairs[6:])
        assert params.dtype == np.float64
        assert all(math.isfinite(r.test_loss) for r in history.records)
        lines = history.to_csv().splitlines()
        assert lines[0] == "epoch,train_loss,test_loss,lr,seconds"
        assert len(lines) == 3
        assert all(float(line.split(",")[-1]) >= 0.0 for line in lines[1:])
        assert history.to_csv(with_seconds=False).splitlines()[0] == "epoch,train_loss,test_loss,lr"

    def test_too_few_pairs(self, small_pairs):
        with pytest.raises(ConfigError):
            train(small_pairs[:1], tiny(), quick_config())
        with pytest.raises(ConfigError):
            train([], tiny(), quick_config())

    def test_divergence_reported(self, small_pairs):
        huge = PoseDelta((1e39, 0.0, 0.0), (0.0, 0.0, 0.0))
        with pytest.raises(DivergedLoss) as info:
            train(with_target(small_pairs, huge), tiny(), quick_config(epochs=1))
        assert info.value.checkpoint is None

    def test_evaluate_loss(self, small_pairs, tiny_params):
        cfg = quick_config()
        assert math.isfinite(evaluate_loss(tiny_params.copy(), small_pairs, cfg))
        assert math.isnan(evaluate_loss(tiny_params, [], cfg))


@pytest.mark.slow
def test_overfits_sixteen_pairs():
    cfg = SyntheticConfig(n_points=128, max_t=1.0, max_r=3.0)
    pairs = [make_synthetic_pair(seed, cfg) for seed in range(16)]
    # 整批训练：回归头批归一化的统计量每步都取自同样的16个帧对，2000 轮即 2000 步
    train_cfg = TrainConfig(
        epochs=2000,
        lr_base=1e-2,
        lr_decay_epochs=(1200, 1700),
        batch_pairs=16,
        swap_probability=0.0,
        checkpoint_every=0,
    )
    _, history = train(pairs, tiny(), train_cfg)
    assert history.records[-1].train_loss <= 0.05
