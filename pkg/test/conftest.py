import numpy as np
import pytest

from lidar_odometry.dataio.kitti import CalibTr, KittiLayout
from lidar_odometry.dataio.synthetic import SyntheticConfig, make_synthetic_pair, make_synthetic_sequence
from lidar_odometry.network.config import tiny
from lidar_odometry.network.params import ModelParams


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    return tiny()


@pytest.fixture
def tiny_params(tiny_config):
    return ModelParams.init(tiny_config, seed=0)


@pytest.fixture
def small_pairs():
    """8 个无噪声的小规模合成帧对"""
    cfg = SyntheticConfig(n_points=64, max_t=1.0, max_r=3.0)
    return [make_synthetic_pair(seed, cfg) for seed in range(8)]


@pytest.fixture
def synthetic_root(tmp_path):
    """KITTI 目录布局的合成序列 00，6 帧，单位外参"""
    root = tmp_path / "synth"
    cfg = SyntheticConfig(n_points=96, max_t=1.0, max_r=2.0)
    clouds, poses = make_synthetic_sequence(7, 6, cfg)
    KittiLayout(root).write_sequence(0, clouds, poses, CalibTr.identity())
    return root
