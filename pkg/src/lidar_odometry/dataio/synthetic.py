"""合成街景与合成帧对，作为小规模实验的真值数据集"""

import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from lidar_odometry.dataio.kitti import FramePair
from lidar_odometry.geometry import (
    PoseDelta,
    RigidTransform,
    Trajectory,
    compose,
    delta_to_transform,
    invert,
)
from lidar_odometry.pointcloud import PointCloud

logger = logging.getLogger(__name__)


@dataclass
class SyntheticConfig:
    """合成数据参数

    Args:
        n_points (int): 场景点数，至少16
        max_t (float): 每个平移分量的最大幅度（米）
        max_r (float): 每个欧拉角的最大幅度（度）
        noise_sigma (float): q 上附加的高斯噪声标准差（米）
        overlap (float): q 保留的点比例，(0, 1]
        plane_fraction (float): 地面点比例
        extent (float): 场景水平半宽（米）
        ground_z (float): 地面高度（米）
    """

    n_points: int = 256
    max_t: float = 1.0
    max_r: float = 5.0
    noise_sigma: float = 0.0
    overlap: float = 1.0
    plane_fraction: float = 0.45
    extent: float = 20.0
    ground_z: float = -1.7

    def __post_init__(self):
        if self.n_points < 16:
            raise ValueError("n_points 至少为16")
        if not 0.0 < self.overlap <= 1.0:
            raise ValueError("overlap 必须在 (0, 1] 内")
        if self.max_t < 0 or self.max_r < 0 or self.noise_sigma < 0:
            raise ValueError("max_t、max_r、noise_sigma 不能为负")
        if not 0.0 <= self.plane_fraction < 1.0:
            raise ValueError("plane_fraction 必须在 [0, 1) 内")


def make_street_scene(
    rng: np.random.Generator, cfg: SyntheticConfig
) -> Tuple[PointCloud, np.ndarray]:
    """一个地平面加 3–10 个随机物体簇

    Returns:
        Tuple[PointCloud, np.ndarray]: 场景点云与地面点掩码。物体点都比地面高至少0.5米。
    """
    n = cfg.n_points
    n_plane = int(round(cfg.plane_fraction * n))
    n_objects = n - n_plane

    plane = np.column_stack(
        [
            rng.uniform(-cfg.extent, cfg.extent, size=(n_plane, 2)),
            np.full(n_plane, cfg.ground_z),
        ]
    )

    n_clusters = int(rng.integers(3, 11))
    centers = rng.uniform(-0.8 * cfg.extent, 0.8 * cfg.extent, size=(n_clusters, 2))
    sizes = rng.uniform(0.5, 3.0, size=(n_clusters, 3))
    owner = rng.integers(0, n_clusters, size=n_objects)
    local = rng.uniform(-0.5, 0.5, size=(n_objects, 3)) * sizes[owner]
    objects = np.column_stack(
        [
            centers[owner] + local[:, :2],
            cfg.ground_z + 0.5 + (local[:, 2] + 0.5 * sizes[owner, 2]) * 1.5,
        ]
    )

    xyz = np.concatenate([plane, objects])
    intensity = rng.uniform(0.0, 1.0, size=(n, 1))
    is_plane = np.zeros(n, dtype=bool)
    is_plane[:n_plane] = True
    order = rng.permutation(n)
    return PointCloud(xyz[order], intensity[order]), is_plane[order]


def _random_delta(rng: np.random.Generator, max_t: float, max_r: float) -> PoseDelta:
    t = rng.uniform(-1.0, 1.0, size=3) * max_t
    r = rng.uniform(-1.0, 1.0, size=3) * max_r
    return PoseDelta(t, r)


def _observe(
    rng: np.random.Generator, scene: PointCloud, pose: RigidTransform, cfg: SyntheticConfig
) -> Tuple[PointCloud, np.ndarray]:
    """从 pose 处观测场景：变换到传感器坐标系、随机丢点、加噪声"""
    n_keep = max(1, int(round(cfg.overlap * len(scene))))
    keep = np.sort(rng.choice(len(scene), size=n_keep, replace=False))
    xyz = invert(pose).apply(scene.xyz[keep])
    if cfg.noise_sigma > 0:
        xyz = xyz + rng.normal(0.0, cfg.noise_sigma, size=xyz.shape)
    return PointCloud(xyz, scene.features[keep]), keep


def make_synthetic_pair(rng_seed: int, cfg: SyntheticConfig) -> FramePair:
    """合成帧对：q = T⁻¹·p 加噪声与丢点，T = delta_to_transform(target)

    noise_sigma=0 时 target 是精确真值；correspondence 给出 q 中每个点在 p 中的索引。
    """
    rng = np.random.default_rng(rng_seed)
    p, _ = make_street_scene(rng, cfg)
    target = _random_delta(rng, cfg.max_t, cfg.max_r)
    q, keep = _observe(rng, p, delta_to_transform(target), cfg)
    return FramePair(p, q, target, correspondence=keep)


def make_synthetic_sequence(
    seed: int, n_frames: int, cfg: SyntheticConfig
) -> Tuple[List[PointCloud], Trajectory]:
    """静态场景沿随机累积轨迹的观测序列

    轨迹以单位位姿开始，每帧向前（x 方向）移动 max_t/2 到 max_t，其余分量在
    ±max_t/4 和 ±max_r 内随机。返回每帧点云与世界坐标系下的位姿。
    """
    if n_frames < 2:
        raise ValueError("序列至少需要两帧")
    rng = np.random.default_rng(seed)
    scene, _ = make_street_scene(rng, cfg)
    poses = [RigidTransform.identity()]
    for _ in range(n_frames - 1):
        forward = rng.uniform(0.5, 1.0) * cfg.max_t
        side = rng.uniform(-0.25, 0.25, size=2) * cfg.max_t
        r = rng.uniform(-1.0, 1.0, size=3) * cfg.max_r
        step = delta_to_transform(PoseDelta((forward, side[0], side[1]), r))
        poses.append(compose(poses[-1], step))
    clouds = [_observe(rng, scene, pose, cfg)[0] for pose in poses]
    logger.info(f"生成合成序列：{n_frames} 帧，每帧约 {len(clouds[0])} 个点")
    return clouds, Trajectory(tuple(poses))
