"""点云值类型、RANSAC平面点提取与随机下采样"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from lidar_odometry.errors import TooFewPoints

logger = logging.getLogger(__name__)

# 内点比例低于该值时认为场景中没有主平面
MIN_INLIER_FRACTION = 0.05
# 判断三点共线的法向量长度下限
_DEGENERATE_NORM = 1e-12
# 最小二乘重拟合与内点重选的最大轮数
_REFIT_ROUNDS = 10


@dataclass(frozen=True)
class PointCloud:
    """n 个点的坐标（米）与 c 维特征（KITTI 中 c=1，即反射强度）

    Args:
        xyz (np.ndarray): n×3 坐标
        features (np.ndarray): n×c 特征，省略时为 n×1 的零强度
    """

    xyz: np.ndarray
    features: Optional[np.ndarray] = None

    def __post_init__(self):
        xyz = np.array(self.xyz, dtype=np.float64).reshape(-1, 3)
        if self.features is None:
            features = np.zeros((xyz.shape[0], 1))
        else:
            features = np.array(self.features, dtype=np.float64)
            if features.ndim == 1:
                features = features.reshape(-1, 1)
        if features.shape[0] != xyz.shape[0]:
            raise ValueError(
                f"坐标与特征点数不一致: {xyz.shape[0]} vs {features.shape[0]}"
            )
        if not (np.all(np.isfinite(xyz)) and np.all(np.isfinite(features))):
            raise ValueError("点云包含非有限值")
        xyz.setflags(write=False)
        features.setflags(write=False)
        object.__setattr__(self, "xyz", xyz)
        object.__setattr__(self, "features", features)

    def __len__(self) -> int:
        return self.xyz.shape[0]

    @property
    def channels(self) -> int:
        return self.features.shape[1]

    def select(self, index: np.ndarray) -> "PointCloud":
        """按索引或布尔掩码取子集，保持原顺序"""
        return PointCloud(self.xyz[index], self.features[index])

    def translated(self, offset: np.ndarray) -> "PointCloud":
        return PointCloud(self.xyz + np.asarray(offset, dtype=np.float64), self.features)


@dataclass(frozen=True)
class PlaneModel:
    """平面 {x : normal·x + offset = 0}

    Args:
        normal (np.ndarray): 单位法向量
        offset (float): 偏移量，单位米
        inlier_count (int): 被移除的内点数量，未找到平面时为0
    """

    normal: np.ndarray
    offset: float
    inlier_count: int

    def distance(self, xyz: np.ndarray) -> np.ndarray:
        """带符号的点到平面距离"""
        return xyz @ self.normal + self.offset


@dataclass
class RansacConfig:
    """平面RANSAC参数

    Args:
        threshold (float): 内点距离阈值，默认0.3米
        iterations (int): 迭代次数，默认200
        seed (int): 随机种子
    """

    threshold: float = 0.3
    iterations: int = 200
    seed: int = 0


def _fit_plane_lstsq(xyz: np.ndarray) -> Tuple[np.ndarray, float]:
    """最小二乘平面拟合（质心 + 最小奇异值方向）"""
    centroid = xyz.mean(axis=0)
    _, _, vt = np.linalg.svd(xyz - centroid, full_matrices=False)
    normal = vt[-1]
    normal = normal / np.linalg.norm(normal)
    return normal, float(-normal @ centroid)


def _refine(
    xyz: np.ndarray, mask: np.ndarray, threshold: float
) -> Tuple[Optional[PlaneModel], np.ndarray]:
    """交替做最小二乘拟合与内点重选；返回的掩码总是返回模型下的内点"""
    for _ in range(_REFIT_ROUNDS):
        normal, offset = _fit_plane_lstsq(xyz[mask])
        refined = np.abs(xyz @ normal + offset) <= threshold
        count = int(np.count_nonzero(refined))
        if count < 3:
            return None, mask
        if np.array_equal(refined, mask):
            break
        mask = refined
    return PlaneModel(normal=normal, offset=offset, inlier_count=count), refined


def remove_dominant_plane(
    cloud: PointCloud,
    threshold: float = 0.3,
    iterations: int = 200,
    rng_seed: int = 0,
) -> Tuple[PointCloud, PlaneModel]:
    """三点RANSAC提取主平面（街道面）并移除其内点

    RANSAC 最优模型（内点数相同时取迭代序号较小的）的内点经最小二乘重拟合后，
    在新平面下重新选取内点，直到内点集合不再变化或达到轮数上限。被移除的点
    恰好是返回的平面模型下 |距离| <= threshold 的点。

    Args:
        cloud (PointCloud): 输入点云
        threshold (float): 内点距离阈值（米）
        iterations (int): RANSAC 迭代次数
        rng_seed (int): 随机种子，相同种子结果完全一致

    Returns:
        Tuple[PointCloud, PlaneModel]: 去除平面点后的点云与平面模型；
            最优内点比例不足5%时原样返回点云，inlier_count=0
    """
    n = len(cloud)
    if n < 3:
        raise TooFewPoints(f"平面拟合至少需要3个点，实际只有 {n} 个")
    if threshold <= 0 or iterations < 1:
        raise ValueError("threshold 必须大于0且 iterations 至少为1")

    rng = np.random.default_rng(rng_seed)
    xyz = cloud.xyz
    best_count = -1
    best_mask: Optional[np.ndarray] = None
    best_normal = np.array([0.0, 0.0, 1.0])
    best_offset = 0.0

    for _ in range(iterations):
        sample = rng.choice(n, size=3, replace=False)
        a, b, c = xyz[sample]
        normal = np.cross(b - a, c - a)
        norm = np.linalg.norm(normal)
        if norm < _DEGENERATE_NORM:
            continue
        normal = normal / norm
        offset = -float(normal @ a)
        mask = np.abs(xyz @ normal + offset) <= threshold
        count = int(np.count_nonzero(mask))
        # 严格大于：并列时保留更早的迭代
        if count > best_count:
            best_count, best_mask = count, mask
            best_normal, best_offset = normal, offset

    if best_mask is None or best_count < MIN_INLIER_FRACTION * n:
        logger.warning(
            f"未找到主平面：最优内点数 {max(best_count, 0)}/{n}，低于 {MIN_INLIER_FRACTION:.0%}"
        )
        return cloud, PlaneModel(best_normal, best_offset, 0)

    model, mask = _refine(xyz, best_mask, threshold)
    if model is None:
        logger.debug("重拟合平面的内点不足3个，沿用三点模型")
        model, mask = PlaneModel(best_normal, best_offset, best_count), best_mask
    logger.debug(f"主平面内点 {model.inlier_count}/{n}，法向量 {np.round(model.normal, 4)}")
    return cloud.select(~mask), model


def random_subsample(cloud: PointCloud, n_max: int, rng_seed: int = 0) -> PointCloud:
    """无放回均匀下采样到 n_max 个点，保持原始索引顺序"""
    if n_max < 1:
        raise ValueError("n_max 至少为1")
    if len(cloud) <= n_max:
        return cloud
    rng = np.random.default_rng(rng_seed)
    index = np.sort(rng.choice(len(cloud), size=n_max, replace=False))
    return cloud.select(index)
