"""轨迹累积与 KITTI 子序列误差 E_t（比例）和 E_r（度/米）"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from lidar_odometry.errors import LengthMismatch
from lidar_odometry.geometry import (
    PoseDelta,
    RigidTransform,
    Trajectory,
    compose,
    delta_to_transform,
    invert,
    matrix_angle_deg,
)

logger = logging.getLogger(__name__)

DEFAULT_LENGTHS: Tuple[float, ...] = (100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0)


def accumulate(deltas: Iterable[PoseDelta]) -> Trajectory:
    """pose_0 = I，pose_{t+1} = pose_t · T(delta_t)"""
    poses = [RigidTransform.identity()]
    for delta in deltas:
        poses.append(compose(poses[-1], delta_to_transform(delta)))
    return Trajectory(tuple(poses))


def path_distances(traj: Trajectory) -> np.ndarray:
    """累积路程 s(k)，s(0) = 0"""
    steps = np.linalg.norm(np.diff(traj.translations(), axis=0), axis=1)
    return np.concatenate(([0.0], np.cumsum(steps)))


@dataclass(frozen=True)
class SubSequence:
    first: int
    last: int
    length: float
    dist: float


@dataclass(frozen=True)
class SubSequenceSet:
    """子序列集合 S：起点 i、终点 j、长度档位与真值路程"""

    entries: Tuple[SubSequence, ...]

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def subsequence_set(
    traj: Trajectory, lengths: Sequence[float] = DEFAULT_LENGTHS, stride: int = 1
) -> SubSequenceSet:
    """对每个起点 i（步长 stride）和每个长度 L，取路程首次达到 L 的最小 j

    不存在这样的 j 时跳过该条目。
    """
    if len(traj) < 2:
        raise ValueError("轨迹至少需要两帧")
    if stride < 1:
        raise ValueError("stride 至少为1")
    s = path_distances(traj)
    entries: List[SubSequence] = []
    for i in range(0, len(traj), stride):
        ahead = s[i:] - s[i]
        for length in lengths:
            offset = int(np.searchsorted(ahead, length, side="left"))
            if offset >= len(ahead):
                continue
            entries.append(SubSequence(i, i + offset, float(length), float(ahead[offset])))
    return SubSequenceSet(tuple(entries))


def pose_error(gt_ij: RigidTransform, pred_ij: RigidTransform) -> Tuple[float, float]:
    """误差变换 T_gt⁻¹·T_pred 的平移长度（米）和旋转角（度）

    旋转部分按 R_gtᵀ·R_pred 逐元素相乘后沿同一轴求和，两者相同时结果严格对称，
    旋转角恰好为0。
    """
    r_gt, r_pred = gt_ij.rotation, pred_ij.rotation
    r_err = (r_gt[:, :, None] * r_pred[:, None, :]).sum(axis=0)
    t_err = r_gt.T @ (pred_ij.translation - gt_ij.translation)
    return float(np.linalg.norm(t_err)), matrix_angle_deg(r_err)


@dataclass(frozen=True)
class ClassErrors:
    count: int
    e_t: float
    e_r: float


@dataclass(frozen=True)
class OdomErrors:
    """逐条目的误差比值

    Args:
        lengths (np.ndarray): 每个条目的长度档位
        t_ratios (np.ndarray): t_err / dist（无量纲）
        r_ratios (np.ndarray): angle / dist（度/米）
    """

    lengths: np.ndarray = field(default_factory=lambda: np.empty(0))
    t_ratios: np.ndarray = field(default_factory=lambda: np.empty(0))
    r_ratios: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __len__(self) -> int:
        return len(self.t_ratios)

    @property
    def e_t(self) -> float:
        return float(np.mean(self.t_ratios)) if len(self) else 0.0

    @property
    def e_r(self) -> float:
        return float(np.mean(self.r_ratios)) if len(self) else 0.0

    def per_class(self) -> Dict[float, ClassErrors]:
        result = {}
        for length in np.unique(self.lengths):
            mask = self.lengths == length
            result[float(length)] = ClassErrors(
                int(mask.sum()), float(np.mean(self.t_ratios[mask])), float(np.mean(self.r_ratios[mask]))
            )
        return result

    @classmethod
    def pooled(cls, parts: Iterable["OdomErrors"]) -> "OdomErrors":
        """合并多条序列的条目，结果等于对所有条目求平均"""
        parts = list(parts)
        if not parts:
            return cls()
        return cls(
            np.concatenate([p.lengths for p in parts]),
            np.concatenate([p.t_ratios for p in parts]),
            np.concatenate([p.r_ratios for p in parts]),
        )


def odometry_errors(gt: Trajectory, pred: Trajectory, subsequences: SubSequenceSet) -> OdomErrors:
    """按子序列计算相对位姿误差并以真值路程归一化"""
    if len(gt) != len(pred):
        raise LengthMismatch(f"真值轨迹 {len(gt)} 帧，预测轨迹 {len(pred)} 帧")
    lengths, t_ratios, r_ratios = [], [], []
    for entry in subsequences:
        gt_ij = compose(invert(gt[entry.first]), gt[entry.last])
        pred_ij = compose(invert(pred[entry.first]), pred[entry.last])
        t_err, angle = pose_error(gt_ij, pred_ij)
        lengths.append(entry.length)
        t_ratios.append(t_err / entry.dist)
        r_ratios.append(angle / entry.dist)
    errors = OdomErrors(np.array(lengths), np.array(t_ratios), np.array(r_ratios))
    logger.debug(f"{len(errors)} 个子序列: E_t={errors.e_t:.6f} E_r={errors.e_r:.6f} deg/m")
    return errors
