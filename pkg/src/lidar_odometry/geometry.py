"""SE(3) 位姿代数与欧拉角编码。

欧拉角约定：固定轴 roll-pitch-yaw，R = Rz(yaw)·Ry(pitch)·Rx(roll)，单位为度。
PoseDelta 中 r 的顺序为 (roll, pitch, yaw)。
"""

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Tuple

import numpy as np

from lidar_odometry.errors import GimbalLock

logger = logging.getLogger(__name__)

# 旋转矩阵正交性容差
ORTHO_TOL = 1e-9
# 俯仰角距离±90度小于该值（度）时视为万向锁
GIMBAL_EPS_DEG = 1e-6


def _readonly(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


def _orthogonality_error(rotation: np.ndarray) -> float:
    return float(np.max(np.abs(rotation.T @ rotation - np.eye(3))))


def orthonormalize(rotation: np.ndarray) -> np.ndarray:
    """对旋转矩阵的列做Gram-Schmidt正交化，保持右手系"""
    x = rotation[:, 0] / np.linalg.norm(rotation[:, 0])
    y = rotation[:, 1] - np.dot(x, rotation[:, 1]) * x
    y = y / np.linalg.norm(y)
    z = np.cross(x, y)
    return np.stack([x, y, z], axis=1)


def wrap_degrees(angles: np.ndarray) -> np.ndarray:
    """把角度映射到 (-180, 180]，区间内的值原样返回"""
    angles = np.asarray(angles, dtype=np.float64)
    out = angles.copy()
    outside = (out <= -180.0) | (out > 180.0)
    if np.any(outside):
        wrapped = np.mod(out[outside] + 180.0, 360.0) - 180.0
        wrapped[wrapped == -180.0] = 180.0
        out[outside] = wrapped
    return out


@dataclass(frozen=True)
class RigidTransform:
    """4x4 齐次刚体变换，平移单位为米

    Args:
        matrix (np.ndarray): 4x4 矩阵，最后一行必须严格等于 (0,0,0,1)，
            左上角3x3必须是行列式为正的正交矩阵（容差1e-9）
    """

    matrix: np.ndarray

    def __post_init__(self):
        matrix = np.array(self.matrix, dtype=np.float64)
        if matrix.shape != (4, 4):
            raise ValueError(f"刚体变换必须是4x4矩阵，实际为 {matrix.shape}")
        if not np.all(np.isfinite(matrix)):
            raise ValueError("刚体变换包含非有限值")
        if not np.array_equal(matrix[3], [0.0, 0.0, 0.0, 1.0]):
            raise ValueError(f"刚体变换最后一行必须为 (0,0,0,1)，实际为 {matrix[3]}")
        rotation = matrix[:3, :3]
        if _orthogonality_error(rotation) >= ORTHO_TOL or np.linalg.det(rotation) <= 0:
            raise ValueError("旋转部分不是合法的旋转矩阵")
        object.__setattr__(self, "matrix", _readonly(matrix))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(4))

    @classmethod
    def from_rt(cls, rotation: np.ndarray, translation: Iterable[float]) -> "RigidTransform":
        matrix = np.eye(4)
        matrix[:3, :3] = rotation
        matrix[:3, 3] = np.asarray(list(translation), dtype=np.float64)
        return cls(matrix)

    @classmethod
    def translate(cls, x: float, y: float, z: float) -> "RigidTransform":
        return cls.from_rt(np.eye(3), (x, y, z))

    @property
    def rotation(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:3, 3]

    def apply(self, points: np.ndarray) -> np.ndarray:
        """把 n×3 点变换到本变换的目标坐标系"""
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def allclose(self, other: "RigidTransform", atol: float = 1e-12) -> bool:
        return bool(np.allclose(self.matrix, other.matrix, rtol=0.0, atol=atol))


@dataclass(frozen=True)
class PoseDelta:
    """网络的6维目标/输出编码

    Args:
        t (np.ndarray): 平移，单位米
        r (np.ndarray): 欧拉角 (roll, pitch, yaw)，单位度
    """

    t: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        t = np.array(self.t, dtype=np.float64).reshape(3)
        r = np.array(self.r, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(r))):
            raise ValueError("PoseDelta 的六个分量必须都是有限值")
        object.__setattr__(self, "t", _readonly(t))
        object.__setattr__(self, "r", _readonly(r))

    @classmethod
    def zero(cls) -> "PoseDelta":
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_vector(cls, vector: Sequence[float]) -> "PoseDelta":
        vector = np.asarray(vector, dtype=np.float64).reshape(6)
        return cls(vector[:3], vector[3:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.t, self.r])

    def canonical(self) -> "PoseDelta":
        return PoseDelta(self.t, wrap_degrees(self.r))


@dataclass(frozen=True)
class Trajectory:
    """按帧号排列的位姿序列，第0个位姿定义世界坐标系"""

    poses: Tuple[RigidTransform, ...] = field(default_factory=tuple)

    def __post_init__(self):
        poses = tuple(self.poses)
        if not poses:
            raise ValueError("轨迹不能为空")
        object.__setattr__(self, "poses", poses)

    def __len__(self) -> int:
        return len(self.poses)

    def __getitem__(self, index: int) -> RigidTransform:
        return self.poses[index]

    def __iter__(self):
        return iter(self.poses)

    def translations(self) -> np.ndarray:
        return np.stack([pose.translation for pose in self.poses])


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """返回 a·b；旋转漂移超过1e-9时才做正交化"""
    matrix = a.matrix @ b.matrix
    matrix[3] = (0.0, 0.0, 0.0, 1.0)
    rotation = matrix[:3, :3]
    if _orthogonality_error(rotation) > ORTHO_TOL:
        matrix[:3, :3] = orthonormalize(rotation)
    return RigidTransform(matrix)


def invert(t: RigidTransform) -> RigidTransform:
    """按 (Rᵀ, -Rᵀt) 求精确逆，不做一般矩阵求逆"""
    rotation_t = t.rotation.T
    matrix = np.eye(4)
    matrix[:3, :3] = rotation_t
    matrix[:3, 3] = -(rotation_t @ t.translation)
    return RigidTransform(matrix)


def euler_to_rotation(r_deg: Sequence[float]) -> np.ndarray:
    roll, pitch, yaw = np.deg2rad(np.asarray(r_deg, dtype=np.float64))
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return rz @ ry @ rx


def delta_to_transform(d: PoseDelta) -> RigidTransform:
    return RigidTransform.from_rt(euler_to_rotation(d.r), d.t)


def transform_to_delta(t: RigidTransform) -> PoseDelta:
    """delta_to_transform 的逆

    Raises:
        GimbalLock: |pitch| 距离90度小于1e-6度时抛出，异常的 delta 属性
            携带 roll=0 的规范分解
    """
    rotation = t.rotation
    pitch = np.arctan2(-rotation[2, 0], np.hypot(rotation[0, 0], rotation[1, 0]))
    if abs(90.0 - abs(np.rad2deg(pitch))) < GIMBAL_EPS_DEG:
        roll = 0.0
        yaw = np.arctan2(-rotation[0, 1], rotation[1, 1])
        delta = PoseDelta(t.translation, wrap_degrees(np.rad2deg([roll, pitch, yaw])))
        raise GimbalLock(f"俯仰角 {np.rad2deg(pitch):.9f} 度接近±90度", delta=delta)
    roll = np.arctan2(rotation[2, 1], rotation[2, 2])
    yaw = np.arctan2(rotation[1, 0], rotation[0, 0])
    return PoseDelta(t.translation, wrap_degrees(np.rad2deg([roll, pitch, yaw])))


def rotation_angle_deg(t: RigidTransform) -> float:
    """旋转角 arccos((Tr(R)-1)/2)，单位度

    用 atan2(|v|, Tr(R)-1) 求值，v 为 R 的反对称部分对应的向量 (2 sinθ·axis)。
    对旋转矩阵二者相等，且舍入误差不会越出反余弦定义域。
    """
    return matrix_angle_deg(t.rotation)


def matrix_angle_deg(rotation: np.ndarray) -> float:
    trace = rotation[0, 0] + rotation[1, 1] + rotation[2, 2]
    skew = np.array(
        [
            rotation[2, 1] - rotation[1, 2],
            rotation[0, 2] - rotation[2, 0],
            rotation[1, 0] - rotation[0, 1],
        ]
    )
    return float(np.rad2deg(np.arctan2(np.linalg.norm(skew), trace - 1.0)))
