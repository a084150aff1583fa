"""训练目标：平均绝对误差与余弦距离正则"""

from typing import Literal, Sequence, Union

import numpy as np

from lidar_odometry.autodiff.tensor import Tape, Tensor
from lidar_odometry.geometry import PoseDelta

CosMode = Literal["full", "translation"]

VectorLike = Union[PoseDelta, Sequence[float], np.ndarray]


def _vector(value: VectorLike) -> np.ndarray:
    if isinstance(value, PoseDelta):
        return value.as_vector()
    return np.asarray(value, dtype=np.float64).reshape(-1)


def mae_loss(y: VectorLike, yhat: VectorLike) -> float:
    """(1/6)·Σ|y_i − ŷ_i|，平移单位米，角度单位度"""
    return float(np.mean(np.abs(_vector(y) - _vector(yhat))))


def cos_dist(y: VectorLike, yhat: VectorLike) -> float:
    """1 − y·ŷ/(‖y‖‖ŷ‖)；任一向量范数为0时返回0"""
    y, yhat = _vector(y), _vector(yhat)
    norm = np.linalg.norm(y) * np.linalg.norm(yhat)
    if norm == 0.0:
        return 0.0
    return float(1.0 - np.dot(y, yhat) / norm)


def combined_loss(
    tape: Tape,
    pred: Tensor,
    target: np.ndarray,
    cos_weight: float = 0.0,
    cos_mode: CosMode = "translation",
) -> Tensor:
    """批平均的 mae + cos_weight·cos_dist

    Args:
        tape (Tape): 记录计算的 tape
        pred (Tensor): [B, 6] 网络输出
        target (np.ndarray): [B, 6] 真值
        cos_weight (float): 余弦正则权重，0 表示不使用
        cos_mode (CosMode): "full" 用完整6维向量，"translation" 只用平移部分
    """
    loss = tape.mae(pred, target)
    if cos_weight <= 0.0:
        return loss
    if cos_mode == "translation":
        rows = pred.shape[0]
        flat = tape.reshape(pred, (rows * 6, 1))
        index = (np.arange(rows)[:, None] * 6 + np.arange(3)[None, :])
        part = tape.reshape(tape.gather(flat, index), (rows, 3))
        reference = np.asarray(target)[:, :3]
    elif cos_mode == "full":
        part, reference = pred, target
    else:
        raise ValueError(f"未知的余弦正则模式: {cos_mode}")
    return tape.add(loss, tape.scale(tape.cos_dist(part, reference), cos_weight))
