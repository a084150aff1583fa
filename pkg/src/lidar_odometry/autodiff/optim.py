"""Adam 优化器（带偏差修正），参数和梯度都以 名称 → 数组 的字典传入"""

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from lidar_odometry.errors import ShapeMismatch


@dataclass
class AdamState:
    """Adam 的一阶/二阶矩与步数

    Args:
        lr (float): 默认学习率，调用 adam_step 时可被学习率调度覆盖
        beta1 (float): 一阶矩衰减率
        beta2 (float): 二阶矩衰减率
        eps (float): 数值稳定项
        step (int): 已执行的更新次数
    """

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: Dict[str, np.ndarray], lr: float = 1e-3) -> "AdamState":
        return cls(
            lr=lr,
            m={name: np.zeros_like(value) for name, value in params.items()},
            v={name: np.zeros_like(value) for name, value in params.items()},
        )


def adam_step(
    params: Dict[str, np.ndarray],
    grads: Dict[str, np.ndarray],
    state: AdamState,
    lr: Optional[float] = None,
) -> Dict[str, np.ndarray]:
    """原地执行一步 Adam 更新，返回同一个 params 字典

    没有梯度的参数视为梯度为0。
    """
    lr = state.lr if lr is None else lr
    for name, g in grads.items():
        if name not in params:
            raise ShapeMismatch(f"梯度 {name} 没有对应的参数")
        if g.shape != params[name].shape:
            raise ShapeMismatch(f"参数 {name} 形状 {params[name].shape} 与梯度形状 {g.shape} 不一致")

    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for name, value in params.items():
        m = state.m.setdefault(name, np.zeros_like(value))
        v = state.v.setdefault(name, np.zeros_like(value))
        if m.shape != value.shape:
            raise ShapeMismatch(f"参数 {name} 的矩估计形状不一致")
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(value)
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        value -= (lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)).astype(value.dtype)
    return params
