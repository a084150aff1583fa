"""基于 numpy 的反向模式自动微分

Tape 按执行顺序记录每个原语的输出、输入和反向函数，backward 严格逆序回放。
原语只覆盖网络需要的算子：线性层、ReLU、批归一化、集合最大池化、按行收集、
拼接、变形以及两个损失。
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from lidar_odometry.errors import DegenerateBatch, NonFiniteValue, ShapeMismatch

logger = logging.getLogger(__name__)

BN_EPS = 1e-5
BN_MOMENTUM = 0.9

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """稠密数组加梯度槽

    Args:
        data (np.ndarray): 数值，行优先
        requires_grad (bool): backward 时是否累积梯度
        name (str): 调试用名称（参数张量为层路径）
    """

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data: np.ndarray, requires_grad: bool = False, name: str = ""):
        self.data = data
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(name={self.name!r}, shape={self.shape}, dtype={self.dtype})"


@dataclass
class _Op:
    name: str
    output: Tensor
    inputs: Tuple[Tensor, ...]
    backward: BackwardFn


def _check_finite(name: str, array: np.ndarray) -> None:
    if not np.all(np.isfinite(array)):
        raise NonFiniteValue(f"{name} 产生了非有限值")


class Tape:
    """一次前向/反向计算的记录

    Args:
        dtype: 计算精度，训练默认 float32，梯度检验用 float64
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.ops: List[_Op] = []

    # ------------------------------------------------------------ 叶子

    def param(self, data: np.ndarray, name: str = "") -> Tensor:
        """需要梯度的叶子，直接引用传入的数组"""
        if data.dtype != self.dtype:
            raise ShapeMismatch(f"参数 {name} 的精度 {data.dtype} 与计算精度 {self.dtype} 不一致")
        return Tensor(data, requires_grad=True, name=name)

    def constant(self, data: np.ndarray, name: str = "") -> Tensor:
        return Tensor(np.asarray(data, dtype=self.dtype), requires_grad=False, name=name)

    def record(
        self, name: str, output: np.ndarray, inputs: Sequence[Tensor], backward: BackwardFn
    ) -> Tensor:
        """登记一个原语；backward 接收输出梯度，按 inputs 顺序返回输入梯度"""
        _check_finite(name, output)
        inputs = tuple(inputs)
        out = Tensor(output, requires_grad=any(t.requires_grad for t in inputs), name=name)
        if out.requires_grad:
            self.ops.append(_Op(name, out, inputs, backward))
        return out

    # ------------------------------------------------------------ 反向

    def backward(self, loss: Tensor) -> None:
        """从标量 loss 反向传播，梯度累积到各叶子的 grad 上"""
        if loss.data.size != 1:
            raise ShapeMismatch(f"只能对标量求梯度，实际形状 {loss.shape}")
        loss.grad = np.ones_like(loss.data)
        for op in reversed(self.ops):
            grad = op.output.grad
            if grad is None:
                continue
            for tensor, g in zip(op.inputs, op.backward(grad)):
                if g is None or not tensor.requires_grad:
                    continue
                _check_finite(f"{op.name} 的反向", g)
                if tensor.grad is None:
                    tensor.grad = np.array(g, dtype=self.dtype)
                else:
                    tensor.grad += g

    # ------------------------------------------------------------ 原语

    def linear(self, x: Tensor, w: Tensor, bias: Tensor) -> Tensor:
        """y = x·w + bias，x 形状 [..., a]，w [a, b]，bias [b]"""
        if w.data.ndim != 2 or x.shape[-1] != w.shape[0] or bias.shape != (w.shape[1],):
            raise ShapeMismatch(f"linear 形状不匹配: x{x.shape} w{w.shape} b{bias.shape}")
        x2 = x.data.reshape(-1, w.shape[0])
        y = (x2 @ w.data + bias.data).reshape(x.shape[:-1] + (w.shape[1],))

        def backward(g):
            g2 = g.reshape(-1, w.shape[1])
            gx = (g2 @ w.data.T).reshape(x.shape) if x.requires_grad else None
            return gx, x2.T @ g2, g2.sum(axis=0)

        return self.record("linear", y, (x, w, bias), backward)

    def relu(self, x: Tensor) -> Tensor:
        mask = x.data > 0
        y = np.where(mask, x.data, 0).astype(self.dtype)

        def backward(g):
            return (g * mask,)

        return self.record("relu", y, (x,), backward)

    def batch_norm(
        self,
        x: Tensor,
        gamma: Tensor,
        beta: Tensor,
        running_mean: np.ndarray,
        running_var: np.ndarray,
        train: bool,
    ) -> Tensor:
        """逐通道批归一化，x 形状 [N, C]

        训练模式用当前批的均值和有偏方差，并以动量0.9原地更新 running_mean/running_var；
        推理模式直接使用滑动统计量。
        """
        if x.data.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
            raise ShapeMismatch(f"batch_norm 形状不匹配: x{x.shape} gamma{gamma.shape}")
        n = x.shape[0]
        if not train:
            inv_std = 1.0 / np.sqrt(running_var + BN_EPS)
            x_hat = (x.data - running_mean) * inv_std
            y = (gamma.data * x_hat + beta.data).astype(self.dtype)

            def backward_infer(g):
                return g * (gamma.data * inv_std), (g * x_hat).sum(axis=0), g.sum(axis=0)

            return self.record("batch_norm", y, (x, gamma, beta), backward_infer)

        if n < 2:
            raise DegenerateBatch(f"训练模式的批归一化至少需要2行，实际 {n} 行")
        mean = x.data.mean(axis=0)
        centered = x.data - mean
        var = (centered * centered).mean(axis=0)
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        x_hat = centered * inv_std
        y = (gamma.data * x_hat + beta.data).astype(self.dtype)
        running_mean *= BN_MOMENTUM
        running_mean += (1.0 - BN_MOMENTUM) * mean
        running_var *= BN_MOMENTUM
        running_var += (1.0 - BN_MOMENTUM) * var

        def backward(g):
            g_hat = g * gamma.data
            gx = (inv_std / n) * (
                n * g_hat - g_hat.sum(axis=0) - x_hat * (g_hat * x_hat).sum(axis=0)
            )
            return gx, (g * x_hat).sum(axis=0), g.sum(axis=0)

        return self.record("batch_norm", y, (x, gamma, beta), backward)

    def max_pool_set(self, x: Tensor, valid_counts: np.ndarray) -> Tensor:
        """x 形状 [N, K, C]，每行只在前 valid_counts[i] 个元素上取最大

        梯度全部回传给最大元素，并列时取最靠前的一个。
        """
        if x.data.ndim != 3:
            raise ShapeMismatch(f"max_pool_set 需要三维输入，实际 {x.shape}")
        counts = np.asarray(valid_counts, dtype=np.int64)
        if counts.shape != (x.shape[0],) or np.any(counts < 1) or np.any(counts > x.shape[1]):
            raise ShapeMismatch("valid_counts 必须逐行给出 1..K 之间的有效数")
        valid = np.arange(x.shape[1])[None, :] < counts[:, None]
        masked = np.where(valid[:, :, None], x.data, -np.inf)
        arg = np.argmax(masked, axis=1)
        y = np.take_along_axis(x.data, arg[:, None, :], axis=1)[:, 0, :]

        def backward(g):
            gx = np.zeros_like(x.data)
            np.put_along_axis(gx, arg[:, None, :], g[:, None, :], axis=1)
            return (gx,)

        return self.record("max_pool_set", y, (x,), backward)

    def gather(self, x: Tensor, index: np.ndarray) -> Tensor:
        """按行收集：x[index]，x 形状 [n, C]，输出形状 index.shape + (C,)"""
        index = np.asarray(index, dtype=np.int64)
        y = x.data[index]

        def backward(g):
            gx = np.zeros_like(x.data)
            np.add.at(gx, index.reshape(-1), g.reshape(-1, x.shape[1]))
            return (gx,)

        return self.record("gather", y, (x,), backward)

    def concat(self, tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
        y = np.concatenate([t.data for t in tensors], axis=axis)
        bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

        def backward(g):
            return np.split(g, bounds, axis=axis)

        return self.record("concat", y, tensors, backward)

    def reshape(self, x: Tensor, shape: Tuple[int, ...]) -> Tensor:
        y = x.data.reshape(shape)

        def backward(g):
            return (g.reshape(x.shape),)

        return self.record("reshape", y, (x,), backward)

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ShapeMismatch(f"add 形状不匹配: {a.shape} vs {b.shape}")

        def backward(g):
            return g, g

        return self.record("add", a.data + b.data, (a, b), backward)

    def scale(self, x: Tensor, factor: float) -> Tensor:
        def backward(g):
            return (g * factor,)

        return self.record("scale", (x.data * factor).astype(self.dtype), (x,), backward)

    def weighted_sum(self, x: Tensor, weights: np.ndarray) -> Tensor:
        """Σ x·weights，梯度检验常用的标量投影"""
        weights = np.asarray(weights, dtype=self.dtype)
        if weights.shape != x.shape:
            raise ShapeMismatch(f"weighted_sum 形状不匹配: {x.shape} vs {weights.shape}")

        def backward(g):
            return (g * weights,)

        return self.record("weighted_sum", np.sum(x.data * weights).reshape(()), (x,), backward)

    # ------------------------------------------------------------ 损失

    def mae(self, pred: Tensor, target: np.ndarray) -> Tensor:
        """所有元素上的平均绝对误差，差值恰为0处的次梯度取0"""
        target = np.asarray(target, dtype=self.dtype)
        if target.shape != pred.shape:
            raise ShapeMismatch(f"mae 形状不匹配: {pred.shape} vs {target.shape}")
        diff = pred.data - target
        count = diff.size

        def backward(g):
            return (g * np.sign(diff) / count,)

        return self.record("mae", np.mean(np.abs(diff)).reshape(()), (pred,), backward)

    def cos_dist(self, pred: Tensor, target: np.ndarray, eps: float = 0.0) -> Tensor:
        """逐行 1 − cos(pred, target) 的批平均

        任一向量范数为0的行贡献0且不产生梯度。
        """
        target = np.asarray(target, dtype=self.dtype)
        if target.shape != pred.shape or pred.data.ndim != 2:
            raise ShapeMismatch(f"cos_dist 形状不匹配: {pred.shape} vs {target.shape}")
        u, v = pred.data, target
        nu = np.linalg.norm(u, axis=1)
        nv = np.linalg.norm(v, axis=1)
        ok = (nu > eps) & (nv > eps)
        denom = np.where(ok, nu * nv, 1.0)
        cos = np.where(ok, np.sum(u * v, axis=1) / denom, 1.0)
        rows = u.shape[0]
        value = np.mean(1.0 - cos).reshape(())

        def backward(g):
            safe_nu = np.where(ok, nu, 1.0)
            d_cos = v / denom[:, None] - cos[:, None] * u / (safe_nu * safe_nu)[:, None]
            return (np.where(ok[:, None], -d_cos, 0.0) * (g / rows),)

        return self.record("cos_dist", value.astype(self.dtype), (pred,), backward)
