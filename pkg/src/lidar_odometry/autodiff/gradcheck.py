"""中心差分梯度检验"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Sequence, Tuple

import numpy as np

from lidar_odometry.autodiff.tensor import Tape, Tensor

logger = logging.getLogger(__name__)

# 相对误差分母的绝对下限
ABS_FLOOR = 1e-8

TapeFn = Callable[..., Tensor]


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), ABS_FLOOR)
    return np.abs(analytic - numeric) / scale


def analytic_gradients(fn: TapeFn, inputs: Sequence[np.ndarray]) -> List[np.ndarray]:
    tape = Tape(np.float64)
    tensors = [tape.param(x, name=f"input{i}") for i, x in enumerate(inputs)]
    tape.backward(fn(tape, *tensors))
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]


def _evaluate(fn: TapeFn, inputs: Sequence[np.ndarray]) -> float:
    tape = Tape(np.float64)
    return fn(tape, *[tape.param(x) for x in inputs]).item()


def grad_check(fn: TapeFn, inputs: Sequence[np.ndarray], h: float = 1e-6) -> float:
    """比较解析梯度与中心差分，返回最大相对误差

    Args:
        fn (TapeFn): fn(tape, *tensors) 返回标量张量；输入张量按顺序对应 inputs
        inputs (Sequence[np.ndarray]): float64 输入，检验期间会被临时扰动然后恢复
        h (float): 差分步长，取值 [1e-7, 1e-4]

    Returns:
        float: 所有输入坐标上的最大相对误差，分母下限为1e-8
    """
    if not 1e-7 <= h <= 1e-4:
        raise ValueError(f"差分步长 {h} 不在 [1e-7, 1e-4] 内")
    inputs = [np.ascontiguousarray(x) for x in inputs]
    for x in inputs:
        if x.dtype != np.float64:
            raise ValueError("梯度检验必须在 float64 下进行")

    analytic = analytic_gradients(fn, inputs)
    worst = 0.0
    for x, grad in zip(inputs, analytic):
        flat = x.reshape(-1)
        numeric = np.empty(flat.size)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            plus = _evaluate(fn, inputs)
            flat[i] = original - h
            minus = _evaluate(fn, inputs)
            flat[i] = original
            numeric[i] = (plus - minus) / (2.0 * h)
        if flat.size:
            worst = max(worst, float(relative_error(grad.reshape(-1), numeric).max()))
    logger.debug(f"梯度检验最大相对误差 {worst:.3e}")
    return worst


@dataclass(frozen=True)
class CheckResult:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.error < self.tolerance


def _bn_fn(train: bool, weights: np.ndarray, running: Tuple[np.ndarray, np.ndarray]) -> TapeFn:
    def fn(tape, x, gamma, beta):
        # 每次求值使用新的滑动统计量副本，训练模式会原地修改它们
        mean, var = running[0].copy(), running[1].copy()
        return tape.weighted_sum(tape.batch_norm(x, gamma, beta, mean, var, train), weights)

    return fn


def primitive_suite(seed: int = 0) -> List[CheckResult]:
    """对每个自动微分原语做 float64 梯度检验"""
    rng = np.random.default_rng(seed)
    results = []

    x, w, b = rng.normal(size=(4, 3)), rng.normal(size=(3, 2)), rng.normal(size=2)
    proj = rng.normal(size=(4, 2))
    err = grad_check(lambda t, x_, w_, b_: t.weighted_sum(t.linear(x_, w_, b_), proj), [x, w, b], h=1e-5)
    results.append(CheckResult("linear", err, 1e-6))

    # 远离0的输入，差分不会跨过折点
    x = rng.uniform(0.1, 1.0, size=(5, 3)) * rng.choice([-1.0, 1.0], size=(5, 3))
    proj = rng.normal(size=(5, 3))
    err = grad_check(lambda t, x_: t.weighted_sum(t.relu(x_), proj), [x])
    results.append(CheckResult("relu", err, 1e-6))

    x, gamma, beta = rng.normal(size=(6, 3)), rng.uniform(0.5, 1.5, size=3), rng.normal(size=3)
    proj = rng.normal(size=(6, 3))
    running = (rng.normal(size=3), rng.uniform(0.5, 2.0, size=3))
    err = grad_check(_bn_fn(True, proj, running), [x, gamma, beta])
    results.append(CheckResult("batch_norm/train", err, 1e-5))
    err = grad_check(_bn_fn(False, proj, running), [x, gamma, beta])
    results.append(CheckResult("batch_norm/infer", err, 1e-5))

    x = rng.permutation(24).reshape(3, 4, 2) * 0.1 + rng.uniform(0.0, 0.01, size=(3, 4, 2))
    counts = np.array([4, 2, 3])
    proj = rng.normal(size=(3, 2))
    err = grad_check(lambda t, x_: t.weighted_sum(t.max_pool_set(x_, counts), proj), [x])
    results.append(CheckResult("max_pool_set", err, 1e-6))

    x = rng.normal(size=(4, 2))
    index = np.array([[0, 2, 2], [3, 1, 0]])
    proj = rng.normal(size=(2, 3, 2))
    err = grad_check(lambda t, x_: t.weighted_sum(t.gather(x_, index), proj), [x])
    results.append(CheckResult("gather", err, 1e-6))

    pred, target = rng.normal(size=(3, 6)), rng.normal(size=(3, 6))
    err = grad_check(lambda t, p_: t.add(t.mae(p_, target), t.scale(t.cos_dist(p_, target), 0.5)), [pred])
    results.append(CheckResult("mae+cos_dist", err, 1e-6))

    for result in results:
        logger.info(f"梯度检验 {result.name}: {result.error:.3e} (阈值 {result.tolerance:g})")
    return results
