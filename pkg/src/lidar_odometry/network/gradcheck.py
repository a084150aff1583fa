"""整网端到端梯度检验"""

import logging
from dataclasses import replace

import numpy as np

from lidar_odometry.autodiff.gradcheck import CheckResult, grad_check
from lidar_odometry.geometry import PoseDelta, delta_to_transform
from lidar_odometry.network.config import ModelConfig, tiny
from lidar_odometry.network.layers import ForwardContext
from lidar_odometry.network.model import forward_batch
from lidar_odometry.network.params import ModelParams
from lidar_odometry.pointcloud import PointCloud

logger = logging.getLogger(__name__)


def model_grad_check(
    seed: int = 0, n_points: int = 8, config: ModelConfig = None, h: float = 1e-5
) -> CheckResult:
    """对缩减宽度模型的全部可训练参数做中心差分检验

    推理模式的批归一化使用随机化的滑动统计量；训练模式下批归一化之前的偏置梯度
    恒为0，差分只剩舍入噪声，批归一化本身在原语层面单独检验。
    """
    config = replace(config or tiny(), pre_subsample=None)
    rng = np.random.default_rng(seed)
    params = ModelParams.init(config, seed=seed, dtype=np.float64)
    for name, buffer in params.buffers.items():
        if name.endswith("running_mean"):
            buffer[...] = rng.normal(scale=0.1, size=buffer.shape)
        else:
            buffer[...] = rng.uniform(0.5, 2.0, size=buffer.shape)
    for name, tensor in params.tensors.items():
        if name.endswith((".bias", ".bn.beta")):
            tensor[...] = rng.normal(scale=0.1, size=tensor.shape)

    xyz = rng.uniform(-2.0, 2.0, size=(n_points, 3))
    p = PointCloud(xyz, rng.uniform(0.0, 1.0, size=(n_points, 1)))
    motion = delta_to_transform(PoseDelta((0.3, -0.1, 0.05), (1.0, -2.0, 3.0)))
    q = PointCloud(motion.apply(xyz), p.features)
    projection = rng.normal(size=(1, 6))

    names = list(params.tensors)

    def loss(tape, *tensors):
        ctx = ForwardContext(tape, params, train=False, _bound=dict(zip(names, tensors)))
        return tape.weighted_sum(forward_batch(ctx, [(p, q)]), projection)

    error = grad_check(loss, [params.tensors[name] for name in names], h=h)
    result = CheckResult("model/infer", error, 1e-4)
    logger.info(f"整网梯度检验: {error:.3e}，{sum(params.tensors[n].size for n in names)} 个参数")
    return result
