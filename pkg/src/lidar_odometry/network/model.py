"""完整前向：共享 SA1 → FE → SA2 → SA3 → mini-PointNet → 回归头"""

import logging
from typing import Literal, Optional, Sequence, Tuple

import numpy as np

from lidar_odometry.autodiff.tensor import Tape, Tensor
from lidar_odometry.errors import ShapeMismatch
from lidar_odometry.geometry import PoseDelta
from lidar_odometry.network.config import ModelConfig
from lidar_odometry.network.layers import (
    CloudBatch,
    ForwardContext,
    flow_embedding,
    mini_pointnet,
    set_abstraction,
    shared_mlp,
)
from lidar_odometry.network.params import ModelParams
from lidar_odometry.pointcloud import PointCloud, random_subsample

logger = logging.getLogger(__name__)

Mode = Literal["train", "infer"]


def prepare_cloud(cloud: PointCloud, config: ModelConfig) -> PointCloud:
    if cloud.channels != config.input_feature_channels:
        raise ShapeMismatch(
            f"点云特征通道数 {cloud.channels} 与配置 {config.input_feature_channels} 不一致"
        )
    if config.pre_subsample is None:
        return cloud
    return random_subsample(cloud, config.pre_subsample, config.subsample_seed)


def forward_batch(
    ctx: ForwardContext, pairs: Sequence[Tuple[PointCloud, PointCloud]]
) -> Tensor:
    """对一批帧对做前向，返回 [B, 6] 的 (t̂ 米, r̂ 度)

    两帧的 SA1 共享权重，在同一次调用中处理全部 2B 个点云。
    """
    config = ctx.params.config
    b = len(pairs)
    if b == 0:
        raise ShapeMismatch("帧对批次为空")
    clouds = [prepare_cloud(p, config) for p, _ in pairs] + [prepare_cloud(q, config) for _, q in pairs]
    inputs = CloudBatch.from_clouds(ctx.tape, clouds)

    s1 = set_abstraction(ctx, inputs, config.sa1, "sa1.mlp")
    embedded = flow_embedding(ctx, s1.view(0, b), s1.view(b, 2 * b), config.fe, "fe.mlp")
    s2 = set_abstraction(ctx, embedded, config.sa2, "sa2.mlp")
    s3 = set_abstraction(ctx, s2, config.sa3, "sa3.mlp")

    m = config.sa3.n_fps
    # 只把特征送入 mini-PointNet，不拼接坐标
    grouped = ctx.tape.reshape(s3.features, (b, m, config.sa3.mlp.out_width))
    global_feature = mini_pointnet(ctx, grouped, np.full(b, m), config.mpn, "mpn.mlp")
    return shared_mlp(ctx, global_feature, config.head, "head", final_plain=True)


def model_forward(
    p: PointCloud,
    q: PointCloud,
    params: ModelParams,
    config: Optional[ModelConfig] = None,
    mode: Mode = "infer",
) -> PoseDelta:
    """单个帧对的预测

    训练模式下回归头的批归一化只有一行，会抛出 DegenerateBatch；训练请使用 forward_batch。
    """
    if config is not None and config != params.config:
        raise ShapeMismatch("参数与给定的模型配置不一致")
    ctx = ForwardContext(
        Tape(params.dtype), params, train=mode == "train", canonical_start=params.config.canonical_start
    )
    out = forward_batch(ctx, [(p, q)])
    return PoseDelta.from_vector(out.data[0].astype(np.float64))
