"""网络层：共享 MLP、mini-PointNet、set abstraction 与 flow embedding

一个批次的多个点云在行方向上拼接，CloudBatch 用 starts/ends 记录每个点云的
行区间；分组后的邻域是稠密的 [m, K] 索引，超出有效数的位置重复该组第一个
索引，由 max_pool_set 的 valid_counts 屏蔽。
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from lidar_odometry.autodiff.tensor import Tape, Tensor
from lidar_odometry.errors import EmptyCloud, ShapeMismatch
from lidar_odometry.network.config import FeConfig, MlpSpec, SaConfig
from lidar_odometry.network.params import ModelParams
from lidar_odometry.neighbors import canonical_start, farthest_point_sampling, knn, radius_group
from lidar_odometry.pointcloud import PointCloud

logger = logging.getLogger(__name__)


@dataclass
class ForwardContext:
    """一次前向计算共享的状态：tape、参数与模式

    同名参数在一个 tape 上只绑定一次，梯度累积在同一个张量上。
    """

    tape: Tape
    params: ModelParams
    train: bool
    canonical_start: bool = False
    _bound: Dict[str, Tensor] = field(default_factory=dict)

    def weight(self, name: str) -> Tensor:
        if name not in self._bound:
            self._bound[name] = self.tape.param(self.params.tensors[name], name=name)
        return self._bound[name]

    def gradients(self) -> Dict[str, np.ndarray]:
        """所有参数的梯度，未参与计算的参数为0"""
        grads = {}
        for name, value in self.params.tensors.items():
            tensor = self._bound.get(name)
            grads[name] = tensor.grad if tensor is not None and tensor.grad is not None else np.zeros_like(value)
        return grads


@dataclass
class CloudBatch:
    """多个点云按行拼接

    Args:
        xyz (np.ndarray): [total, 3] 坐标，与 features 的行一一对应
        features (Tensor): [total, C] 特征
        starts (np.ndarray): 每个点云的起始行
        ends (np.ndarray): 每个点云的结束行（不含）
    """

    xyz: np.ndarray
    features: Tensor
    starts: np.ndarray
    ends: np.ndarray

    @classmethod
    def from_clouds(cls, tape: Tape, clouds: Sequence[PointCloud]) -> "CloudBatch":
        sizes = np.array([len(c) for c in clouds], dtype=np.int64)
        if np.any(sizes == 0):
            raise EmptyCloud("网络输入点云为空")
        channels = {c.channels for c in clouds}
        if len(channels) != 1:
            raise ShapeMismatch(f"同一批点云的特征通道数不一致: {sorted(channels)}")
        ends = np.cumsum(sizes)
        xyz = np.concatenate([c.xyz for c in clouds])
        features = tape.constant(np.concatenate([c.features for c in clouds]), name="input")
        return cls(xyz, features, ends - sizes, ends)

    def __len__(self) -> int:
        return len(self.starts)

    def cloud_xyz(self, b: int) -> np.ndarray:
        return self.xyz[self.starts[b] : self.ends[b]]

    def view(self, first: int, last: int) -> "CloudBatch":
        """第 first..last-1 个点云，共享同一个特征张量"""
        return CloudBatch(self.xyz, self.features, self.starts[first:last], self.ends[first:last])


def shared_mlp(
    ctx: ForwardContext, x: Tensor, spec: MlpSpec, prefix: str, final_plain: bool = False
) -> Tensor:
    """逐行共享的 MLP：linear → batch-norm → ReLU；final_plain 时最后一层只有 linear"""
    tape = ctx.tape
    for i in range(len(spec.layer_widths)):
        name = f"{prefix}.{i}"
        x = tape.linear(x, ctx.weight(f"{name}.weight"), ctx.weight(f"{name}.bias"))
        if final_plain and i == len(spec.layer_widths) - 1:
            break
        x = tape.batch_norm(
            x,
            ctx.weight(f"{name}.bn.gamma"),
            ctx.weight(f"{name}.bn.beta"),
            ctx.params.buffers[f"{name}.bn.running_mean"],
            ctx.params.buffers[f"{name}.bn.running_var"],
            ctx.train,
        )
        x = tape.relu(x)
    return x


def mini_pointnet(
    ctx: ForwardContext, features: Tensor, valid_counts: np.ndarray, spec: MlpSpec, prefix: str
) -> Tensor:
    """[R, K, c] 的每组向量经共享 MLP 后逐通道取最大，输出 [R, c′]"""
    if features.data.ndim != 3:
        raise ShapeMismatch(f"mini_pointnet 需要 [R, K, c] 输入，实际 {features.shape}")
    rows, k, c = features.shape
    if k < 1:
        raise EmptyCloud("mini_pointnet 的输入集合为空")
    tape = ctx.tape
    flat = tape.reshape(features, (rows * k, c))
    h = shared_mlp(ctx, flat, spec, prefix)
    h = tape.reshape(h, (rows, k, spec.out_width))
    return tape.max_pool_set(h, valid_counts)


def set_abstraction(
    ctx: ForwardContext, batch: CloudBatch, cfg: SaConfig, prefix: str
) -> CloudBatch:
    """FPS 选出 n_fps 个中心，半径分组后对 (f_i, x_i − x′_j) 做 mini-PointNet

    输出每个中心的坐标和池化特征，每个点云恰好 n_fps 行。
    """
    index_rows: List[np.ndarray] = []
    offsets: List[np.ndarray] = []
    counts: List[np.ndarray] = []
    centers: List[np.ndarray] = []
    for b in range(len(batch)):
        pts = batch.cloud_xyz(b)
        if len(pts) == 0:
            raise EmptyCloud(f"set abstraction 的第 {b} 个点云为空")
        start = canonical_start(pts) if ctx.canonical_start else 0
        centroid = farthest_point_sampling(pts, cfg.n_fps, start)
        groups = radius_group(centroid, pts, cfg.radius, cfg.n_n)
        index_rows.append(groups.index + batch.starts[b])
        offsets.append(pts[groups.index] - pts[centroid][:, None, :])
        counts.append(groups.counts)
        centers.append(pts[centroid])

    tape = ctx.tape
    grouped = tape.gather(batch.features, np.concatenate(index_rows))
    relative = tape.constant(np.concatenate(offsets), name="relative_xyz")
    pooled = mini_pointnet(
        ctx, tape.concat([grouped, relative], axis=-1), np.concatenate(counts), cfg.mlp, prefix
    )
    ends = np.arange(1, len(batch) + 1, dtype=np.int64) * cfg.n_fps
    return CloudBatch(np.concatenate(centers), pooled, ends - cfg.n_fps, ends)


def flow_embedding(
    ctx: ForwardContext, p1: CloudBatch, q1: CloudBatch, cfg: FeConfig, prefix: str
) -> CloudBatch:
    """p1 的每个点取 q1 中 n_n 个最近邻，对 (f_i, g_j, y_j − x_i) 做 mini-PointNet

    输出保留 p1 的坐标，特征换成流嵌入。
    """
    if len(p1) != len(q1):
        raise ShapeMismatch(f"flow embedding 两侧点云数不一致: {len(p1)} vs {len(q1)}")
    own_rows, other_rows, offsets, counts, coords = [], [], [], [], []
    for b in range(len(p1)):
        p_pts, q_pts = p1.cloud_xyz(b), q1.cloud_xyz(b)
        if len(p_pts) == 0 or len(q_pts) == 0:
            raise EmptyCloud(f"flow embedding 的第 {b} 对点云为空")
        neighbors = knn(p_pts, q_pts, cfg.n_n)
        own = np.arange(len(p_pts), dtype=np.int64) + p1.starts[b]
        own_rows.append(np.repeat(own[:, None], cfg.n_n, axis=1))
        other_rows.append(neighbors.index + q1.starts[b])
        offsets.append(q_pts[neighbors.index] - p_pts[:, None, :])
        counts.append(neighbors.counts)
        coords.append(p_pts)

    tape = ctx.tape
    f = tape.gather(p1.features, np.concatenate(own_rows))
    g = tape.gather(q1.features, np.concatenate(other_rows))
    relative = tape.constant(np.concatenate(offsets), name="relative_xyz")
    pooled = mini_pointnet(ctx, tape.concat([f, g, relative], axis=-1), np.concatenate(counts), cfg.mlp, prefix)
    sizes = p1.ends - p1.starts
    ends = np.cumsum(sizes)
    return CloudBatch(np.concatenate(coords), pooled, ends - sizes, ends)
