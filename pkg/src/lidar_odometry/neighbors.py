"""确定性的空间检索核：最远点采样、带上限的半径分组、kNN

分组与 kNN 都有暴力实现和基于均匀体素网格的加速实现，两条路径使用同一个
距离公式，结果逐位一致。最远点采样按粗网格分块，跳过不会变近的块。
"""

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np

from lidar_odometry.errors import EmptyCloud

logger = logging.getLogger(__name__)

Method = Literal["auto", "brute", "grid"]

# 网格单元相对半径的放大量，吸收坐标取整误差
_CELL_SLACK = 1e-6
# 暴力路径每块处理的查询数
_BLOCK = 64
# auto 模式下切换到网格的 查询数×点数 阈值
_GRID_WORK = 4_000_000
# 最远点采样每块的目标点数
_FPS_BLOCK_POINTS = 64


@dataclass(frozen=True)
class NeighborLists:
    """每个查询点的邻居索引

    Args:
        index (np.ndarray): m×K 索引矩阵；第 i 行只有前 counts[i] 个有效，
            其余位置重复该行第一个索引
        counts (np.ndarray): 每行的有效邻居数
    """

    index: np.ndarray
    counts: np.ndarray

    def __len__(self) -> int:
        return self.index.shape[0]

    def row(self, i: int) -> np.ndarray:
        return self.index[i, : self.counts[i]]


def squared_distances(points: np.ndarray, query: np.ndarray) -> np.ndarray:
    """点到查询点的平方距离，逐元素计算 dx*dx + dy*dy + dz*dz

    points 形状 (..., 3)，query 可以广播；所有核都只通过这个函数求距离。
    """
    dx = points[..., 0] - query[..., 0]
    dy = points[..., 1] - query[..., 1]
    dz = points[..., 2] - query[..., 2]
    return dx * dx + dy * dy + dz * dz


def _as_points(points: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3))


def _pad_rows(rows, width: int) -> NeighborLists:
    index = np.empty((len(rows), width), dtype=np.int64)
    counts = np.empty(len(rows), dtype=np.int64)
    for i, row in enumerate(rows):
        counts[i] = len(row)
        index[i, : len(row)] = row
        index[i, len(row) :] = row[0]
    return NeighborLists(index, counts)


def _gather_ranges(order: np.ndarray, starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    """拼接 order[starts[i]:ends[i]]"""
    lengths = ends - starts
    total = int(lengths.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    shift = starts - np.concatenate(([0], np.cumsum(lengths)[:-1]))
    return order[np.repeat(shift, lengths) + np.arange(total)]


# ---------------------------------------------------------------- 最远点采样


@dataclass(frozen=True)
class _FpsBlocks:
    """最远点采样用的分块：点按粗网格单元排序，每个非空单元是一块

    Args:
        order (np.ndarray): 排序后第 i 个点的原始索引
        rank (np.ndarray): 原始索引到排序位置
        points (np.ndarray): 排序后的坐标
        starts (np.ndarray): 每块的起始位置
        ends (np.ndarray): 每块的结束位置（不含）
        block_of (np.ndarray): 每个排序位置所属的块
        lo (np.ndarray): 每块坐标的逐轴最小值
        hi (np.ndarray): 每块坐标的逐轴最大值
    """

    order: np.ndarray
    rank: np.ndarray
    points: np.ndarray
    starts: np.ndarray
    ends: np.ndarray
    block_of: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def build(cls, points: np.ndarray) -> "_FpsBlocks":
        n = len(points)
        side = max(1, int(round((n / _FPS_BLOCK_POINTS) ** (1.0 / 3.0))))
        low = points.min(axis=0)
        extent = points.max(axis=0) - low
        scale = np.where(extent > 0, side / np.where(extent > 0, extent, 1.0), 0.0)
        cell = np.minimum(((points - low) * scale).astype(np.int64), side - 1)
        key = (cell[:, 0] * side + cell[:, 1]) * side + cell[:, 2]
        order = np.argsort(key, kind="stable")
        sorted_key = key[order]
        starts = np.flatnonzero(np.concatenate(([True], sorted_key[1:] != sorted_key[:-1])))
        ends = np.concatenate((starts[1:], [n]))
        rank = np.empty(n, dtype=np.int64)
        rank[order] = np.arange(n)
        sorted_points = points[order]
        return cls(
            order=order,
            rank=rank,
            points=sorted_points,
            starts=starts,
            ends=ends,
            block_of=np.repeat(np.arange(len(starts)), ends - starts),
            lo=np.minimum.reduceat(sorted_points, starts, axis=0),
            hi=np.maximum.reduceat(sorted_points, starts, axis=0),
        )


def canonical_start(points: np.ndarray) -> int:
    """离点云质心最近的点，距离相同时取最小索引"""
    points = _as_points(points)
    if len(points) == 0:
        raise EmptyCloud("最远点采样的输入点云为空")
    return int(np.argmin(squared_distances(points, points.mean(axis=0))))


def farthest_point_sampling(
    points: np.ndarray, n_fps: int, start_index: int = 0
) -> np.ndarray:
    """贪心最大最小距离采样

    Args:
        points (np.ndarray): n×3 坐标
        n_fps (int): 采样数量
        start_index (int): 第一个采样点

    Returns:
        np.ndarray: 长度为 n_fps 的索引；n_fps > n 时先给出全部 n 个索引再循环补齐。
            距离相同时取最小索引。
    """
    points = _as_points(points)
    n = len(points)
    if n == 0:
        raise EmptyCloud("最远点采样的输入点云为空")
    if n_fps < 1:
        raise ValueError("n_fps 至少为1")
    if not 0 <= start_index < n:
        raise IndexError(f"起始索引 {start_index} 越界（n={n}）")

    count = min(n_fps, n)
    blocks = _FpsBlocks.build(points)
    positions = np.arange(n)
    x, y, z = (np.ascontiguousarray(blocks.points[:, k]) for k in range(3))
    # min_dist 按分块排序后的位置存放
    min_dist = np.full(n, np.inf)
    block_max = np.full(len(blocks.starts), np.inf)
    selected = np.empty(count, dtype=np.int64)
    current = start_index
    for i in range(count):
        selected[i] = current
        cx, cy, cz = points[current]
        # 包围盒下界与逐点距离同序计算，舍入单调；下界不小于块内最大值的块可以跳过
        gx = np.maximum(np.maximum(blocks.lo[:, 0] - cx, cx - blocks.hi[:, 0]), 0.0)
        gy = np.maximum(np.maximum(blocks.lo[:, 1] - cy, cy - blocks.hi[:, 1]), 0.0)
        gz = np.maximum(np.maximum(blocks.lo[:, 2] - cz, cz - blocks.hi[:, 2]), 0.0)
        touched = np.flatnonzero(gx * gx + gy * gy + gz * gz < block_max)
        if len(touched):
            pos = _gather_ranges(positions, blocks.starts[touched], blocks.ends[touched])
            # 与 squared_distances 相同的运算顺序
            dx = x[pos] - cx
            dy = y[pos] - cy
            dz = z[pos] - cz
            nearer = np.minimum(min_dist[pos], dx * dx + dy * dy + dz * dz)
            min_dist[pos] = nearer
            lengths = blocks.ends[touched] - blocks.starts[touched]
            block_max[touched] = np.maximum.reduceat(nearer, np.cumsum(lengths) - lengths)
        # 已选点不再参与竞争，重复坐标时也不会被重复选中
        here = blocks.rank[current]
        min_dist[here] = -np.inf
        b = blocks.block_of[here]
        block_max[b] = min_dist[blocks.starts[b] : blocks.ends[b]].max()
        if i + 1 < count:
            best = block_max.max()
            ties = np.flatnonzero(block_max == best)
            candidates = _gather_ranges(positions, blocks.starts[ties], blocks.ends[ties])
            current = int(blocks.order[candidates[min_dist[candidates] == best]].min())
    if n_fps > n:
        selected = np.resize(selected, n_fps)
    return selected


# ---------------------------------------------------------------- 体素网格


class VoxelGrid:
    """稀疏均匀体素网格：点按单元编号排序，单元区间用二分查找定位

    Args:
        points (np.ndarray): n×3 坐标
        cell (float): 单元边长（米）
    """

    def __init__(self, points: np.ndarray, cell: float):
        if cell <= 0:
            raise ValueError("体素边长必须大于0")
        self.points = _as_points(points)
        self.cell = float(cell)
        self.origin = self.points.min(axis=0) if len(self.points) else np.zeros(3)
        coords = self.cell_of(self.points)
        self.dims = (coords.max(axis=0) + 1) if len(coords) else np.ones(3, dtype=np.int64)
        keys = self._flat(coords)
        self.order = np.argsort(keys, kind="stable")
        self.keys = keys[self.order]

    def cell_of(self, xyz: np.ndarray) -> np.ndarray:
        return np.floor((xyz - self.origin) / self.cell).astype(np.int64)

    def _flat(self, coords: np.ndarray) -> np.ndarray:
        return (coords[..., 0] * self.dims[1] + coords[..., 1]) * self.dims[2] + coords[..., 2]

    def _points_in(self, cells: np.ndarray) -> np.ndarray:
        """cells 为 k×3 单元坐标，越界单元忽略"""
        inside = np.all((cells >= 0) & (cells < self.dims), axis=1)
        flat = self._flat(cells[inside])
        starts = np.searchsorted(self.keys, flat, side="left")
        ends = np.searchsorted(self.keys, flat, side="right")
        return _gather_ranges(self.order, starts, ends)

    def neighborhood(self, center: np.ndarray, reach: int = 1) -> np.ndarray:
        """center 所在单元及其 ±reach 范围内单元中的点索引（升序）"""
        return np.sort(self._points_in(self.cell_of(center) + _cube_offsets(reach)))

    def ring(self, center_cell: np.ndarray, radius: int) -> np.ndarray:
        """与 center_cell 切比雪夫距离恰为 radius 的单元中的点索引"""
        lo = np.maximum(center_cell - radius, 0)
        hi = np.minimum(center_cell + radius, self.dims - 1)
        if np.any(lo > hi):
            return np.empty(0, dtype=np.int64)
        axes = [np.arange(lo[k], hi[k] + 1) for k in range(3)]
        cells = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
        cheb = np.abs(cells - center_cell).max(axis=1)
        return self._points_in(cells[cheb == radius])

    def max_ring(self, center_cell: np.ndarray) -> int:
        """覆盖全部网格所需的最大环半径"""
        far = np.maximum(np.abs(center_cell), np.abs(self.dims - 1 - center_cell))
        return int(far.max())


def _cube_offsets(reach: int) -> np.ndarray:
    span = np.arange(-reach, reach + 1)
    return np.stack([g.ravel() for g in np.meshgrid(span, span, span, indexing="ij")], axis=1)


# ---------------------------------------------------------------- 半径分组


def _radius_rows_brute(centers, points, r2, n_n):
    rows = []
    for start in range(0, len(centers), _BLOCK):
        block = centers[start : start + _BLOCK]
        d2 = squared_distances(points[None, :, :], block[:, None, :])
        for row in d2:
            rows.append(np.flatnonzero(row <= r2)[:n_n])
    return rows


def _radius_rows_grid(centers, points, r, r2, n_n):
    grid = VoxelGrid(points, r * (1.0 + _CELL_SLACK))
    rows = []
    for center in centers:
        cand = grid.neighborhood(center)
        d2 = squared_distances(points[cand], center)
        rows.append(cand[d2 <= r2][:n_n])
    return rows


def radius_group(
    centroid_index: np.ndarray,
    points: np.ndarray,
    r: float,
    n_n: int,
    method: Method = "auto",
) -> NeighborLists:
    """以 points[centroid_index] 为中心、半径 r 的带上限分组

    每个中心最多保留 n_n 个满足 ‖x_i − x′_j‖ <= r 的点，取索引最小的 n_n 个；
    没有任何点满足条件时，列表只包含中心点自己的索引。

    Args:
        centroid_index (np.ndarray): 中心点在 points 中的索引
        points (np.ndarray): n×3 坐标
        r (float): 分组半径（米）
        n_n (int): 每组邻居上限
        method (Method): "brute"、"grid" 或按规模自动选择
    """
    if r <= 0 or n_n < 1:
        raise ValueError("r 必须大于0且 n_n 至少为1")
    points = _as_points(points)
    centroid_index = np.asarray(centroid_index, dtype=np.int64).reshape(-1)
    if len(points) == 0:
        raise EmptyCloud("半径分组的输入点云为空")
    centers = points[centroid_index]
    r2 = r * r
    if method == "auto":
        method = "grid" if len(centers) * len(points) > _GRID_WORK else "brute"
    if method == "grid":
        rows = _radius_rows_grid(centers, points, r, r2, n_n)
    else:
        rows = _radius_rows_brute(centers, points, r2, n_n)
    rows = [
        row if len(row) else np.array([own], dtype=np.int64)
        for row, own in zip(rows, centroid_index)
    ]
    return _pad_rows(rows, n_n)


# ---------------------------------------------------------------- kNN


def _select_k(cand: np.ndarray, d2: np.ndarray, k: int) -> np.ndarray:
    """cand 升序时，按 (距离, 索引) 取前 k 个"""
    if len(cand) > k:
        kth = np.partition(d2, k - 1)[k - 1]
        keep = d2 <= kth
        cand, d2 = cand[keep], d2[keep]
    return cand[np.argsort(d2, kind="stable")[:k]]


def _knn_rows_brute(queries, points, k):
    every = np.arange(len(points), dtype=np.int64)
    rows = []
    for start in range(0, len(queries), _BLOCK):
        block = queries[start : start + _BLOCK]
        d2 = squared_distances(points[None, :, :], block[:, None, :])
        rows.extend(_select_k(every, row, k) for row in d2)
    return rows


def _knn_cell_size(points: np.ndarray, k: int) -> float:
    extent = float(np.max(points.max(axis=0) - points.min(axis=0)))
    per_axis = max(1, int(round((len(points) / k) ** (1.0 / 3.0))))
    return max(extent / per_axis, 1e-9)


def _knn_rows_grid(queries, points, k):
    grid = VoxelGrid(points, _knn_cell_size(points, k))
    rows = []
    for query in queries:
        center = grid.cell_of(query)
        last = grid.max_ring(center)
        cand = np.empty(0, dtype=np.int64)
        radius = 0
        while True:
            cand = np.concatenate([cand, grid.ring(center, radius)])
            if radius >= last:
                break
            if len(cand) >= k:
                d2 = squared_distances(points[cand], query)
                kth = np.partition(d2, k - 1)[k - 1]
                # 未访问的点距离一定大于 radius 个单元
                bound = (radius - _CELL_SLACK) * grid.cell
                if radius > 0 and kth <= bound * bound:
                    break
            radius += 1
        cand = np.sort(cand)
        rows.append(_select_k(cand, squared_distances(points[cand], query), k))
    return rows


def knn(
    queries: np.ndarray, points: np.ndarray, k: int, method: Method = "auto"
) -> NeighborLists:
    """每个查询点的 k 个最近邻，距离相同时索引小者优先；k > n 时循环补齐"""
    points = _as_points(points)
    queries = _as_points(queries)
    n = len(points)
    if n == 0:
        raise EmptyCloud("kNN 的候选点云为空")
    if k < 1:
        raise ValueError("k 至少为1")
    take = min(k, n)
    if method == "auto":
        method = "grid" if len(queries) * n > _GRID_WORK and take < n else "brute"
    if method == "grid" and take < n:
        rows = _knn_rows_grid(queries, points, take)
    else:
        rows = _knn_rows_brute(queries, points, take)
    index = np.empty((len(rows), k), dtype=np.int64)
    for i, row in enumerate(rows):
        index[i] = np.resize(row, k)
    return NeighborLists(index, np.full(len(rows), take, dtype=np.int64))
