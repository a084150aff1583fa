"""KITTI odometry 数据读写：Velodyne 扫描、位姿文本、标定文件与目录布局"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Literal, Optional, Sequence, Tuple

import numpy as np

from lidar_odometry.errors import GimbalLock, MalformedCalib, MalformedPose, MalformedScan
from lidar_odometry.geometry import (
    ORTHO_TOL,
    PoseDelta,
    RigidTransform,
    Trajectory,
    compose,
    invert,
    orthonormalize,
    transform_to_delta,
)
from lidar_odometry.pointcloud import PointCloud, RansacConfig, remove_dominant_plane

logger = logging.getLogger(__name__)

Frame = Literal["camera", "lidar"]

_RECORD = np.dtype("<f4")
_RECORD_BYTES = 16


# ---------------------------------------------------------------- 数据类型


@dataclass(frozen=True)
class CalibTr:
    """LiDAR 到相机坐标系的外参 Tr"""

    tr: RigidTransform

    @classmethod
    def identity(cls) -> "CalibTr":
        return cls(RigidTransform.identity())


@dataclass(frozen=True)
class SplitSpec:
    """训练/测试/验证序列划分，验证集只在最终评估时使用"""

    train: Tuple[int, ...] = (0, 1, 2, 8, 9)
    test: Tuple[int, ...] = (3, 4, 5, 6, 10)
    validation: Tuple[int, ...] = (7,)

    def __post_init__(self):
        sets = [set(self.train), set(self.test), set(self.validation)]
        if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
            raise ValueError("训练、测试、验证序列必须互不相交")

    def sequences(self, name: str) -> Tuple[int, ...]:
        """按名称取序列，"all" 返回全部序列（升序）"""
        if name == "all":
            return tuple(sorted(self.train + self.test + self.validation))
        if name not in ("train", "test", "validation"):
            raise ValueError(f"未知的划分名称: {name}")
        return getattr(self, name)


@dataclass(frozen=True)
class FramePair:
    """相邻两帧点云与 LiDAR 坐标系下的真值运动

    Args:
        p (PointCloud): t 时刻点云
        q (PointCloud): t+1 时刻点云
        target (PoseDelta): 把 q 坐标系下的点变换到 p 坐标系的运动
        correspondence (Optional[np.ndarray]): 合成数据中 q 每个点对应的 p 索引
    """

    p: PointCloud
    q: PointCloud
    target: PoseDelta
    correspondence: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        if np.any(np.abs(self.target.r) >= 180.0):
            raise ValueError(f"帧间旋转角必须小于180度: {self.target.r}")


# ---------------------------------------------------------------- 扫描文件


def read_scan(data: bytes) -> PointCloud:
    """解析 Velodyne .bin：每16字节是 (x, y, z, intensity) 四个小端 float32"""
    if len(data) % _RECORD_BYTES != 0:
        raise MalformedScan(f"扫描字节数 {len(data)} 不是16的整数倍")
    records = np.frombuffer(data, dtype=_RECORD).reshape(-1, 4)
    if not np.all(np.isfinite(records)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(records), axis=1))[0])
        raise MalformedScan(f"第 {bad} 个点包含非有限值")
    values = records.astype(np.float64)
    return PointCloud(values[:, :3], values[:, 3:4])


def write_scan(cloud: PointCloud) -> bytes:
    """read_scan 的逆过程，只写第一个特征通道"""
    records = np.empty((len(cloud), 4), dtype=_RECORD)
    records[:, :3] = cloud.xyz
    records[:, 3] = cloud.features[:, 0] if cloud.channels else 0.0
    return records.tobytes()


# ---------------------------------------------------------------- 位姿与标定


def _parse_pose_row(values: Sequence[float]) -> RigidTransform:
    matrix = np.eye(4)
    matrix[:3, :4] = np.asarray(values, dtype=np.float64).reshape(3, 4)
    rotation = matrix[:3, :3]
    # 文本精度有限，旋转部分需要重新正交化
    if np.max(np.abs(rotation.T @ rotation - np.eye(3))) >= ORTHO_TOL:
        matrix[:3, :3] = orthonormalize(rotation)
    return RigidTransform(matrix)


def _parse_reals(tokens: List[str], error: type, where: str) -> np.ndarray:
    try:
        values = np.array([float(token) for token in tokens])
    except ValueError as e:
        raise error(f"{where}: 无法解析数值 ({e})") from e
    if not np.all(np.isfinite(values)):
        raise error(f"{where}: 包含非有限值")
    return values


def read_poses(text: str) -> Trajectory:
    """解析 KITTI 位姿文本，每行12个实数（3×4 行优先）"""
    poses = []
    for number, line in enumerate(text.splitlines(), start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != 12:
            raise MalformedPose(f"第 {number} 行应有12个数，实际 {len(tokens)} 个")
        values = _parse_reals(tokens, MalformedPose, f"第 {number} 行")
        try:
            poses.append(_parse_pose_row(values))
        except ValueError as e:
            raise MalformedPose(f"第 {number} 行不是合法的刚体变换: {e}") from e
    if not poses:
        raise MalformedPose("位姿文本为空")
    return Trajectory(tuple(poses))


def format_pose_row(pose: RigidTransform) -> str:
    return " ".join(f"{value:.12e}" for value in pose.matrix[:3, :4].ravel())


def read_calib(text: str) -> CalibTr:
    """从 calib.txt 中读取 "Tr:" 行，其余键忽略"""
    for line in text.splitlines():
        key, sep, rest = line.partition(":")
        if not sep or key.strip() != "Tr":
            continue
        tokens = rest.split()
        if len(tokens) != 12:
            raise MalformedCalib(f"Tr 应有12个数，实际 {len(tokens)} 个")
        values = _parse_reals(tokens, MalformedCalib, "Tr")
        try:
            return CalibTr(_parse_pose_row(values))
        except ValueError as e:
            raise MalformedCalib(f"Tr 不是合法的刚体变换: {e}") from e
    raise MalformedCalib("标定文件中没有 Tr 行")


def write_calib(calib: CalibTr) -> str:
    return f"Tr: {format_pose_row(calib.tr)}\n"


# ---------------------------------------------------------------- 坐标系转换


def _to_delta(transform: RigidTransform) -> PoseDelta:
    try:
        return transform_to_delta(transform)
    except GimbalLock as e:
        logger.warning(f"帧间运动处于万向锁附近，使用 roll=0 分解: {e}")
        return e.delta


def relative_gt(traj_cam: Trajectory, calib: CalibTr) -> List[PoseDelta]:
    """相机坐标系轨迹转为 LiDAR 坐标系下的逐帧真值

    T_velo = Tr⁻¹ · T_cam,t⁻¹ · T_cam,t+1 · Tr
    """
    if len(traj_cam) < 2:
        raise ValueError("轨迹至少需要两帧")
    tr, tr_inv = calib.tr, invert(calib.tr)
    deltas = []
    for before, after in zip(traj_cam.poses[:-1], traj_cam.poses[1:]):
        motion = compose(invert(before), after)
        deltas.append(_to_delta(compose(compose(tr_inv, motion), tr)))
    return deltas


def lidar_to_camera_trajectory(
    traj_lidar: Trajectory, calib: CalibTr, origin: Optional[RigidTransform] = None
) -> Trajectory:
    """LiDAR 坐标系下累积的轨迹转回相机坐标系：origin · Tr · L_t · Tr⁻¹"""
    tr, tr_inv = calib.tr, invert(calib.tr)
    origin = origin or RigidTransform.identity()
    return Trajectory(
        tuple(compose(origin, compose(compose(tr, pose), tr_inv)) for pose in traj_lidar)
    )


# ---------------------------------------------------------------- 目录布局


@dataclass(frozen=True)
class KittiLayout:
    """KITTI odometry 目录结构

    root/sequences/NN/velodyne/FFFFFF.bin、root/sequences/NN/calib.txt、root/poses/NN.txt
    """

    root: Path

    def __post_init__(self):
        object.__setattr__(self, "root", Path(self.root))

    def sequence_dir(self, seq: int) -> Path:
        return self.root / "sequences" / f"{seq:02d}"

    def velodyne_dir(self, seq: int) -> Path:
        return self.sequence_dir(seq) / "velodyne"

    def scan_path(self, seq: int, frame: int) -> Path:
        return self.velodyne_dir(seq) / f"{frame:06d}.bin"

    def calib_path(self, seq: int) -> Path:
        return self.sequence_dir(seq) / "calib.txt"

    def poses_path(self, seq: int) -> Path:
        return self.root / "poses" / f"{seq:02d}.txt"

    def has_sequence(self, seq: int) -> bool:
        return self.poses_path(seq).is_file() and self.velodyne_dir(seq).is_dir()

    def frames(self, seq: int) -> List[int]:
        return sorted(int(path.stem) for path in self.velodyne_dir(seq).glob("*.bin"))

    def load_scan(self, seq: int, frame: int) -> PointCloud:
        return read_scan(self.scan_path(seq, frame).read_bytes())

    def load_poses(self, seq: int) -> Trajectory:
        return read_poses(self.poses_path(seq).read_text(encoding="utf-8"))

    def load_calib(self, seq: int, frame: Frame = "camera") -> CalibTr:
        """frame="lidar" 表示位姿已在 LiDAR 坐标系下，直接使用单位外参"""
        if frame == "lidar":
            return CalibTr.identity()
        return read_calib(self.calib_path(seq).read_text(encoding="utf-8"))

    def write_sequence(
        self,
        seq: int,
        clouds: Iterable[PointCloud],
        poses: Optional[Trajectory] = None,
        calib: Optional[CalibTr] = None,
    ) -> None:
        from lidar_odometry.evaluation.report import write_poses

        velodyne = self.velodyne_dir(seq)
        velodyne.mkdir(parents=True, exist_ok=True)
        for frame, cloud in enumerate(clouds):
            self.scan_path(seq, frame).write_bytes(write_scan(cloud))
        if calib is not None:
            self.calib_path(seq).write_text(write_calib(calib), encoding="utf-8")
        if poses is not None:
            self.poses_path(seq).parent.mkdir(parents=True, exist_ok=True)
            self.poses_path(seq).write_text(write_poses(poses), encoding="utf-8")


# ---------------------------------------------------------------- 数据集


class KittiPairDataset:
    """按 (序列, 帧) 索引相邻帧对的数据集

    Args:
        root (Path): 数据集根目录
        sequences (Sequence[int]): 使用的序列号
        frame (Frame): 位姿所在坐标系，"camera" 时用 calib 中的 Tr 转换
        remove_plane (bool): 是否先去除主平面点
        ransac (RansacConfig): 平面提取参数
    """

    def __init__(
        self,
        root: Path,
        sequences: Sequence[int],
        frame: Frame = "camera",
        remove_plane: bool = True,
        ransac: Optional[RansacConfig] = None,
    ):
        self.layout = KittiLayout(root)
        self.remove_plane = remove_plane
        self.ransac = ransac or RansacConfig()
        self.targets: dict = {}
        self.index: List[Tuple[int, int]] = []
        for seq in sequences:
            deltas = relative_gt(self.layout.load_poses(seq), self.layout.load_calib(seq, frame))
            available = self.layout.frames(seq)
            if len(available) < len(deltas) + 1:
                logger.warning(
                    f"序列 {seq:02d} 的扫描数 {len(available)} 少于位姿数 {len(deltas) + 1}，按扫描数截断"
                )
            self.targets[seq] = deltas
            self.index.extend((seq, t) for t in range(min(len(deltas), len(available) - 1)))
        logger.info(f"加载 {len(sequences)} 个序列，共 {len(self.index)} 个帧对")

    def __len__(self) -> int:
        return len(self.index)

    def _cloud(self, seq: int, frame: int) -> PointCloud:
        cloud = self.layout.load_scan(seq, frame)
        if self.remove_plane:
            cloud, _ = remove_dominant_plane(
                cloud, self.ransac.threshold, self.ransac.iterations, self.ransac.seed
            )
        return cloud

    def __getitem__(self, i: int) -> FramePair:
        seq, t = self.index[i]
        return FramePair(self._cloud(seq, t), self._cloud(seq, t + 1), self.targets[seq][t])


def preprocess_sequence(
    source: KittiLayout, target: KittiLayout, seq: int, ransac: RansacConfig
) -> List[Tuple[int, float]]:
    """对整个序列去除主平面并写出精简后的扫描，返回每帧的去除比例"""
    stats = []
    clouds = []
    for frame in source.frames(seq):
        cloud = source.load_scan(seq, frame)
        reduced, plane = remove_dominant_plane(
            cloud, ransac.threshold, ransac.iterations, ransac.seed
        )
        fraction = plane.inlier_count / len(cloud)
        logger.info(f"序列 {seq:02d} 帧 {frame:06d}: 去除 {plane.inlier_count}/{len(cloud)} ({fraction:.1%})")
        stats.append((frame, fraction))
        clouds.append(reduced)
    poses = source.load_poses(seq) if source.poses_path(seq).exists() else None
    calib = read_calib(source.calib_path(seq).read_text(encoding="utf-8")) if source.calib_path(seq).exists() else None
    target.write_sequence(seq, clouds, poses, calib)
    return stats
