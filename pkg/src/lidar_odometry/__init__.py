"""轻量级端到端 LiDAR 里程计：点云网络、训练流程、平面点预处理与 KITTI 指标"""

from lidar_odometry.errors import OdometryError
from lidar_odometry.geometry import PoseDelta, RigidTransform, Trajectory
from lidar_odometry.network import ModelConfig, ModelParams, count_parameters, model_forward
from lidar_odometry.pointcloud import PointCloud

__version__ = "0.1.0"

__all__ = [
    "ModelConfig",
    "ModelParams",
    "OdometryError",
    "PointCloud",
    "PoseDelta",
    "RigidTransform",
    "Trajectory",
    "count_parameters",
    "model_forward",
]
