from .kitti import (
    CalibTr,
    FramePair,
    KittiLayout,
    KittiPairDataset,
    SplitSpec,
    lidar_to_camera_trajectory,
    read_calib,
    read_poses,
    read_scan,
    relative_gt,
    write_calib,
    write_scan,
)
from .loader import prefetch
from .synthetic import SyntheticConfig, make_synthetic_pair, make_synthetic_sequence

__all__ = [
    "CalibTr",
    "FramePair",
    "KittiLayout",
    "KittiPairDataset",
    "SplitSpec",
    "SyntheticConfig",
    "lidar_to_camera_trajectory",
    "make_synthetic_pair",
    "make_synthetic_sequence",
    "prefetch",
    "read_calib",
    "read_poses",
    "read_scan",
    "relative_gt",
    "write_calib",
    "write_scan",
]
