"""评估结果输出：KITTI 位姿文本与 CSV 误差报表"""

import csv
import io

from lidar_odometry.dataio.kitti import format_pose_row
from lidar_odometry.evaluation.metrics import OdomErrors
from lidar_odometry.geometry import Trajectory

REPORT_HEADER = ("length_class", "count", "e_t_percent", "e_r_deg_per_m")


def write_poses(traj: Trajectory) -> str:
    """每个位姿一行，3×4 行优先共12个数"""
    return "".join(f"{format_pose_row(pose)}\n" for pose in traj)


def errors_to_csv(errors: OdomErrors) -> str:
    """每个长度档位一行，最后一行 "all" 为全部条目的平均；E_t 以百分比输出"""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(REPORT_HEADER)
    for length, item in errors.per_class().items():
        writer.writerow([f"{length:g}", item.count, f"{item.e_t * 100:.6f}", f"{item.e_r:.8f}"])
    writer.writerow(["all", len(errors), f"{errors.e_t * 100:.6f}", f"{errors.e_r:.8f}"])
    return buffer.getvalue()


def summary_line(name: str, errors: OdomErrors) -> str:
    return f"{name}: E_t={errors.e_t * 100:.4f}% E_r={errors.e_r:.6f} deg/m ({len(errors)} 个子序列)"
