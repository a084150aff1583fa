import numpy as np

from lidar_odometry.dataio.kitti import FramePair
from lidar_odometry.errors import GimbalLock
from lidar_odometry.geometry import PoseDelta, delta_to_transform, invert, transform_to_delta


def reverse_delta(delta: PoseDelta) -> PoseDelta:
    """反向运动 transform_to_delta(invert(delta_to_transform(delta)))"""
    try:
        return transform_to_delta(invert(delta_to_transform(delta)))
    except GimbalLock as e:
        return e.delta


def augment_swap(
    pair: FramePair, rng: np.random.Generator, probability: float = 0.5, force: bool = False
) -> FramePair:
    """以 probability 的概率交换两帧顺序并反转目标运动

    每次调用都从 rng 取一个随机数，保证随机流与是否交换无关。
    """
    draw = rng.random()
    if not (force or draw < probability):
        return pair
    return FramePair(pair.q, pair.p, reverse_delta(pair.target))
