"""后台线程预取帧对"""

import logging
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from typing import Iterable, Iterator, Protocol

from lidar_odometry.dataio.kitti import FramePair

logger = logging.getLogger(__name__)


class PairSource(Protocol):
    def __len__(self) -> int: ...

    def __getitem__(self, i: int) -> FramePair: ...


def prefetch(
    dataset: PairSource,
    indices: Iterable[int],
    workers: int = 2,
    depth: int = 4,
    deterministic: bool = True,
) -> Iterator[FramePair]:
    """在工作线程中解码帧对，最多提前 depth 个

    Args:
        dataset (PairSource): 支持按索引取帧对的数据集
        indices (Iterable[int]): 取用顺序
        workers (int): 线程数，0 表示在当前线程同步读取
        depth (int): 在途请求上限
        deterministic (bool): True 时严格按 indices 顺序交付，否则按完成顺序

    Yields:
        FramePair: 帧对
    """
    if workers <= 0:
        for i in indices:
            yield dataset[i]
        return

    pending = iter(indices)
    depth = max(depth, 1)
    with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="pair-loader") as pool:
        in_flight = []
        for i in pending:
            in_flight.append(pool.submit(dataset.__getitem__, i))
            if len(in_flight) >= depth:
                break
        while in_flight:
            if deterministic:
                done = in_flight.pop(0)
            else:
                finished, _ = wait(in_flight, return_when=FIRST_COMPLETED)
                done = next(f for f in in_flight if f in finished)
                in_flight.remove(done)
            # 异常在这里向调用方抛出
            pair = done.result()
            nxt = next(pending, None)
            if nxt is not None:
                in_flight.append(pool.submit(dataset.__getitem__, nxt))
            yield pair
