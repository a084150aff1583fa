import logging
import os
from typing import Optional

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def config_logging(level: Optional[str] = None) -> None:
    """配置根日志，级别优先取参数，其次取环境变量 LIDAR_ODOM_LOG_LEVEL，默认 INFO"""
    log_level = (level or os.getenv("LIDAR_ODOM_LOG_LEVEL") or "INFO").upper()
    logging.basicConfig(
        level=getattr(logging, log_level, logging.INFO),
        format=LOG_FORMAT,
        force=True,
    )
