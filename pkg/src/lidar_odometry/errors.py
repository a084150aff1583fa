"""各模块共享的异常类型。

类名与命令行诊断信息中输出的错误名保持一致，脚本可以直接按名字匹配。
"""

from typing import Any, Optional


class OdometryError(Exception):
    """本项目所有可预期错误的基类"""


class TooFewPoints(OdometryError, ValueError):
    """点数不足以完成拟合（例如平面RANSAC需要至少3个点）"""


class MalformedScan(OdometryError, ValueError):
    """Velodyne扫描文件格式错误"""


class MalformedPose(OdometryError, ValueError):
    """位姿文本格式错误"""


class MalformedCalib(OdometryError, ValueError):
    """标定文件缺少Tr或格式错误"""


class MalformedCheckpoint(OdometryError, ValueError):
    """检查点文件损坏或版本不支持"""


class EmptyCloud(OdometryError, ValueError):
    """输入点云为空"""


class ShapeMismatch(OdometryError, ValueError):
    """张量形状不匹配"""


class DegenerateBatch(OdometryError, ValueError):
    """训练模式下批归一化的样本数少于2"""


class NonFiniteValue(OdometryError, FloatingPointError):
    """计算结果出现NaN或Inf"""


class LengthMismatch(OdometryError, ValueError):
    """两条轨迹长度不一致"""


class ConfigError(OdometryError, ValueError):
    """配置键未知或取值非法"""


class GimbalLock(OdometryError):
    """俯仰角接近±90度时欧拉角分解不唯一

    Args:
        message (str): 错误信息
        delta (Any): roll=0 约定下的规范分解结果，调用方可以选择继续使用
    """

    def __init__(self, message: str, delta: Any = None):
        super().__init__(message)
        self.delta = delta


class DivergedLoss(OdometryError, FloatingPointError):
    """训练损失出现非有限值

    Args:
        message (str): 错误信息
        checkpoint (Optional[str]): 最后一个有效检查点的路径
    """

    def __init__(self, message: str, checkpoint: Optional[str] = None):
        super().__init__(message)
        self.checkpoint = checkpoint
