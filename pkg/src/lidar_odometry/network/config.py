"""网络结构配置与预设

宽度列表中的每个数都是一层的输出宽度，输入宽度由上下文决定：SA 为 3+c，
FE 为 3+2c，MPN 为 c，回归头为 MPN 的输出宽度。
"""

from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, Optional, Tuple

from lidar_odometry.errors import ConfigError


@dataclass(frozen=True)
class MlpSpec:
    """共享 MLP 的逐层输出宽度"""

    layer_widths: Tuple[int, ...]

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        if not widths or min(widths) < 1:
            raise ConfigError(f"MLP 宽度列表必须非空且每层至少为1: {self.layer_widths}")
        object.__setattr__(self, "layer_widths", widths)

    @property
    def out_width(self) -> int:
        return self.layer_widths[-1]


@dataclass(frozen=True)
class SaConfig:
    """set abstraction 层参数

    Args:
        radius (float): 分组半径（米）
        n_fps (int): 最远点采样得到的中心点数
        n_n (int): 每组邻居上限
        mlp (MlpSpec): 共享 MLP
    """

    radius: float
    n_fps: int
    n_n: int
    mlp: MlpSpec

    def __post_init__(self):
        if self.radius <= 0 or self.n_fps < 1 or self.n_n < 1:
            raise ConfigError(f"非法的 SA 配置: r={self.radius} n_fps={self.n_fps} n_n={self.n_n}")


@dataclass(frozen=True)
class FeConfig:
    """flow embedding 层参数，邻居用 kNN 搜索"""

    n_n: int
    mlp: MlpSpec

    def __post_init__(self):
        if self.n_n < 1:
            raise ConfigError("FE 的 n_n 至少为1")


@dataclass(frozen=True)
class ModelConfig:
    """完整网络配置

    Args:
        sa1 (SaConfig): 两帧共享权重的第一层 SA
        fe (FeConfig): flow embedding
        sa2 (SaConfig): 第二层 SA
        sa3 (SaConfig): 第三层 SA
        mpn (MlpSpec): mini-PointNet
        head (MlpSpec): 回归 MLP，最后一层宽度必须为6
        input_feature_channels (int): 输入特征通道数 c
        pre_subsample (Optional[int]): 进入 SA1 前的随机下采样上限，None 表示使用完整点云
        subsample_seed (int): 下采样随机种子
        canonical_start (bool): FPS 从离质心最近的点开始，而不是索引0
    """

    sa1: SaConfig
    fe: FeConfig
    sa2: SaConfig
    sa3: SaConfig
    mpn: MlpSpec
    head: MlpSpec
    input_feature_channels: int = 1
    pre_subsample: Optional[int] = 16384
    subsample_seed: int = 0
    canonical_start: bool = False
    name: str = field(default="custom", compare=False)

    def __post_init__(self):
        if self.head.out_width != 6:
            raise ConfigError(f"回归头最后一层宽度必须为6，实际 {self.head.out_width}")
        if self.input_feature_channels < 1:
            raise ConfigError("输入特征通道数至少为1")
        if self.pre_subsample is not None and self.pre_subsample < 1:
            raise ConfigError("pre_subsample 至少为1")

    def with_sa1_neighbors(self, n_n: int) -> "ModelConfig":
        """改变 SA1 的邻居上限，用于邻居数扫描实验"""
        return replace(self, sa1=replace(self.sa1, n_n=n_n))

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ModelConfig":
        def sa(d):
            return SaConfig(d["radius"], d["n_fps"], d["n_n"], MlpSpec(tuple(d["mlp"]["layer_widths"])))

        return cls(
            sa1=sa(data["sa1"]),
            fe=FeConfig(data["fe"]["n_n"], MlpSpec(tuple(data["fe"]["mlp"]["layer_widths"]))),
            sa2=sa(data["sa2"]),
            sa3=sa(data["sa3"]),
            mpn=MlpSpec(tuple(data["mpn"]["layer_widths"])),
            head=MlpSpec(tuple(data["head"]["layer_widths"])),
            input_feature_channels=data.get("input_feature_channels", 1),
            pre_subsample=data.get("pre_subsample"),
            subsample_seed=data.get("subsample_seed", 0),
            canonical_start=data.get("canonical_start", False),
            name=data.get("name", "custom"),
        )


def full_size() -> ModelConfig:
    """完整规模的配置，61,290 个可训练参数"""
    return ModelConfig(
        sa1=SaConfig(1.0, 1024, 8, MlpSpec((4, 8, 16, 32))),
        fe=FeConfig(16, MlpSpec((32, 64))),
        sa2=SaConfig(4.0, 256, 32, MlpSpec((64, 64))),
        sa3=SaConfig(8.0, 64, 8, MlpSpec((64, 64))),
        mpn=MlpSpec((64, 256)),
        head=MlpSpec((64, 6)),
        name="table1",
    )


def tiny() -> ModelConfig:
    """窄网络，用于桌面规模训练、梯度检验和测试"""
    return ModelConfig(
        sa1=SaConfig(3.0, 32, 8, MlpSpec((4, 8))),
        fe=FeConfig(8, MlpSpec((8, 8))),
        sa2=SaConfig(6.0, 16, 8, MlpSpec((8,))),
        sa3=SaConfig(12.0, 8, 8, MlpSpec((8,))),
        mpn=MlpSpec((8, 16)),
        head=MlpSpec((8, 6)),
        pre_subsample=None,
        name="tiny",
    )


PRESETS = {"table1": full_size, "tiny": tiny}


def preset(name: str) -> ModelConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"未知的模型预设 {name!r}，可选: {', '.join(PRESETS)}") from None
