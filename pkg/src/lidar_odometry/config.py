"""运行配置：默认值 < 配置文件（key = value）< 命令行参数"""

import logging
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from lidar_odometry.dataio.kitti import SplitSpec
from lidar_odometry.errors import ConfigError
from lidar_odometry.network.config import ModelConfig, preset
from lidar_odometry.pointcloud import RansacConfig
from lidar_odometry.training.trainer import TrainConfig

logger = logging.getLogger(__name__)

_NONE_WORDS = {"", "none", "null"}


def _int_tuple(value: Any) -> Any:
    if isinstance(value, str):
        return tuple(int(token) for token in value.replace(",", " ").split())
    return value


class RunConfig(BaseModel):
    """一次运行的完整配置，未知键直接拒绝"""

    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    root: Optional[Path] = Field(default=None, description="KITTI 布局的数据集根目录")
    out: Path = Field(default=Path("runs/default"), description="输出目录")
    preset: Literal["table1", "tiny"] = "table1"
    split: Literal["train", "test", "validation", "all"] = "train"
    sequences: Optional[Tuple[int, ...]] = Field(default=None, description="显式序列号，覆盖 split")
    test_split: Optional[Literal["train", "test", "validation", "all"]] = Field(
        default="test", description="每轮结束后计算测试损失的划分，none 表示不计算"
    )
    frame: Literal["camera", "lidar"] = "camera"
    remove_plane: bool = True
    ransac_threshold: float = Field(default=0.3, gt=0)
    ransac_iterations: int = Field(default=200, ge=1)
    n_max: Optional[int] = Field(default=None, ge=1, description="进入网络前的下采样上限，未给出时沿用预设")
    full_cloud: bool = False
    sa1_nn: Optional[int] = Field(default=None, ge=1)
    canonical_start: bool = False
    seed: int = 0
    epochs: int = Field(default=500, ge=0)
    lr_base: float = Field(default=1e-3, gt=0)
    lr_decay_epochs: Tuple[int, ...] = (300, 400)
    lr_decay_factor: float = Field(default=0.1, gt=0)
    batch_pairs: int = Field(default=8, ge=2)
    accumulate_batches: int = Field(default=1, ge=1)
    swap_probability: float = Field(default=0.5, ge=0, le=1)
    cos_reg_weight: float = Field(default=0.0, ge=0)
    cos_reg_mode: Literal["full", "translation"] = "translation"
    precision: Literal["float32", "float64"] = "float32"
    deterministic: bool = True
    workers: int = Field(default=0, ge=0)
    checkpoint_every: int = Field(default=50, ge=0)
    stride: int = Field(default=1, ge=1)

    @field_validator("sequences", "lr_decay_epochs", mode="before")
    @classmethod
    def _split_ints(cls, value):
        return _int_tuple(value)

    @field_validator("test_split", mode="before")
    @classmethod
    def _none_word(cls, value):
        if isinstance(value, str) and value.lower() in _NONE_WORDS:
            return None
        return value

    # ------------------------------------------------------------ 读取

    @staticmethod
    def parse_flat(text: str) -> Dict[str, Optional[str]]:
        """解析 key = value 文本；# 之后为注释，空行忽略"""
        values: Dict[str, Optional[str]] = {}
        for number, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep or not key.strip():
                raise ConfigError(f"配置第 {number} 行不是 key = value 格式: {raw!r}")
            value = value.strip()
            values[key.strip()] = None if value.lower() in _NONE_WORDS else value
        return values

    @classmethod
    def resolve(cls, path: Optional[Path] = None, overrides: Optional[Dict[str, Any]] = None) -> "RunConfig":
        """合并配置文件与命令行覆盖项；值为 None 的覆盖项视为未指定"""
        merged: Dict[str, Any] = {}
        if path is not None:
            try:
                merged.update(cls.parse_flat(Path(path).read_text(encoding="utf-8")))
            except OSError as e:
                raise ConfigError(f"无法读取配置文件 {path}: {e}") from e
        merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
        try:
            return cls(**merged)
        except ValidationError as e:
            raise ConfigError(f"配置无效: {e}") from e

    def to_text(self) -> str:
        lines = []
        for key in type(self).model_fields:
            value = getattr(self, key)
            if value is None:
                rendered = "none"
            elif isinstance(value, bool):
                rendered = "true" if value else "false"
            elif isinstance(value, tuple):
                rendered = ",".join(str(v) for v in value)
            else:
                rendered = str(value)
            lines.append(f"{key} = {rendered}")
        return "\n".join(lines) + "\n"

    def log_resolved(self) -> None:
        logger.info("运行配置:\n" + self.to_text().rstrip())

    def write_resolved(self, name: str = "resolved_config.txt") -> Path:
        """把完整配置写入输出目录并记录日志"""
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / name
        path.write_text(self.to_text(), encoding="utf-8")
        self.log_resolved()
        return path

    # ------------------------------------------------------------ 派生配置

    def sequence_ids(self, split: Optional[str] = None) -> Tuple[int, ...]:
        if self.sequences is not None and split is None:
            return self.sequences
        return SplitSpec().sequences(split or self.split)

    def network(self) -> ModelConfig:
        """按预设构建网络配置；未显式给出 n_max 时沿用预设的下采样上限"""
        config = preset(self.preset)
        if self.sa1_nn is not None:
            config = config.with_sa1_neighbors(self.sa1_nn)
        return replace(
            config,
            pre_subsample=self.input_cap(config.pre_subsample),
            subsample_seed=self.seed,
            canonical_start=self.canonical_start,
        )

    def input_cap(self, default: Optional[int]) -> Optional[int]:
        """进入网络前的下采样上限：full_cloud 优先，其次显式 n_max，最后沿用 default"""
        if self.full_cloud:
            return None
        return self.n_max if self.n_max is not None else default

    def ransac(self) -> RansacConfig:
        return RansacConfig(self.ransac_threshold, self.ransac_iterations, self.seed)

    def training(self) -> TrainConfig:
        """训练参数；检查点写入 out/checkpoints"""
        return TrainConfig(
            epochs=self.epochs,
            lr_base=self.lr_base,
            lr_decay_epochs=self.lr_decay_epochs,
            lr_decay_factor=self.lr_decay_factor,
            batch_pairs=self.batch_pairs,
            accumulate_batches=self.accumulate_batches,
            swap_probability=self.swap_probability,
            cos_reg_weight=self.cos_reg_weight,
            cos_reg_mode=self.cos_reg_mode,
            seed=self.seed,
            precision=self.precision,
            deterministic=self.deterministic,
            workers=self.workers,
            checkpoint_every=self.checkpoint_every,
            checkpoint_dir=self.out / "checkpoints",
        )
