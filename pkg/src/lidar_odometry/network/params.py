"""模型参数表：线性层权重/偏置、批归一化仿射参数与滑动统计量

参数名按层路径组织，例如 ``sa1.mlp.0.weight``、``sa1.mlp.0.bn.gamma``、
``head.1.bias``。除回归头最后一层外，每个线性层后都接批归一化。
"""

import logging
from dataclasses import dataclass
from typing import Dict, List

import numpy as np

from lidar_odometry.errors import ShapeMismatch
from lidar_odometry.network.config import MlpSpec, ModelConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LayerSpec:
    """一个线性层（可选批归一化）的形状"""

    prefix: str
    fan_in: int
    fan_out: int
    batch_norm: bool

    @property
    def trainable(self) -> int:
        count = self.fan_in * self.fan_out + self.fan_out
        return count + 2 * self.fan_out if self.batch_norm else count


def _mlp_layers(prefix: str, fan_in: int, spec: MlpSpec, final_plain: bool = False) -> List[LayerSpec]:
    layers = []
    for i, width in enumerate(spec.layer_widths):
        plain = final_plain and i == len(spec.layer_widths) - 1
        layers.append(LayerSpec(f"{prefix}.{i}", fan_in, width, not plain))
        fan_in = width
    return layers


def layer_plan(config: ModelConfig) -> List[LayerSpec]:
    """按前向顺序列出所有层，输入宽度由上一级输出推出"""
    c = config.input_feature_channels
    c1 = config.sa1.mlp.out_width
    c_fe = config.fe.mlp.out_width
    c2 = config.sa2.mlp.out_width
    c3 = config.sa3.mlp.out_width
    return (
        _mlp_layers("sa1.mlp", 3 + c, config.sa1.mlp)
        + _mlp_layers("fe.mlp", 3 + 2 * c1, config.fe.mlp)
        + _mlp_layers("sa2.mlp", 3 + c_fe, config.sa2.mlp)
        + _mlp_layers("sa3.mlp", 3 + c2, config.sa3.mlp)
        + _mlp_layers("mpn.mlp", c3, config.mpn)
        + _mlp_layers("head", config.mpn.out_width, config.head, final_plain=True)
    )


@dataclass
class ModelParams:
    """网络参数 θ

    Args:
        config (ModelConfig): 对应的网络配置
        tensors (Dict[str, np.ndarray]): 可训练张量
        buffers (Dict[str, np.ndarray]): 批归一化滑动均值/方差，不参与训练
    """

    config: ModelConfig
    tensors: Dict[str, np.ndarray]
    buffers: Dict[str, np.ndarray]

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0, dtype=np.float32) -> "ModelParams":
        """权重在 ±√(1/fan_in) 内均匀初始化，偏置为0，γ=1，β=0"""
        rng = np.random.default_rng(seed)
        tensors: Dict[str, np.ndarray] = {}
        buffers: Dict[str, np.ndarray] = {}
        for layer in layer_plan(config):
            bound = np.sqrt(1.0 / layer.fan_in)
            tensors[f"{layer.prefix}.weight"] = rng.uniform(
                -bound, bound, size=(layer.fan_in, layer.fan_out)
            ).astype(dtype)
            tensors[f"{layer.prefix}.bias"] = np.zeros(layer.fan_out, dtype=dtype)
            if layer.batch_norm:
                tensors[f"{layer.prefix}.bn.gamma"] = np.ones(layer.fan_out, dtype=dtype)
                tensors[f"{layer.prefix}.bn.beta"] = np.zeros(layer.fan_out, dtype=dtype)
                buffers[f"{layer.prefix}.bn.running_mean"] = np.zeros(layer.fan_out, dtype=dtype)
                buffers[f"{layer.prefix}.bn.running_var"] = np.ones(layer.fan_out, dtype=dtype)
        params = cls(config, tensors, buffers)
        logger.debug(f"初始化 {config.name} 模型参数，共 {count_parameters(params)} 个")
        return params

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self.tensors.values())).dtype

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(
            self.config,
            {k: v.astype(dtype) for k, v in self.tensors.items()},
            {k: v.astype(dtype) for k, v in self.buffers.items()},
        )

    def copy(self) -> "ModelParams":
        return self.astype(self.dtype)

    def state_tensors(self) -> Dict[str, np.ndarray]:
        """检查点用的扁平张量表"""
        named = {f"param/{k}": v for k, v in self.tensors.items()}
        named.update({f"buffer/{k}": v for k, v in self.buffers.items()})
        return named

    @classmethod
    def from_state_tensors(cls, config: ModelConfig, named: Dict[str, np.ndarray]) -> "ModelParams":
        expected = cls.init(config, dtype=next(iter(named.values())).dtype)
        tensors = {k[len("param/") :]: v for k, v in named.items() if k.startswith("param/")}
        buffers = {k[len("buffer/") :]: v for k, v in named.items() if k.startswith("buffer/")}
        for group, reference in ((tensors, expected.tensors), (buffers, expected.buffers)):
            if set(group) != set(reference):
                raise ShapeMismatch("检查点中的张量名与模型配置不一致")
            for name, value in group.items():
                if value.shape != reference[name].shape:
                    raise ShapeMismatch(f"{name} 形状 {value.shape} 与配置要求 {reference[name].shape} 不一致")
        return cls(config, tensors, buffers)


def count_parameters(params: ModelParams) -> int:
    """可训练标量总数：线性层权重与偏置加批归一化 γ/β，不含滑动统计量"""
    return int(sum(value.size for value in params.tensors.values()))
