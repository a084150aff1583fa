"""训练循环：打乱、增广、批前向、损失、反向、梯度累积、Adam、检查点"""

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Literal, Optional, Sequence, Tuple

import numpy as np

from lidar_odometry.autodiff.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from lidar_odometry.autodiff.optim import AdamState, adam_step
from lidar_odometry.autodiff.tensor import Tape
from lidar_odometry.dataio.kitti import FramePair
from lidar_odometry.dataio.loader import PairSource, prefetch
from lidar_odometry.errors import ConfigError, DivergedLoss, NonFiniteValue
from lidar_odometry.network.config import ModelConfig
from lidar_odometry.network.layers import ForwardContext
from lidar_odometry.network.model import forward_batch
from lidar_odometry.network.params import ModelParams
from lidar_odometry.training.augment import augment_swap
from lidar_odometry.training.losses import CosMode, combined_loss
from lidar_odometry.training.schedule import lr_at

logger = logging.getLogger(__name__)

Precision = Literal["float32", "float64"]


@dataclass
class TrainConfig:
    """训练参数

    Args:
        epochs (int): 训练轮数，0 表示直接返回初始参数
        lr_base (float): 初始学习率
        lr_decay_epochs (Tuple[int, ...]): 学习率衰减的轮次，升序
        lr_decay_factor (float): 每次衰减的倍数
        batch_pairs (int): 每次前向的帧对数（批归一化统计量的批次）
        accumulate_batches (int): 每次 Adam 更新前累积的前向次数
        swap_probability (float): 交换两帧顺序的概率
        cos_reg_weight (float): 余弦正则权重，0 表示关闭
        cos_reg_mode (CosMode): 余弦正则使用完整向量还是只用平移
        seed (int): 随机种子（初始化、打乱、增广）
        precision (Precision): 训练精度
        deterministic (bool): 按固定顺序加载数据和累积梯度
        workers (int): 预取线程数
        checkpoint_every (int): 每隔多少轮保存检查点，0 表示只在结束时保存
        checkpoint_dir (Optional[Path]): 检查点目录，None 表示不保存
    """

    epochs: int = 500
    lr_base: float = 1e-3
    lr_decay_epochs: Tuple[int, ...] = (300, 400)
    lr_decay_factor: float = 0.1
    batch_pairs: int = 8
    accumulate_batches: int = 1
    swap_probability: float = 0.5
    cos_reg_weight: float = 0.0
    cos_reg_mode: CosMode = "translation"
    seed: int = 0
    precision: Precision = "float32"
    deterministic: bool = True
    workers: int = 0
    checkpoint_every: int = 50
    checkpoint_dir: Optional[Path] = None

    def __post_init__(self):
        self.lr_decay_epochs = tuple(int(e) for e in self.lr_decay_epochs)
        if self.epochs < 0:
            raise ConfigError("epochs 不能为负")
        if list(self.lr_decay_epochs) != sorted(self.lr_decay_epochs):
            raise ConfigError(f"lr_decay_epochs 必须升序: {self.lr_decay_epochs}")
        if not 0.0 <= self.swap_probability <= 1.0:
            raise ConfigError("swap_probability 必须在 [0, 1] 内")
        if self.batch_pairs < 2:
            raise ConfigError("batch_pairs 至少为2（训练模式的批归一化需要至少两行）")
        if self.accumulate_batches < 1:
            raise ConfigError("accumulate_batches 至少为1")
        if self.cos_reg_weight < 0:
            raise ConfigError("cos_reg_weight 不能为负")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"未知的精度 {self.precision}")

    @property
    def dtype(self):
        return np.float32 if self.precision == "float32" else np.float64


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    test_loss: float
    lr: float
    seconds: float


@dataclass
class TrainHistory:
    """每个完成的轮次一条记录；相同配置下除 seconds 列外逐字节一致"""

    records: List[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def append(self, record: EpochRecord) -> None:
        self.records.append(record)

    def to_csv(self, with_seconds: bool = True) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "test_loss", "lr"] + (["seconds"] if with_seconds else []))
        for r in self.records:
            row = [r.epoch, f"{r.train_loss:.9g}", f"{r.test_loss:.9g}", f"{r.lr:.9g}"]
            if with_seconds:
                row.append(f"{r.seconds:.3f}")
            writer.writerow(row)
        return buffer.getvalue()


def batch_chunks(order: Sequence[int], size: int) -> List[List[int]]:
    """按 size 切分；末尾只剩一个帧对时并入前一块"""
    chunks = [list(order[i : i + size]) for i in range(0, len(order), size)]
    if len(chunks) > 1 and len(chunks[-1]) == 1:
        chunks[-2].extend(chunks.pop())
    return chunks


def _targets(pairs: Sequence[FramePair]) -> np.ndarray:
    return np.stack([pair.target.as_vector() for pair in pairs])


def _grouped(stream: Iterator[FramePair], chunks: List[List[int]]) -> Iterator[List[FramePair]]:
    for chunk in chunks:
        yield [next(stream) for _ in chunk]


def training_checkpoint(
    params: ModelParams, adam: Optional[AdamState], epoch: int, cfg: TrainConfig
) -> Checkpoint:
    return Checkpoint(
        tensors=params.state_tensors(),
        metadata={"model": params.config.to_dict(), "epoch": epoch, "seed": cfg.seed},
        adam=adam,
    )


def load_params(path: Path) -> ModelParams:
    """从检查点恢复模型参数"""
    checkpoint = load_checkpoint(path)
    config = ModelConfig.from_dict(checkpoint.metadata["model"])
    return ModelParams.from_state_tensors(config, checkpoint.tensors)


def evaluate_loss(
    params: ModelParams, dataset: PairSource, cfg: TrainConfig
) -> float:
    """推理模式下整个数据集上的平均 MAE"""
    if len(dataset) == 0:
        return math.nan
    total = 0.0
    order = list(range(len(dataset)))
    stream = prefetch(dataset, order, workers=cfg.workers, deterministic=True)
    for pairs in _grouped(stream, batch_chunks(order, cfg.batch_pairs)):
        ctx = ForwardContext(Tape(params.dtype), params, train=False, canonical_start=params.config.canonical_start)
        pred = forward_batch(ctx, [(p.p, p.q) for p in pairs])
        total += float(np.abs(pred.data - _targets(pairs)).mean()) * len(pairs)
    return total / len(dataset)


def train(
    dataset: PairSource,
    model_config: ModelConfig,
    cfg: TrainConfig,
    test_dataset: Optional[PairSource] = None,
) -> Tuple[ModelParams, TrainHistory]:
    """训练网络

    Raises:
        DivergedLoss: 损失出现非有限值；异常携带最后一个有效检查点的路径
    """
    if len(dataset) == 0:
        raise ConfigError("训练集为空")
    params = ModelParams.init(model_config, seed=cfg.seed, dtype=cfg.dtype)
    history = TrainHistory()
    if cfg.epochs == 0:
        return params, history
    if len(dataset) < 2:
        raise ConfigError("训练集至少需要两个帧对")

    adam = AdamState.for_params(params.tensors, lr=cfg.lr_base)
    rng = np.random.default_rng(cfg.seed)
    last_checkpoint: Optional[Path] = None

    def checkpoint(epoch: int) -> None:
        nonlocal last_checkpoint
        if cfg.checkpoint_dir is None:
            return
        path = Path(cfg.checkpoint_dir) / f"epoch_{epoch:04d}.ckpt"
        save_checkpoint(path, training_checkpoint(params, adam, epoch, cfg))
        save_checkpoint(Path(cfg.checkpoint_dir) / "last.ckpt", training_checkpoint(params, adam, epoch, cfg))
        last_checkpoint = path

    for epoch in range(cfg.epochs):
        started = time.perf_counter()
        lr = lr_at(epoch, cfg)
        order = [int(i) for i in rng.permutation(len(dataset))]
        chunks = batch_chunks(order, cfg.batch_pairs)
        stream = prefetch(dataset, order, workers=cfg.workers, deterministic=cfg.deterministic)

        loss_sum, pending = 0.0, 0
        accumulated = None
        for step, pairs in enumerate(_grouped(stream, chunks)):
            pairs = [augment_swap(pair, rng, cfg.swap_probability) for pair in pairs]
            ctx = ForwardContext(Tape(cfg.dtype), params, train=True, canonical_start=model_config.canonical_start)
            try:
                pred = forward_batch(ctx, [(pair.p, pair.q) for pair in pairs])
                loss = combined_loss(ctx.tape, pred, _targets(pairs), cfg.cos_reg_weight, cfg.cos_reg_mode)
                ctx.tape.backward(loss)
            except NonFiniteValue as e:
                raise DivergedLoss(
                    f"第 {epoch} 轮第 {step} 批出现非有限值: {e}", checkpoint=str(last_checkpoint) if last_checkpoint else None
                ) from e
            logger.debug(f"epoch {epoch} batch {step}: loss={loss.item():.6f}")
            loss_sum += loss.item() * len(pairs)

            grads = ctx.gradients()
            if accumulated is None:
                accumulated = grads
            else:
                for name, g in grads.items():
                    accumulated[name] += g
            pending += 1
            if pending == cfg.accumulate_batches or step == len(chunks) - 1:
                if pending > 1:
                    for g in accumulated.values():
                        g /= pending
                adam_step(params.tensors, accumulated, adam, lr=lr)
                accumulated, pending = None, 0

        train_loss = loss_sum / len(dataset)
        test_loss = evaluate_loss(params, test_dataset, cfg) if test_dataset is not None else math.nan
        record = EpochRecord(epoch, train_loss, test_loss, lr, time.perf_counter() - started)
        history.append(record)
        logger.info(
            f"epoch {epoch + 1}/{cfg.epochs} train_loss={train_loss:.5f} test_loss={test_loss:.5f} lr={lr:.2e} ({record.seconds:.1f}s)"
        )
        if cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0 and epoch + 1 < cfg.epochs:
            checkpoint(epoch + 1)

    checkpoint(cfg.epochs)
    return params, history
