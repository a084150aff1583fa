"""命令行入口：synth / preprocess / train / infer / evaluate / params / gradcheck

输出目录布局：checkpoints/、history.csv、predictions/NN.txt、report.csv、resolved_config.txt；
evaluate 另写 evaluate_config.txt，synth 在数据集根目录写 synth_config.txt。
退出码：0 成功，1 运行错误，2 用法错误。
"""

import logging
from dataclasses import asdict, replace
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import click
import numpy as np

from lidar_odometry.autodiff.gradcheck import primitive_suite
from lidar_odometry.config import RunConfig
from lidar_odometry.dataio.kitti import (
    CalibTr,
    KittiLayout,
    KittiPairDataset,
    lidar_to_camera_trajectory,
    preprocess_sequence,
    read_poses,
    relative_gt,
)
from lidar_odometry.dataio.synthetic import SyntheticConfig, make_synthetic_sequence
from lidar_odometry.errors import ConfigError, OdometryError
from lidar_odometry.evaluation.metrics import OdomErrors, accumulate, odometry_errors, subsequence_set
from lidar_odometry.evaluation.report import errors_to_csv, summary_line, write_poses
from lidar_odometry.geometry import PoseDelta
from lidar_odometry.network.gradcheck import model_grad_check
from lidar_odometry.network.model import model_forward
from lidar_odometry.network.params import ModelParams, count_parameters
from lidar_odometry.pointcloud import PointCloud, RansacConfig, remove_dominant_plane
from lidar_odometry.training.trainer import load_params, train
from lidar_odometry.utils.log import config_logging

logger = logging.getLogger(__name__)

PROG_NAME = "lidar-odometry"


def _write_text(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


@click.group()
@click.option("--log-level", "log_level", default=None, help="日志级别，如 DEBUG/INFO")
def main(log_level):
    """LiDAR 里程计：数据准备、训练、推理与 KITTI 指标评估"""
    if log_level:
        config_logging(log_level)


# ---------------------------------------------------------------- params / gradcheck


@main.command()
@click.option("--preset", "preset_name", type=click.Choice(["table1", "tiny"]), default="table1")
@click.option("--sa1-nn", "sa1_nn", type=int, default=None, help="覆盖第一个 SA 层的邻域点数")
def params(preset_name, sa1_nn):
    """打印预设网络的可训练参数个数"""
    cfg = RunConfig.resolve(overrides={"preset": preset_name, "sa1_nn": sa1_nn})
    cfg.log_resolved()
    click.echo(count_parameters(ModelParams.init(cfg.network(), seed=0)))


@main.command()
@click.option("--seed", type=int, default=0)
@click.option("--skip-model", is_flag=True, help="只检验原语，跳过整网检验")
def gradcheck(seed, skip_model):
    """float64 中心差分检验全部原语与缩减宽度模型，任何一项失败退出码为1"""
    results = primitive_suite(seed)
    if not skip_model:
        results.append(model_grad_check(seed))
    failed = 0
    for result in results:
        status = "PASS" if result.passed else "FAIL"
        failed += not result.passed
        click.echo(f"{result.name:<18} {result.error:.3e} < {result.tolerance:g} {status}")
    if failed:
        logger.error(f"{failed} 项梯度检验未通过")
        raise click.exceptions.Exit(1)


# ---------------------------------------------------------------- 数据


@main.command()
@click.option("--out", "out", type=click.Path(path_type=Path), required=True, help="生成的数据集根目录")
@click.option("--sequences", "sequences", default="0", help="序列号，逗号分隔")
@click.option("--frames", type=int, default=20)
@click.option("--points", type=int, default=512)
@click.option("--max-t", "max_t", type=float, default=1.0)
@click.option("--max-r", "max_r", type=float, default=2.0)
@click.option("--noise", type=float, default=0.0, help="观测噪声标准差（米）")
@click.option("--seed", type=int, default=0)
def synth(out, sequences, frames, points, max_t, max_r, noise, seed):
    """生成 KITTI 目录布局的合成序列，标定外参为单位阵"""
    try:
        cfg = SyntheticConfig(n_points=points, max_t=max_t, max_r=max_r, noise_sigma=noise)
        ids = [int(token) for token in sequences.replace(",", " ").split()]
    except ValueError as e:
        raise ConfigError(str(e)) from e
    settings = {**asdict(cfg), "sequences": ",".join(str(seq) for seq in ids), "frames": frames, "seed": seed}
    text = "".join(f"{key} = {value}\n" for key, value in settings.items())
    logger.info("合成数据配置:\n" + text.rstrip())
    _write_text(Path(out) / "synth_config.txt", text)
    layout = KittiLayout(out)
    for seq in ids:
        clouds, poses = make_synthetic_sequence(seed + seq, frames, cfg)
        layout.write_sequence(seq, clouds, poses, CalibTr.identity())
        click.echo(f"{layout.sequence_dir(seq)} {frames} frames")


@main.command()
@click.option("--root", type=click.Path(exists=True, file_okay=False, path_type=Path), required=True)
@click.option("--sequence", "sequence", type=int, required=True)
@click.option("--out", "out", type=click.Path(path_type=Path), required=True, help="精简后数据集的根目录")
@click.option("--threshold", type=float, default=None, help="RANSAC 内点距离阈值（米）")
@click.option("--iterations", type=int, default=None)
@click.option("--seed", type=int, default=None)
def preprocess(root, sequence, out, threshold, iterations, seed):
    """去除序列中每帧的主平面点，写出精简扫描并打印每帧去除比例"""
    cfg = RunConfig.resolve(
        overrides={"root": root, "out": out, "ransac_threshold": threshold, "ransac_iterations": iterations, "seed": seed}
    )
    cfg.write_resolved()
    target = KittiLayout(out)
    stats = preprocess_sequence(KittiLayout(root), target, sequence, cfg.ransac())
    lines = [f"{frame:06d} {fraction:.6f}" for frame, fraction in stats]
    _write_text(target.sequence_dir(sequence) / "plane_removal.txt", "\n".join(lines) + "\n")
    for line in lines:
        click.echo(line)
    if stats:
        logger.info(f"序列 {sequence:02d} 平均去除比例 {np.mean([f for _, f in stats]):.1%}")


# ---------------------------------------------------------------- 训练 / 推理


def _run_config(config_path: Optional[Path], overrides: dict) -> RunConfig:
    cfg = RunConfig.resolve(config_path, overrides)
    if cfg.root is None:
        raise ConfigError("缺少数据集根目录 root")
    cfg.write_resolved()
    return cfg


def _test_dataset(cfg: RunConfig, ransac: RansacConfig) -> Optional[KittiPairDataset]:
    """test_split 中根目录下存在的序列；一个都没有时不计算测试损失"""
    if cfg.test_split is None:
        return None
    layout = KittiLayout(cfg.root)
    wanted = cfg.sequence_ids(cfg.test_split)
    present = [seq for seq in wanted if layout.has_sequence(seq)]
    if len(present) < len(wanted):
        missing = ", ".join(f"{seq:02d}" for seq in wanted if seq not in present)
        logger.warning(f"测试划分 {cfg.test_split} 中缺少序列 {missing}")
    if not present:
        return None
    return KittiPairDataset(cfg.root, present, cfg.frame, cfg.remove_plane, ransac)


@main.command("train")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None)
@click.option("--root", type=click.Path(path_type=Path), default=None)
@click.option("--out", type=click.Path(path_type=Path), default=None)
@click.option("--preset", type=click.Choice(["table1", "tiny"]), default=None)
@click.option("--split", type=click.Choice(["train", "test", "validation", "all"]), default=None)
@click.option("--sequences", default=None, help="显式序列号，逗号分隔，覆盖 --split")
@click.option("--test-split", "test_split", type=click.Choice(["train", "test", "validation", "all"]), default=None)
@click.option("--frame", type=click.Choice(["camera", "lidar"]), default=None)
@click.option("--remove-plane/--keep-plane", "remove_plane", default=None)
@click.option("--sa1-nn", "sa1_nn", type=int, default=None)
@click.option("--n-max", "n_max", type=int, default=None)
@click.option("--full-cloud/--subsample", "full_cloud", default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--lr", "lr_base", type=float, default=None)
@click.option("--batch-pairs", "batch_pairs", type=int, default=None)
@click.option("--accumulate", "accumulate_batches", type=int, default=None)
@click.option("--cos-reg-weight", "cos_reg_weight", type=float, default=None)
@click.option("--cos-reg-mode", "cos_reg_mode", type=click.Choice(["full", "translation"]), default=None)
@click.option("--precision", type=click.Choice(["float32", "float64"]), default=None)
@click.option("--workers", type=int, default=None)
@click.option("--seed", type=int, default=None)
def train_command(config_path, **overrides):
    """训练网络，写出 checkpoints/ 与 history.csv"""
    cfg = _run_config(config_path, overrides)
    ransac = cfg.ransac()
    dataset = KittiPairDataset(cfg.root, cfg.sequence_ids(), cfg.frame, cfg.remove_plane, ransac)
    test_dataset = _test_dataset(cfg, ransac)
    _, history = train(dataset, cfg.network(), cfg.training(), test_dataset)
    path = _write_text(cfg.out / "history.csv", history.to_csv())
    if history.records:
        last = history.records[-1]
        click.echo(f"epoch {last.epoch + 1}: train_loss={last.train_loss:.6f} test_loss={last.test_loss:.6f}")
    click.echo(str(path))


def _load_cloud(layout: KittiLayout, seq: int, frame: int, cfg: RunConfig) -> PointCloud:
    cloud = layout.load_scan(seq, frame)
    if cfg.remove_plane:
        cloud, _ = remove_dominant_plane(cloud, cfg.ransac_threshold, cfg.ransac_iterations, cfg.seed)
    return cloud


def _predict_deltas(layout: KittiLayout, seq: int, params: ModelParams, cfg: RunConfig) -> List[PoseDelta]:
    frames = layout.frames(seq)
    if len(frames) < 2:
        raise ConfigError(f"序列 {seq:02d} 少于两帧扫描")
    deltas = []
    previous = _load_cloud(layout, seq, frames[0], cfg)
    for frame in frames[1:]:
        current = _load_cloud(layout, seq, frame, cfg)
        deltas.append(model_forward(previous, current, params))
        previous = current
    return deltas


def _format_deltas(deltas: Sequence[PoseDelta]) -> str:
    return "".join(" ".join(f"{v:.9e}" for v in d.as_vector()) + "\n" for d in deltas)


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None)
@click.option("--root", type=click.Path(path_type=Path), default=None)
@click.option("--out", type=click.Path(path_type=Path), default=None)
@click.option("--sequence", "sequence_list", type=int, multiple=True, required=True)
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None)
@click.option("--oracle", is_flag=True, help="用真值帧间运动代替网络输出")
@click.option("--frame", type=click.Choice(["camera", "lidar"]), default=None)
@click.option("--n-max", "n_max", type=int, default=None)
@click.option("--full-cloud/--subsample", "full_cloud", default=None)
@click.option("--remove-plane/--keep-plane", "remove_plane", default=None)
@click.option("--seed", type=int, default=None)
def infer(config_path, sequence_list, checkpoint, oracle, **overrides):
    """逐帧对预测运动并累积为 KITTI 格式轨迹，写入 predictions/NN.txt"""
    cfg = _run_config(config_path, overrides)
    if not oracle and checkpoint is None:
        raise ConfigError("推理需要 --checkpoint，或使用 --oracle")
    params = None if oracle else load_params(checkpoint)
    if params is not None:
        params.config = replace(params.config, pre_subsample=cfg.input_cap(params.config.pre_subsample))
    layout = KittiLayout(cfg.root)
    for seq in sequence_list:
        calib = layout.load_calib(seq, cfg.frame)
        if oracle:
            deltas = relative_gt(layout.load_poses(seq), calib)
        else:
            deltas = _predict_deltas(layout, seq, params, cfg)
        trajectory = lidar_to_camera_trajectory(accumulate(deltas), calib)
        predictions = cfg.out / "predictions"
        _write_text(predictions / f"{seq:02d}_deltas.txt", _format_deltas(deltas))
        path = _write_text(predictions / f"{seq:02d}.txt", write_poses(trajectory))
        logger.info(f"序列 {seq:02d}: {len(deltas)} 个帧对，轨迹写入 {path}")
        click.echo(str(path))


# ---------------------------------------------------------------- 评估


@main.command()
@click.option("--gt", "gt_paths", type=click.Path(exists=True, dir_okay=False, path_type=Path), multiple=True, required=True)
@click.option("--pred", "pred_paths", type=click.Path(exists=True, dir_okay=False, path_type=Path), multiple=True, required=True)
@click.option("--stride", type=click.IntRange(min=1), default=1, help="子序列起点步长")
@click.option("--out", type=click.Path(path_type=Path), default=None, help="写出 report.csv 的目录")
def evaluate(gt_paths, pred_paths, stride, out):
    """按 100..800 米子序列计算 E_t（%）与 E_r（度/米），多个序列同时输出合并结果

    --gt 与 --pred 按出现顺序配对。
    """
    if len(gt_paths) != len(pred_paths):
        raise click.UsageError(f"--gt 给出 {len(gt_paths)} 个文件，--pred 给出 {len(pred_paths)} 个")
    cfg = RunConfig.resolve(overrides={"out": out, "stride": stride})
    if out is not None:
        cfg.write_resolved("evaluate_config.txt")
    else:
        cfg.log_resolved()
    parts: List[OdomErrors] = []
    for gt_path, pred_path in zip(gt_paths, pred_paths):
        gt = read_poses(gt_path.read_text(encoding="utf-8"))
        pred = read_poses(pred_path.read_text(encoding="utf-8"))
        errors = odometry_errors(gt, pred, subsequence_set(gt, stride=cfg.stride))
        logger.info(summary_line(pred_path.stem, errors))
        parts.append(errors)
        if out is not None and len(gt_paths) > 1:
            _write_text(out / f"report_{pred_path.stem}.csv", errors_to_csv(errors))
    report = errors_to_csv(OdomErrors.pooled(parts))
    if out is not None:
        _write_text(out / "report.csv", report)
    click.echo(report, nl=False)


# ---------------------------------------------------------------- 入口


def dispatch(argv: Sequence[str]) -> int:
    """运行一个子命令并返回退出码"""
    try:
        result = main.main(args=list(argv), prog_name=PROG_NAME, standalone_mode=False)
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.exceptions.Abort:
        click.echo("Aborted!", err=True)
        return 1
    except (OdometryError, OSError) as e:
        click.echo(f"error: {type(e).__name__}: {e}", err=True)
        return 1
    except Exception as e:
        logger.exception(f"未预期的错误: {e}")
        click.echo(f"error: {type(e).__name__}: {e}", err=True)
        return 1
    return result if isinstance(result, int) else 0


def main_entry() -> None:
    config_logging()
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main_entry()
