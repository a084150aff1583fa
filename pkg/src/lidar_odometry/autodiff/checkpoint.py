"""检查点容器

布局：8字节魔数、uint32 版本号、uint32 头长度、UTF-8 JSON 头（元数据、Adam
超参数与步数、张量表：名称/形状/精度/偏移/字节数），之后是小端原始数据。
"""

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from lidar_odometry.autodiff.optim import AdamState
from lidar_odometry.errors import MalformedCheckpoint

logger = logging.getLogger(__name__)

MAGIC = b"LODOCKPT"
VERSION = 1
_PREAMBLE = struct.Struct("<8sII")
_DTYPES = {"f4": np.dtype("<f4"), "f8": np.dtype("<f8")}


@dataclass
class Checkpoint:
    """检查点内容

    Args:
        tensors (Dict[str, np.ndarray]): 命名张量（模型参数与批归一化统计量）
        metadata (Dict[str, Any]): 可 JSON 序列化的元数据
        adam (Optional[AdamState]): 优化器状态
    """

    tensors: Dict[str, np.ndarray]
    metadata: Dict[str, Any] = field(default_factory=dict)
    adam: Optional[AdamState] = None


def _dtype_code(array: np.ndarray) -> str:
    if array.dtype == np.float32:
        return "f4"
    if array.dtype == np.float64:
        return "f8"
    raise MalformedCheckpoint(f"不支持的张量精度 {array.dtype}")


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    named = dict(checkpoint.tensors)
    adam_header = None
    if checkpoint.adam is not None:
        adam = checkpoint.adam
        adam_header = {
            "lr": adam.lr,
            "beta1": adam.beta1,
            "beta2": adam.beta2,
            "eps": adam.eps,
            "step": adam.step,
        }
        named.update({f"adam.m/{k}": v for k, v in adam.m.items()})
        named.update({f"adam.v/{k}": v for k, v in adam.v.items()})

    table, chunks, offset = [], [], 0
    for name, array in named.items():
        code = _dtype_code(array)
        raw = np.ascontiguousarray(array, dtype=_DTYPES[code]).tobytes()
        table.append(
            {"name": name, "shape": list(array.shape), "dtype": code, "offset": offset, "nbytes": len(raw)}
        )
        chunks.append(raw)
        offset += len(raw)

    header = json.dumps(
        {"metadata": checkpoint.metadata, "adam": adam_header, "tensors": table},
        ensure_ascii=False,
        sort_keys=True,
    ).encode("utf-8")
    return _PREAMBLE.pack(MAGIC, VERSION, len(header)) + header + b"".join(chunks)


def decode_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < _PREAMBLE.size:
        raise MalformedCheckpoint("检查点文件过短")
    magic, version, header_len = _PREAMBLE.unpack_from(data)
    if magic != MAGIC:
        raise MalformedCheckpoint("检查点魔数不匹配")
    if version != VERSION:
        raise MalformedCheckpoint(f"不支持的检查点版本 {version}")
    start = _PREAMBLE.size
    try:
        header = json.loads(data[start : start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise MalformedCheckpoint(f"检查点头部无法解析: {e}") from e
    body = start + header_len

    tensors: Dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        begin = body + entry["offset"]
        raw = data[begin : begin + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise MalformedCheckpoint(f"张量 {entry['name']} 数据被截断")
        dtype = _DTYPES[entry["dtype"]]
        array = np.frombuffer(raw, dtype=dtype).reshape(entry["shape"])
        tensors[entry["name"]] = array.astype(dtype.newbyteorder("="), copy=True)

    adam = None
    if header.get("adam") is not None:
        adam = AdamState(**header["adam"])
        for name in list(tensors):
            if name.startswith("adam.m/"):
                adam.m[name[len("adam.m/") :]] = tensors.pop(name)
            elif name.startswith("adam.v/"):
                adam.v[name[len("adam.v/") :]] = tensors.pop(name)
    return Checkpoint(tensors=tensors, metadata=header.get("metadata") or {}, adam=adam)


def save_checkpoint(path: Path, checkpoint: Checkpoint) -> Path:
    """先写临时文件再替换，中途失败不会破坏已有检查点"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode_checkpoint(checkpoint))
    tmp.replace(path)
    logger.debug(f"检查点已保存: {path}")
    return path


def load_checkpoint(path: Path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())
