import hashlib
import json
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from .model import PARAM_NAMES, ToyConfig, ToyModel, logger

PathLike = Union[str, Path]

CHECKPOINT_FORMAT = "toy-attn-checkpoint"


class CorruptCheckpoint(ValueError):
    """检查点头与载荷不一致"""


def save_checkpoint(model: ToyModel, header_path: PathLike) -> Tuple[Path, Path]:
    """参数按固定顺序展平为小端 float64，写 .bin 载荷与 JSON 形状头"""
    header_path = Path(header_path)
    payload_path = header_path.with_suffix(".bin")
    chunks, entries, offset = [], [], 0
    for name in PARAM_NAMES:
        value = np.ascontiguousarray(model.params[name], dtype="<f8")
        chunks.append(value.tobytes(order="C"))
        entries.append({"name": name, "shape": list(value.shape), "offset": offset})
        offset += value.size
    payload = b"".join(chunks)
    header = {
        "format": CHECKPOINT_FORMAT,
        "dtype": "f64",
        "byte_order": "little-endian",
        "config": model.config.to_dict(),
        "params": entries,
        "payload": payload_path.name,
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    header_path.parent.mkdir(parents=True, exist_ok=True)
    payload_path.write_bytes(payload)
    header_path.write_text(json.dumps(header, indent=2) + "\n", encoding="utf-8")
    logger.debug(f"检查点已写入 {header_path}（{model.n_params} 个参数）")
    return header_path, payload_path


def load_checkpoint(header_path: PathLike) -> ToyModel:
    header_path = Path(header_path)
    if not header_path.is_file():
        raise FileNotFoundError(f"检查点头不存在: {header_path}")
    try:
        header = json.loads(header_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise CorruptCheckpoint(f"无法读取检查点头 {header_path}: {e}") from e
    if header.get("format") != CHECKPOINT_FORMAT or header.get("dtype") != "f64":
        raise CorruptCheckpoint(f"{header_path}: 不是 f64 玩具模型检查点")

    payload_path = header_path.parent / header["payload"]
    if not payload_path.is_file():
        raise FileNotFoundError(f"检查点载荷不存在: {payload_path}")
    payload = payload_path.read_bytes()
    if hashlib.sha256(payload).hexdigest() != header.get("sha256"):
        raise CorruptCheckpoint(f"{payload_path}: 载荷哈希与检查点头不一致")

    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    params = {}
    for entry in header["params"]:
        shape = tuple(int(v) for v in entry["shape"])
        start = int(entry["offset"])
        size = int(np.prod(shape))
        if start + size > flat.size:
            raise CorruptCheckpoint(f"{header_path}: 参数 {entry['name']} 超出载荷范围")
        params[entry["name"]] = flat[start : start + size].reshape(shape).copy()
    return ToyModel(ToyConfig(**header["config"]), params)
