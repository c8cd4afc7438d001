import re
from typing import Tuple

import numpy as np

_TOKEN = re.compile(r"^\d+$")


class MalformedRLE(ValueError):
    """游程编码文本无法解码成给定尺寸的掩码"""


def rle_encode_mask(mask: np.ndarray) -> str:
    """行优先游程编码，0 段与 1 段交替，总是从 0 段开始"""
    flat = np.asarray(mask, dtype=bool).ravel(order="C")
    if flat.size == 0:
        return "0"
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return " ".join(str(run) for run in runs)


def rle_decode_mask(text: str, dims: Tuple[int, int]) -> np.ndarray:
    height, width = int(dims[0]), int(dims[1])
    if not isinstance(text, str):
        raise MalformedRLE(f"游程编码必须是字符串，实际为 {type(text).__name__}")
    tokens = text.split()
    if not tokens:
        raise MalformedRLE("游程编码为空")
    for token in tokens:
        if not _TOKEN.match(token):
            raise MalformedRLE(f"非法的游程长度: {token!r}")

    runs = np.array([int(t) for t in tokens], dtype=np.int64)
    total = int(runs.sum())
    if total != height * width:
        raise MalformedRLE(f"游程总长 {total} 与尺寸 {height}x{width}={height * width} 不一致")

    values = np.arange(len(runs)) % 2 == 1
    return np.repeat(values, runs).reshape(height, width)
