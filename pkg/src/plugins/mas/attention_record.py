import hashlib
import json
from dataclasses import InitVar, dataclass, field
from enum import Enum
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

PathLike = Union[str, Path]

LAYOUT = "layer-major then head then step then key"
ROW_SUM_ATOL = 1e-6


class TokenRole(str, Enum):
    VISUAL = "visual"
    TEXT = "text"
    GENERATED = "generated"


class CorruptRecord(ValueError):
    """注意力记录不满足格式或数值约束"""


@dataclass(eq=False)
class AttentionRecord:
    """weights 形状为 (L, H, T_steps, T_keys)，step_positions 是每一行查询在序列中的位置"""

    weights: np.ndarray
    roles: Tuple[TokenRole, ...]
    step_positions: Tuple[int, ...] = field(default=())
    check: InitVar[bool] = True

    def __post_init__(self, check: bool):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.roles = tuple(TokenRole(r) for r in self.roles)
        if self.weights.ndim != 4:
            raise CorruptRecord(f"weights 应为 4 维 (L, H, T_steps, T_keys)，实际 {self.weights.shape}")
        steps, keys = self.weights.shape[2], self.weights.shape[3]
        if not self.step_positions:
            self.step_positions = tuple(range(keys - steps, keys))
        self.step_positions = tuple(int(p) for p in self.step_positions)
        if check:
            problems = validate_record(self)
            if problems:
                raise CorruptRecord("; ".join(problems[:5]))

    @property
    def n_layers(self) -> int:
        return self.weights.shape[0]

    @property
    def n_heads(self) -> int:
        return self.weights.shape[1]

    @property
    def n_steps(self) -> int:
        return self.weights.shape[2]

    @property
    def n_keys(self) -> int:
        return self.weights.shape[3]

    def role_mask(self, *roles: TokenRole) -> np.ndarray:
        wanted = set(roles)
        return np.array([r in wanted for r in self.roles], dtype=bool)

    @property
    def visual_mask(self) -> np.ndarray:
        return self.role_mask(TokenRole.VISUAL)

    @property
    def text_mask(self) -> np.ndarray:
        return self.role_mask(TokenRole.TEXT)

    def rows_for(self, positions: Sequence[int]) -> np.ndarray:
        """序列位置 -> 记录中的行号"""
        lookup = {p: k for k, p in enumerate(self.step_positions)}
        missing = [p for p in positions if p not in lookup]
        if missing:
            raise ValueError(f"位置 {missing} 没有被记录")
        return np.array([lookup[p] for p in positions], dtype=np.int64)


def validate_record(record: AttentionRecord, atol: float = ROW_SUM_ATOL) -> List[str]:
    problems: List[str] = []
    w = record.weights
    if len(record.roles) != w.shape[3]:
        problems.append(f"roles 长度 {len(record.roles)} 与 T_keys={w.shape[3]} 不一致")
    if len(record.step_positions) != w.shape[2]:
        problems.append(f"step_positions 长度 {len(record.step_positions)} 与 T_steps={w.shape[2]} 不一致")
    if len(set(record.step_positions)) != len(record.step_positions):
        problems.append("step_positions 有重复")
    if not np.all(np.isfinite(w)):
        problems.append("存在非有限值")
    elif np.any(w < 0):
        problems.append(f"存在负注意力，最小值 {w.min():.3g}")
    if w.size:
        sums = w.sum(axis=-1)
        worst = float(np.max(np.abs(sums - 1.0))) if np.all(np.isfinite(sums)) else float("inf")
        if worst > atol:
            problems.append(f"注意力行和偏离 1 达 {worst:.3g}")
    return problems


def _payload_path(header_path: Path) -> Path:
    return header_path.with_suffix(".bin")


def save_record(record: AttentionRecord, header_path: PathLike) -> Tuple[Path, Path]:
    """写出 JSON 头与同名 .bin 载荷（小端 float32，层-头-步-键顺序）"""
    header_path = Path(header_path)
    payload_path = _payload_path(header_path)
    payload = np.ascontiguousarray(record.weights, dtype="<f4").tobytes(order="C")
    L, H, T, K = record.weights.shape
    header = {
        "L": L,
        "H": H,
        "T_steps": T,
        "T_keys": K,
        "roles": [r.value for r in record.roles],
        "dtype": "f32",
        "byte_order": "little-endian",
        "layout": LAYOUT,
        "step_positions": list(record.step_positions),
        "payload": payload_path.name,
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    header_path.parent.mkdir(parents=True, exist_ok=True)
    payload_path.write_bytes(payload)
    header_path.write_text(json.dumps(header, indent=2) + "\n", encoding="utf-8")
    return header_path, payload_path


def load_record(header_path: PathLike, atol: Optional[float] = None) -> AttentionRecord:
    header_path = Path(header_path)
    if not header_path.is_file():
        raise FileNotFoundError(f"注意力记录头不存在: {header_path}")
    try:
        header = json.loads(header_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise CorruptRecord(f"无法读取注意力记录头 {header_path}: {e}") from e

    if header.get("dtype") != "f32" or header.get("byte_order") != "little-endian":
        raise CorruptRecord(f"{header_path}: 只支持小端 f32 载荷")
    if header.get("layout", LAYOUT) != LAYOUT:
        raise CorruptRecord(f"{header_path}: 不支持的布局 {header.get('layout')!r}")

    payload_path = header_path.parent / header.get("payload", _payload_path(header_path).name)
    if not payload_path.is_file():
        raise FileNotFoundError(f"注意力载荷不存在: {payload_path}")
    payload = payload_path.read_bytes()
    if hashlib.sha256(payload).hexdigest() != header.get("sha256"):
        raise CorruptRecord(f"{payload_path}: 载荷哈希与记录头不一致")

    shape = (int(header["L"]), int(header["H"]), int(header["T_steps"]), int(header["T_keys"]))
    expected = int(np.prod(shape)) * 4
    if len(payload) != expected:
        raise CorruptRecord(f"{payload_path}: 载荷 {len(payload)} 字节，应为 {expected}")

    weights = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float64)
    try:
        record = AttentionRecord(
            weights=weights,
            roles=tuple(header["roles"]),
            step_positions=tuple(header.get("step_positions") or ()),
            check=False,
        )
    except (KeyError, ValueError) as e:
        raise CorruptRecord(f"{header_path}: {e}") from e
    problems = validate_record(record, ROW_SUM_ATOL if atol is None else atol)
    if problems:
        raise CorruptRecord(f"{header_path}: " + "; ".join(problems[:5]))
    return record
