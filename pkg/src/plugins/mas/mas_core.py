from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from src.common.logger import get_module_logger, LogConfig, MAS_STYLE_CONFIG
from src.plugins.metrics.grounding import DimensionMismatch

from .attention_record import AttentionRecord, TokenRole

mas_config = LogConfig(
    console_format=MAS_STYLE_CONFIG["console_format"],
    file_format=MAS_STYLE_CONFIG["file_format"],
)
logger = get_module_logger("mas_core", config=mas_config)


class EmptyTarget(ValueError):
    """序列里没有助手回答片段"""


class ZeroDenominator(ArithmeticError):
    """某个目标步在视觉与文本键上的注意力总量为零"""


@dataclass(frozen=True)
class MasConfig:
    tau: float = 0.4
    lam: float = 0.1
    layers: Optional[Tuple[int, ...]] = None  # None 表示全部层
    all_keys: bool = False
    target_policy: str = "assistant"

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau={self.tau} 不在 [0, 1] 内")
        if self.lam < 0:
            raise ValueError(f"lambda={self.lam} 不能为负")
        if self.target_policy != "assistant":
            raise ValueError(f"不支持的目标步策略: {self.target_policy}")

    def layer_set(self, n_layers: int) -> List[int]:
        return list(range(n_layers)) if self.layers is None else list(self.layers)


def select_target_steps(token_roles: Sequence) -> List[int]:
    """助手回答（generated）所在的序列位置；提示词位置不参与约束"""
    steps = [k for k, role in enumerate(token_roles) if TokenRole(role) is TokenRole.GENERATED]
    if not steps:
        raise EmptyTarget("序列中没有助手回答片段")
    return steps


def _prepare(record: AttentionRecord, layer: int, targets: Iterable[int]) -> np.ndarray:
    if not 0 <= layer < record.n_layers:
        raise IndexError(f"层号 {layer} 超出 [0, {record.n_layers})")
    targets = sorted(set(int(t) for t in targets))
    if not targets:
        raise EmptyTarget("目标步集合为空")
    return record.rows_for(targets)


def _key_masks(record: AttentionRecord, all_keys: bool) -> Tuple[np.ndarray, np.ndarray]:
    visual = record.visual_mask
    if all_keys:
        denominator = np.ones(record.n_keys, dtype=bool)
    else:
        denominator = visual | record.text_mask
    if not denominator.any():
        raise ValueError("视觉与文本键集合为空")
    return visual, denominator


def share_ratios(weights: np.ndarray, visual: np.ndarray, denominator: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """weights 形状 (H, T, K)：先对头求和再取比值，返回每步的比值与分母"""
    num = weights[:, :, visual].sum(axis=(0, 2))
    den = weights[:, :, denominator].sum(axis=(0, 2))
    if np.any(den <= 0.0):
        raise ZeroDenominator(f"有 {int(np.sum(den <= 0.0))} 个目标步在视觉与文本键上的注意力为零")
    return num / den, den


def layer_share(
    weights: np.ndarray, rows: np.ndarray, visual: np.ndarray, denominator: np.ndarray, with_grad: bool = False
) -> Tuple[float, Optional[np.ndarray]]:
    """单层份额及其对该层注意力 (H, T, K) 的梯度"""
    ratios, den = share_ratios(weights[:, rows, :], visual, denominator)
    value = float(ratios.mean())
    if not with_grad:
        return value, None
    # d(num/den)/dA[h,t,j] = (1[j∈V] − r_t·1[j∈D]) / den_t，再对 |T| 取平均
    per_key = visual[None, :].astype(np.float64) - ratios[:, None] * denominator[None, :]
    per_key = per_key / den[:, None] / len(rows)
    grad = np.zeros(weights.shape, dtype=np.float64)
    grad[:, rows, :] = per_key[None, :, :]
    return value, grad


def mas_layer(record: AttentionRecord, layer: int, targets: Iterable[int], all_keys: bool = False) -> float:
    """第 layer 层在目标步上的视觉注意力份额"""
    rows = _prepare(record, layer, targets)
    visual, denominator = _key_masks(record, all_keys)
    value, _ = layer_share(record.weights[layer], rows, visual, denominator)
    return value


def mas_layer_grad(record: AttentionRecord, layer: int, targets: Iterable[int], all_keys: bool = False) -> np.ndarray:
    """∂MAS_layer/∂A，形状 (H, T_steps, T_keys)，非目标步为零"""
    rows = _prepare(record, layer, targets)
    visual, denominator = _key_masks(record, all_keys)
    _, grad = layer_share(record.weights[layer], rows, visual, denominator, with_grad=True)
    return grad


def mas_mean(
    record: AttentionRecord, layers: Optional[Iterable[int]], targets: Iterable[int], all_keys: bool = False
) -> float:
    layer_list = list(range(record.n_layers)) if layers is None else list(layers)
    if not layer_list:
        raise ValueError("层集合为空")
    targets = list(targets)
    return float(np.mean([mas_layer(record, layer, targets, all_keys) for layer in layer_list]))


def hinge_loss(mas_value: float, tau: float) -> float:
    """max(0, τ − MAS)"""
    if not 0.0 <= mas_value <= 1.0:
        raise ValueError(f"MAS={mas_value} 不在 [0, 1] 内")
    return max(0.0, tau - mas_value)


def hinge_subgradient(mas_value: float, tau: float) -> float:
    """低于 τ 时为 −1，在 τ 处与高于 τ 时为 0"""
    return -1.0 if mas_value < tau else 0.0


def total_loss(ce: float, mas_loss: float, lam: float) -> float:
    if ce < 0:
        raise ValueError(f"CE={ce} 不能为负")
    if lam < 0:
        raise ValueError(f"lambda={lam} 不能为负")
    return ce + lam * mas_loss


@dataclass
class ModalityShare:
    layer: int
    visual: float
    text: float
    generated: float

    def to_dict(self) -> Dict[str, float]:
        return {"layer": self.layer, "visual": self.visual, "text": self.text, "generated": self.generated}


def modality_share_profile(record: AttentionRecord, targets: Iterable[int]) -> List[ModalityShare]:
    """每层在目标步上分给三类键的注意力占比（三者之和为 1）"""
    targets = list(targets)
    profile = []
    for layer in range(record.n_layers):
        rows = _prepare(record, layer, targets)
        weights = record.weights[layer][:, rows, :]
        total = weights.sum(axis=(0, 2))
        if np.any(total <= 0.0):
            raise ZeroDenominator("目标步注意力总量为零")
        shares = {}
        for role in TokenRole:
            mask = record.role_mask(role)
            shares[role.value] = float((weights[:, :, mask].sum(axis=(0, 2)) / total).mean())
        profile.append(ModalityShare(layer=layer, **shares))
    return profile


def visual_attention_grid(
    record: AttentionRecord, targets: Iterable[int], layers: Optional[Iterable[int]], grid_dim: int
) -> np.ndarray:
    """目标步对视觉键的注意力，按层、头、步平均后排成 patch 网格"""
    visual = record.visual_mask
    if int(visual.sum()) != grid_dim * grid_dim:
        raise DimensionMismatch(f"视觉键数量 {int(visual.sum())} 不等于 {grid_dim}×{grid_dim}")
    layer_list = list(range(record.n_layers)) if layers is None else list(layers)
    if not layer_list:
        raise ValueError("层集合为空")
    targets = list(targets)
    grids = []
    for layer in layer_list:
        rows = _prepare(record, layer, targets)
        grids.append(record.weights[layer][:, rows, :][:, :, visual].mean(axis=(0, 1)))
    return np.mean(grids, axis=0).reshape(grid_dim, grid_dim)


@dataclass
class MasSummary:
    """一组记录的份额统计，评测报告使用"""

    by_layer: Dict[int, float] = field(default_factory=dict)
    mean: Optional[float] = None
    hinge: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "by_layer": {str(k): v for k, v in sorted(self.by_layer.items())},
            "mean": self.mean,
            "hinge": self.hinge,
        }


def summarize_records(records: Sequence[AttentionRecord], config: MasConfig) -> MasSummary:
    if not records:
        return MasSummary()
    by_layer: Dict[int, List[float]] = {}
    means = []
    for record in records:
        targets = select_target_steps(record.roles)
        layers = config.layer_set(record.n_layers)
        values = [mas_layer(record, layer, targets, config.all_keys) for layer in layers]
        for layer, value in zip(layers, values):
            by_layer.setdefault(layer, []).append(value)
        means.append(float(np.mean(values)))
    mean = float(np.mean(means))
    logger.debug(f"汇总 {len(records)} 条注意力记录，平均 MAS={mean:.4f}")
    return MasSummary(
        by_layer={layer: float(np.mean(v)) for layer, v in by_layer.items()},
        mean=mean,
        hinge=hinge_loss(min(max(mean, 0.0), 1.0), config.tau),
    )
