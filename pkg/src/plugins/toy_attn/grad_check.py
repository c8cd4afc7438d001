from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.plugins.mas.mas_core import MasConfig

from .model import ToyModel, ToySample, logger
from .objective import batch_objective, loss_and_grads

EPS_RANGE = (1e-7, 1e-3)
TINY_GRADIENT = 1e-12


@dataclass(frozen=True)
class CoordinateCheck:
    name: str
    index: Tuple[int, ...]
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckReport:
    max_rel_error: float = 0.0
    checked: List[CoordinateCheck] = field(default_factory=list)
    skipped_kink: List[Tuple[str, Tuple[int, ...]]] = field(default_factory=list)
    skipped_tiny: int = 0
    eps: float = 1e-5

    @property
    def worst(self) -> Optional[CoordinateCheck]:
        return max(self.checked, key=lambda c: c.rel_error) if self.checked else None

    def to_dict(self) -> dict:
        worst = self.worst
        return {
            "max_rel_error": self.max_rel_error,
            "checked": len(self.checked),
            "skipped_kink": len(self.skipped_kink),
            "skipped_tiny": self.skipped_tiny,
            "eps": self.eps,
            "worst": None if worst is None else {"param": worst.name, "index": list(worst.index)},
        }


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), TINY_GRADIENT)


def _candidates(model: ToyModel, batch: Sequence[ToySample]) -> List[Tuple[str, Tuple[int, ...]]]:
    """批次能触及的参数坐标；嵌入只取出现过的 token 行"""
    used_ids = sorted({int(i) for s in batch for i in s.ids})
    coords = []
    for name, value in model.params.items():
        if name == "embedding":
            coords += [(name, (i, j)) for i in used_ids for j in range(value.shape[1])]
        else:
            coords += [(name, tuple(int(v) for v in idx)) for idx in np.ndindex(value.shape)]
    return coords


def finite_diff_check(
    model: ToyModel,
    batch: Sequence[ToySample],
    config: MasConfig,
    n_coords: int = 100,
    eps: float = 1e-5,
    seed: int = 0,
) -> GradCheckReport:
    """中心差分核对解析梯度；扰动跨过 hinge 折点的坐标跳过并记录"""
    if not EPS_RANGE[0] <= eps <= EPS_RANGE[1]:
        raise ValueError(f"eps={eps} 不在 [{EPS_RANGE[0]}, {EPS_RANGE[1]}] 内")
    result = loss_and_grads(model, batch, config)
    candidates = _candidates(model, batch)
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(candidates), size=min(n_coords, len(candidates)), replace=False)

    report = GradCheckReport(eps=eps)
    probe = model.copy()
    for k in sorted(int(p) for p in picks):
        name, index = candidates[k]
        original = probe.params[name][index]
        probe.params[name][index] = original + eps
        plus, _, active_plus = batch_objective(probe, batch, config)
        probe.params[name][index] = original - eps
        minus, _, active_minus = batch_objective(probe, batch, config)
        probe.params[name][index] = original

        if not active_plus == active_minus == result.hinge_active:
            report.skipped_kink.append((name, index))
            continue
        analytic = float(result.grads[name][index])
        numeric = (plus - minus) / (2.0 * eps)
        if abs(analytic) < TINY_GRADIENT and abs(numeric) < TINY_GRADIENT:
            report.skipped_tiny += 1
            continue
        err = relative_error(analytic, numeric)
        report.checked.append(CoordinateCheck(name, index, analytic, numeric, err))
        report.max_rel_error = max(report.max_rel_error, err)

    logger.info(
        f"梯度核对: 检查 {len(report.checked)} 个坐标，最大相对误差 {report.max_rel_error:.3e}，"
        f"折点跳过 {len(report.skipped_kink)}，过小跳过 {report.skipped_tiny}"
    )
    return report
