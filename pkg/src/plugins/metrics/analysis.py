import math
from typing import Dict, Mapping, Optional, Sequence

import numpy as np
from scipy.stats import pearsonr


class DegenerateInput(ValueError):
    """输入长度不足或方差为零，统计量无定义"""


def pearson_corr(xs: Sequence[float], ys: Sequence[float]) -> float:
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DegenerateInput(f"xs 与 ys 长度不一致: {x.shape} vs {y.shape}")
    if len(x) < 2:
        raise DegenerateInput("至少需要 2 个点")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise DegenerateInput("输入含有非有限值")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise DegenerateInput("方差为零")
    r = float(pearsonr(x, y)[0])
    return max(-1.0, min(1.0, r))


def count_correlation(table: Mapping[int, float]) -> float:
    """数量与准确率之间的相关系数"""
    counts = sorted(table)
    return pearson_corr(counts, [table[c] for c in counts])


def per_case_correlations(tables: Mapping[str, Mapping[int, float]]) -> Dict[str, Optional[float]]:
    """每个用例单独计算相关系数；退化的用例记为 None"""
    result: Dict[str, Optional[float]] = {}
    for case, table in tables.items():
        try:
            result[case] = count_correlation(table)
        except DegenerateInput:
            result[case] = None
    return result


def mean_of_defined(values: Mapping[str, Optional[float]]) -> Optional[float]:
    defined = [v for v in values.values() if v is not None and not math.isnan(v)]
    return float(np.mean(defined)) if defined else None
