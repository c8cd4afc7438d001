import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .case_code import CaseCode
from .scene_types import PatchGrid

# 基础直径占 patch 边长的比例（1–4、9–15）
BASE_DIAMETER_RATIO = 0.6
# 放大用例的圆直径（单位：patch 边长）
DILATION = {5: 2.5, 6: 3.0, 7: 3.5, 8: 4.0}
# C/D 后缀的每轴抖动上限（单位：patch 边长）
JITTER_RATIO = 1.0 / 8.0
# B/D 后缀的最小缩放比例
MIN_SIZE_RATIO = 0.2
# 9–15 的聚集布局与轮廓间距（像素）
CLUSTER_LAYOUTS = {
    9: "horizontal_chain",
    10: "vertical_chain",
    11: "two_row_block",
    12: "ring",
    13: "diagonal_chain",
    14: "hex_blob",
    15: "blob_chain",
}
CLUSTER_GAP = {9: 2.0, 10: 2.0, 11: 2.0, 12: 2.0, 13: 1.0, 14: 1.0, 15: 1.0}
MAX_RETRIES = 1000
# 放大用例：随机贪心的轮数与回溯搜索的节点上限
GREEDY_PASSES = 200
BACKTRACK_BUDGET = 50_000
MIN_COUNT = 3
MAX_COUNT = 12
# 清单里的坐标与直径保留的小数位
COORD_DECIMALS = 4

Point = Tuple[float, float]


class Infeasible(RuntimeError):
    """在重试上限内无法摆放所需数量的物体"""


def base_diameter(case: CaseCode, grid: PatchGrid) -> float:
    p = grid.patch_size
    if case.dilated:
        return DILATION[case.prefix] * p
    return BASE_DIAMETER_RATIO * p


def anchor_sites(case: CaseCode, grid: PatchGrid) -> List[Point]:
    """前缀 1–4 的候选锚点，行优先顺序"""
    p, g = grid.patch_size, grid.grid_dim
    if case.prefix == 2:
        return [(i * p, (j + 0.5) * p) for j in range(g) for i in range(1, g)]
    if case.prefix == 3:
        return [((i + 0.5) * p, j * p) for j in range(1, g) for i in range(g)]
    if case.prefix == 4:
        return [(i * p, j * p) for j in range(1, g) for i in range(1, g)]
    return [((i + 0.5) * p, (j + 0.5) * p) for j in range(g) for i in range(g)]


def _check_count(n: int) -> None:
    if not MIN_COUNT <= n <= MAX_COUNT:
        raise ValueError(f"物体数量 {n} 不在 [{MIN_COUNT}, {MAX_COUNT}] 内")


def _grid_centers(case: CaseCode, grid: PatchGrid, n: int, rng: np.random.Generator) -> np.ndarray:
    sites = anchor_sites(case, grid)
    if n > len(sites):
        raise Infeasible(f"{case} 只有 {len(sites)} 个锚点，无法放下 {n} 个物体")
    chosen = rng.choice(len(sites), size=n, replace=False)
    return np.array([sites[k] for k in chosen], dtype=np.float64)


def _dilated_sites(grid: PatchGrid, r_max: float) -> np.ndarray:
    """外接圆能完整落在图内的格子，返回 (i, j) 格子下标"""
    p, size = grid.patch_size, grid.image_size
    usable = [i for i in range(grid.grid_dim) if r_max <= (i + 0.5) * p <= size - r_max]
    return np.array([(i, j) for j in usable for i in usable], dtype=np.int64).reshape(-1, 2)


def _chain_length(values: np.ndarray, gap: float) -> int:
    """一维上两两相隔至少 gap 的最多点数（有序贪心即最优）"""
    count, last = 0, -math.inf
    for v in np.unique(values):
        if v - last >= gap - 1e-9:
            count += 1
            last = v
    return count


def packing_bound(cells: np.ndarray, spacing: float) -> int:
    """候选格子里两两相距 ≥ spacing（格子单位）的点数上界。

    把格子按宽 w 的条带切开：同一条带内两点横向最多差 w−1，
    纵向就至少要差 sqrt(spacing² − (w−1)²)，每条带退化成一维问题。
    """
    best = len(cells)
    if best == 0:
        return 0
    for axis in (0, 1):
        along, across = cells[:, axis], cells[:, 1 - axis]
        for w in range(1, math.ceil(spacing) + 1):
            gap2 = spacing * spacing - (w - 1) ** 2
            if gap2 <= 0:
                break
            gap = math.sqrt(gap2)
            bands = along // w
            total = sum(_chain_length(across[bands == b], gap) for b in np.unique(bands))
            best = min(best, total)
    return best


def _greedy_pack(cells: np.ndarray, diameters: np.ndarray, p: float, rng: np.random.Generator) -> Optional[List[int]]:
    chosen: List[int] = []
    for k in rng.permutation(len(cells)):
        idx = len(chosen)
        if chosen:
            dist = np.linalg.norm(cells[chosen] - cells[k], axis=1) * p
            if np.any(dist < (diameters[:idx] + diameters[idx]) / 2.0 - 1e-9):
                continue
        chosen.append(int(k))
        if len(chosen) == len(diameters):
            return chosen
    return None


def _backtrack_pack(cells: np.ndarray, n: int, spacing: float, order: np.ndarray, budget: int) -> Optional[List[int]]:
    """按 order 深度优先地选格子，用 packing_bound 剪枝；超过 budget 个节点放弃"""
    nodes = 0

    def search(chosen: List[int], candidates: np.ndarray) -> Optional[List[int]]:
        nonlocal nodes
        if len(chosen) == n:
            return chosen
        nodes += 1
        if nodes > budget or len(chosen) + packing_bound(cells[candidates], spacing) < n:
            return None
        first, rest = int(candidates[0]), candidates[1:]
        far = np.linalg.norm(cells[rest] - cells[first], axis=1) >= spacing - 1e-9
        found = search(chosen + [first], rest[far])
        if found is not None:
            return found
        return search(chosen, rest)

    return search([], order)


def _dilated_centers(
    grid: PatchGrid, diameters: np.ndarray, rng: np.random.Generator, max_retries: int, case: CaseCode
) -> np.ndarray:
    """大圆放在格子中心上，外接圆互不重叠且完整落在图内。

    先做若干轮随机贪心；都失败时按“离角近的格子优先、同距离随机”的顺序回溯搜索，
    密排情形（如 8A 放 12 个）只有回溯能找到。
    """
    p = float(grid.patch_size)
    cells = _dilated_sites(grid, float(diameters.max()) / 2.0)
    n = len(diameters)
    if len(cells) < n:
        raise Infeasible(f"{case} 只有 {len(cells)} 个可用格子，无法放下 {n} 个物体")

    for _ in range(min(max_retries, GREEDY_PASSES)):
        chosen = _greedy_pack(cells, diameters, p, rng)
        if chosen is not None:
            return (cells[chosen] + 0.5) * p

    # 回溯统一按最大直径留间距
    spacing = float(diameters.max()) / p
    lo, hi = cells.min(axis=0), cells.max(axis=0)
    corner_dist = np.minimum(cells - lo, hi - cells).sum(axis=1)
    order = np.lexsort((rng.random(len(cells)), corner_dist))
    chosen = _backtrack_pack(cells - lo, n, spacing, order, BACKTRACK_BUDGET)
    if chosen is None:
        raise Infeasible(f"{case} 无法在格子中心上放下 {n} 个直径 {diameters.max():.1f}px 的圆")
    return (cells[chosen] + 0.5) * p


def _chain(diameters: Sequence[float], gap: float, direction: Tuple[float, float]) -> np.ndarray:
    """相邻外接圆间距恰为 gap 的直线链"""
    ux, uy = direction
    points = [(0.0, 0.0)]
    for k in range(1, len(diameters)):
        step = (diameters[k - 1] + diameters[k]) / 2.0 + gap
        x, y = points[-1]
        points.append((x + step * ux, y + step * uy))
    return np.array(points, dtype=np.float64)


def _hex_sites(n: int, pitch: float) -> np.ndarray:
    """离原点最近的 n 个六边形格点"""
    span = 4
    candidates = []
    for b in range(-span, span + 1):
        for a in range(-span, span + 1):
            x = pitch * (a + b / 2.0)
            y = pitch * b * math.sqrt(3.0) / 2.0
            candidates.append((x * x + y * y, b, a, x, y))
    candidates.sort()
    return np.array([(c[3], c[4]) for c in candidates[:n]], dtype=np.float64)


def cluster_layout(prefix: int, diameters: Sequence[float], gap: Optional[float] = None) -> np.ndarray:
    """9–15 的相对坐标（未平移），相邻外接圆至少相隔 gap"""
    gap = CLUSTER_GAP[prefix] if gap is None else gap
    diameters = [float(d) for d in diameters]
    n = len(diameters)
    pitch = max(diameters) + gap
    layout = CLUSTER_LAYOUTS[prefix]

    if layout == "horizontal_chain":
        return _chain(diameters, gap, (1.0, 0.0))
    if layout == "vertical_chain":
        return _chain(diameters, gap, (0.0, 1.0))
    if layout == "diagonal_chain":
        return _chain(diameters, gap, (math.sqrt(0.5), math.sqrt(0.5)))
    if layout == "two_row_block":
        cols = math.ceil(n / 2)
        return np.array([((k % cols) * pitch, (k // cols) * pitch) for k in range(n)], dtype=np.float64)
    if layout == "ring":
        radius = pitch / (2.0 * math.sin(math.pi / n))
        return np.array(
            [
                (radius * math.cos(2.0 * math.pi * k / n), radius * math.sin(2.0 * math.pi * k / n))
                for k in range(n)
            ],
            dtype=np.float64,
        )
    if layout == "hex_blob":
        return _hex_sites(n, pitch)

    # blob_chain: 一半做六边形团，其余从团最右侧向右接成链
    blob_n = math.ceil(n / 2)
    blob_diameters = diameters[:blob_n]
    blob = _hex_sites(blob_n, max(blob_diameters) + gap)
    right = int(np.lexsort((blob[:, 1], blob[:, 0]))[-1])
    x, y = blob[right]
    points = [tuple(p) for p in blob]
    prev = max(blob_diameters)
    for d in diameters[blob_n:]:
        x += (prev + d) / 2.0 + gap
        points.append((x, y))
        prev = d
    return np.array(points, dtype=np.float64)


def _place_cluster(case: CaseCode, grid: PatchGrid, diameters: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    rel = cluster_layout(case.prefix, diameters)
    radii = diameters / 2.0
    size = float(grid.image_size)
    lo = np.max(radii[:, None] - rel, axis=0)
    hi = np.min(size - radii[:, None] - rel, axis=0)
    if np.any(lo > hi):
        raise Infeasible(f"{case} 的 {len(diameters)} 个物体布局超出图像范围")
    offset = rng.uniform(lo, hi)
    return rel + offset


def placement_centers(
    case: CaseCode,
    grid: PatchGrid,
    n: int,
    rng: np.random.Generator,
    diameters: Optional[Sequence[float]] = None,
    max_retries: int = MAX_RETRIES,
) -> List[Point]:
    """按用例的摆放规则生成 n 个中心点"""
    _check_count(n)
    if diameters is None:
        diameters = [base_diameter(case, grid)] * n
    diameters = np.asarray(diameters, dtype=np.float64)
    if len(diameters) != n:
        raise ValueError(f"直径数量 {len(diameters)} 与物体数量 {n} 不一致")

    if case.clustered:
        centers = _place_cluster(case, grid, diameters, rng)
    elif case.dilated:
        centers = _dilated_centers(grid, diameters, rng, max_retries, case)
    else:
        centers = _grid_centers(case, grid, n, rng)

    if case.jittered:
        limit = JITTER_RATIO * grid.patch_size
        centers = centers + rng.uniform(-limit, limit, size=centers.shape)

    return [(round(float(x), COORD_DECIMALS), round(float(y), COORD_DECIMALS)) for x, y in centers]


def layout_gaps(centers: Sequence[Point], diameters: Sequence[float]) -> Dict[Tuple[int, int], float]:
    """两两外接圆之间的间距，负数表示重叠"""
    gaps = {}
    for a in range(len(centers)):
        for b in range(a + 1, len(centers)):
            dist = math.dist(centers[a], centers[b])
            gaps[(a, b)] = dist - (diameters[a] + diameters[b]) / 2.0
    return gaps
