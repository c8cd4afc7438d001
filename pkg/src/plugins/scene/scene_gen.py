import hashlib
import math
from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np

from src.common.logger import get_module_logger, LogConfig, SCENE_STYLE_CONFIG

from .case_code import CaseCode, parse_case_code
from .placement import (
    CLUSTER_GAP,
    COORD_DECIMALS,
    JITTER_RATIO,
    MAX_COUNT,
    MAX_RETRIES,
    MIN_COUNT,
    MIN_SIZE_RATIO,
    base_diameter,
    layout_gaps,
    placement_centers,
)
from .scene_types import PALETTE, ObjectSpec, PatchGrid, Scene, Shape

scene_config = LogConfig(
    console_format=SCENE_STYLE_CONFIG["console_format"],
    file_format=SCENE_STYLE_CONFIG["file_format"],
)
logger = get_module_logger("scene_gen", config=scene_config)

# 判定容差：坐标保留 4 位小数带来的舍入
_TOL = 1e-3


def derive_sample_seed(base_seed: int, case: Union[CaseCode, str], index: int) -> int:
    """由全局种子、用例码和样本序号派生 64 位样本种子，与并发度和遍历顺序无关"""
    digest = hashlib.blake2b(f"{base_seed}:{case}:{index}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def count_for_index(index: int) -> int:
    """第 index 个样本的物体数量，在 [3, 12] 内均匀循环"""
    return MIN_COUNT + index % (MAX_COUNT - MIN_COUNT + 1)


def sample_scene(
    case: Union[CaseCode, str],
    n: int,
    grid: Optional[PatchGrid] = None,
    seed: int = 0,
    max_retries: int = MAX_RETRIES,
) -> Scene:
    """采样一个场景；同样的 (case, n, grid, seed) 总是得到同样的结果"""
    if isinstance(case, str):
        case = parse_case_code(case)
    grid = grid or PatchGrid()
    if not MIN_COUNT <= n <= MAX_COUNT:
        raise ValueError(f"物体数量 {n} 不在 [{MIN_COUNT}, {MAX_COUNT}] 内")

    rng = np.random.default_rng(seed)
    d = base_diameter(case, grid)

    if case.varied_size and not case.dilated:
        diameters = rng.uniform(MIN_SIZE_RATIO * d, d, size=n)
    else:
        diameters = np.full(n, d)
    diameters = [round(float(x), COORD_DECIMALS) for x in diameters]

    # 每种 (形状, 颜色) 组合在重复之前都出现一次
    shapes = [Shape.CIRCLE] if case.dilated else list(Shape)
    pairs = [(shape, color) for shape in shapes for color in range(len(PALETTE))]
    order = rng.permutation(len(pairs))

    centers = placement_centers(case, grid, n, rng, diameters=diameters, max_retries=max_retries)

    objects = tuple(
        ObjectSpec(
            shape=pairs[order[k % len(pairs)]][0],
            color=pairs[order[k % len(pairs)]][1],
            center=centers[k],
            diameter=diameters[k],
        )
        for k in range(n)
    )
    return Scene(case=case, grid=grid, objects=objects, count=n, seed=seed)


def object_name_for_scene(scene: Scene) -> str:
    return scene.object_name


@dataclass(frozen=True)
class Violation:
    rule: str
    detail: str
    object_index: Optional[int] = None


@dataclass
class ValidationReport:
    violations: List[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def rules(self) -> List[str]:
        return [v.rule for v in self.violations]

    def add(self, rule: str, detail: str, object_index: Optional[int] = None) -> None:
        self.violations.append(Violation(rule, detail, object_index))

    def __len__(self) -> int:
        return len(self.violations)


def _lattice_deviation(value: float, p: float, offset: float, lo: int, hi: int) -> float:
    """value 到格线 (k + offset)·p (lo ≤ k ≤ hi) 的最近距离"""
    k = min(max(round(value / p - offset), lo), hi)
    return abs(value - (k + offset) * p)


def _alignment_error(case: CaseCode, grid: PatchGrid, x: float, y: float) -> float:
    p, g = grid.patch_size, grid.grid_dim
    prefix = 1 if case.dilated else case.prefix
    x_offset, x_lo, x_hi = (0.0, 1, g - 1) if prefix in (2, 4) else (0.5, 0, g - 1)
    y_offset, y_lo, y_hi = (0.0, 1, g - 1) if prefix in (3, 4) else (0.5, 0, g - 1)
    return max(
        _lattice_deviation(x, p, x_offset, x_lo, x_hi),
        _lattice_deviation(y, p, y_offset, y_lo, y_hi),
    )


def validate_scene(scene: Scene) -> ValidationReport:
    """检查数量、边界、对齐、尺寸、形状、重叠与聚集间距；空报告即合法"""
    report = ValidationReport()
    case, grid = scene.case, scene.grid
    p, size = grid.patch_size, grid.image_size
    objects = scene.objects

    if not MIN_COUNT <= scene.count <= MAX_COUNT:
        report.add("count out of [3,12]", f"count={scene.count}")
    if scene.count != len(objects):
        report.add("count mismatch", f"count={scene.count}, objects={len(objects)}")

    d = base_diameter(case, grid)
    jitter = JITTER_RATIO * p if case.jittered else 0.0

    for k, obj in enumerate(objects):
        x, y = obj.center
        r = obj.radius
        if obj.diameter <= 0:
            report.add("size rule", f"直径 {obj.diameter} 非正", k)
        if x - r < -_TOL or y - r < -_TOL or x + r > size + _TOL or y + r > size + _TOL:
            report.add("bounds", f"中心 ({x}, {y}) 半径 {r} 超出图像", k)

        if not case.clustered:
            err = _alignment_error(case, grid, x, y)
            if err > jitter + (_TOL if jitter else 1e-6):
                prefix = 1 if case.dilated else case.prefix
                report.add(f"prefix-{prefix} alignment", f"中心 ({x}, {y}) 偏离锚点 {err:.4f}px", k)

        if case.varied_size and not case.dilated:
            if obj.diameter < MIN_SIZE_RATIO * d - _TOL or obj.diameter > d + _TOL:
                report.add("size rule", f"直径 {obj.diameter} 不在 [{MIN_SIZE_RATIO * d}, {d}] 内", k)
        elif abs(obj.diameter - d) > _TOL:
            report.add("size rule", f"直径 {obj.diameter} 应为 {d}", k)

        if case.dilated and obj.shape is not Shape.CIRCLE:
            report.add("shape rule", f"放大用例只能是圆，实际为 {obj.shape.value}", k)

    gaps = layout_gaps([o.center for o in objects], [o.diameter for o in objects])
    for (a, b), gap in gaps.items():
        if gap < -1e-6:
            report.add("overlap", f"物体 {a} 与 {b} 重叠 {-gap:.4f}px", b)

    if case.clustered and case.suffix == "A" and gaps:
        ledger_gap = CLUSTER_GAP[case.prefix]
        min_gap = min(gaps.values())
        if min_gap > ledger_gap + _TOL:
            report.add("adjacency", f"最小间距 {min_gap:.4f}px 大于 {ledger_gap}px")

    return report


def silhouette_contains(obj: ObjectSpec, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """点是否严格落在物体轮廓内"""
    cx, cy = obj.center
    r = obj.radius
    dx, dy = xs - cx, ys - cy
    if obj.shape is Shape.CIRCLE:
        return dx * dx + dy * dy < r * r
    if obj.shape is Shape.SQUARE:
        half = r / math.sqrt(2.0)
        return (np.abs(dx) < half) & (np.abs(dy) < half)
    # 顶点朝上的正三角形：顶点 (0, -r)，底边 y = r/2
    s3 = math.sqrt(3.0)
    return (dy < r / 2.0) & (s3 * dx - dy < r) & (-s3 * dx - dy < r)
