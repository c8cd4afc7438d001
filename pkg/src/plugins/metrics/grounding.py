import math
from fractions import Fraction
from typing import Sequence

import numpy as np

from src.plugins.scene.scene_types import PatchGrid

from .analysis import DegenerateInput


class DimensionMismatch(ValueError):
    """注意力网格或掩码的尺寸与 patch 网格不符"""


def topk_count(k_percent: float, cells: int) -> int:
    """⌈k% · cells⌉，用有理数避免浮点误差"""
    return math.ceil(Fraction(str(k_percent)) * cells / 100)


def binarize_topk(attn_grid, k_percent: float) -> np.ndarray:
    """保留数值最高的 ⌈k%·cells⌉ 个格子，并列时行优先序号小者优先"""
    values = np.asarray(attn_grid, dtype=np.float64)
    if values.size == 0:
        raise ValueError("注意力网格为空")
    if not 0.0 < k_percent <= 100.0:
        raise ValueError(f"k_percent={k_percent} 不在 (0, 100] 内")
    flat = values.ravel(order="C")
    n = topk_count(k_percent, flat.size)
    order = np.argsort(-flat, kind="stable")
    mask = np.zeros(flat.size, dtype=bool)
    mask[order[:n]] = True
    return mask.reshape(values.shape)


def upsample_to_pixels(grid_mask: np.ndarray, patch_size: int) -> np.ndarray:
    """最近邻上采样：每个格子铺满对应的 p×p 像素块"""
    return np.repeat(np.repeat(np.asarray(grid_mask), patch_size, axis=0), patch_size, axis=1)


def _check_inputs(attn_grid, gt_masks: Sequence[np.ndarray], grid: PatchGrid) -> np.ndarray:
    values = np.asarray(attn_grid, dtype=np.float64)
    if values.shape != (grid.grid_dim, grid.grid_dim):
        raise DimensionMismatch(f"注意力网格尺寸 {values.shape} 应为 {(grid.grid_dim, grid.grid_dim)}")
    if len(gt_masks) == 0:
        raise ValueError("没有真实掩码")
    for mask in gt_masks:
        if np.shape(mask) != (grid.image_size, grid.image_size):
            raise DimensionMismatch(f"掩码尺寸 {np.shape(mask)} 应为 {(grid.image_size, grid.image_size)}")
    return values


def union_masks(gt_masks: Sequence[np.ndarray]) -> np.ndarray:
    union = np.zeros(np.shape(gt_masks[0]), dtype=bool)
    for mask in gt_masks:
        union |= np.asarray(mask, dtype=bool)
    return union


def attn_iou(attn_grid, gt_masks: Sequence[np.ndarray], grid: PatchGrid, k_percent: float = 10.0) -> float:
    values = _check_inputs(attn_grid, gt_masks, grid)
    attn_mask = upsample_to_pixels(binarize_topk(values, k_percent), grid.patch_size)
    gt = union_masks(gt_masks)
    union = np.count_nonzero(attn_mask | gt)
    if union == 0:
        return 0.0
    return float(np.count_nonzero(attn_mask & gt)) / union


def visual_region_attention(attn_grid, gt_masks: Sequence[np.ndarray], grid: PatchGrid) -> float:
    """回投到像素后落在真实物体上的注意力质量占比"""
    values = _check_inputs(attn_grid, gt_masks, grid)
    if np.any(values < 0):
        raise ValueError("注意力值不能为负")
    total = float(values.sum())
    if total <= 0.0:
        raise DegenerateInput("注意力总质量为零")
    # 每个格子的质量均匀摊到 p×p 像素上
    per_pixel = upsample_to_pixels(values, grid.patch_size) / (grid.patch_size**2)
    return float(per_pixel[union_masks(gt_masks)].sum()) / total


def attention_reward_score(vra: float) -> float:
    """物体内质量减去物体外质量，归一化到 [-1, 1]"""
    return 2.0 * vra - 1.0
