from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.plugins.prompt.prompt_kit import PromptVariant, conflict_prompt, standard_prompt
from src.plugins.raster.raster import rasterize_object
from src.plugins.raster.sample_io import load_manifest, read_index, scene_from_manifest
from src.plugins.scene.case_code import CaseCode
from src.plugins.scene.placement import Infeasible
from src.plugins.scene.scene_gen import count_for_index, derive_sample_seed, sample_scene
from src.plugins.scene.scene_types import PatchGrid, Scene

from .model import ToySample, logger
from .tokenizer import DEFAULT_TOKENIZER, ToyTokenizer

PathLike = Union[str, Path]


def occupancy_grid(scene: Scene, grid_dim: int = 8) -> np.ndarray:
    """把全分辨率的物体并集降采样到 grid_dim×grid_dim，格子内有任一物体像素即为占用"""
    size = scene.grid.image_size
    if size < grid_dim:
        raise ValueError(f"图像边长 {size} 小于网格 {grid_dim}")
    union = np.zeros((size, size), dtype=bool)
    for obj in scene.objects:
        union |= rasterize_object(obj, size)
    edges = np.array([(i * size) // grid_dim for i in range(grid_dim)])
    rows = np.logical_or.reduceat(union, edges, axis=0)
    return np.logical_or.reduceat(rows, edges, axis=1)


def encode_sample(
    occupancy: np.ndarray,
    prompt_text: str,
    label: int,
    sample_id: str = "",
    variant: str = PromptVariant.STANDARD.value,
    tokenizer: ToyTokenizer = DEFAULT_TOKENIZER,
) -> ToySample:
    visual = [tokenizer.visual_id(bool(cell)) for cell in np.asarray(occupancy).ravel(order="C")]
    text = tokenizer.encode(prompt_text)
    ids = visual + text + tokenizer.answer_ids
    return ToySample(
        ids=np.array(ids, dtype=np.int64),
        n_visual=len(visual),
        n_text=len(text),
        label=int(label),
        sample_id=sample_id,
        variant=variant,
    )


def sample_from_scene(
    scene: Scene, sample_id: str, grid_dim: int = 8, conflict: bool = False, tokenizer: ToyTokenizer = DEFAULT_TOKENIZER
) -> ToySample:
    if conflict:
        rng = np.random.default_rng(scene.seed)
        prompt = conflict_prompt(scene.object_name, scene.count, rng=rng, sample_id=sample_id)
        text, variant = prompt.text, PromptVariant.CONFLICT.value
    else:
        text, variant = standard_prompt(scene.object_name), PromptVariant.STANDARD.value
    return encode_sample(occupancy_grid(scene, grid_dim), text, scene.count, sample_id, variant, tokenizer)


def generate_toy_samples(
    cases: Sequence[CaseCode],
    n_per_case: int,
    seed: int,
    grid: Optional[PatchGrid] = None,
    grid_dim: int = 8,
    conflict: bool = False,
) -> Tuple[List[ToySample], int]:
    """现场生成场景；conflict 为真时奇数序号样本使用数字冲突提示词。返回 (样本, 跳过数)"""
    grid = grid or PatchGrid()
    samples: List[ToySample] = []
    skipped = 0
    for case in cases:
        for index in range(n_per_case):
            sample_seed = derive_sample_seed(seed, case, index)
            try:
                scene = sample_scene(case, count_for_index(index), grid=grid, seed=sample_seed)
            except Infeasible as e:
                skipped += 1
                logger.debug(f"{case} 第 {index} 个场景无法放置，跳过: {e}")
                continue
            sample_id = f"{case}_{sample_seed:016x}"
            samples.append(sample_from_scene(scene, sample_id, grid_dim, conflict and index % 2 == 1))
    return samples, skipped


def load_toy_samples(root: PathLike, grid_dim: int = 8, conflict: bool = False) -> List[ToySample]:
    """从磁盘数据集的索引和清单构建样本，顺序与索引一致"""
    root = Path(root)
    samples = []
    for k, entry in enumerate(read_index(root)):
        scene = scene_from_manifest(load_manifest(root / entry.manifest))
        samples.append(sample_from_scene(scene, entry.sample_id, grid_dim, conflict and k % 2 == 1))
    return samples


def split_held_out(
    samples: Sequence[ToySample], fraction: float, seed: int
) -> Tuple[List[ToySample], List[ToySample]]:
    """按种子打乱后切出留出集；训练集至少保留一个样本"""
    if not 0.0 <= fraction < 1.0:
        raise ValueError(f"留出比例 {fraction} 不在 [0, 1) 内")
    order = np.random.default_rng([seed, 2]).permutation(len(samples))
    n_held = min(int(round(fraction * len(samples))), max(len(samples) - 1, 0))
    held = [samples[i] for i in sorted(order[:n_held])]
    train = [samples[i] for i in sorted(order[n_held:])]
    return train, held


def label_histogram(samples: Iterable[ToySample]) -> dict:
    hist: dict = {}
    for s in samples:
        hist[s.label] = hist.get(s.label, 0) + 1
    return dict(sorted(hist.items()))
