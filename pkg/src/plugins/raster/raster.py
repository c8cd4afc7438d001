import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from src.common.logger import get_module_logger, LogConfig, RASTER_STYLE_CONFIG
from src.plugins.scene.scene_gen import silhouette_contains
from src.plugins.scene.scene_types import BACKGROUND, ObjectSpec, Scene

from .rle import rle_encode_mask

raster_config = LogConfig(
    console_format=RASTER_STYLE_CONFIG["console_format"],
    file_format=RASTER_STYLE_CONFIG["file_format"],
)
logger = get_module_logger("raster", config=raster_config)

Box = Tuple[int, int, int, int]


@dataclass(eq=False)
class RenderedSample:
    image: np.ndarray  # (H, W, 3) uint8
    instance_masks: List[np.ndarray] = field(default_factory=list)  # (H, W) bool
    boxes: List[Box] = field(default_factory=list)
    manifest: dict = field(default_factory=dict)

    @property
    def sample_id(self) -> str:
        return self.manifest.get("id", "")

    def union_mask(self) -> np.ndarray:
        union = np.zeros(self.image.shape[:2], dtype=bool)
        for mask in self.instance_masks:
            union |= mask
        return union

    def __eq__(self, other) -> bool:
        if not isinstance(other, RenderedSample):
            return NotImplemented
        return (
            self.manifest == other.manifest
            and [tuple(b) for b in self.boxes] == [tuple(b) for b in other.boxes]
            and np.array_equal(self.image, other.image)
            and len(self.instance_masks) == len(other.instance_masks)
            and all(np.array_equal(a, b) for a, b in zip(self.instance_masks, other.instance_masks))
        )


def rasterize_object(obj: ObjectSpec, image_size: int) -> np.ndarray:
    """像素中心严格落在轮廓内的像素构成掩码，不做抗锯齿"""
    mask = np.zeros((image_size, image_size), dtype=bool)
    cx, cy = obj.center
    r = obj.radius
    x0 = max(int(math.floor(cx - r)) - 1, 0)
    x1 = min(int(math.ceil(cx + r)) + 1, image_size)
    y0 = max(int(math.floor(cy - r)) - 1, 0)
    y1 = min(int(math.ceil(cy + r)) + 1, image_size)
    if x0 >= x1 or y0 >= y1:
        return mask
    ys, xs = np.mgrid[y0:y1, x0:x1]
    mask[y0:y1, x0:x1] = silhouette_contains(obj, xs + 0.5, ys + 0.5)
    return mask


def mask_box(mask: np.ndarray) -> Optional[Box]:
    """紧包围框 (x_min, y_min, x_max, y_max)，右下为开区间像素边"""
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        return None
    return int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1


def build_manifest(scene: Scene, sample_id: str, boxes: List[Box], masks: List[np.ndarray]) -> dict:
    """字段顺序固定，保证清单逐字节可比"""
    return {
        "id": sample_id,
        "case_code": str(scene.case),
        "seed": int(scene.seed),
        "image_size": scene.grid.image_size,
        "patch_size": scene.grid.patch_size,
        "count": scene.count,
        "objects": [obj.to_dict() for obj in scene.objects],
        "boxes": [list(box) for box in boxes],
        "masks_rle": [rle_encode_mask(mask) for mask in masks],
    }


def render(scene: Scene, sample_id: Optional[str] = None) -> RenderedSample:
    """按物体序号依次绘制；1–8 的掩码互不相交，9–15 允许贴边"""
    size = scene.grid.image_size
    image = np.empty((size, size, 3), dtype=np.uint8)
    image[:, :] = BACKGROUND

    masks: List[np.ndarray] = []
    boxes: List[Box] = []
    for k, obj in enumerate(scene.objects):
        mask = rasterize_object(obj, size)
        box = mask_box(mask)
        if box is None:
            raise ValueError(f"物体 {k} 在 {size}px 图像上没有覆盖任何像素中心")
        image[mask] = obj.rgb
        masks.append(mask)
        boxes.append(box)

    sample_id = sample_id or f"{scene.case}_{scene.seed:016x}"
    manifest = build_manifest(scene, sample_id, boxes, masks)
    logger.debug(f"渲染完成 {sample_id}: {len(masks)} 个物体")
    return RenderedSample(image=image, instance_masks=masks, boxes=boxes, manifest=manifest)
