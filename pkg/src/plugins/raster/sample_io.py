import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Union

import numpy as np
from PIL import Image

from src.plugins.scene.case_code import parse_case_code
from src.plugins.scene.scene_types import ObjectSpec, PatchGrid, Scene
from src.plugins.utils.jsonl import read_jsonl, write_jsonl

from .raster import RenderedSample, logger
from .rle import rle_decode_mask

PathLike = Union[str, Path]

IMAGE_NAME = "image.png"
MANIFEST_NAME = "manifest.json"
INDEX_NAME = "index.jsonl"
PROMPTS_NAME = "prompts.jsonl"


class MissingArtifact(FileNotFoundError):
    """样本目录里缺少图像或清单"""


class CorruptManifest(ValueError):
    """清单内部数据互相矛盾"""


@dataclass(frozen=True)
class SamplePaths:
    directory: Path
    image: Path
    manifest: Path


@dataclass(frozen=True)
class IndexEntry:
    manifest: str  # 相对数据集根目录的 posix 路径
    case_code: str
    count: int

    def to_dict(self) -> dict:
        return {"manifest": self.manifest, "case_code": self.case_code, "count": self.count}

    @property
    def sample_id(self) -> str:
        return Path(self.manifest).parent.name


def sample_dir(root: PathLike, sample_id: str) -> Path:
    """样本目录: <root>/<case>/<sample_id>，sample_id 以 "<case>_" 开头"""
    case = sample_id.split("_", 1)[0]
    return Path(root) / case / sample_id


def manifest_bytes(manifest: dict) -> bytes:
    return (json.dumps(manifest, ensure_ascii=False, indent=2) + "\n").encode("utf-8")


def write_sample(sample: RenderedSample, root: PathLike) -> SamplePaths:
    directory = sample_dir(root, sample.sample_id)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        image_path = directory / IMAGE_NAME
        manifest_path = directory / MANIFEST_NAME
        Image.fromarray(np.ascontiguousarray(sample.image, dtype=np.uint8)).save(image_path, format="PNG")
        manifest_path.write_bytes(manifest_bytes(sample.manifest))
    except OSError as e:
        raise OSError(f"写入样本 {sample.sample_id} 到 {directory} 失败: {e}") from e
    return SamplePaths(directory, image_path, manifest_path)


def load_manifest(path: PathLike) -> dict:
    path = Path(path)
    if not path.is_file():
        raise MissingArtifact(f"清单不存在: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise CorruptManifest(f"清单 {path} 不是合法 JSON: {e.msg}") from e


def check_manifest(manifest: dict, source: str = "") -> None:
    where = f" ({source})" if source else ""
    for key in ("id", "case_code", "count", "objects", "boxes", "masks_rle", "image_size"):
        if key not in manifest:
            raise CorruptManifest(f"清单缺少字段 {key}{where}")
    count = manifest["count"]
    if count != len(manifest["masks_rle"]):
        raise CorruptManifest(f"count={count} 与掩码数 {len(manifest['masks_rle'])} 不一致{where}")
    if count != len(manifest["objects"]) or count != len(manifest["boxes"]):
        raise CorruptManifest(f"count={count} 与物体数或框数不一致{where}")


def read_sample(root: PathLike, sample_id: str) -> RenderedSample:
    directory = sample_dir(root, sample_id)
    manifest = load_manifest(directory / MANIFEST_NAME)
    check_manifest(manifest, str(directory))

    image_path = directory / IMAGE_NAME
    if not image_path.is_file():
        raise MissingArtifact(f"图像不存在: {image_path}")
    try:
        with Image.open(image_path) as im:
            image = np.array(im.convert("RGB"), dtype=np.uint8)
    except OSError as e:
        raise OSError(f"读取图像 {image_path} 失败: {e}") from e

    size = int(manifest["image_size"])
    masks = [rle_decode_mask(text, (size, size)) for text in manifest["masks_rle"]]
    boxes = [tuple(int(v) for v in box) for box in manifest["boxes"]]
    return RenderedSample(image=image, instance_masks=masks, boxes=boxes, manifest=manifest)


def scene_from_manifest(manifest: dict) -> Scene:
    grid = PatchGrid(int(manifest["image_size"]), int(manifest["patch_size"]))
    objects = tuple(ObjectSpec.from_dict(o) for o in manifest["objects"])
    return Scene(
        case=parse_case_code(manifest["case_code"]),
        grid=grid,
        objects=objects,
        count=int(manifest["count"]),
        seed=int(manifest["seed"]),
    )


def write_index(entries: Iterable[IndexEntry], root: PathLike) -> Path:
    path = write_jsonl(Path(root) / INDEX_NAME, (e.to_dict() for e in entries))
    logger.info(f"数据集索引已写入 {path}")
    return path


def read_index(root: PathLike) -> List[IndexEntry]:
    path = Path(root) / INDEX_NAME
    if not path.is_file():
        raise MissingArtifact(f"数据集索引不存在: {path}")
    return [IndexEntry(r["manifest"], r["case_code"], int(r["count"])) for r in read_jsonl(path)]
