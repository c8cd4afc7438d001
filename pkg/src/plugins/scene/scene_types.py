from dataclasses import dataclass, field
from enum import Enum
from typing import List, Tuple

from .case_code import CaseCode


class InvalidGrid(ValueError):
    """patch 网格参数不合法"""


class Shape(str, Enum):
    CIRCLE = "circle"
    SQUARE = "square"
    TRIANGLE = "triangle"


# 白底上的 8 种饱和色，顺序即调色板索引
PALETTE: List[Tuple[str, Tuple[int, int, int]]] = [
    ("red", (255, 0, 0)),
    ("green", (0, 255, 0)),
    ("blue", (0, 0, 255)),
    ("yellow", (255, 255, 0)),
    ("purple", (128, 0, 128)),
    ("orange", (255, 165, 0)),
    ("cyan", (0, 255, 255)),
    ("magenta", (255, 0, 255)),
]
BACKGROUND = (255, 255, 255)
COLOR_NAMES = [name for name, _ in PALETTE]


@dataclass(frozen=True)
class PatchGrid:
    image_size: int = 448
    patch_size: int = 28

    def __post_init__(self):
        if self.patch_size <= 0 or self.image_size <= 0:
            raise InvalidGrid(f"尺寸必须为正: image_size={self.image_size}, patch_size={self.patch_size}")
        if self.image_size % self.patch_size != 0:
            raise InvalidGrid(f"patch_size={self.patch_size} 不能整除 image_size={self.image_size}")
        if self.image_size // self.patch_size < 8:
            raise InvalidGrid(f"网格边长 {self.image_size // self.patch_size} 小于 8")

    @property
    def grid_dim(self) -> int:
        return self.image_size // self.patch_size


@dataclass(frozen=True)
class ObjectSpec:
    """单个物体，diameter 是外接圆直径，三种形状都内接于该圆"""

    shape: Shape
    color: int
    center: Tuple[float, float]
    diameter: float

    @property
    def radius(self) -> float:
        return self.diameter / 2.0

    @property
    def color_name(self) -> str:
        return PALETTE[self.color][0]

    @property
    def rgb(self) -> Tuple[int, int, int]:
        return PALETTE[self.color][1]

    def to_dict(self) -> dict:
        return {
            "shape": self.shape.value,
            "color": self.color_name,
            "cx": self.center[0],
            "cy": self.center[1],
            "diameter": self.diameter,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ObjectSpec":
        return cls(
            shape=Shape(data["shape"]),
            color=COLOR_NAMES.index(data["color"]),
            center=(float(data["cx"]), float(data["cy"])),
            diameter=float(data["diameter"]),
        )


@dataclass(frozen=True)
class Scene:
    case: CaseCode
    grid: PatchGrid
    objects: Tuple[ObjectSpec, ...] = field(default_factory=tuple)
    count: int = 0
    seed: int = 0

    @property
    def object_name(self) -> str:
        """提示词里的 <object>：只画圆的放大用例叫 circles，其余叫 shapes"""
        return "circles" if self.case.dilated else "shapes"
