from dataclasses import dataclass
from enum import Enum
from typing import Iterable, List, Optional

import numpy as np

from .prompt_template import Prompt, global_prompt_manager, logger

CONFLICT_DELTAS = (-2, -1, 1, 2)


class PromptPreconditionError(ValueError):
    """提示词构造的前置条件不满足"""


class PromptVariant(str, Enum):
    STANDARD = "standard"
    CONFLICT = "conflict"


def init_prompt():
    Prompt(
        "How many {object_name} are there in the image?\n"
        "\n"
        "Respond concisely with shape counts using the following format:\n"
        '"{object_name}: \\{number\\}".\n'
        'For example: "{object_name}: 7" (example only).',
        "counting_standard",
    )
    Prompt(
        "I can see {false_count} {object_name} in this image.\n{standard}",
        "counting_conflict",
    )


init_prompt()


@dataclass(frozen=True)
class PromptInstance:
    sample_id: str
    variant: PromptVariant
    object_name: str
    false_count: Optional[int]
    text: str

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "variant": self.variant.value,
            "object_name": self.object_name,
            "false_count": self.false_count,
            "text": self.text,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PromptInstance":
        false_count = data.get("false_count")
        return cls(
            sample_id=data["sample_id"],
            variant=PromptVariant(data["variant"]),
            object_name=data["object_name"],
            false_count=None if false_count is None else int(false_count),
            text=data["text"],
        )


def _check_object_name(object_name: str) -> str:
    if not isinstance(object_name, str) or not object_name.strip():
        raise PromptPreconditionError("object_name 不能为空")
    return object_name.strip()


def standard_prompt(object_name: str) -> str:
    """标准计数提示词；object_name 可以带颜色，如 "red circles" """
    object_name = _check_object_name(object_name)
    return global_prompt_manager.format_prompt("counting_standard", object_name=object_name)


def standard_instance(sample_id: str, object_name: str) -> PromptInstance:
    return PromptInstance(
        sample_id=sample_id,
        variant=PromptVariant.STANDARD,
        object_name=_check_object_name(object_name),
        false_count=None,
        text=standard_prompt(object_name),
    )


def conflict_prompt(
    object_name: str,
    true_count: int,
    delta: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    sample_id: str = "",
) -> PromptInstance:
    """数字冲突提示词：先断言一个错误数量，再问标准问题；delta 为空时从 rng 中抽取"""
    object_name = _check_object_name(object_name)
    if delta is None:
        if rng is None:
            raise PromptPreconditionError("未给定 delta 时必须提供 rng")
        valid = [d for d in CONFLICT_DELTAS if true_count + d >= 1]
        delta = int(valid[int(rng.integers(len(valid)))])
    if delta not in CONFLICT_DELTAS:
        raise PromptPreconditionError(f"delta={delta} 不在 {CONFLICT_DELTAS} 内")
    false_count = int(true_count) + int(delta)
    if false_count < 1:
        raise PromptPreconditionError(f"错误数量 {true_count}{delta:+d}={false_count} 小于 1")

    text = global_prompt_manager.format_prompt(
        "counting_conflict",
        false_count=false_count,
        object_name=object_name,
        standard=standard_prompt(object_name),
    )
    return PromptInstance(
        sample_id=sample_id,
        variant=PromptVariant.CONFLICT,
        object_name=object_name,
        false_count=false_count,
        text=text,
    )


def build_prompt_set(
    sample_id: str, object_name: str, true_count: int, deltas: Iterable[int] = ()
) -> List[PromptInstance]:
    """标准提示词在前，随后按给定顺序为每个可用偏移量生成一条冲突提示词"""
    prompts = [standard_instance(sample_id, object_name)]
    for delta in deltas:
        if true_count + delta < 1:
            logger.debug(f"{sample_id}: 真实数量 {true_count} 无法使用偏移量 {delta:+d}，跳过")
            continue
        prompts.append(conflict_prompt(object_name, true_count, delta, sample_id=sample_id))
    return prompts
