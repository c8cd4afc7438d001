import re
from dataclasses import dataclass
from typing import Iterable, List

SUFFIXES = ("A", "B", "C", "D")

# 每个前缀允许的后缀，顺序即数据集与报告中的用例顺序
_ALLOWED_SUFFIXES = {
    1: ("A", "B"),
    2: SUFFIXES,
    3: SUFFIXES,
    4: SUFFIXES,
    5: ("A",),
    6: ("A",),
    7: ("A",),
    8: ("A",),
    **{prefix: ("A", "B") for prefix in range(9, 16)},
}

_CODE_PATTERN = re.compile(r"^\s*(\d{1,2})([A-Za-z])\s*$")


class InvalidCode(ValueError):
    """不存在的用例码"""

    def __init__(self, text: str):
        super().__init__(f"无效的用例码: {text!r}")
        self.text = text


@dataclass(frozen=True, order=True)
class CaseCode:
    """用例码：数字前缀决定摆放方式，字母后缀决定尺寸与抖动"""

    prefix: int
    suffix: str

    def __str__(self) -> str:
        return f"{self.prefix}{self.suffix}"

    @property
    def varied_size(self) -> bool:
        return self.suffix in ("B", "D")

    @property
    def jittered(self) -> bool:
        return self.suffix in ("C", "D")

    @property
    def dilated(self) -> bool:
        return 5 <= self.prefix <= 8

    @property
    def clustered(self) -> bool:
        return self.prefix >= 9


ALL_CASE_CODES: List[CaseCode] = [
    CaseCode(prefix, suffix) for prefix, suffixes in _ALLOWED_SUFFIXES.items() for suffix in suffixes
]


def parse_case_code(text: str) -> CaseCode:
    """解析形如 "4A" 的用例码，大小写不敏感"""
    if not isinstance(text, str):
        raise InvalidCode(str(text))
    match = _CODE_PATTERN.match(text)
    if match is None:
        raise InvalidCode(text)
    prefix = int(match.group(1))
    suffix = match.group(2).upper()
    if suffix not in _ALLOWED_SUFFIXES.get(prefix, ()):
        raise InvalidCode(text)
    return CaseCode(prefix, suffix)


def parse_case_list(items: Iterable[str]) -> List[CaseCode]:
    """解析用例列表，支持逗号/空格分隔和 all，保持首次出现顺序去重"""
    result: List[CaseCode] = []
    seen = set()
    for item in items:
        for token in re.split(r"[,\s]+", str(item).strip()):
            if not token:
                continue
            codes = ALL_CASE_CODES if token.lower() == "all" else [parse_case_code(token)]
            for code in codes:
                if code not in seen:
                    seen.add(code)
                    result.append(code)
    return result
