import re
from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from src.plugins.prompt.lexicon import DEFAULT_LEXICON, NumberLexicon, NotInLexicon

_NUMERAL = r"\b[0-9]+\b"
_MAX_NUMERAL_DIGITS = 18
# 写进评测报告，说明准确率的判定方式
ACCURACY_RULE = "token-boundary match of the expected count (deviation from substring matching)"


class UnmatchedSample(LookupError):
    """回答找不到对应的真实数量"""

    def __init__(self, sample_id: str):
        super().__init__(f"样本 {sample_id!r} 没有真实数量")
        self.sample_id = sample_id


@dataclass(frozen=True)
class ModelResponse:
    sample_id: str
    variant: str
    raw_text: str
    false_count: Optional[int] = None

    @classmethod
    def from_dict(cls, data: dict) -> "ModelResponse":
        false_count = data.get("false_count")
        return cls(
            sample_id=str(data["sample_id"]),
            variant=str(data.get("variant", "standard")),
            raw_text="" if data.get("raw_text") is None else str(data["raw_text"]),
            false_count=None if false_count is None else int(false_count),
        )


def _lexicon_value(match_text: str, lexicon: NumberLexicon) -> Optional[int]:
    try:
        return lexicon.word_to_number(re.sub(r"[-\s]+", "-", match_text.lower()))
    except NotInLexicon:
        return None


def _numeral_value(digits: str) -> Optional[int]:
    # 过长的数字串不可能是计数，也避免 int() 的位数上限
    return int(digits) if len(digits) <= _MAX_NUMERAL_DIGITS else None


def _scan_pattern(lexicon: NumberLexicon) -> re.Pattern:
    return re.compile(rf"(?P<num>{_NUMERAL})|(?P<word>{lexicon.pattern.pattern})", re.IGNORECASE | re.ASCII)


def iter_counts(text: str, lexicon: NumberLexicon = DEFAULT_LEXICON) -> Iterable[int]:
    """按出现顺序给出文本中的数字与数词"""
    for match in _scan_pattern(lexicon).finditer(text):
        if match.group("num") is not None:
            value = _numeral_value(match.group("num"))
            if value is not None:
                yield value
        else:
            value = _lexicon_value(match.group("word"), lexicon)
            if value is not None:
                yield value


def parse_count(raw_text, object_name: str = "", lexicon: NumberLexicon = DEFAULT_LEXICON) -> Optional[int]:
    """提取回答中的数量：优先 "<object>: N" 格式，其次按扫描顺序第一个数字或数词；找不到返回 None"""
    if raw_text is None:
        return None
    text = raw_text if isinstance(raw_text, str) else str(raw_text)
    name = (object_name or "").strip()
    if name:
        formatted = re.compile(
            rf"{re.escape(name)}\s*:\s*(?:(?P<num>[0-9]+)|(?P<word>{lexicon.pattern.pattern}))",
            re.IGNORECASE | re.ASCII,
        )
        match = formatted.search(text)
        if match is not None:
            if match.group("num") is not None:
                value = _numeral_value(match.group("num"))
            else:
                value = _lexicon_value(match.group("word"), lexicon)
            if value is not None:
                return value
    return next(iter(iter_counts(text, lexicon)), None)


def score_response(raw_text: str, gt: int, lexicon: NumberLexicon = DEFAULT_LEXICON) -> int:
    """真实数量以完整数字或数词出现在回答中记 1，否则 0"""
    text = raw_text if isinstance(raw_text, str) else str(raw_text)
    return int(any(value == gt for value in iter_counts(text, lexicon)))


def split_matched(
    responses: Iterable[ModelResponse], ground_truth: Mapping[str, int]
) -> Tuple[List[ModelResponse], List[ModelResponse]]:
    matched, unmatched = [], []
    for response in responses:
        (matched if response.sample_id in ground_truth else unmatched).append(response)
    return matched, unmatched


def _scores(
    responses: Iterable[ModelResponse],
    ground_truth: Mapping[str, int],
    scorer: Callable[[ModelResponse, int], int],
) -> List[Tuple[ModelResponse, int]]:
    result = []
    for response in responses:
        if response.sample_id not in ground_truth:
            raise UnmatchedSample(response.sample_id)
        result.append((response, scorer(response, ground_truth[response.sample_id])))
    return result


def _mean(values: Sequence[int]) -> float:
    return float(sum(values)) / len(values) if values else 0.0


def accuracy(responses: Iterable[ModelResponse], ground_truth: Mapping[str, int]) -> float:
    scored = _scores(responses, ground_truth, lambda r, gt: score_response(r.raw_text, gt))
    return _mean([s for _, s in scored])


def strict_accuracy(
    responses: Iterable[ModelResponse], ground_truth: Mapping[str, int], object_names: Mapping[str, str] = None
) -> float:
    """解析出的数量恰好等于真实数量的比例"""
    object_names = object_names or {}

    def scorer(response: ModelResponse, gt: int) -> int:
        return int(parse_count(response.raw_text, object_names.get(response.sample_id, "")) == gt)

    return _mean([s for _, s in _scores(responses, ground_truth, scorer)])


def per_count_breakdown(responses: Iterable[ModelResponse], ground_truth: Mapping[str, int]) -> Dict[int, float]:
    buckets: Dict[int, List[int]] = defaultdict(list)
    for response, score in _scores(responses, ground_truth, lambda r, gt: score_response(r.raw_text, gt)):
        buckets[ground_truth[response.sample_id]].append(score)
    return {count: _mean(buckets[count]) for count in sorted(buckets)}


def per_case_breakdown(
    responses: Iterable[ModelResponse],
    ground_truth: Mapping[str, int],
    case_of: Mapping[str, str],
    order: Optional[Sequence[str]] = None,
) -> Dict[str, float]:
    buckets: Dict[str, List[int]] = defaultdict(list)
    for response, score in _scores(responses, ground_truth, lambda r, gt: score_response(r.raw_text, gt)):
        buckets[case_of[response.sample_id]].append(score)
    keys = [k for k in order if k in buckets] if order else sorted(buckets)
    return {case: _mean(buckets[case]) for case in keys}


def conflict_shift_rate(responses: Iterable[ModelResponse], object_names: Mapping[str, str] = None) -> Optional[float]:
    """冲突提示下，回答被带偏到断言数量的比例；没有可用样本时为 None"""
    object_names = object_names or {}
    hits = [
        int(parse_count(r.raw_text, object_names.get(r.sample_id, "")) == r.false_count)
        for r in responses
        if r.variant == "conflict" and r.false_count is not None
    ]
    return _mean(hits) if hits else None
