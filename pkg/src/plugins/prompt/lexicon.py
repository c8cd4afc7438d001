import operator
import re
from typing import Dict, Pattern, Tuple

_UNITS = (
    "one",
    "two",
    "three",
    "four",
    "five",
    "six",
    "seven",
    "eight",
    "nine",
    "ten",
    "eleven",
    "twelve",
    "thirteen",
    "fourteen",
    "fifteen",
    "sixteen",
    "seventeen",
    "eighteen",
    "nineteen",
    "twenty",
)


class NotInLexicon(LookupError):
    def __init__(self, value):
        super().__init__(f"{value!r} 不在 1–30 的数词表中")
        self.value = value


class NumberLexicon:
    """英文数词与 1–30 的双向映射；21–29 以连字符形式为准，解析时也接受空格形式"""

    MIN_VALUE = 1
    MAX_VALUE = 30

    def __init__(self):
        words = list(_UNITS)
        words += [f"twenty-{unit}" for unit in _UNITS[:9]]
        words.append("thirty")
        self._words: Tuple[str, ...] = tuple(words)
        self._values: Dict[str, int] = {word: k + 1 for k, word in enumerate(words)}
        for word, value in list(self._values.items()):
            if "-" in word:
                self._values[word.replace("-", " ")] = value

        # 复合词排在前面，保证 "twenty-one" 不会只匹配到 "twenty"
        alternatives = sorted(self._words, key=len, reverse=True)
        body = "|".join(a.replace("-", r"[-\s]+") for a in alternatives)
        self._pattern: Pattern = re.compile(rf"\b(?:{body})\b", re.IGNORECASE)

    def __len__(self) -> int:
        return len(self._words)

    @property
    def words(self) -> Tuple[str, ...]:
        return self._words

    @property
    def pattern(self) -> Pattern:
        """在文本中查找数词的正则"""
        return self._pattern

    def word_to_number(self, token: str) -> int:
        key = re.sub(r"\s+", " ", str(token).strip().lower())
        if key not in self._values:
            raise NotInLexicon(token)
        return self._values[key]

    def number_to_word(self, n: int) -> str:
        if isinstance(n, bool):
            raise NotInLexicon(n)
        try:
            value = operator.index(n)
        except TypeError:
            raise NotInLexicon(n) from None
        if not self.MIN_VALUE <= value <= self.MAX_VALUE:
            raise NotInLexicon(n)
        return self._words[value - 1]


DEFAULT_LEXICON = NumberLexicon()


def word_to_number(token: str) -> int:
    return DEFAULT_LEXICON.word_to_number(token)


def number_to_word(n: int) -> str:
    return DEFAULT_LEXICON.number_to_word(n)
