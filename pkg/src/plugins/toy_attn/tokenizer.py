import re
from typing import Dict, List, Sequence

from src.plugins.prompt.lexicon import DEFAULT_LEXICON

VOCAB_SIZE = 64

EMPTY = "<empty>"
OCCUPIED = "<occupied>"
ASSISTANT = "<assistant>"
COUNT = "<count>"
UNK = "<unk>"

SPECIAL_TOKENS = (EMPTY, OCCUPIED, ASSISTANT, COUNT, UNK)
NUMERAL_RANGE = range(1, 31)

# 两种计数提示词里出现的全部单词
TEMPLATE_WORDS = (
    "how", "many", "are", "there", "in", "the", "image", "respond", "concisely", "with",
    "shape", "counts", "using", "following", "format", "number", "for", "example", "only",
    "i", "can", "see", "this", "shapes", "circles",
)  # fmt: skip

_TOKEN_RE = re.compile(r"[a-z]+|\d+")


class ToyTokenizer:
    """固定 64 词表：0/1 为视觉格子，2/3 为回答位，4 为未知词，5–34 为数字 1–30，其后是模板单词"""

    def __init__(self):
        tokens: List[str] = list(SPECIAL_TOKENS)
        tokens += [str(n) for n in NUMERAL_RANGE]
        tokens += list(TEMPLATE_WORDS)
        if len(tokens) > VOCAB_SIZE:
            raise ValueError(f"词表超出 {VOCAB_SIZE} 个条目")
        tokens += [f"<reserved_{k}>" for k in range(VOCAB_SIZE - len(tokens))]
        self.tokens = tuple(tokens)
        self.ids: Dict[str, int] = {tok: k for k, tok in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def visual_ids(self) -> frozenset:
        return frozenset((self.ids[EMPTY], self.ids[OCCUPIED]))

    @property
    def answer_ids(self) -> List[int]:
        return [self.ids[ASSISTANT], self.ids[COUNT]]

    def visual_id(self, occupied: bool) -> int:
        return self.ids[OCCUPIED] if occupied else self.ids[EMPTY]

    def encode(self, text: str) -> List[int]:
        """小写后切成单词与数字；英文数字词归一到阿拉伯数字"""
        unk = self.ids[UNK]
        out = []
        for piece in _TOKEN_RE.findall(text.lower()):
            if piece in DEFAULT_LEXICON.words:
                piece = str(DEFAULT_LEXICON.word_to_number(piece))
            if piece.isdigit():
                piece = str(int(piece)) if len(piece) <= 3 else piece
            out.append(self.ids.get(piece, unk))
        return out

    def decode(self, ids: Sequence[int]) -> List[str]:
        return [self.tokens[i] for i in ids]


DEFAULT_TOKENIZER = ToyTokenizer()
