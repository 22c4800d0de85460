"""Word-level vocabulary standing in for a subword tokenizer."""

from __future__ import annotations

import re
from collections import Counter
from typing import Iterable, Sequence

BOS, EOS, PAD, UNK = 0, 1, 2, 3
SPECIALS = ("<bos>", "<eos>", "<pad>", "<unk>")

_TOKEN_RE = re.compile(r"[\w']+|[^\w\s]")


def split_words(text: str) -> list[str]:
    """Lowercase; words and single punctuation marks become separate tokens."""
    return _TOKEN_RE.findall(text.lower())


class Vocabulary:
    def __init__(self, words: Sequence[str]):
        words = list(words)
        if tuple(words[:4]) != SPECIALS:
            words = list(SPECIALS) + [w for w in words if w not in SPECIALS]
        if len(set(words)) != len(words):
            raise ValueError("vocabulary words must be unique")
        self.words = words
        self.index = {w: i for i, w in enumerate(words)}

    def __len__(self) -> int:
        return len(self.words)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.words == other.words

    def __contains__(self, word: str) -> bool:
        return word in self.index

    def encode(self, text: str) -> list[int]:
        return [self.index.get(w, UNK) for w in split_words(text)]

    def decode(self, ids: Iterable[int]) -> str:
        out = []
        for i in ids:
            if i == EOS:
                break
            if i in (BOS, PAD):
                continue
            out.append(self.words[i])
        return " ".join(out)


def build_vocab(corpus: Sequence[str], min_count: int = 1, reserved: Iterable[str] = ()) -> Vocabulary:
    """Frequency-sorted vocabulary (ties broken lexicographically).

    ``reserved`` words are always included right after the special tokens,
    regardless of their count.
    """
    if not corpus:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    counts = Counter(w for line in corpus for w in split_words(line))
    head = []
    for w in reserved:
        for tok in split_words(w):
            if tok not in head:
                head.append(tok)
    kept = sorted((w for w, c in counts.items() if c >= min_count and w not in head),
                  key=lambda w: (-counts[w], w))
    return Vocabulary(list(SPECIALS) + head + kept)
