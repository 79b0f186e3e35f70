"""Caption vocabulary and tokenization for the synthetic caption grammar."""

from __future__ import annotations

import re
from dataclasses import dataclass

T_MAX = 16

COLORS = ("red", "blue", "yellow", "green", "purple")
SHAPES = ("ellipse", "triangle")

# Index 0 is reserved for padding, 1 for unknown words.
_BASE_WORDS = ("<pad>", "<unk>", "a", "an", "the", "bird", "small", "large",
               "on", "perch", "ground", "with", "and")


class Vocabulary:
    """Fixed word <-> id mapping. Small enough (< 64 entries) to learn quickly."""

    def __init__(self, words=None):
        if words is None:
            words = list(_BASE_WORDS) + list(COLORS) + list(SHAPES)
        self.words = list(words)
        self.index = {w: i for i, w in enumerate(self.words)}

    def __len__(self):
        return len(self.words)

    def id(self, word: str) -> int:
        return self.index.get(word, 1)

    def decode(self, tokens) -> str:
        return " ".join(self.words[t] for t in tokens)


VOCAB = Vocabulary()


@dataclass(frozen=True)
class Caption:
    text: str
    tokens: tuple

    def __post_init__(self):
        if len(self.tokens) == 0:
            raise ValueError("caption has no tokens")
        if len(self.tokens) > T_MAX:
            raise ValueError(f"caption longer than T_max={T_MAX}")
        if any(not 0 <= t < len(VOCAB) for t in self.tokens):
            raise ValueError(f"token id out of range in {self.tokens!r}")


def tokenize(text: str, vocab: Vocabulary = VOCAB) -> Caption:
    words = re.findall(r"[a-z]+", text.lower())[:T_MAX]
    return Caption(text=text.strip(), tokens=tuple(vocab.id(w) for w in words))


def caption_for(color: str, shape: str) -> Caption:
    return tokenize(f"a {color} {shape} bird")


def attribute_class(color: str, shape: str) -> int:
    """Joint (color, shape) class id in [0, len(COLORS) * len(SHAPES))."""
    return COLORS.index(color) * len(SHAPES) + SHAPES.index(shape)


def class_attributes(k: int) -> tuple:
    return COLORS[k // len(SHAPES)], SHAPES[k % len(SHAPES)]


def parse_attributes(caption: Caption) -> tuple:
    """Return (color, shape) named in the caption, or None for a missing slot."""
    words = [VOCAB.words[t] for t in caption.tokens]
    color = next((w for w in words if w in COLORS), None)
    shape = next((w for w in words if w in SHAPES), None)
    return color, shape


N_CLASSES = len(COLORS) * len(SHAPES)
