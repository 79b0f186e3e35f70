"""Caption encoder (word + sentence embeddings) and the image encoder used for text-image matching."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from ..text import T_MAX, VOCAB, Caption


@dataclass
class TextEmbedding:
    words: np.ndarray      # (T, D_t)
    sentence: np.ndarray   # (D_t,)


def pad_tokens(captions) -> tuple:
    """Stack token sequences into a (B, T) id tensor plus (B,) lengths."""
    lengths = [len(c.tokens) for c in captions]
    if min(lengths) == 0:
        raise ValueError("empty caption")
    ids = torch.zeros(len(captions), max(lengths), dtype=torch.long)
    for i, c in enumerate(captions):
        ids[i, :len(c.tokens)] = torch.as_tensor(c.tokens)
    return ids, torch.as_tensor(lengths)


def length_mask(lengths, t: int) -> torch.Tensor:
    return torch.arange(t)[None, :] < lengths[:, None]


class TextEncoder(nn.Module):
    """Embedding -> bidirectional GRU context -> word rows; sentence = projected mean of word rows."""

    def __init__(self, vocab_size: int = len(VOCAB), dim: int = 64):
        super().__init__()
        if dim % 2:
            raise ValueError("text embedding dim must be even")
        self.dim = dim
        self.embed = nn.Embedding(vocab_size, dim)
        self.rnn = nn.GRU(dim, dim // 2, batch_first=True, bidirectional=True)
        self.project = nn.Linear(dim, dim)

    def forward(self, ids, lengths):
        if (lengths <= 0).any():
            raise ValueError("empty caption")
        x = self.embed(ids)
        packed = pack_padded_sequence(x, lengths.cpu(), batch_first=True, enforce_sorted=False)
        out, _ = self.rnn(packed)
        words, _ = pad_packed_sequence(out, batch_first=True, total_length=ids.shape[1])
        mask = length_mask(lengths, ids.shape[1]).to(words.dtype)
        mean = (words * mask[..., None]).sum(1) / lengths[:, None].to(words.dtype)
        return words, self.project(mean)

    def encode(self, captions):
        ids, lengths = pad_tokens(captions)
        words, sentence = self(ids, lengths)
        return words, sentence, length_mask(lengths, ids.shape[1])


def encode_text(caption: Caption, encoder: TextEncoder) -> TextEmbedding:
    if not caption.tokens:
        raise ValueError("empty caption")
    if len(caption.tokens) > T_MAX:
        raise ValueError(f"caption longer than {T_MAX} tokens")
    encoder.eval()
    with torch.no_grad():
        words, sentence, _ = encoder.encode([caption])
    return TextEmbedding(words[0].double().numpy(), sentence[0].double().numpy())


class ImageEncoder(nn.Module):
    """Strided CNN giving a 4x4 grid of region features and a global feature, both of width ``dim``."""

    def __init__(self, dim: int = 64, width: int = 16, resolution: int = 64):
        super().__init__()
        layers, c, r = [], 3, resolution
        while r > 4:
            layers += [nn.Conv2d(c, width, 4, 2, 1), nn.LeakyReLU(0.2)]
            c, width, r = width, min(2 * width, 64), r // 2
        self.trunk = nn.Sequential(*layers)
        self.regions = nn.Conv2d(c, dim, 1)
        self.globl = nn.Linear(c, dim)

    def forward(self, images):
        h = self.trunk(images)
        regions = self.regions(h).flatten(2).transpose(1, 2)   # (B, N, D)
        return regions, self.globl(h.mean((2, 3)))


def cosine_matrix(a, b, eps=1e-8):
    a = a / a.norm(dim=-1, keepdim=True).clamp_min(eps)
    b = b / b.norm(dim=-1, keepdim=True).clamp_min(eps)
    return a @ b.transpose(-1, -2)


def sentence_cosine(encoder: TextEncoder, a: Caption, b: Caption) -> float:
    encoder.eval()
    with torch.no_grad():
        _, s, _ = encoder.encode([a, b])
    return float(F.cosine_similarity(s[0], s[1], dim=0))
