"""Word attention and the text-relevant affine combination module (tr-ACM)."""

from __future__ import annotations

import math

import torch
import torch.nn as nn


def word_attention(words, hidden, proj, word_mask=None):
    """Attend from every spatial location of ``hidden`` over the caption's words.

    words: (B, T, D_t); hidden: (B, C, h, w); proj maps D_t -> C.
    Returns the context map (B, C, h, w) and weights (B, h*w, T) that sum to 1
    over T at each location.
    """
    if words.shape[1] == 0:
        raise ValueError("attention over an empty caption")
    b, c, h, w = hidden.shape
    keys = proj(words)                                   # (B, T, C)
    queries = hidden.flatten(2).transpose(1, 2)          # (B, hw, C)
    scores = queries @ keys.transpose(1, 2) / math.sqrt(c)
    if word_mask is not None:
        scores = scores.masked_fill(~word_mask[:, None, :], float("-inf"))
    weights = torch.softmax(scores, dim=-1)
    context = (weights @ keys).transpose(1, 2).reshape(b, c, h, w)
    return context, weights


class WordAttention(nn.Module):
    def __init__(self, text_dim: int, channels: int):
        super().__init__()
        self.proj = nn.Linear(text_dim, channels, bias=False)

    def forward(self, words, hidden, word_mask=None):
        return word_attention(words, hidden, self.proj, word_mask)


def tr_acm(hidden, visual, relevance, weight_fn, bias_fn):
    """Affine-modulate ``hidden`` by maps computed from ``visual``, only where ``relevance`` is on.

    relevance: (B, h, w) in [0, 1]; outside relevant regions ``hidden`` passes through.
    """
    if hidden.shape[-2:] != visual.shape[-2:] or hidden.shape[-2:] != relevance.shape[-2:]:
        raise ValueError(f"tr-ACM spatial mismatch: hidden {tuple(hidden.shape)}, "
                         f"visual {tuple(visual.shape)}, relevance {tuple(relevance.shape)}")
    affine = hidden * weight_fn(visual) + bias_fn(visual)
    r = relevance[:, None]
    return r * affine + (1 - r) * hidden


class TrAcm(nn.Module):
    def __init__(self, channels: int, visual_channels: int):
        super().__init__()
        self.weight = nn.Conv2d(visual_channels, channels, 3, 1, 1)
        self.bias = nn.Conv2d(visual_channels, channels, 3, 1, 1)

    def forward(self, hidden, visual, relevance):
        return tr_acm(hidden, visual, relevance, self.weight, self.bias)
