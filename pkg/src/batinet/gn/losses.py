"""Generator/discriminator loss terms for the generation network.

Images passed to the foreground terms are premultiplied (rgb * alpha), matching
the reference foreground ``original * mask``.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .encoders import cosine_matrix

EPS = 1e-7
GAMMA_REGION = 4.0    # sharpness of word -> region attention
GAMMA_WORDS = 5.0     # log-sum-exp pooling over words
GAMMA_BATCH = 10.0    # similarity scale inside the batch softmax


class RandomConvExtractor(nn.Module):
    """Frozen, seeded random strided conv stack used as the perceptual feature extractor."""

    def __init__(self, seed: int = 0, widths=(8, 16, 16)):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        layers, c = [], 3
        for w in widths:
            conv = nn.Conv2d(c, w, 4, 2, 1)
            with torch.no_grad():
                bound = 1.0 / (c * 16) ** 0.5
                conv.weight.copy_((torch.rand(conv.weight.shape, generator=gen) * 2 - 1) * bound * 3 ** 0.5)
                conv.bias.zero_()
            layers.append(conv)
            c = w
        self.layers = nn.ModuleList(layers)
        self.requires_grad_(False)

    def forward(self, x):
        feats = []
        for conv in self.layers:
            x = F.leaky_relu(conv(x), 0.2)
            feats.append(x)
        return feats


def perceptual_loss(a, b, extractor) -> torch.Tensor:
    """Mean squared distance between extractor features, averaged over returned maps."""
    if a.shape != b.shape:
        raise ValueError(f"perceptual loss shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    fa, fb = extractor(a), extractor(b)
    if isinstance(fa, torch.Tensor):
        fa, fb = [fa], [fb]
    return sum(((x - y) ** 2).mean() for x, y in zip(fa, fb)) / len(fa)


def reg_loss(generated, reference) -> torch.Tensor:
    """``1 - mean |generated - reference|`` over channels and pixels (and the batch)."""
    if generated.shape != reference.shape:
        raise ValueError(f"reg loss shape mismatch: {tuple(generated.shape)} vs {tuple(reference.shape)}")
    return 1 - (generated - reference).abs().mean()


def _batch_nll(sim):
    """Matched-diagonal NLL of a (B, B) similarity matrix, image->text plus text->image."""
    target = torch.arange(sim.shape[0])
    return F.cross_entropy(sim, target) + F.cross_entropy(sim.t(), target)


def word_region_similarity(regions, words, word_mask):
    """Pooled word-context relevance for every (image i, caption j) pair -> (B, B)."""
    b = regions.shape[0]
    # attention of each word of caption j over regions of image i: (Bi, Bj, T, N)
    scores = torch.einsum("jtd,ind->ijtn", words, regions)
    attn = torch.softmax(GAMMA_REGION * scores, dim=-1)
    context = torch.einsum("ijtn,ind->ijtd", attn, regions)
    rel = F.cosine_similarity(context, words[None].expand(b, -1, -1, -1), dim=-1, eps=1e-8)
    rel = rel.masked_fill(~word_mask[None], float("-inf"))
    return torch.logsumexp(GAMMA_WORDS * rel, dim=-1) / GAMMA_WORDS


def damsm_from_features(regions, global_feat, words, word_mask, sentence):
    """Symmetric batch-contrastive matching loss; returns (total, sentence term, word term)."""
    if regions.shape[0] < 2:
        raise ValueError("matching loss needs a batch of at least 2")
    sent = _batch_nll(GAMMA_BATCH * cosine_matrix(global_feat, sentence))
    word = _batch_nll(GAMMA_BATCH * word_region_similarity(regions, words, word_mask))
    return sent + word, sent, word


def damsm_loss(images, words, word_mask, sentence, image_encoder):
    regions, global_feat = image_encoder(images)
    return damsm_from_features(regions, global_feat, words, word_mask, sentence)[0]


def correlation_score(images, sentence, discriminator) -> torch.Tensor:
    """Text-image correlation in (0, 1) from the discriminator's conditional head."""
    return discriminator.correlation(images, sentence)


def _nonsat(score):
    return -torch.log(score.clamp(EPS, 1 - EPS)).mean()


def combine(components: dict, weights: dict | None = None) -> torch.Tensor:
    for name, value in components.items():
        if not torch.isfinite(value).all():
            raise FloatingPointError(f"non-finite loss component {name!r}")
    weights = weights or {}
    return sum(weights.get(k, 1.0) * v for k, v in components.items())


def gn_generator_loss(fake_scores, correlation, damsm, generated, reference, extractor,
                      masks_pred=None, masks_true=None, weights=None):
    """Sum of adversarial (all stages), perceptual, (1 - correlation), matching and reg terms.

    ``masks_pred``/``masks_true`` add an alpha-supervision term per stage.
    Returns ``(total, components)``.
    """
    comp = {
        "adv": sum(_nonsat(s) for s in fake_scores),
        "per": perceptual_loss(generated, reference, extractor),
        "cor": (1 - correlation).mean(),
        "damsm": damsm,
        "reg": reg_loss(generated, reference),
    }
    if masks_pred is not None:
        comp["mask"] = sum(F.binary_cross_entropy(p.clamp(EPS, 1 - EPS), t)
                           for p, t in zip(masks_pred, masks_true)) / len(masks_pred)
    return combine(comp, weights), comp


def gn_discriminator_loss(real_scores, fake_scores, cor_matched, cor_mismatched, weights=None):
    """Adversarial terms over stages plus ``(1 - cor(fake, S)) + cor(fake, S')``."""
    if cor_matched.numel() < 1 or cor_mismatched.numel() < 1:
        raise ValueError("correlation terms need at least one pair")
    adv = sum((-torch.log(r.clamp(EPS, 1 - EPS)) - torch.log(1 - f.clamp(EPS, 1 - EPS))).mean()
              for r, f in zip(real_scores, fake_scores))
    comp = {"adv": adv, "cor": (1 - cor_matched).mean() + cor_mismatched.mean()}
    return combine(comp, weights), comp
