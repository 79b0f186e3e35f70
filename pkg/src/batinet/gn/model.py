"""Three-stage text- and position-conditioned generator, per-stage discriminators, and the model wrapper."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .. import checkpoint
from ..text import VOCAB
from .encoders import ImageEncoder, TextEmbedding, TextEncoder
from .losses import RandomConvExtractor
from .modules import TrAcm, WordAttention

N_STAGES = 3


class StageError(FloatingPointError):
    pass


@dataclass
class StageOutputs:
    images: list      # 3 arrays (3, R_k, R_k): unpremultiplied foreground colour
    fg_masks: list    # 3 arrays (R_k, R_k): foreground alpha

    @property
    def foregrounds(self):
        """Premultiplied foreground per stage."""
        return [img * m[None] for img, m in zip(self.images, self.fg_masks)]


def _upconv(cin, cout):
    return nn.Sequential(nn.Upsample(scale_factor=2, mode="nearest"),
                         nn.Conv2d(cin, cout, 3, 1, 1), nn.LeakyReLU(0.2))


def _resize_map(m, size):
    """(B, h, w) -> (B, size, size), bilinear, clamped to [0, 1]."""
    if m.shape[-1] == size:
        return m
    return F.interpolate(m[:, None], size=(size, size), mode="bilinear",
                         align_corners=False)[:, 0].clamp(0, 1)


class Stage(nn.Module):
    def __init__(self, channels, text_dim, visual_channels, attend):
        super().__init__()
        self.attention = WordAttention(text_dim, channels) if attend else None
        if attend:
            self.fuse = nn.Sequential(nn.Conv2d(2 * channels, channels, 3, 1, 1), nn.LeakyReLU(0.2))
        self.visual = nn.Sequential(nn.Conv2d(1, visual_channels, 3, 1, 1), nn.LeakyReLU(0.2))
        self.acm = TrAcm(channels, visual_channels)
        self.rgb = nn.Conv2d(channels, 3, 3, 1, 1)
        self.alpha = nn.Conv2d(channels, 1, 3, 1, 1)

    def forward(self, h, grid_map, relevance, words, word_mask):
        if self.attention is not None:
            ctx, _ = self.attention(words, h, word_mask)
            h = self.fuse(torch.cat([h, ctx], 1))
        h = self.acm(h, self.visual(grid_map[:, None]), relevance)
        return h, torch.sigmoid(self.rgb(h)), torch.sigmoid(self.alpha(h))[:, 0]


class GnGenerator(nn.Module):
    """Stage 0 decodes [noise, sentence, flattened grid]; stages 1-2 upsample, attend to words, and refine.

    Each stage's tr-ACM uses the position grid as its visual input. Relevance is
    the grid itself at stage 0 and the previous stage's predicted alpha after.
    """

    def __init__(self, text_dim=64, noise_dim=64, grid=16, r0=16, channels=(48, 32, 16),
                 visual_channels=8):
        super().__init__()
        self.noise_dim, self.grid, self.r0 = noise_dim, grid, r0
        c0 = channels[0]
        self.fc = nn.Sequential(nn.Linear(noise_dim + text_dim + grid * grid, c0 * 16), nn.LeakyReLU(0.2))
        ups, r = [], 4
        while r < r0:
            ups.append(_upconv(c0, c0))
            r *= 2
        self.ups0 = nn.Sequential(*ups)
        self.stages = nn.ModuleList([Stage(channels[0], text_dim, visual_channels, attend=False)])
        self.lift = nn.ModuleList()
        for k in range(1, N_STAGES):
            self.lift.append(_upconv(channels[k - 1], channels[k]))
            self.stages.append(Stage(channels[k], text_dim, visual_channels, attend=True))

    @property
    def resolutions(self):
        return tuple(self.r0 * 2 ** k for k in range(N_STAGES))

    def forward(self, words, word_mask, sentence, grid, noise):
        b = noise.shape[0]
        x = torch.cat([noise, sentence, grid.reshape(b, -1)], 1)
        h = self.ups0(self.fc(x).view(b, -1, 4, 4))
        images, masks = [], []
        relevance = _resize_map(grid, self.r0)
        for k, stage in enumerate(self.stages):
            if k > 0:
                h = self.lift[k - 1](h)
                relevance = _resize_map(masks[-1], h.shape[-1])
            h, rgb, alpha = stage(h, _resize_map(grid, h.shape[-1]), relevance, words, word_mask)
            if not (torch.isfinite(rgb).all() and torch.isfinite(alpha).all()):
                raise StageError(f"non-finite activations at stage {k}")
            images.append(rgb)
            masks.append(alpha)
        return images, masks


class StageDiscriminator(nn.Module):
    """Global image feature with an unconditional real/fake head and a text-correlation head."""

    def __init__(self, resolution, text_dim=64, feat_dim=64, width=16):
        super().__init__()
        layers, c, r = [], 3, resolution
        while r > 4:
            layers += [nn.Conv2d(c, width, 4, 2, 1), nn.LeakyReLU(0.2)]
            c, width, r = width, min(2 * width, 64), r // 2
        layers += [nn.Conv2d(c, feat_dim, 4, 1, 0), nn.LeakyReLU(0.2)]
        self.trunk = nn.Sequential(*layers)
        self.uncond = nn.Linear(feat_dim, 1)
        self.text_proj = nn.Linear(text_dim, feat_dim, bias=False)

    def features(self, images):
        return self.trunk(images).flatten(1)

    def forward(self, images):
        return torch.sigmoid(self.uncond(self.features(images)))[:, 0]

    def correlation(self, images, sentence):
        return torch.sigmoid((self.features(images) * self.text_proj(sentence)).sum(-1))


class Gn:
    """All generation-network parameters plus checkpoint I/O."""

    kind = "gn"

    def __init__(self, resolution: int = 64, grid: int = 16, text_dim: int = 64, noise_dim: int = 64,
                 seed: int = 0):
        if resolution % 16:
            raise ValueError("final resolution must be a multiple of 16")
        torch.manual_seed(seed)
        self.resolution, self.grid, self.text_dim, self.noise_dim, self.seed = (
            resolution, grid, text_dim, noise_dim, seed)
        r0 = resolution // 4
        self.text_encoder = TextEncoder(len(VOCAB), text_dim)
        self.image_encoder = ImageEncoder(text_dim, resolution=resolution)
        self.generator = GnGenerator(text_dim, noise_dim, grid, r0)
        self.discriminators = nn.ModuleList(
            [StageDiscriminator(r, text_dim) for r in self.generator.resolutions])
        self.extractor = RandomConvExtractor(seed)
        self.history = None

    @property
    def resolutions(self):
        return self.generator.resolutions

    @property
    def meta(self):
        return {"kind": self.kind, "resolution": self.resolution, "grid": self.grid,
                "text_dim": self.text_dim, "noise_dim": self.noise_dim, "seed": self.seed,
                "resolutions": list(self.resolutions), "vocab_size": len(VOCAB)}

    def modules(self):
        return {"text_encoder": self.text_encoder, "image_encoder": self.image_encoder,
                "generator": self.generator, "discriminators": self.discriminators}

    def save(self, path, extra=None):
        arrays = {}
        for name, mod in self.modules().items():
            arrays.update(checkpoint.module_arrays(mod, name))
        return checkpoint.save(path, arrays, {**self.meta, **(extra or {})})

    @classmethod
    def load(cls, path):
        arrays, meta = checkpoint.load(path, kind=cls.kind)
        if meta.get("vocab_size") != len(VOCAB):
            raise checkpoint.CheckpointError(f"{path}: vocabulary size mismatch")
        model = cls(meta["resolution"], meta["grid"], meta["text_dim"], meta["noise_dim"], meta["seed"])
        for name, mod in model.modules().items():
            checkpoint.load_module(mod, arrays, name)
        return model

    def eval(self):
        for mod in self.modules().values():
            mod.eval()
        return self

    def double(self):
        for mod in self.modules().values():
            mod.double()
        self.extractor.double()
        return self


def gn_forward(model: Gn, text: TextEmbedding, pos, noise) -> StageOutputs:
    """Generate the three stages for one caption embedding and position vector."""
    noise = np.asarray(noise, dtype=np.float64).reshape(-1)
    if noise.shape[0] != model.noise_dim:
        raise ValueError(f"noise must have length {model.noise_dim}")
    grid = np.asarray(pos.grid, dtype=np.float64)
    if grid.shape != (model.grid, model.grid):
        raise ValueError(f"position grid must be {model.grid}x{model.grid}, got {grid.shape}")
    dtype = next(model.generator.parameters()).dtype
    t = lambda a: torch.as_tensor(np.asarray(a), dtype=dtype)[None]
    words = t(text.words)
    mask = torch.ones(1, words.shape[1], dtype=torch.bool)
    model.generator.eval()
    with torch.no_grad():
        images, masks = model.generator(words, mask, t(text.sentence), t(grid), t(noise))
    return StageOutputs([i[0].double().numpy() for i in images], [m[0].double().numpy() for m in masks])
