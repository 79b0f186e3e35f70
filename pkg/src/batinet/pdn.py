"""Position Detect Network: a pix2pix-style generator mapping a background to an object mask.

The predicted mask and the generator's bottleneck activation are turned into a
:class:`PositionVector` (soft occupancy grid, bounding box, feature).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import checkpoint, imaging
from .training import (LossLog, PdnTrainConfig, TrainingError, iter_batches, require_finite,
                       seed_everything)

log = logging.getLogger(__name__)

EPS = 1e-7
GRID = 16
FALLBACK_BOX = (0.25, 0.25, 0.75, 0.75)


@dataclass
class PositionVector:
    grid: np.ndarray       # (G, G) in [0, 1]
    box: tuple             # normalized (x0, y0, x1, y1)
    feature: np.ndarray    # flattened bottleneck
    degenerate: bool = False


def fallback_position(grid_size: int = GRID, feature_dim: int = 0) -> PositionVector:
    """Centered half-size box with a uniform grid; used when no detection is available."""
    return PositionVector(np.full((grid_size, grid_size), 1.0), FALLBACK_BOX,
                          np.zeros(feature_dim), degenerate=True)


def box_from_grid(grid: np.ndarray) -> tuple:
    g = grid.shape[0]
    rows = np.flatnonzero(grid.max(axis=1) > 0)
    cols = np.flatnonzero(grid.max(axis=0) > 0)
    return (cols[0] / g, rows[0] / g, (cols[-1] + 1) / g, (rows[-1] + 1) / g)


def grid_from_box(box, grid_size: int = GRID) -> np.ndarray:
    """Fraction of each grid cell covered by ``box``."""
    edges = np.arange(grid_size + 1) / grid_size
    cover_x = np.clip(np.minimum(edges[1:], box[2]) - np.maximum(edges[:-1], box[0]), 0, None) * grid_size
    cover_y = np.clip(np.minimum(edges[1:], box[3]) - np.maximum(edges[:-1], box[1]), 0, None) * grid_size
    return np.outer(cover_y, cover_x)


def extract_position(mask_pred, bottleneck=None, threshold: float = 0.5,
                     grid_size: int = GRID) -> PositionVector:
    mask = np.asarray(mask_pred, dtype=np.float64)
    h, w = mask.shape
    grid = F.adaptive_avg_pool2d(torch.as_tensor(mask)[None, None], grid_size)[0, 0].numpy()
    grid = np.clip(grid, 0.0, 1.0)
    feature = np.zeros(0) if bottleneck is None else np.asarray(bottleneck, dtype=np.float64).reshape(-1)
    on = mask >= threshold
    if not on.any():
        return PositionVector(grid, FALLBACK_BOX, feature, degenerate=True)
    rows = np.flatnonzero(on.any(axis=1))
    cols = np.flatnonzero(on.any(axis=0))
    box = (cols[0] / w, rows[0] / h, (cols[-1] + 1) / w, (rows[-1] + 1) / h)
    return PositionVector(grid, box, feature)


# ---------------------------------------------------------------------------
# networks


def _down(cin, cout):
    return nn.Sequential(nn.Conv2d(cin, cout, 4, 2, 1), nn.LeakyReLU(0.2))


def _up(cin, cout, dropout):
    layers = [nn.ConvTranspose2d(cin, cout, 4, 2, 1), nn.ReLU()]
    if dropout:
        layers.append(nn.Dropout(0.5))
    return nn.Sequential(*layers)


class PdnGenerator(nn.Module):
    """U-Net with four stride-2 stages; dropout in the decoder stands in for the noise input."""

    def __init__(self, resolution: int = 32, width: int = 16):
        super().__init__()
        if resolution % 16:
            raise ValueError("resolution must be a multiple of 16")
        self.resolution = resolution
        c1, c2, c3 = width, 2 * width, 4 * width
        self.enc1 = _down(3, c1)
        self.enc2 = _down(c1, c2)
        self.enc3 = _down(c2, c3)
        self.enc4 = _down(c3, c3)
        self.dec1 = _up(c3, c3, dropout=True)
        self.dec2 = _up(2 * c3, c2, dropout=True)
        self.dec3 = _up(2 * c2, c1, dropout=False)
        self.dec4 = nn.ConvTranspose2d(2 * c1, 1, 4, 2, 1)

    @property
    def feature_dim(self):
        return self.enc4[0].out_channels * (self.resolution // 16) ** 2

    def forward(self, x):
        if x.shape[-2:] != (self.resolution, self.resolution):
            raise ValueError(f"PDN expects {self.resolution}x{self.resolution} input, got "
                             f"{tuple(x.shape[-2:])}")
        e1 = self.enc1(x)
        e2 = self.enc2(e1)
        e3 = self.enc3(e2)
        e4 = self.enc4(e3)
        d = self.dec1(e4)
        d = self.dec2(torch.cat([d, e3], 1))
        d = self.dec3(torch.cat([d, e2], 1))
        logits = self.dec4(torch.cat([d, e1], 1))
        return torch.sigmoid(logits)[:, 0], e4.flatten(1)


class PdnDiscriminator(nn.Module):
    """Patch classifier over the concatenated (image, mask) pair."""

    def __init__(self, width: int = 16):
        super().__init__()
        self.net = nn.Sequential(
            _down(4, width), _down(width, 2 * width), _down(2 * width, 4 * width),
            nn.Conv2d(4 * width, 1, 3, 1, 1))

    def forward(self, image, mask):
        return torch.sigmoid(self.net(torch.cat([image, mask[:, None]], 1)))[:, 0]


# ---------------------------------------------------------------------------
# losses


def _clamp(score):
    return score.clamp(EPS, 1 - EPS)


def _require_no_nan(*tensors):
    for t in tensors:
        if torch.isnan(t).any():
            raise ValueError("NaN in loss input")


def l1_term(mask_pred, mask_true):
    return (mask_pred - mask_true).abs().mean()


def pdn_generator_loss(mask_pred, mask_true, disc_score, l1_weight: float = 1.0):
    """Non-saturating adversarial term plus mean absolute mask error."""
    _require_no_nan(mask_pred, mask_true, disc_score)
    if mask_pred.shape != mask_true.shape:
        raise ValueError(f"mask shapes differ: {tuple(mask_pred.shape)} vs {tuple(mask_true.shape)}")
    adv = -torch.log(_clamp(disc_score)).mean()
    return adv + l1_weight * l1_term(mask_pred, mask_true)


def pdn_discriminator_loss(real_score, fake_score):
    _require_no_nan(real_score, fake_score)
    return (-torch.log(_clamp(real_score)) - torch.log(1 - _clamp(fake_score))).mean()


# ---------------------------------------------------------------------------
# model wrapper


class Pdn:
    """Generator/discriminator pair with checkpoint I/O and an inference helper."""

    kind = "pdn"

    def __init__(self, resolution: int = 32, grid_size: int = GRID, width: int = 16, seed: int = 0):
        torch.manual_seed(seed)
        self.generator = PdnGenerator(resolution, width)
        self.discriminator = PdnDiscriminator(width)
        self.resolution = resolution
        self.grid_size = grid_size
        self.width = width
        self.seed = seed
        self.history = None

    @property
    def meta(self):
        return {"kind": self.kind, "resolution": self.resolution, "grid": self.grid_size,
                "feature_dim": self.generator.feature_dim, "width": self.width, "seed": self.seed}

    def save(self, path, extra=None):
        arrays = {**checkpoint.module_arrays(self.generator, "generator"),
                  **checkpoint.module_arrays(self.discriminator, "discriminator")}
        return checkpoint.save(path, arrays, {**self.meta, **(extra or {})})

    @classmethod
    def load(cls, path):
        arrays, meta = checkpoint.load(path, kind=cls.kind)
        model = cls(meta["resolution"], meta["grid"], meta["width"], meta["seed"])
        checkpoint.load_module(model.generator, arrays, "generator")
        checkpoint.load_module(model.discriminator, arrays, "discriminator")
        return model

    def forward(self, image: np.ndarray):
        """Inference-mode forward on one (3, R, R) image: (mask_pred, bottleneck)."""
        imaging.check_image(image)
        self.generator.eval()
        with torch.no_grad():
            mask, feat = self.generator(torch.as_tensor(image, dtype=torch.float32)[None])
        return mask[0].double().numpy(), feat[0].double().numpy()

    def detect(self, image: np.ndarray, threshold: float = 0.5):
        """Resize ``image`` to the PDN resolution and extract a PositionVector."""
        small = imaging.resize(image, self.resolution, self.resolution)
        mask, feat = self.forward(small)
        return mask, extract_position(mask, feat, threshold, self.grid_size)


def pdn_generator_forward(model: Pdn, image: np.ndarray, train: bool = False):
    """Forward pass; ``train=True`` enables the dropout noise."""
    if not train:
        return model.forward(image)
    model.generator.train()
    mask, feat = model.generator(torch.as_tensor(image, dtype=torch.float32)[None])
    return mask[0].detach().double().numpy(), feat[0].detach().double().numpy()


def _stack(triples, resolution, attr):
    out = []
    for t in triples:
        arr = getattr(t, attr)
        if arr.shape[-1] != resolution or arr.shape[-2] != resolution:
            arr = imaging.resize(arr, resolution, resolution)
        out.append(arr)
    return torch.as_tensor(np.stack(out), dtype=torch.float32)


def train_pdn(triples, config: PdnTrainConfig, model: Pdn | None = None) -> Pdn:
    """Alternate one discriminator step and one generator step per batch.

    The input is the inpainted background, the original image, or a per-sample
    random choice of the two (``config.pdn_input``); the target is the object mask.
    """
    rng = seed_everything(config.seed)
    if model is None:
        model = Pdn(config.resolution, seed=config.seed)
    if not triples:
        raise TrainingError("empty training set")
    r = model.resolution
    backgrounds = _stack(triples, r, "background")
    originals = _stack(triples, r, "original")
    masks = _stack(triples, r, "mask")
    masks = (masks >= 0.5).float()
    g, d = model.generator, model.discriminator
    opt_g = torch.optim.Adam(g.parameters(), lr=config.lr_g, betas=config.betas)
    opt_d = torch.optim.Adam(d.parameters(), lr=config.lr_d, betas=config.betas)
    history = LossLog(config.log_path)
    model.history = history
    g.train()
    d.train()
    step = 0
    for epoch in range(config.epochs):
        if config.pdn_input == "background":
            inputs = backgrounds
        elif config.pdn_input == "original":
            inputs = originals
        else:
            pick = torch.as_tensor(rng.random(len(triples)) < 0.5)
            inputs = torch.where(pick[:, None, None, None], originals, backgrounds)
        for idx in iter_batches(len(triples), config.batch_size, rng):
            x, y = inputs[idx], masks[idx]
            fake, _ = g(x)
            if epoch < config.warmup_epochs:
                # L1 through a sigmoid on sparse masks is drawn to the all-zero output
                # from a random start; a short BCE phase moves it past that basin.
                opt_g.zero_grad()
                loss_w = F.binary_cross_entropy(fake, y)
                _guard(model, config, "warm-up loss", loss_w)
                loss_w.backward()
                opt_g.step()
                history.add(phase="W", epoch=epoch, step=step, loss=loss_w.item())
                step += 1
                continue

            opt_d.zero_grad()
            loss_d = pdn_discriminator_loss(d(x, y), d(x, fake.detach()))
            _guard(model, config, "discriminator loss", loss_d)
            loss_d.backward()
            opt_d.step()
            history.add(phase="D", epoch=epoch, step=step, loss=loss_d.item())

            opt_g.zero_grad()
            score = d(x, fake)
            loss_g = pdn_generator_loss(fake, y, score, config.l1_weight)
            _guard(model, config, "generator loss", loss_g)
            loss_g.backward()
            opt_g.step()
            history.add(phase="G", epoch=epoch, step=step, loss=loss_g.item(),
                        l1=l1_term(fake, y).item())
            step += 1
        if epoch >= config.warmup_epochs:
            log.info("pdn epoch %d: G %.4f D %.4f", epoch, loss_g.item(), loss_d.item())
        if config.out and config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
            model.save(_epoch_path(config.out, epoch + 1), {"epoch": epoch + 1})
    if config.out:
        model.save(config.out, {"epoch": config.epochs})
    return model


def _epoch_path(out, epoch):
    p = Path(out)
    return p.with_name(f"{p.stem}.epoch{epoch:04d}{p.suffix or '.npz'}")


def _guard(model, config, name, value):
    try:
        require_finite(name, value)
    except TrainingError:
        if config.out:
            diag = Path(config.out).with_suffix(".diag.npz")
            model.save(diag, {"diagnostic": name})
            raise TrainingError(f"non-finite {name}; diagnostic checkpoint at {diag}")
        raise
