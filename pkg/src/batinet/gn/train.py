"""Training for the generation network: encoder matching pretraining, then per-batch D-step / G-step."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .. import imaging
from ..pdn import Pdn, extract_position
from ..training import (GnTrainConfig, LossLog, TrainingError, iter_batches, seed_everything)
from .encoders import length_mask, pad_tokens
from .losses import damsm_loss, gn_discriminator_loss, gn_generator_loss
from .model import Gn

log = logging.getLogger(__name__)


def _stack(arrays, size):
    out = [a if a.shape[-1] == size else imaging.resize(a, size, size) for a in arrays]
    return torch.as_tensor(np.stack(out), dtype=torch.float32)


def positions(triples, pdn: Pdn | None, grid: int, oracle: bool = False):
    """Grids (N, G, G) and boxes (N, 4) from the PDN on each background, or from the true masks."""
    grids, boxes = [], []
    for t in triples:
        if oracle or pdn is None:
            pos = extract_position(t.mask, None, grid_size=grid)
            box = t.oracle_box or pos.box
        else:
            _, pos = pdn.detect(t.background)
            box = pos.box
        grids.append(pos.grid)
        boxes.append(box)
    return torch.as_tensor(np.stack(grids), dtype=torch.float32), np.asarray(boxes)


class GnBatchData:
    """Tensors for every training sample at every stage resolution."""

    def __init__(self, triples, model: Gn, pdn: Pdn | None, oracle_pos: bool):
        r = model.resolution
        self.n = len(triples)
        self.originals = _stack([t.original for t in triples], r)
        self.backgrounds = _stack([t.background for t in triples], r)
        fg = [t.foreground for t in triples]
        masks = [t.mask for t in triples]
        self.fg = [_stack(fg, rk) for rk in model.resolutions]
        self.masks = [(_stack(masks, rk) >= 0.5).float() for rk in model.resolutions]
        self.ids, self.lengths = pad_tokens([t.caption for t in triples])
        self.texts = [t.caption.text for t in triples]
        self.grids, self.boxes = positions(triples, pdn, model.grid, oracle_pos)

    def mismatched(self, idx, rng):
        """For each batch element, another element of the batch, preferring a different caption."""
        out = []
        for a in range(len(idx)):
            others = [b for b in range(len(idx)) if b != a]
            diff = [b for b in others if self.texts[idx[b]] != self.texts[idx[a]]]
            pool = diff or others
            out.append(pool[rng.integers(len(pool))])
        return torch.as_tensor(out)


def pretrain_encoders(model: Gn, data: GnBatchData, config: GnTrainConfig, rng, history: LossLog,
                      lr: float = 2e-3):
    params = list(model.text_encoder.parameters()) + list(model.image_encoder.parameters())
    opt = torch.optim.Adam(params, lr=lr, betas=(0.9, 0.999))
    model.text_encoder.train()
    model.image_encoder.train()
    for epoch in range(config.pretrain_epochs):
        for idx in iter_batches(data.n, config.batch_size, rng):
            if len(idx) < 2:
                continue
            ids, lengths = data.ids[idx], data.lengths[idx]
            words, sentence = model.text_encoder(ids, lengths)
            loss = damsm_loss(data.originals[idx], words, length_mask(lengths, ids.shape[1]),
                              sentence, model.image_encoder)
            if not torch.isfinite(loss):
                raise TrainingError("non-finite matching pretraining loss")
            opt.zero_grad()
            loss.backward()
            opt.step()
            history.add(phase="P", epoch=epoch, loss=loss.item())
    model.text_encoder.requires_grad_(False)
    model.image_encoder.requires_grad_(False)
    model.text_encoder.eval()
    model.image_encoder.eval()


def gn_step_losses(model: Gn, data: GnBatchData, idx, noise, mismatch, weights):
    """Forward pass plus both losses for one batch; returns (loss_d, comp_d, loss_g, comp_g) pieces.

    The D loss is computed on detached fakes; the G loss is computed after the
    caller steps the discriminator, via the returned closure.
    """
    ids, lengths = data.ids[idx], data.lengths[idx]
    wmask = length_mask(lengths, ids.shape[1])
    words, sentence = model.text_encoder(ids, lengths)
    images, masks = model.generator(words, wmask, sentence, data.grids[idx], noise)
    fakes = [img * m[:, None] for img, m in zip(images, masks)]
    reals = [fg[idx] for fg in data.fg]
    final_d = model.discriminators[-1]

    def d_loss():
        real_scores = [d(r) for d, r in zip(model.discriminators, reals)]
        fake_scores = [d(f.detach()) for d, f in zip(model.discriminators, fakes)]
        cor_m = final_d.correlation(fakes[-1].detach(), sentence.detach())
        cor_x = final_d.correlation(fakes[-1].detach(), sentence.detach()[mismatch])
        return gn_discriminator_loss(real_scores, fake_scores, cor_m, cor_x,
                                     {"adv": weights["adv"], "cor": weights["cor"]})

    def g_loss():
        fake_scores = [d(f) for d, f in zip(model.discriminators, fakes)]
        cor = final_d.correlation(fakes[-1], sentence)
        alpha = masks[-1][:, None]
        composite = alpha * images[-1] + (1 - alpha) * data.backgrounds[idx]
        damsm = damsm_loss(composite, words, wmask, sentence, model.image_encoder)
        return gn_generator_loss(fake_scores, cor, damsm, fakes[-1], reals[-1], model.extractor,
                                 masks, [m[idx] for m in data.masks], weights)

    return d_loss, g_loss


def train_gn(triples, pdn: Pdn | None, config: GnTrainConfig, model: Gn | None = None) -> Gn:
    """Train text encoder, generator and discriminators; the PDN is frozen and only supplies positions."""
    rng = seed_everything(config.seed)
    if not triples:
        raise TrainingError("empty training set")
    if config.batch_size < 2:
        raise TrainingError("batch size must be at least 2 (mismatched captions come from the batch)")
    if model is None:
        model = Gn(config.resolution, seed=config.seed)
    if pdn is None and not config.oracle_pos:
        raise TrainingError("a trained PDN is required unless oracle positions are used")
    if pdn is not None and pdn.grid_size != model.grid:
        raise TrainingError(f"PDN grid {pdn.grid_size} does not match GN grid {model.grid}")
    data = GnBatchData(triples, model, pdn, config.oracle_pos)
    history = LossLog(config.log_path)
    model.history = history
    pretrain_encoders(model, data, config, rng, history)

    noise_gen = torch.Generator().manual_seed(config.seed)
    opt_g = torch.optim.Adam(model.generator.parameters(), lr=config.lr, betas=config.betas)
    opt_d = torch.optim.Adam(model.discriminators.parameters(), lr=config.lr, betas=config.betas)
    model.generator.train()
    model.discriminators.train()
    step = 0
    for epoch in range(config.epochs):
        for idx in iter_batches(data.n, config.batch_size, rng):
            if len(idx) < 2:
                continue
            idx = torch.as_tensor(idx)
            noise = torch.randn(len(idx), model.noise_dim, generator=noise_gen)
            mismatch = data.mismatched(idx.tolist(), rng)
            d_loss, g_loss = gn_step_losses(model, data, idx, noise, mismatch, config.weights)
            try:
                loss_d, comp_d = d_loss()
            except FloatingPointError as exc:
                _abort(model, config, exc)
            opt_d.zero_grad()
            loss_d.backward()
            opt_d.step()
            history.add(phase="D", epoch=epoch, step=step, loss=loss_d.item(),
                        **{k: v.item() for k, v in comp_d.items()})
            try:
                loss_g, comp_g = g_loss()
            except FloatingPointError as exc:
                _abort(model, config, exc)
            opt_g.zero_grad()
            loss_g.backward()
            opt_g.step()
            history.add(phase="G", epoch=epoch, step=step, loss=loss_g.item(),
                        **{k: v.item() for k, v in comp_g.items()})
            step += 1
        log.info("gn epoch %d: G %.4f D %.4f", epoch, loss_g.item(), loss_d.item())
        if config.out and config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
            p = Path(config.out)
            model.save(p.with_name(f"{p.stem}.epoch{epoch + 1:04d}{p.suffix or '.npz'}"),
                       {"epoch": epoch + 1})
    model.generator.eval()
    model.discriminators.eval()
    if config.out:
        model.save(config.out, {"epoch": config.epochs})
    return model


def _abort(model, config, exc):
    if config.out:
        diag = Path(config.out).with_suffix(".diag.npz")
        model.save(diag, {"diagnostic": str(exc)})
        raise TrainingError(f"{exc}; diagnostic checkpoint at {diag}") from exc
    raise TrainingError(str(exc)) from exc
