import numpy as np
import pytest
import torch
import torch.nn as nn

from batinet.gn import (Gn, RandomConvExtractor, damsm_from_features, encode_text,
                        gn_discriminator_loss, gn_forward, gn_generator_loss, perceptual_loss,
                        reg_loss, tr_acm, train_gn, word_attention)
from batinet.gn.encoders import TextEncoder, pad_tokens
from batinet.gn.losses import combine
from batinet.gn.model import StageError
from batinet.gn.train import GnBatchData
from batinet.pdn import fallback_position, grid_from_box
from batinet.text import caption_for, tokenize
from batinet.training import GnTrainConfig, TrainingError

import oracles

D = torch.float64


def test_word_attention_matches_loop(rng):
    words = torch.as_tensor(rng.normal(size=(1, 5, 6)))
    hidden = torch.as_tensor(rng.normal(size=(1, 4, 3, 3)))
    proj = nn.Linear(6, 4, bias=False).double()
    mask = torch.tensor([[True, True, True, False, False]])
    _, weights = word_attention(words, hidden, proj, mask)
    ref = oracles.attention(words[0].numpy(), hidden[0].numpy(), proj.weight.detach().numpy(), 3)
    np.testing.assert_allclose(weights[0, :, :3].detach().numpy(), ref, atol=1e-12)
    assert torch.all(weights[0, :, 3:] == 0)


def test_word_attention_empty_caption():
    with pytest.raises(ValueError, match="empty"):
        word_attention(torch.zeros(1, 0, 4), torch.zeros(1, 2, 2, 2), nn.Linear(4, 2))


def test_tr_acm_formula(rng):
    h = torch.as_tensor(rng.normal(size=(2, 3, 4, 4)))
    v = torch.as_tensor(rng.normal(size=(2, 3, 4, 4)))
    r = torch.as_tensor(rng.uniform(size=(2, 4, 4)))
    out = tr_acm(h, v, r, lambda x: 2 * x, lambda x: x + 1)
    expect = r[:, None] * (h * 2 * v + v + 1) + (1 - r[:, None]) * h
    torch.testing.assert_close(out, expect, rtol=0, atol=1e-14)


def test_tr_acm_shape_mismatch():
    with pytest.raises(ValueError, match="mismatch"):
        tr_acm(torch.zeros(1, 2, 4, 4), torch.zeros(1, 2, 3, 3), torch.zeros(1, 4, 4),
               lambda x: x, lambda x: x)


def test_reg_loss_matches_loop(rng):
    a, b = rng.uniform(size=(2, 3, 4, 4)), rng.uniform(size=(2, 3, 4, 4))
    assert reg_loss(torch.as_tensor(a), torch.as_tensor(b)).item() == pytest.approx(oracles.reg(a, b), abs=1e-12)
    x = torch.as_tensor(a)
    assert reg_loss(x, x).item() == 1.0


def test_perceptual_loss_zero_iff_equal(rng):
    ex = RandomConvExtractor(0).double()
    a = torch.as_tensor(rng.uniform(size=(2, 3, 16, 16)))
    assert perceptual_loss(a, a, ex).item() == 0.0
    assert perceptual_loss(a, a.flip(-1), ex).item() > 0
    with pytest.raises(ValueError):
        perceptual_loss(a, a[:, :, :8], ex)


def test_perceptual_loss_single_map_extractor(rng):
    a = torch.as_tensor(rng.uniform(size=(1, 3, 4, 4)))
    b = torch.as_tensor(rng.uniform(size=(1, 3, 4, 4)))
    assert perceptual_loss(a, b, lambda x: x).item() == pytest.approx(((a - b) ** 2).mean().item())


def test_random_extractor_is_frozen_and_seeded():
    a, b = RandomConvExtractor(3), RandomConvExtractor(3)
    assert all(not p.requires_grad for p in a.parameters())
    for p, q in zip(a.parameters(), b.parameters()):
        assert torch.equal(p, q)


def _damsm_inputs(rng, b=3, n=4, t=5, d=6):
    lengths = [5, 3, 4][:b]
    regions = rng.normal(size=(b, n, d))
    glob = rng.normal(size=(b, d))
    words = rng.normal(size=(b, t, d)) * 0.5
    sentence = rng.normal(size=(b, d))
    return regions, glob, words, lengths, sentence


def test_damsm_matches_loop(rng):
    regions, glob, words, lengths, sentence = _damsm_inputs(rng)
    mask = torch.arange(5)[None] < torch.tensor(lengths)[:, None]
    t = torch.as_tensor
    total, _, _ = damsm_from_features(t(regions), t(glob), t(words), mask, t(sentence))
    ref = oracles.damsm(regions, glob, words, lengths, sentence)
    assert total.item() == pytest.approx(ref, abs=1e-9)


def test_damsm_padding_is_ignored(rng):
    regions, glob, words, lengths, sentence = _damsm_inputs(rng)
    mask = torch.arange(5)[None] < torch.tensor(lengths)[:, None]
    t = torch.as_tensor
    a = damsm_from_features(t(regions), t(glob), t(words), mask, t(sentence))[0]
    words[1, 3:] = 99.0
    b = damsm_from_features(t(regions), t(glob), t(words), mask, t(sentence))[0]
    assert a.item() == pytest.approx(b.item(), abs=1e-12)


def test_damsm_needs_batch_of_two(rng):
    with pytest.raises(ValueError):
        damsm_from_features(torch.zeros(1, 4, 3), torch.zeros(1, 3), torch.zeros(1, 2, 3),
                            torch.ones(1, 2, dtype=torch.bool), torch.zeros(1, 3))


def test_gn_discriminator_loss_matches_loop(rng):
    real = [rng.uniform(size=4) for _ in range(3)]
    fake = [rng.uniform(size=4) for _ in range(3)]
    cm, cx = rng.uniform(size=4), rng.uniform(size=4)
    t = lambda xs: [torch.as_tensor(x) for x in xs]
    got, comp = gn_discriminator_loss(t(real), t(fake), torch.as_tensor(cm), torch.as_tensor(cx),
                                      {"adv": 0.5, "cor": 2.0})
    assert got.item() == pytest.approx(oracles.gn_discriminator(real, fake, cm, cx, 0.5, 2.0), abs=1e-9)
    assert set(comp) == {"adv", "cor"}


def test_gn_generator_loss_components(rng):
    ex = RandomConvExtractor(0).double()
    gen = torch.as_tensor(rng.uniform(size=(2, 3, 16, 16)))
    ref = torch.as_tensor(rng.uniform(size=(2, 3, 16, 16)))
    scores = [torch.as_tensor(rng.uniform(size=2)) for _ in range(3)]
    cor = torch.as_tensor(rng.uniform(size=2))
    damsm = torch.tensor(1.25, dtype=D)
    total, comp = gn_generator_loss(scores, cor, damsm, gen, ref, ex)
    assert set(comp) == {"adv", "per", "cor", "damsm", "reg"}
    adv = sum(sum(-np.log(oracles.clamp(v)) for v in s.numpy()) / 2 for s in scores)
    assert comp["adv"].item() == pytest.approx(adv, abs=1e-9)
    assert comp["cor"].item() == pytest.approx(float((1 - cor).mean()))
    assert comp["reg"].item() == pytest.approx(oracles.reg(gen.numpy(), ref.numpy()), abs=1e-9)
    assert total.item() == pytest.approx(sum(v.item() for v in comp.values()))
    weights = {"adv": 0.0, "per": 2.0, "cor": 0.0, "damsm": 0.0, "reg": 0.0}
    total_w, _ = gn_generator_loss(scores, cor, damsm, gen, ref, ex, weights=weights)
    assert total_w.item() == pytest.approx(2 * comp["per"].item())


def test_combine_names_bad_component():
    with pytest.raises(FloatingPointError, match="'per'"):
        combine({"adv": torch.tensor(1.0), "per": torch.tensor(float("inf"))})


def test_text_encoder_shapes_and_padding_invariance():
    enc = TextEncoder(dim=8)
    a, b = caption_for("red", "ellipse"), tokenize("a small blue triangle bird on the perch")
    words, sentence, mask = enc.encode([a, b])
    assert words.shape == (2, len(b.tokens), 8) and sentence.shape == (2, 8)
    assert mask.sum(1).tolist() == [len(a.tokens), len(b.tokens)]
    _, solo, _ = enc.encode([a])
    torch.testing.assert_close(solo[0], sentence[0], rtol=0, atol=1e-6)


def test_pad_tokens():
    ids, lengths = pad_tokens([tokenize("a bird"), tokenize("a red bird")])
    assert ids.shape == (2, 3) and ids[0, 2] == 0 and lengths.tolist() == [2, 3]


def test_generator_stage_shapes(tiny_gn, caption):
    text = encode_text(caption, tiny_gn.text_encoder)
    out = gn_forward(tiny_gn, text, fallback_position(16), np.zeros(64))
    assert [i.shape for i in out.images] == [(3, 4, 4), (3, 8, 8), (3, 16, 16)]
    assert [m.shape for m in out.fg_masks] == [(4, 4), (8, 8), (16, 16)]
    assert all(0 <= m.min() and m.max() <= 1 for m in out.fg_masks)


def test_generator_64_resolutions():
    assert Gn(64).resolutions == (16, 32, 64)


def test_gn_forward_validates(tiny_gn, caption):
    text = encode_text(caption, tiny_gn.text_encoder)
    with pytest.raises(ValueError, match="noise"):
        gn_forward(tiny_gn, text, fallback_position(16), np.zeros(3))
    with pytest.raises(ValueError, match="grid"):
        gn_forward(tiny_gn, text, fallback_position(8), np.zeros(64))


def test_generator_reports_bad_stage(tiny_gn, caption):
    text = encode_text(caption, tiny_gn.text_encoder)
    pos = fallback_position(16)
    pos.grid = np.full((16, 16), np.nan)
    with pytest.raises(StageError, match="stage 0"):
        gn_forward(tiny_gn, text, pos, np.zeros(64))


def test_position_changes_output(tiny_gn, caption):
    text = encode_text(caption, tiny_gn.text_encoder)
    a = fallback_position(16)
    b = fallback_position(16)
    b.grid = grid_from_box((0.0, 0.0, 0.3, 0.3))
    out_a = gn_forward(tiny_gn, text, a, np.zeros(64))
    out_b = gn_forward(tiny_gn, text, b, np.zeros(64))
    assert not np.allclose(out_a.fg_masks[-1], out_b.fg_masks[-1])


def test_discriminator_heads(tiny_gn, rng):
    d = tiny_gn.discriminators[-1]
    x = torch.rand(2, 3, 16, 16)
    assert d(x).shape == (2,)
    c = d.correlation(x, torch.randn(2, 64))
    assert c.shape == (2,) and torch.all((c > 0) & (c < 1))


def test_gn_checkpoint_roundtrip(tmp_path, tiny_gn, caption):
    back = Gn.load(tiny_gn.save(tmp_path / "g.npz"))
    text = encode_text(caption, tiny_gn.text_encoder)
    a = gn_forward(tiny_gn, text, fallback_position(16), np.ones(64))
    b = gn_forward(back, encode_text(caption, back.text_encoder), fallback_position(16), np.ones(64))
    np.testing.assert_array_equal(a.images[-1], b.images[-1])


def test_mismatched_prefers_other_caption(scenes64):
    model = Gn(16, seed=0)
    data = GnBatchData(scenes64, model, None, oracle_pos=True)
    idx = list(range(len(scenes64)))
    mis = data.mismatched(idx, np.random.default_rng(0)).tolist()
    for a, b in zip(idx, mis):
        assert a != b
        if len(set(data.texts)) > 1 and any(data.texts[x] != data.texts[a] for x in idx):
            assert data.texts[b] != data.texts[a]


def test_train_gn_small(tmp_path, scenes64):
    cfg = GnTrainConfig(seed=0, epochs=2, batch_size=4, resolution=16, pretrain_epochs=1,
                        oracle_pos=True, out=str(tmp_path / "g.npz"), checkpoint_every=1)
    model = train_gn(scenes64, None, cfg)
    assert (tmp_path / "g.npz").exists() and (tmp_path / "g.epoch0001.npz").exists()
    g = model.history.steps("G")
    assert set(g[0]) >= {"adv", "per", "cor", "damsm", "reg", "mask"}
    assert model.history.steps("P")
    assert all(not p.requires_grad for p in model.text_encoder.parameters())


def test_train_gn_requires_pdn(scenes64):
    with pytest.raises(TrainingError, match="PDN"):
        train_gn(scenes64, None, GnTrainConfig(epochs=1, resolution=16))
    with pytest.raises(TrainingError, match="batch size"):
        train_gn(scenes64, None, GnTrainConfig(epochs=1, resolution=16, batch_size=1, oracle_pos=True))


def test_train_config_validates_weights():
    with pytest.raises(ValueError, match="unknown loss"):
        GnTrainConfig(weights={"style": 1.0})
    assert GnTrainConfig(weights={"adv": 2}).weights["adv"] == 2.0
