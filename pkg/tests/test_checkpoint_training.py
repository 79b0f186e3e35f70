import json

import numpy as np
import pytest
import torch

from batinet import checkpoint, training
from batinet.gradcheck import check_gradients
from batinet.gn import Gn
from batinet.pdn import Pdn


def test_checkpoint_meta_and_keys(tmp_path):
    Pdn(32).save(tmp_path / "p.npz", {"epoch": 3})
    arrays, meta = checkpoint.load(tmp_path / "p.npz", kind="pdn")
    assert meta["format_version"] == 1 and meta["epoch"] == 3 and meta["grid"] == 16
    assert "generator.enc1.0.weight" in arrays
    assert any(k.startswith("discriminator.") for k in arrays)


def test_checkpoint_kind_mismatch(tmp_path):
    Pdn(32).save(tmp_path / "p.npz")
    with pytest.raises(checkpoint.CheckpointError, match="expected a 'gn'"):
        Gn.load(tmp_path / "p.npz")


def test_checkpoint_unreadable(tmp_path):
    (tmp_path / "bad.npz").write_bytes(b"garbage")
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.load(tmp_path / "bad.npz")


def test_checkpoint_missing_layer(tmp_path):
    arrays = checkpoint.module_arrays(torch.nn.Linear(2, 2), "m")
    arrays.pop("m.bias")
    with pytest.raises(checkpoint.CheckpointError, match="missing"):
        checkpoint.load_module(torch.nn.Linear(2, 2), arrays, "m")


def test_gn_vocab_guard(tmp_path):
    gn = Gn(16)
    arrays = {}
    for name, mod in gn.modules().items():
        arrays.update(checkpoint.module_arrays(mod, name))
    checkpoint.save(tmp_path / "g.npz", arrays, {**gn.meta, "vocab_size": 3})
    with pytest.raises(checkpoint.CheckpointError, match="vocabulary"):
        Gn.load(tmp_path / "g.npz")


def test_loss_log_roundtrip(tmp_path):
    log = training.LossLog(tmp_path / "l.jsonl")
    log.add(phase="G", loss=torch.tensor(1.5), epoch=0)
    log.add(phase="D", loss=np.float64(0.5), epoch=0)
    assert log.last("G") == 1.5
    recs = [json.loads(x) for x in (tmp_path / "l.jsonl").read_text().splitlines()]
    assert recs[1] == {"phase": "D", "loss": 0.5, "epoch": 0}


def test_iter_batches_covers_all():
    rng = np.random.default_rng(0)
    seen = np.concatenate(list(training.iter_batches(10, 3, rng)))
    assert sorted(seen) == list(range(10))
    assert training.n_batches(10, 3) == 4


def test_require_finite():
    with pytest.raises(training.TrainingError):
        training.require_finite("x", torch.tensor(float("nan")))


def test_config_validation():
    with pytest.raises(ValueError):
        training.PdnTrainConfig(pdn_input="sketch")
    with pytest.raises(ValueError):
        training.GnTrainConfig(resolution=40)
    assert training.TrainConfig(betas=[0.5, 0.9]).betas == (0.5, 0.9)


def test_gradcheck_on_closed_form():
    w = torch.nn.Parameter(torch.tensor([0.3, -1.2, 2.0], dtype=torch.float64))
    samples = check_gradients(lambda: (w ** 3).sum(), {"w": [("w", w)]}, n_per_block=3)
    assert len(samples) == 3
    for s in samples:
        assert s.analytic == pytest.approx(3 * w[s.index].item() ** 2)
        assert s.rel_error < 1e-7


def test_gradcheck_detects_wrong_gradient():
    w = torch.nn.Parameter(torch.tensor([0.7], dtype=torch.float64))

    class Wrong(torch.autograd.Function):
        @staticmethod
        def forward(ctx, x):
            return x ** 2

        @staticmethod
        def backward(ctx, g):
            return g

    samples = check_gradients(lambda: Wrong.apply(w).sum(), {"w": [("w", w)]}, n_per_block=1)
    assert samples[0].rel_error > 0.1


def test_gradcheck_flags_kink_crossings():
    w = torch.nn.Parameter(torch.tensor([5e-5, 0.5], dtype=torch.float64))
    samples = check_gradients(lambda: w.abs().sum(), {"w": [("w", w)]}, n_per_block=2,
                              stability_tol=1e-4)
    by_index = {s.index: s for s in samples}
    assert by_index[0].unstable and by_index[0].rel_error > 0.1
    assert by_index[0].rel_error_fine < 1e-9
    assert not by_index[1].unstable and by_index[1].rel_error < 1e-9
