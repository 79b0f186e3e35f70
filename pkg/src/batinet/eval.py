"""Evaluation: Inception Score with a pluggable classifier, aesthetic-score slot, box IoU, reports."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import checkpoint, imaging
from .text import N_CLASSES, attribute_class, parse_attributes
from .training import iter_batches, seed_everything

SIMPLEX_TOL = 1e-6

# Reported on CUB at 256x256; shown for context only, not reproduced here.
PAPER_ROWS = {
    "MC-GAN": {"IS": 2.90, "NIMA": 5.42},
    "BGNet": {"IS": 3.00, "NIMA": 5.61},
    "Ours w/o PDN": {"IS": 3.41, "NIMA": 5.62},
    "Ours w/o HN": {"IS": 3.43, "NIMA": 5.61},
    "Ours": {"IS": 3.45, "NIMA": 5.63},
}


class MetricError(ValueError):
    pass


class Classifier(Protocol):
    def predict(self, images: np.ndarray) -> np.ndarray: ...


class Scorer(Protocol):
    def __call__(self, image: np.ndarray) -> float: ...


def _check_simplex(probs):
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise MetricError("predictions must be a (N, K) array")
    bad = (probs < 0).any(axis=1) | (np.abs(probs.sum(axis=1) - 1) > SIMPLEX_TOL)
    if bad.any():
        raise MetricError(f"prediction row {int(np.flatnonzero(bad)[0])} is not a probability vector")
    return probs


def inception_score_from_probs(probs, splits: int = 10) -> tuple:
    """exp(mean KL(p(y|x) || p(y))) per split; returns (mean, std) over splits."""
    probs = _check_simplex(probs)
    n = len(probs)
    if n < splits or splits < 1:
        raise MetricError(f"need at least {splits} predictions, got {n}")
    scores = []
    for part in np.array_split(probs, splits):
        # A column that is constant across the split is its own mean; taking it
        # directly keeps identical predictions at exactly IS = 1.
        marginal = np.where(part.min(axis=0) == part.max(axis=0), part[0], part.mean(axis=0))[None]
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(part > 0, part * (np.log(part) - np.log(marginal)), 0.0)
        scores.append(np.exp(terms.sum(axis=1).mean()))
    return float(np.mean(scores)), float(np.std(scores))


def inception_score(images, classifier: Classifier, splits: int = 10) -> tuple:
    return inception_score_from_probs(classifier.predict(np.asarray(images)), splits)


class ConstantScorer:
    """Placeholder aesthetic scorer; reports built with it are flagged as stubs."""

    stub = True

    def __init__(self, value: float = 5.0):
        self.value = value

    def __call__(self, image):
        return self.value


def aesthetic_score(images, scorer: Scorer | None = None) -> tuple:
    scorer = scorer or ConstantScorer()
    if len(images) == 0:
        raise MetricError("empty image batch")
    vals = np.asarray([float(scorer(img)) for img in images])
    return float(vals.mean()), float(vals.std())


def position_iou(a, b) -> float:
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return float(inter / union) if union > 0 else 0.0


def mask_mass_inside(mask, box) -> float:
    """Fraction of a soft mask's total mass lying inside a normalized box."""
    h, w = mask.shape
    x0, y0, x1, y1 = box
    px0, px1 = int(round(x0 * w)), int(round(x1 * w))
    py0, py1 = int(round(y0 * h)), int(round(y1 * h))
    total = mask.sum()
    return float(mask[py0:py1, px0:px1].sum() / total) if total > 0 else 0.0


def mask_iou(a, b) -> float:
    a, b = a >= 0.5, b >= 0.5
    union = (a | b).sum()
    return float((a & b).sum() / union) if union else 0.0


# ---------------------------------------------------------------------------
# attribute classifier (stands in for Inception-v3 on the synthetic data)


class AttributeNet(nn.Module):
    def __init__(self, n_classes=N_CLASSES, width=16):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(3, width, 3, 2, 1), nn.ReLU(),
            nn.Conv2d(width, 2 * width, 3, 2, 1), nn.ReLU(),
            nn.Conv2d(2 * width, 2 * width, 3, 2, 1), nn.ReLU(),
            nn.AdaptiveAvgPool2d(1), nn.Flatten(), nn.Linear(2 * width, n_classes))

    def forward(self, x):
        return self.net(x)


class AttributeClassifier:
    """Joint (colour, shape) classifier over premultiplied foreground images."""

    kind = "classifier"

    def __init__(self, resolution: int = 64, seed: int = 0):
        torch.manual_seed(seed)
        self.resolution, self.seed = resolution, seed
        self.net = AttributeNet()

    def predict(self, images) -> np.ndarray:
        x = np.stack([imaging.resize(im, self.resolution, self.resolution)
                      if im.shape[-1] != self.resolution else im for im in images])
        self.net.eval()
        with torch.no_grad():
            logits = self.net(torch.as_tensor(x, dtype=torch.float32)).double()
        return torch.softmax(logits, dim=1).numpy()

    def save(self, path, extra=None):
        return checkpoint.save(path, checkpoint.module_arrays(self.net, "net"),
                               {"kind": self.kind, "resolution": self.resolution, "seed": self.seed,
                                **(extra or {})})

    @classmethod
    def load(cls, path):
        arrays, meta = checkpoint.load(path, kind=cls.kind)
        clf = cls(meta["resolution"], meta["seed"])
        checkpoint.load_module(clf.net, arrays, "net")
        return clf


def caption_label(caption) -> int:
    color, shape = parse_attributes(caption)
    if color is None or shape is None:
        raise MetricError(f"caption {caption.text!r} names no colour/shape")
    return attribute_class(color, shape)


def train_classifier(triples, resolution: int = 64, epochs: int = 5, batch_size: int = 32,
                     seed: int = 0, lr: float = 3e-3) -> AttributeClassifier:
    rng = seed_everything(seed)
    clf = AttributeClassifier(resolution, seed)
    x = torch.as_tensor(np.stack([imaging.resize(t.foreground, resolution, resolution) for t in triples]),
                        dtype=torch.float32)
    y = torch.as_tensor([caption_label(t.caption) for t in triples])
    opt = torch.optim.Adam(clf.net.parameters(), lr=lr)
    clf.net.train()
    for _ in range(epochs):
        for idx in iter_batches(len(triples), batch_size, rng):
            loss = F.cross_entropy(clf.net(x[idx]), y[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
    clf.net.eval()
    return clf


# ---------------------------------------------------------------------------
# reports


@dataclass
class MetricReport:
    entries: dict = field(default_factory=dict)    # config -> metric -> (mean, std, n)
    metadata: dict = field(default_factory=dict)
    stub_metrics: set = field(default_factory=set)

    def add(self, config, metric, mean, std, n):
        if n <= 0:
            raise MetricError(f"{config}/{metric}: no samples")
        self.entries.setdefault(config, {})[metric] = (float(mean), float(std), int(n))

    @property
    def configs(self):
        return list(self.entries)

    @property
    def metrics(self):
        seen = []
        for m in self.entries.values():
            seen += [k for k in m if k not in seen]
        return seen

    def value(self, config, metric):
        return self.entries[config][metric][0]

    def rows(self):
        """Machine-readable form: one row per (metric, config) cell."""
        for metric in self.metrics:
            for config in self.configs:
                if metric in self.entries[config]:
                    mean, std, n = self.entries[config][metric]
                    yield {"metric": metric, "config": config, "mean": mean, "std": std, "n": n,
                           "stub": metric in self.stub_metrics}

    def to_tsv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, delimiter="\t", lineterminator="\n")
        w.writerow(["metric", "config", "mean", "std", "n", "stub"])
        for r in self.rows():
            w.writerow([r["metric"], r["config"], f"{r['mean']:.6f}", f"{r['std']:.6f}", r["n"],
                        int(r["stub"])])
        return buf.getvalue()

    def render(self, paper_rows: bool = True) -> str:
        configs = self.configs
        width = max([12] + [len(c) + 2 for c in configs])
        lines = ["metric".ljust(10) + "".join(c.rjust(width) for c in configs)]
        for metric in self.metrics:
            label = metric + (" (stub)" if metric in self.stub_metrics else "")
            cells = []
            for c in configs:
                e = self.entries[c].get(metric)
                cells.append((f"{e[0]:.4f}" if e else "-").rjust(width))
            lines.append(label.ljust(10) + "".join(cells))
        if paper_rows:
            lines.append("")
            lines.append("paper-reported (CUB, 256x256; context only, not reproduced):")
            for name, vals in PAPER_ROWS.items():
                lines.append(f"  {name:<14} IS {vals['IS']:.2f}  NIMA {vals['NIMA']:.2f}")
        return "\n".join(lines)


def build_report(runs: dict, metadata=None, stub_metrics=()) -> MetricReport:
    """``runs`` maps config -> metric -> list of per-sample values (or a (mean, std, n) tuple)."""
    if not runs:
        raise MetricError("no configurations evaluated")
    report = MetricReport(metadata=dict(metadata or {}), stub_metrics=set(stub_metrics))
    for config, metrics in runs.items():
        for metric, vals in metrics.items():
            if isinstance(vals, tuple) and len(vals) == 3:
                report.add(config, metric, *vals)
            else:
                arr = np.asarray(vals, dtype=np.float64)
                report.add(config, metric, arr.mean() if arr.size else np.nan,
                           arr.std() if arr.size else np.nan, arr.size)
    return report


def read_report_tsv(text: str) -> dict:
    out = {}
    for r in csv.DictReader(io.StringIO(text), delimiter="\t"):
        out[(r["metric"], r["config"])] = float(r["mean"])
    return out
