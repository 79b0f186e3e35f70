"""Shared training-loop plumbing: config, seeding, batching and loss logging."""

from __future__ import annotations

import json
import math
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    seed: int = 0
    epochs: int = 30
    batch_size: int = 32
    lr: float = 2e-4
    betas: tuple = (0.5, 0.999)
    resolution: int = 32
    checkpoint_every: int = 0          # epochs; 0 disables intermediate checkpoints
    out: Optional[str] = None          # final checkpoint path
    log_path: Optional[str] = None     # JSON-lines loss curve

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size <= 0 or self.resolution <= 0:
            raise ValueError("epochs, batch_size and resolution must be positive")
        self.betas = tuple(self.betas)

    def to_dict(self):
        return asdict(self)


@dataclass
class PdnTrainConfig(TrainConfig):
    pdn_input: str = "mixed"           # background | original | mixed
    l1_weight: float = 1.0
    warmup_epochs: int = 10            # leading epochs of pixelwise BCE before the adversarial phase
    lr_g: float = 1e-3
    lr_d: float = 1e-4

    def __post_init__(self):
        super().__post_init__()
        if self.pdn_input not in ("background", "original", "mixed"):
            raise ValueError(f"unknown pdn_input {self.pdn_input!r}")


LOSS_TERMS = ("adv", "per", "cor", "damsm", "reg", "mask")


@dataclass
class GnTrainConfig(TrainConfig):
    resolution: int = 64               # final-stage resolution R2
    epochs: int = 40
    weights: dict = field(default_factory=lambda: {k: 1.0 for k in LOSS_TERMS})
    oracle_pos: bool = False
    pretrain_epochs: int = 10          # text/image encoder matching pretraining

    def __post_init__(self):
        super().__post_init__()
        unknown = set(self.weights) - set(LOSS_TERMS)
        if unknown:
            raise ValueError(f"unknown loss weights {sorted(unknown)}")
        self.weights = {k: float(self.weights.get(k, 1.0)) for k in LOSS_TERMS}
        if self.resolution % 16:
            raise ValueError("GN resolution must be a multiple of 16")


def seed_everything(seed: int) -> np.random.Generator:
    random.seed(seed)
    torch.manual_seed(seed)
    return np.random.default_rng(seed)


def iter_batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i:i + batch_size]


def n_batches(n: int, batch_size: int) -> int:
    return math.ceil(n / batch_size)


class LossLog:
    """Per-step loss records, mirrored to a JSON-lines file when a path is given."""

    def __init__(self, path=None):
        self.records = []
        self.path = Path(path) if path else None
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def add(self, **rec):
        rec = {k: (float(v) if isinstance(v, (torch.Tensor, np.floating)) else v) for k, v in rec.items()}
        self.records.append(rec)
        if self.path:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(json.dumps(rec) + "\n")

    def steps(self, phase):
        return [r for r in self.records if r.get("phase") == phase]

    def last(self, phase, key="loss"):
        return self.steps(phase)[-1][key]


def require_finite(name: str, value: torch.Tensor) -> None:
    if not torch.isfinite(value).all():
        raise TrainingError(f"non-finite {name}")
