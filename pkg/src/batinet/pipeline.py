"""End-to-end flows: background-aware text-to-image (bat2i) and text-guided manipulation (tgim).

Both flows run detection -> generation -> harmonization/compositing. Ablation
toggles drop the position detector (fixed centered box) or the harmonizer.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import dataprep, hn, imaging
from .eval import (ConstantScorer, MetricReport, aesthetic_score, build_report,
                   inception_score_from_probs, position_iou)
from .gn import Gn, StageOutputs, encode_text, gn_forward
from .pdn import Pdn, PositionVector, extract_position, fallback_position
from .text import Caption

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    hn: str = "stats"            # stats | filter | off
    use_pdn: bool = True
    threshold: float = 0.5
    out: Optional[str] = None
    stages_dir: Optional[str] = None

    def __post_init__(self):
        if self.hn not in ("stats", "filter", "off"):
            raise ValueError(f"unknown HN mode {self.hn!r}")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")

    @property
    def harmonizer(self) -> hn.HarmonizerSpec:
        return hn.HarmonizerSpec(mode=self.hn)


def _parse_value(raw: str, typ):
    raw = raw.strip()
    if typ is bool or typ == "bool":
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if typ in (int, "int"):
        return int(raw)
    if typ in (float, "float"):
        return float(raw)
    return None if raw == "" else raw


def read_config_file(path, cls=RunConfig, overrides: dict | None = None):
    """Flat ``key = value`` file; ``#`` starts a comment; keys are ``cls`` field names."""
    types = {f.name: f.type for f in fields(cls)}
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        typ = types[key]
        typ = typ.replace("Optional[", "").rstrip("]") if isinstance(typ, str) else typ
        values[key] = _parse_value(raw, typ)
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return cls(**values)


@dataclass
class RunRecord:
    task: str
    caption: str
    position: PositionVector
    stages: StageOutputs
    final: np.ndarray
    fg_layer: np.ndarray        # harmonized foreground as placed on the canvas
    alpha: np.ndarray           # its alpha on the canvas
    background: np.ndarray      # compositing target (inpainted for tgim)
    inputs: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)
    seed: int = 0
    warnings: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "task": self.task, "caption": self.caption, "seed": self.seed, "inputs": self.inputs,
            "box": [float(v) for v in self.position.box], "degenerate": self.position.degenerate,
            "grid_mass": float(self.position.grid.sum()),
            "stage_resolutions": [int(i.shape[-1]) for i in self.stages.images],
            "timings": self.timings, "paths": self.paths, "warnings": self.warnings,
        }


def append_record(path, record: RunRecord, **extra) -> None:
    with open(path, "a", encoding="utf-8") as f:
        f.write(json.dumps({**record.summary(), **extra}) + "\n")


def check_compatible(pdn: Pdn | None, gn: Gn, image: np.ndarray) -> None:
    imaging.check_image(image)
    if pdn is not None and pdn.grid_size != gn.grid:
        raise PipelineError(f"PDN grid {pdn.grid_size} incompatible with GN grid {gn.grid}")
    if min(image.shape[1:]) < 8:
        raise PipelineError(f"input image {image.shape[1:]} too small")


def no_pdn_position(gn: Gn) -> PositionVector:
    """Centered fallback box; the grid is uniform with the box's area as its value."""
    box = fallback_position().box
    area = (box[2] - box[0]) * (box[3] - box[1])
    return PositionVector(np.full((gn.grid, gn.grid), area), box, np.zeros(0), degenerate=True)


def generate_and_compose(background, caption: Caption, pos: PositionVector, gn: Gn, cfg: RunConfig,
                         timings: dict):
    t0 = time.perf_counter()
    text = encode_text(caption, gn.text_encoder)
    noise = np.random.default_rng(cfg.seed).standard_normal(gn.noise_dim)
    stages = gn_forward(gn, text, pos, noise)
    timings["gn"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    r = gn.resolution
    px0, py0, px1, py1 = hn.box_to_pixels(pos.box, r, r)
    fg = stages.images[-1][:, py0:py1, px0:px1]
    alpha = stages.fg_masks[-1][py0:py1, px0:px1]
    fg_layer, alpha_layer, final = hn.harmonize_layers(fg, alpha, background, pos.box, cfg.harmonizer)
    timings["hn"] = time.perf_counter() - t0
    return stages, final, fg_layer, alpha_layer


def _save_outputs(record: RunRecord, cfg: RunConfig):
    if cfg.out:
        imaging.ensure_dir(Path(cfg.out).parent)
        imaging.save_image(cfg.out, record.final)
        record.paths["final"] = str(cfg.out)
    if cfg.stages_dir:
        d = imaging.ensure_dir(cfg.stages_dir)
        for k, (img, m) in enumerate(zip(record.stages.images, record.stages.fg_masks)):
            p = d / f"stage{k}.png"
            imaging.save_image(p, img * m[None])
            record.paths[f"stage{k}"] = str(p)


def bat2i(background, caption: Caption, pdn: Pdn | None, gn: Gn, cfg: RunConfig = RunConfig()) -> RunRecord:
    """Place text-described content where the background suggests it belongs."""
    check_compatible(pdn if cfg.use_pdn else None, gn, background)
    if cfg.use_pdn and pdn is None:
        raise PipelineError("bat2i with detection enabled needs a PDN checkpoint")
    timings = {}
    t0 = time.perf_counter()
    if cfg.use_pdn:
        _, pos = pdn.detect(background, cfg.threshold)
    else:
        pos = no_pdn_position(gn)
    timings["pdn"] = time.perf_counter() - t0
    stages, final, fg_layer, alpha = generate_and_compose(background, caption, pos, gn, cfg, timings)
    record = RunRecord("bat2i", caption.text, pos, stages, final, fg_layer, alpha, background,
                       timings=timings, seed=cfg.seed)
    _save_outputs(record, cfg)
    return record


def tgim(image, caption: Caption, pdn: Pdn | None, gn: Gn, cfg: RunConfig = RunConfig()) -> RunRecord:
    """Remove the detected object and regenerate it from the caption at the same place."""
    check_compatible(pdn if cfg.use_pdn else None, gn, image)
    timings = {}
    warnings = []
    t0 = time.perf_counter()
    background = image
    if cfg.use_pdn:
        if pdn is None:
            raise PipelineError("tgim with detection enabled needs a PDN checkpoint")
        mask_pred, pos = pdn.detect(image, cfg.threshold)
        full = imaging.resize(mask_pred, *image.shape[1:])
        binary = (full >= cfg.threshold).astype(np.float64)
        if pos.degenerate or not binary.any():
            warnings.append("no object detected; falling back to bat2i with the centered box")
            log.warning(warnings[-1])
            pos = no_pdn_position(gn)
        elif binary.all():
            warnings.append("detected mask covers the whole image; skipping inpainting")
        else:
            background = dataprep.inpaint(image, binary)
    else:
        pos = no_pdn_position(gn)
    timings["pdn"] = time.perf_counter() - t0
    stages, final, fg_layer, alpha = generate_and_compose(background, caption, pos, gn, cfg, timings)
    record = RunRecord("tgim", caption.text, pos, stages, final, fg_layer, alpha, background,
                       timings=timings, seed=cfg.seed, warnings=warnings)
    _save_outputs(record, cfg)
    return record


ABLATIONS = {
    "full": {},
    "w/o PDN": {"use_pdn": False},
    "w/o HN": {"hn": "off"},
}


def run_ablation_suite(samples, pdn: Pdn, gn: Gn, cfg: RunConfig = RunConfig(), classifier=None,
                       scorer=None, records_path=None) -> MetricReport:
    """Evaluate full / w/o PDN / w/o HN on the same samples and seeds.

    ``samples`` are DatasetTriples; each is run as bat2i on its inpainted
    background with its own caption and seed ``cfg.seed + i``.
    """
    samples = list(samples)
    if not samples:
        raise PipelineError("no samples to evaluate")
    seeds = [cfg.seed + i for i in range(len(samples))]
    scorer = scorer or ConstantScorer()
    runs = {}
    for name, change in ABLATIONS.items():
        run_cfg = replace(cfg, out=None, stages_dir=None, **change)
        ious, gaps, layers = [], [], []
        for seed, s in zip(seeds, samples):
            rec = bat2i(s.background, s.caption, pdn, gn, replace(run_cfg, seed=seed))
            if s.oracle_box is not None:
                ious.append(position_iou(rec.position.box, s.oracle_box))
            gaps.append(hn.style_gap(rec.fg_layer, rec.alpha, rec.background))
            layers.append(rec.fg_layer * rec.alpha[None])
            if records_path:
                append_record(records_path, rec, config=name, oracle_box=s.oracle_box)
        metrics = {"style_gap": gaps}
        if ious:
            metrics["iou"] = ious
        if classifier is not None:
            probs = classifier.predict(layers)
            metrics["IS"] = (*inception_score_from_probs(probs, min(10, len(layers))), len(layers))
        metrics["NIMA"] = (*aesthetic_score(layers, scorer), len(layers))
        runs[name] = metrics
    stubs = ["NIMA"] if getattr(scorer, "stub", False) else []
    return build_report(runs, {"seeds": seeds, "hn": cfg.hn}, stub_metrics=stubs)
