"""Derived datasets (mask, foreground, inpainted background) and a synthetic scene generator.

The segmenter and inpainter are plain callables so pretrained models can be
dropped in; the defaults are deterministic and dependency-free.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Optional, Protocol, Sequence

import numpy as np

from . import imaging
from .imaging import check_image, check_mask
from .text import COLORS, SHAPES, Caption, caption_for, tokenize

log = logging.getLogger(__name__)

FILE_KINDS = ("orig", "mask", "fg", "bg")


class DataprepError(RuntimeError):
    pass


class Segmenter(Protocol):
    def __call__(self, image: np.ndarray) -> np.ndarray: ...


class Inpainter(Protocol):
    def __call__(self, image: np.ndarray, mask: np.ndarray) -> np.ndarray: ...


@dataclass
class DatasetTriple:
    original: np.ndarray
    mask: np.ndarray
    foreground: np.ndarray
    background: np.ndarray
    caption: Caption
    oracle_box: Optional[tuple] = None


# ---------------------------------------------------------------------------
# segmentation / foreground / inpainting


class OracleSegmenter:
    """Returns a known mask; the synthetic generator's stand-in for a trained segmenter."""

    def __init__(self, mask: np.ndarray):
        self.mask = np.asarray(mask, dtype=np.float64)

    def __call__(self, image):
        return self.mask.copy()


class ThresholdSegmenter:
    def __init__(self, channel: int = 0, threshold: float = 0.5):
        self.channel = channel
        self.threshold = threshold

    def __call__(self, image):
        return (image[self.channel] > self.threshold).astype(np.float64)


def segment(image, segmenter: Segmenter, image_id: str = "<unnamed>") -> np.ndarray:
    check_image(image)
    try:
        mask = np.asarray(segmenter(image), dtype=np.float64)
    except Exception as exc:
        raise DataprepError(f"segmenter failed on image {image_id}: {exc}") from exc
    try:
        check_mask(mask, image.shape[1:], binary=True)
    except imaging.ImageError as exc:
        raise DataprepError(f"segmenter returned invalid mask for image {image_id}: {exc}") from exc
    return mask


def extract_foreground(image, mask) -> np.ndarray:
    check_image(image)
    check_mask(mask, image.shape[1:], binary=True)
    return image * mask[None]


def neighbor_mean_inpaint(image, mask) -> np.ndarray:
    """Fill masked pixels by repeatedly averaging their known 4-neighbours.

    Each sweep fills every unknown pixel that touches at least one known pixel,
    using only pixels known before the sweep.
    """
    known = mask == 0
    if not known.any():
        raise DataprepError("nothing known to inpaint from")
    out = image * known[None]
    h, w = mask.shape
    for _ in range(4 * max(h, w)):
        if known.all():
            break
        kf = known.astype(np.float64)
        total = np.zeros_like(out)
        count = np.zeros((h, w))
        total[:, 1:, :] += out[:, :-1, :]
        count[1:, :] += kf[:-1, :]
        total[:, :-1, :] += out[:, 1:, :]
        count[:-1, :] += kf[1:, :]
        total[:, :, 1:] += out[:, :, :-1]
        count[:, 1:] += kf[:, :-1]
        total[:, :, :-1] += out[:, :, 1:]
        count[:, :-1] += kf[:, 1:]
        fill = ~known & (count > 0)
        out[:, fill] = total[:, fill] / count[fill]
        known = known | fill
    if not known.all():
        raise DataprepError("inpainting did not converge")
    return out


def inpaint(image, mask, inpainter: Inpainter = neighbor_mean_inpaint) -> np.ndarray:
    check_image(image)
    check_mask(mask, image.shape[1:], binary=True)
    if np.all(mask == 1):
        raise DataprepError("nothing known to inpaint from")
    filled = np.asarray(inpainter(image, mask), dtype=np.float64)
    keep = mask == 0
    # Unmasked pixels are copied back so no inpainter can alter them.
    out = np.where(keep[None], image, filled)
    return np.clip(out, 0.0, 1.0)


def make_triple(image, caption: Caption, segmenter: Segmenter,
                inpainter: Inpainter = neighbor_mean_inpaint, image_id="<unnamed>",
                oracle_box=None) -> DatasetTriple:
    mask = segment(image, segmenter, image_id)
    try:
        background = inpaint(image, mask, inpainter)
    except DataprepError as exc:
        raise DataprepError(f"{image_id}: {exc}") from exc
    return DatasetTriple(original=image, mask=mask, foreground=extract_foreground(image, mask),
                         background=background, caption=caption, oracle_box=oracle_box)


# ---------------------------------------------------------------------------
# synthetic scenes

_COLOR_RGB = {
    "red": (0.90, 0.12, 0.10),
    "blue": (0.12, 0.22, 0.92),
    "yellow": (0.95, 0.85, 0.10),
    "green": (0.15, 0.75, 0.20),
    "purple": (0.60, 0.15, 0.75),
}

_SKIES = (
    ((0.55, 0.75, 0.95), (0.85, 0.92, 1.00)),  # day
    ((0.95, 0.60, 0.35), (0.98, 0.85, 0.60)),  # dusk
    ((0.10, 0.12, 0.30), (0.25, 0.28, 0.45)),  # night
    ((0.70, 0.72, 0.74), (0.88, 0.88, 0.88)),  # overcast
)

_PERCH_RGB = (0.42, 0.28, 0.14)
_GROUND_RGB = (0.35, 0.50, 0.20)


@dataclass(frozen=True)
class SceneParams:
    height: int = 32
    width: int = 32
    shapes: tuple = SHAPES
    colors: tuple = COLORS
    structures: tuple = ("perch", "ground")
    object_width: tuple = (0.28, 0.38)   # fraction of canvas width
    object_height: tuple = (0.22, 0.30)  # fraction of canvas height
    noise: float = 0.02
    min_object_px: int = 3


def _ellipse_mask(h, w, cy, cx, ry, rx):
    yy, xx = np.mgrid[0:h, 0:w]
    return (((yy + 0.5 - cy) / ry) ** 2 + ((xx + 0.5 - cx) / rx) ** 2 <= 1.0).astype(np.float64)


def _triangle_mask(h, w, cy, cx, ry, rx):
    # Upward-pointing isosceles triangle inscribed in the (cy, cx, ry, rx) box.
    yy, xx = np.mgrid[0:h, 0:w]
    y = yy + 0.5
    x = xx + 0.5
    top, bottom = cy - ry, cy + ry
    frac = (y - top) / (2 * ry)
    inside = (y >= top) & (y <= bottom) & (np.abs(x - cx) <= rx * frac)
    return inside.astype(np.float64)


def _tight_box(mask) -> tuple:
    h, w = mask.shape
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return (cols[0] / w, rows[0] / h, (cols[-1] + 1) / w, (rows[-1] + 1) / h)


def synth_scene(rng_seed: int, params: SceneParams = SceneParams()) -> DatasetTriple:
    """Render a toy scene: sky, a short perch or ground patch, and one coloured shape on it.

    The object is centred horizontally on the structure and vertically on its top
    edge, so the background alone determines where the object belongs.
    """
    h, w = params.height, params.width
    oh_px = params.object_height[0] * h
    ow_px = params.object_width[0] * w
    if min(oh_px, ow_px) < params.min_object_px:
        raise DataprepError(f"canvas {h}x{w} too small for the configured shape sizes")

    rng = np.random.default_rng(rng_seed)
    color = params.colors[rng.integers(len(params.colors))]
    shape = params.shapes[rng.integers(len(params.shapes))]
    structure = params.structures[rng.integers(len(params.structures))]
    sky_top, sky_bot = _SKIES[rng.integers(len(_SKIES))]
    brightness = rng.uniform(0.55, 1.0)
    ry = rng.uniform(*params.object_height) * h / 2
    rx = rng.uniform(*params.object_width) * w / 2

    t = np.linspace(0.0, 1.0, h)[:, None]
    img = np.empty((3, h, w))
    for c in range(3):
        img[c] = brightness * ((1 - t) * sky_top[c] + t * sky_bot[c])

    span = rng.uniform(1.6, 2.2) * rx
    cx = rng.uniform(span, w - span) if w > 2 * span else w / 2
    x0, x1 = int(round(cx - span)), int(round(cx + span))
    if structure == "perch":
        cy = rng.uniform(0.40, 0.72) * h
        thick = max(1, h // 24)
        r0 = int(round(cy))
        img[:, r0:r0 + thick, max(x0, 0):min(x1, w)] = (
            brightness * np.asarray(_PERCH_RGB)[:, None, None])
    else:
        cy = rng.uniform(0.70, 0.82) * h
        r0 = int(round(cy))
        img[:, r0:, max(x0, 0):min(x1, w)] = brightness * np.asarray(_GROUND_RGB)[:, None, None]
    cy = min(cy, h - ry)

    draw = _ellipse_mask if shape == "ellipse" else _triangle_mask
    mask = draw(h, w, cy, cx, ry, rx)
    if mask.sum() == 0:
        raise DataprepError(f"canvas {h}x{w} too small for the configured shape sizes")

    base = np.asarray(_COLOR_RGB[color])
    shade = 0.85 + 0.3 * (1 - (np.arange(h)[:, None] + 0.5 - (cy - ry)) / (2 * ry))
    shade = np.clip(shade, 0.75, 1.15)
    obj = np.clip(base[:, None, None] * shade[None], 0, 1) * np.ones((3, h, w))
    img = np.where(mask[None] > 0, obj, img)
    img = np.clip(img + rng.normal(0.0, params.noise, img.shape), 0.0, 1.0)

    return make_triple(img, caption_for(color, shape), OracleSegmenter(mask),
                       image_id=f"synthetic-{rng_seed}", oracle_box=_tight_box(mask))


# ---------------------------------------------------------------------------
# dataset directories


@dataclass
class SyntheticSource:
    count: int
    params: SceneParams = field(default_factory=SceneParams)
    seed: int = 0

    def sample_seed(self, i: int) -> int:
        return self.seed * 1_000_003 + i

    def __iter__(self):
        for i in range(self.count):
            yield f"s{i:06d}", synth_scene(self.sample_seed(i), self.params)


@dataclass
class DirectorySource:
    """Raw ``<id>.png`` + ``<id>.txt`` pairs, with a segmenter for the masks.

    Without a segmenter, ``<id>.mask.png`` files must be present.
    """

    root: Path
    segmenter: Optional[Callable] = None
    inpainter: Callable = neighbor_mean_inpaint

    def __iter__(self):
        root = Path(self.root)
        images = sorted(p for p in root.glob("*.png") if p.name.count(".") == 1)
        for path in images:
            sid = path.stem
            image = imaging.load_image(path)
            caption = tokenize(path.with_suffix(".txt").read_text(encoding="utf-8").strip())
            segmenter = self.segmenter
            if segmenter is None:
                mask_path = root / f"{sid}.mask.png"
                if not mask_path.exists():
                    raise DataprepError(f"{mask_path}: no mask file and no segmenter supplied")
                segmenter = OracleSegmenter((imaging.load_mask(mask_path) >= 0.5).astype(np.float64))
            yield sid, make_triple(image, caption, segmenter, self.inpainter, image_id=str(path))


@dataclass
class ManifestRow:
    id: str
    split: str
    oracle_box: Optional[tuple] = None


def sample_paths(root, row: ManifestRow) -> dict:
    base = Path(root) / row.split
    paths = {k: base / f"{row.id}.{k}.png" for k in FILE_KINDS}
    paths["txt"] = base / f"{row.id}.txt"
    return paths


def write_triple(root, row: ManifestRow, triple: DatasetTriple) -> None:
    paths = sample_paths(root, row)
    try:
        imaging.ensure_dir(paths["txt"].parent)
        imaging.save_image(paths["orig"], triple.original)
        imaging.save_mask(paths["mask"], triple.mask)
        imaging.save_image(paths["fg"], triple.foreground)
        imaging.save_image(paths["bg"], triple.background)
        paths["txt"].write_text(triple.caption.text + "\n", encoding="utf-8")
    except OSError as exc:
        raise DataprepError(f"failed writing sample {row.id} under {paths['txt'].parent}: {exc}") from exc


def read_triple(root, row: ManifestRow) -> DatasetTriple:
    paths = sample_paths(root, row)
    try:
        mask = imaging.load_mask(paths["mask"])
        return DatasetTriple(
            original=imaging.load_image(paths["orig"]),
            mask=mask,
            foreground=imaging.load_image(paths["fg"]),
            background=imaging.load_image(paths["bg"]),
            caption=tokenize(paths["txt"].read_text(encoding="utf-8").strip()),
            oracle_box=row.oracle_box,
        )
    except OSError as exc:
        raise DataprepError(f"failed reading sample {row.id}: {exc}") from exc


def write_manifest(root, rows: Sequence[ManifestRow]) -> Path:
    path = Path(root) / "manifest.tsv"
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, delimiter="\t", lineterminator="\n")
        writer.writerow(["id", "split", "x0", "y0", "x1", "y1"])
        for r in rows:
            box = [repr(float(v)) for v in r.oracle_box] if r.oracle_box else ["", "", "", ""]
            writer.writerow([r.id, r.split, *box])
    return path


def read_manifest(root) -> list:
    path = Path(root) / "manifest.tsv"
    if not path.exists():
        raise DataprepError(f"{path}: manifest not found")
    rows = []
    with open(path, newline="", encoding="utf-8") as f:
        for rec in csv.DictReader(f, delimiter="\t"):
            box = None
            if rec["x0"]:
                box = tuple(float(rec[k]) for k in ("x0", "y0", "x1", "y1"))
            rows.append(ManifestRow(rec["id"], rec["split"], box))
    return rows


def build_dataset(source: Iterable, out_dir, test_fraction: float = 2933 / 11788,
                  n_test: Optional[int] = None) -> list:
    """Write every sample of ``source`` plus ``manifest.tsv`` under ``out_dir``.

    The last ``n_test`` samples (default: ``test_fraction`` of them, the CUB
    train/test ratio) go to the ``test`` split.
    """
    out = imaging.ensure_dir(out_dir)
    samples = list(source)
    if not samples:
        raise DataprepError("empty dataset")
    if n_test is None:
        n_test = int(math.floor(len(samples) * test_fraction))
    n_test = min(max(n_test, 0), len(samples))
    rows = []
    for i, (sid, triple) in enumerate(samples):
        split = "test" if i >= len(samples) - n_test else "train"
        row = ManifestRow(sid, split, triple.oracle_box)
        write_triple(out, row, triple)
        rows.append(row)
    write_manifest(out, rows)
    log.info("wrote %d samples (%d test) to %s", len(rows), n_test, out)
    return rows


def load_dataset(root, split: Optional[str] = None) -> list:
    """Read ``(row, triple)`` pairs, optionally restricted to one split."""
    rows = read_manifest(root)
    return [(r, read_triple(root, r)) for r in rows if split is None or r.split == split]


def generate(count: int, params: SceneParams = SceneParams(), seed: int = 0) -> list:
    """In-memory synthetic samples without touching disk."""
    return [t for _, t in SyntheticSource(count, params, seed)]


def with_size(params: SceneParams, height: int, width: int) -> SceneParams:
    return replace(params, height=height, width=width)
