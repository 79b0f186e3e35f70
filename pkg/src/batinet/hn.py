"""Harmonization and compositing of a generated foreground onto a background.

The default harmonizer matches mask-weighted foreground channel statistics to
the background's; a filter-chain mode (brightness, contrast, saturation) and a
slot for an external harmonizer are also provided.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import imaging
from .imaging import check_image, check_mask

MODES = ("stats", "filter", "external", "off")
SIGMA_MIN = 1e-6


class HarmonizeError(ValueError):
    pass


@dataclass(frozen=True)
class HarmonizerSpec:
    mode: str = "stats"
    brightness_bounds: tuple = (-0.5, 0.5)
    contrast_bounds: tuple = (0.25, 4.0)
    saturation_bounds: tuple = (0.0, 4.0)
    external: Optional[Callable] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown harmonizer mode {self.mode!r}; expected one of {MODES}")
        bounds = self.brightness_bounds + self.contrast_bounds + self.saturation_bounds
        if not np.all(np.isfinite(bounds)):
            raise ValueError("filter bounds must be finite")
        if self.mode == "external" and self.external is None:
            raise ValueError("external mode needs a harmonizer callable")

    @property
    def enabled(self):
        return self.mode != "off"


def box_to_pixels(box, height: int, width: int) -> tuple:
    x0, y0, x1, y1 = box
    px0, px1 = int(round(x0 * width)), int(round(x1 * width))
    py0, py1 = int(round(y0 * height)), int(round(y1 * height))
    px0, py0 = max(px0, 0), max(py0, 0)
    px1, py1 = min(px1, width), min(py1, height)
    if px1 <= px0 or py1 <= py0:
        raise HarmonizeError(f"box {tuple(box)} has zero area on a {height}x{width} canvas")
    return px0, py0, px1, py1


def place(foreground, fg_mask, background, box):
    """Resize foreground and alpha into ``box``; return full-canvas (fg, alpha) layers."""
    check_image(foreground, "foreground")
    check_mask(fg_mask, foreground.shape[1:], name="fg_mask")
    check_image(background, "background")
    h, w = background.shape[1:]
    px0, py0, px1, py1 = box_to_pixels(box, h, w)
    fg_layer = np.zeros_like(background)
    alpha = np.zeros((h, w))
    fg_layer[:, py0:py1, px0:px1] = imaging.resize(foreground, py1 - py0, px1 - px0)
    alpha[py0:py1, px0:px1] = imaging.resize(fg_mask, py1 - py0, px1 - px0)
    return fg_layer, alpha


def blend(fg_layer, alpha, background) -> np.ndarray:
    """Alpha-blend canvas-sized layers; pixels with zero alpha are the background exactly."""
    out = background.copy()
    on = alpha > 0
    a = alpha[on]
    out[:, on] = a * fg_layer[:, on] + (1 - a) * background[:, on]
    return out


def compose(foreground, fg_mask, background, box) -> np.ndarray:
    """Alpha-blend the foreground, resized into ``box``, over the background."""
    return blend(*place(foreground, fg_mask, background, box), background)


def masked_stats(image, weights):
    total = weights.sum()
    mean = (image * weights).reshape(3, -1).sum(1) / total
    var = (((image - mean[:, None, None]) ** 2) * weights).reshape(3, -1).sum(1) / total
    return mean, np.sqrt(var)


def _luma(img):
    return img.mean(axis=0)


def _stats_match(fg, mask, bg):
    """Per channel, shift and scale the weighted foreground to the background mean and std.

    Where the full scale would push weighted pixels out of [0, 1] the scale is
    reduced just enough to stay in range, so the mean still matches exactly.
    """
    mu_f, sd_f = masked_stats(fg, mask)
    mu_b, sd_b = masked_stats(bg, np.ones(bg.shape[1:]))
    on = mask > 0
    out = np.empty_like(fg)
    for c in range(3):
        if sd_f[c] < SIGMA_MIN:
            out[c] = fg[c] - mu_f[c] + mu_b[c]
            continue
        s = sd_b[c] / sd_f[c]
        hi, lo = fg[c][on].max() - mu_f[c], fg[c][on].min() - mu_f[c]
        if hi > 0:
            s = min(s, (1 - mu_b[c]) / hi)
        if lo < 0:
            s = min(s, mu_b[c] / -lo)
        out[c] = (fg[c] - mu_f[c]) * s + mu_b[c]
    return out


def _filter_chain(fg, mask, bg, spec: HarmonizerSpec):
    w = mask / mask.sum()
    ones = np.full(bg.shape[1:], 1.0 / bg.shape[1] / bg.shape[2])

    def luma_stats(img, wt):
        lum = _luma(img)
        mu = (lum * wt).sum()
        return mu, np.sqrt(((lum - mu) ** 2 * wt).sum())

    def saturation(img, wt):
        return (np.abs(img - _luma(img)[None]).mean(axis=0) * wt).sum()

    mu_b, sd_b = luma_stats(bg, ones)
    mu_f, sd_f = luma_stats(fg, w)
    out = fg + np.clip(mu_b - mu_f, *spec.brightness_bounds)

    mu_f, sd_f = luma_stats(out, w)
    k = np.clip(sd_b / sd_f, *spec.contrast_bounds) if sd_f >= SIGMA_MIN else 1.0
    out = (out - mu_f) * k + mu_f

    sat_f, sat_b = saturation(out, w), saturation(bg, ones)
    s = np.clip(sat_b / sat_f, *spec.saturation_bounds) if sat_f >= SIGMA_MIN else 1.0
    lum = _luma(out)[None]
    return lum + s * (out - lum)


def harmonize(foreground, fg_mask, background, spec: HarmonizerSpec = HarmonizerSpec()) -> np.ndarray:
    """Recolour the foreground toward the background's style; geometry is untouched."""
    check_image(foreground, "foreground")
    check_mask(fg_mask, foreground.shape[1:], name="fg_mask")
    check_image(background, "background")
    if not spec.enabled:
        return foreground.copy()
    if fg_mask.sum() <= 0:
        raise HarmonizeError("foreground mask has zero mass")
    if spec.mode == "stats":
        out = _stats_match(foreground, fg_mask, background)
    elif spec.mode == "filter":
        out = _filter_chain(foreground, fg_mask, background, spec)
    else:
        out = np.asarray(spec.external(foreground, fg_mask, background), dtype=np.float64)
    return np.clip(out, 0.0, 1.0)


def harmonize_layers(foreground, fg_mask, background, box, spec: HarmonizerSpec = HarmonizerSpec()):
    """Place into ``box``, harmonize the placed layer, and blend.

    Harmonizing after placement means the statistics that get matched are the
    ones of the pixels that end up on the canvas. Returns (fg_layer, alpha, composite).
    """
    fg_layer, alpha = place(foreground, fg_mask, background, box)
    if spec.enabled and alpha.sum() > 0:
        fg_layer = harmonize(fg_layer, alpha, background, spec)
    return fg_layer, alpha, blend(fg_layer, alpha, background)


def harmonize_and_compose(foreground, fg_mask, background, box,
                          spec: HarmonizerSpec = HarmonizerSpec()) -> np.ndarray:
    return harmonize_layers(foreground, fg_mask, background, box, spec)[2]


def style_gap(foreground_layer, alpha, background) -> float:
    """Largest per-channel gap between the alpha-weighted foreground mean and the background mean."""
    if alpha.sum() <= 0:
        return 0.0
    mu_f, _ = masked_stats(foreground_layer, alpha)
    mu_b, _ = masked_stats(background, np.ones(background.shape[1:]))
    return float(np.abs(mu_f - mu_b).max())
