"""Image/mask arrays, validation, 8-bit PNG I/O and resampling.

Images are float arrays shaped (3, H, W) with values in [0, 1]; masks are
float arrays shaped (H, W). PNG files store values as round-half-up of
``x * 255``, so a write/read round trip is exact to within 1/255.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image as PILImage


class ImageError(ValueError):
    pass


def check_image(img, name="image") -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ImageError(f"{name} must have shape (3, H, W), got {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ImageError(f"{name} contains non-finite values")
    if img.min(initial=0.0) < 0.0 or img.max(initial=0.0) > 1.0:
        raise ImageError(f"{name} values must lie in [0, 1]")
    return img


def check_mask(mask, shape=None, binary=False, name="mask") -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ImageError(f"{name} must have shape (H, W), got {mask.shape}")
    if shape is not None and mask.shape != tuple(shape):
        raise ImageError(f"{name} size {mask.shape} does not match {tuple(shape)}")
    if not np.all(np.isfinite(mask)) or mask.min(initial=0.0) < 0 or mask.max(initial=0.0) > 1:
        raise ImageError(f"{name} values must lie in [0, 1]")
    if binary and not np.all((mask == 0) | (mask == 1)):
        raise ImageError(f"{name} must be binary")
    return mask


def to_uint8(x: np.ndarray) -> np.ndarray:
    return np.floor(np.clip(x, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def from_uint8(x: np.ndarray) -> np.ndarray:
    return x.astype(np.float64) / 255.0


def quantize(x: np.ndarray) -> np.ndarray:
    """Value an array would have after a PNG round trip."""
    return from_uint8(to_uint8(x))


def save_image(path, img: np.ndarray) -> None:
    PILImage.fromarray(to_uint8(np.transpose(img, (1, 2, 0))), mode="RGB").save(path)


def load_image(path) -> np.ndarray:
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"))
    return np.ascontiguousarray(np.transpose(from_uint8(arr), (2, 0, 1)))


def save_mask(path, mask: np.ndarray) -> None:
    PILImage.fromarray(to_uint8(mask), mode="L").save(path)


def load_mask(path) -> np.ndarray:
    with PILImage.open(path) as im:
        return from_uint8(np.asarray(im.convert("L")))


def resize(arr: np.ndarray, height: int, width: int) -> np.ndarray:
    """Resample a (C, H, W) or (H, W) array; area averaging when shrinking, bilinear otherwise."""
    squeeze = arr.ndim == 2
    t = torch.as_tensor(np.asarray(arr, dtype=np.float64))
    t = t[None, None] if squeeze else t[None]
    if (height, width) == tuple(t.shape[-2:]):
        out = t
    elif height <= t.shape[-2] and width <= t.shape[-1]:
        out = F.interpolate(t, size=(height, width), mode="area")
    else:
        out = F.interpolate(t, size=(height, width), mode="bilinear", align_corners=False)
    out = out.clamp(0.0, 1.0).numpy()
    return out[0, 0] if squeeze else out[0]


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
