"""Checkpoint container: an ``.npz`` archive of named arrays plus a JSON metadata header.

Layer arrays are stored under ``<prefix>.<parameter name>`` keys (for example
``generator.enc1.weight``); the header lives under ``__meta__`` as UTF-8 JSON
bytes and always carries ``kind`` and ``format_version``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

META_KEY = "__meta__"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def module_arrays(module: torch.nn.Module, prefix: str) -> dict:
    return {f"{prefix}.{k}": v.detach().cpu().numpy() for k, v in module.state_dict().items()}


def load_module(module: torch.nn.Module, arrays: dict, prefix: str) -> None:
    sub = {k[len(prefix) + 1:]: torch.as_tensor(v) for k, v in arrays.items()
           if k.startswith(prefix + ".")}
    missing, unexpected = module.load_state_dict(sub, strict=False)
    if missing or unexpected:
        raise CheckpointError(f"{prefix}: missing={missing} unexpected={unexpected}")


def save(path, arrays: dict, meta: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"format_version": FORMAT_VERSION, **meta}
    header = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as f:
        np.savez(f, **{META_KEY: header}, **arrays)
    return path


def load(path, kind: str | None = None) -> tuple:
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files}
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint ({exc})") from exc
    if META_KEY not in arrays:
        raise CheckpointError(f"{path}: missing metadata header")
    meta = json.loads(arrays.pop(META_KEY).tobytes().decode("utf-8"))
    if kind is not None and meta.get("kind") != kind:
        raise CheckpointError(f"{path}: expected a {kind!r} checkpoint, found {meta.get('kind')!r}")
    return arrays, meta
