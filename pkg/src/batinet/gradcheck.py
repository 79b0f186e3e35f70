"""Central finite-difference check of autograd gradients on sampled parameter entries."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch


@dataclass
class GradSample:
    block: str
    name: str
    index: int
    analytic: float
    numeric: float
    numeric_fine: float = float("nan")   # difference quotient at h / 10
    unstable: bool = False

    @property
    def rel_error(self) -> float:
        return _rel(self.analytic, self.numeric)

    @property
    def rel_error_fine(self) -> float:
        return _rel(self.analytic, self.numeric_fine)


def _rel(a, b):
    denom = max(abs(a), abs(b))
    return 0.0 if denom == 0 else abs(a - b) / denom


def check_gradients(loss_fn, blocks: dict, n_per_block: int = 10, h: float = 1e-4,
                    seed: int = 0, min_grad: float = 1e-6, stability_tol: float | None = None) -> list:
    """Compare autograd with ``(L(p+h) - L(p-h)) / 2h`` for sampled entries.

    ``blocks`` maps a block name to a list of ``(name, parameter)`` pairs;
    ``loss_fn`` recomputes the scalar loss from the current parameter values.
    Entries are drawn uniformly from those whose analytic gradient magnitude is
    at least ``min_grad`` (below that the float64 difference quotient is
    dominated by truncation error rather than by the quantity under test).

    With ``stability_tol`` set, each entry's quotient is also taken at ``h / 10``.
    If the two quotients disagree by more than ``stability_tol`` the step crossed
    a kink (ReLU, clamp) or strong curvature, so the quotient at ``h`` is not an
    estimate of the derivative. Such samples are returned flagged ``unstable``
    and another entry is drawn, until ``n_per_block`` stable ones are collected
    or candidates run out.
    """
    rng = np.random.default_rng(seed)
    all_params = [p for plist in blocks.values() for _, p in plist]
    for p in all_params:
        p.grad = None
    loss = loss_fn()
    grads = torch.autograd.grad(loss, all_params, allow_unused=True)
    grad_of = {id(p): (torch.zeros_like(p) if g is None else g) for p, g in zip(all_params, grads)}

    def quotient(p, i, step):
        flat = p.data.view(-1)
        orig = flat[i].item()
        with torch.no_grad():
            flat[i] = orig + step
            up = loss_fn().item()
            flat[i] = orig - step
            down = loss_fn().item()
            flat[i] = orig
        return (up - down) / (2 * step)

    samples = []
    for block, plist in blocks.items():
        candidates = []
        for name, p in plist:
            flat = grad_of[id(p)].reshape(-1)
            for i in torch.nonzero(flat.abs() >= min_grad).reshape(-1).tolist():
                candidates.append((name, p, i))
        if not candidates:
            raise ValueError(f"block {block!r} has no parameters with non-negligible gradient")
        stable = 0
        for j in rng.permutation(len(candidates)):
            if stable >= n_per_block:
                break
            name, p, i = candidates[j]
            sample = GradSample(block, name, i, grad_of[id(p)].reshape(-1)[i].item(), quotient(p, i, h))
            if stability_tol is not None:
                sample.numeric_fine = quotient(p, i, h / 10)
                sample.unstable = _rel(sample.numeric, sample.numeric_fine) > stability_tol
            stable += not sample.unstable
            samples.append(sample)
    return samples
