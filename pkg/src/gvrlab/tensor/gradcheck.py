"""Central finite-difference checks against taped gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autodiff import GradTape, Tensor


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-4) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-3,
    samples_per_param: int | None = None,
    rng: np.random.Generator | None = None,
) -> list[float]:
    """Worst relative error per parameter between tape and central differences.

    ``loss_fn`` must rebuild the scalar loss from the current ``param.data``.
    Parameters are perturbed in place (their arrays are swapped, not
    mutated) and restored afterwards. With ``samples_per_param`` set, only
    that many randomly chosen entries of each parameter are probed.
    """
    rng = rng or np.random.default_rng(0)
    with GradTape() as tape:
        loss = loss_fn()
    grads = tape.gradient(loss, params)

    worst = []
    for p, g in zip(params, grads):
        base = p.data
        flat_idx = np.arange(base.size)
        if samples_per_param is not None and samples_per_param < base.size:
            flat_idx = rng.choice(base.size, samples_per_param, replace=False)
        errs = []
        for i in flat_idx:
            idx = np.unravel_index(i, base.shape)
            bumped = base.copy()
            bumped[idx] = base[idx] + h
            p.data = bumped
            up = float(loss_fn().data)
            bumped = base.copy()
            bumped[idx] = base[idx] - h
            p.data = bumped
            down = float(loss_fn().data)
            p.data = base
            fd = (up - down) / (2 * h)
            errs.append(float(relative_error(g[idx], fd)))
        worst.append(max(errs) if errs else 0.0)
    return worst
