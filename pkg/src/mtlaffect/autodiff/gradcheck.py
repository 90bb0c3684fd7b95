"""Central finite-difference gradient checking.

Only forward evaluations are used, so the check is independent of the
backward rules it validates.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad


def numeric_grad(f: Callable[[], Tensor], t: Tensor, step: float = 1e-5,
                 indices: Sequence[tuple[int, ...]] | None = None) -> dict[tuple[int, ...], float]:
    if indices is None:
        indices = list(np.ndindex(t.shape))
    out = {}
    with no_grad():
        for idx in indices:
            orig = t.data[idx]
            t.data[idx] = orig + step
            fp = float(f().data)
            t.data[idx] = orig - step
            fm = float(f().data)
            t.data[idx] = orig
            out[idx] = (fp - fm) / (2.0 * step)
    return out


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def check_gradients(f: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-5,
                    max_per_tensor: int | None = None, rng: np.random.Generator | None = None,
                    floor: float = 1e-6) -> float:
    """Worst relative error between backward() and central differences over ``params``.

    With ``max_per_tensor`` only that many randomly chosen entries of each
    tensor are probed.
    """
    for p in params:
        p.zero_grad()
    f().backward()
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    rng = rng or np.random.default_rng(0)
    for p, ga in zip(params, analytic):
        idx = list(np.ndindex(p.shape))
        if max_per_tensor is not None and len(idx) > max_per_tensor:
            pick = rng.choice(len(idx), size=max_per_tensor, replace=False)
            idx = [idx[i] for i in sorted(pick)]
        num = numeric_grad(f, p, step, idx)
        for i, gn in num.items():
            worst = max(worst, relative_error(float(ga[i]), gn, floor))
    return worst
