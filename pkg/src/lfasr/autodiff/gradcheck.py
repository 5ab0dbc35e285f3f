"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Max over elements of ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def numeric_grad(fn: Callable[[], Tensor], t: Tensor, eps: float = 1e-5,
                 indices: Sequence[tuple] | None = None) -> np.ndarray:
    """Central differences of the scalar ``fn()`` w.r.t. entries of ``t``.

    With ``indices`` only those entries are probed and a 1-d array is returned.
    """
    probe = list(np.ndindex(t.shape)) if indices is None else list(indices)
    out = np.zeros(len(probe))
    for i, idx in enumerate(probe):
        orig = t.data[idx]
        t.data[idx] = orig + eps
        fp = float(fn().data)
        t.data[idx] = orig - eps
        fm = float(fn().data)
        t.data[idx] = orig
        out[i] = (fp - fm) / (2 * eps)
    return out.reshape(t.shape) if indices is None else out


def check_gradients(fn: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-5,
                    max_entries: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Return the worst relative error between backprop and finite differences
    of scalar ``fn()`` over ``inputs``. ``max_entries`` subsamples large tensors."""
    for t in inputs:
        t.grad = None
    out = fn()
    out.backward()
    worst = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros(t.shape)
        if max_entries is not None and t.size > max_entries:
            rng = rng or np.random.default_rng(0)
            flat = rng.choice(t.size, size=max_entries, replace=False)
            idx = [np.unravel_index(f, t.shape) for f in np.sort(flat)]
            num = numeric_grad(fn, t, eps, idx)
            ana = np.array([analytic[i] for i in idx])
        else:
            num = numeric_grad(fn, t, eps)
            ana = analytic
        worst = max(worst, relative_error(ana, num))
    return worst


def check_gradients_skipping_kinks(fn: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-6,
                                   max_entries: int | None = None, rng: np.random.Generator | None = None,
                                   kink_rtol: float = 1e-4) -> tuple[float, int]:
    """Like :func:`check_gradients` for piecewise-smooth ``fn``.

    An entry whose forward and backward one-sided differences disagree by more
    than ``kink_rtol`` straddles a kink within ``eps``; there is no derivative
    to compare there, so it is skipped. Returns ``(worst error, skipped)``.
    A wrong gradient at a smooth entry still shows: both one-sided slopes agree
    with each other and not with backprop.
    """
    for t in inputs:
        t.grad = None
    out = fn()
    f0 = float(out.data)
    out.backward()
    rng = rng or np.random.default_rng(0)
    worst, skipped = 0.0, 0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros(t.shape)
        if max_entries is not None and t.size > max_entries:
            flat = np.sort(rng.choice(t.size, size=max_entries, replace=False))
        else:
            flat = np.arange(t.size)
        for f in flat:
            idx = np.unravel_index(f, t.shape)
            orig = t.data[idx]
            t.data[idx] = orig + eps
            fp = float(fn().data)
            t.data[idx] = orig - eps
            fm = float(fn().data)
            t.data[idx] = orig
            fwd, bwd = (fp - f0) / eps, (f0 - fm) / eps
            if abs(fwd - bwd) > kink_rtol * max(abs(fwd), abs(bwd), 1e-6):
                skipped += 1
                continue
            worst = max(worst, relative_error(analytic[idx], (fp - fm) / (2 * eps)))
    return worst, skipped
