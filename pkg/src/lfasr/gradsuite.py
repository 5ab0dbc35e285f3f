"""Finite-difference checks of every differentiable op, each loss and the full
training objective on a tiny model.

Cases are split by smoothness. Smooth cases must match to ``tol / 100``.
Cases involving ``|.|``, ``relu`` or bilinear cell boundaries get ``tol``;
their inputs are still drawn away from kinks where that is cheap to arrange.
The full objective cannot be arranged that way, so probes straddling a kink
are detected and skipped; more than ``MAX_SKIPPED_FRACTION`` of them fails
the case.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, check_gradients, check_gradients_skipping_kinks
from .losses import loss_depth, loss_epi_gradient, loss_recon, total_loss
from .model import LFASRModel, ModelConfig

MAX_SKIPPED_FRACTION = 0.1
# Ops linear in each input entry: central differences are exact at any step,
# so a wide one keeps round-off far below the tolerance.
LINEAR_EPS = 1e-2


@dataclass
class GradCase:
    name: str
    error: float
    tol: float
    seconds: float
    probed: int = 0
    skipped: int = 0

    @property
    def passed(self) -> bool:
        return self.error <= self.tol and self.skipped <= MAX_SKIPPED_FRACTION * max(self.probed, 1)


def _param(rng, *shape, lo=None, hi=None):
    data = rng.standard_normal(shape) if lo is None else rng.uniform(lo, hi, size=shape)
    return Tensor(data, requires_grad=True)


def _projected(out_fn, shape, rng):
    proj = rng.standard_normal(shape)
    return lambda: ad.sum(ad.mul(out_fn(), proj))


def _away_from_zero(rng, shape, gap=0.2):
    sign = rng.choice([-1.0, 1.0], size=shape)
    return sign * rng.uniform(gap, 1.0, size=shape)


def _op_cases(rng):
    """(name, fn, inputs, kinked, eps) for the primitive ops."""
    cases = []
    a, b = _param(rng, 3, 4), _param(rng, 3, 4)
    row = _param(rng, 1, 4)
    cases.append(("add", _projected(lambda: ad.add(a, row), (3, 4), rng), [a, row], False, LINEAR_EPS))
    cases.append(("sub", _projected(lambda: ad.sub(a, b), (3, 4), rng), [a, b], False, LINEAR_EPS))
    cases.append(("mul", _projected(lambda: ad.mul(a, row), (3, 4), rng), [a, row], False, LINEAR_EPS))
    cases.append(("tanh", _projected(lambda: ad.tanh(a), (3, 4), rng), [a], False, 1e-5))
    k = Tensor(_away_from_zero(rng, (3, 4)), requires_grad=True)
    cases.append(("abs", _projected(lambda: ad.abs(k), (3, 4), rng), [k], True, 1e-5))
    cases.append(("relu", _projected(lambda: ad.relu(k), (3, 4), rng), [k], True, 1e-5))
    cases.append(("sum", lambda: ad.sum(ad.mul(ad.sum(a, axis=1), np.arange(3.0))), [a], False, LINEAR_EPS))
    cases.append(("mean", lambda: ad.sum(ad.mul(ad.mean(a, axis=0), np.arange(4.0))), [a], False, LINEAR_EPS))
    cases.append(("reshape", _projected(lambda: ad.reshape(a, (2, 6)), (2, 6), rng), [a], False, LINEAR_EPS))
    cases.append(("transpose", _projected(lambda: ad.transpose(a, (1, 0)), (4, 3), rng), [a], False, LINEAR_EPS))
    idx = (np.array([0, 2, 0]), slice(1, 3))
    cases.append(("getitem", _projected(lambda: ad.getitem(a, idx), (3, 2), rng), [a], False, LINEAR_EPS))
    cases.append(("stack", _projected(lambda: ad.stack([a, b], axis=1), (3, 2, 4), rng), [a, b], False, LINEAR_EPS))
    cases.append(("concat", _projected(lambda: ad.concat([a, b], axis=0), (6, 4), rng), [a, b], False, LINEAR_EPS))
    cases.append(("diff", _projected(lambda: ad.diff(a, 1), (3, 3), rng), [a], False, LINEAR_EPS))

    x, w, bias = _param(rng, 2, 3, 7, 8), _param(rng, 4, 3, 3, 3), _param(rng, 4)
    cases.append(("conv2d", _projected(lambda: ad.conv2d(x, w, bias, 1, 2, 2), (2, 4, 7, 8), rng),
                  [x, w, bias], False, LINEAR_EPS))
    cases.append(("conv2d_stride", _projected(lambda: ad.conv2d(x, w, None, 2, 1), (2, 4, 4, 4), rng),
                  [x, w], False, LINEAR_EPS))
    x3, w3 = _param(rng, 1, 2, 3, 5, 5), _param(rng, 3, 2, 3, 3, 3)
    cases.append(("conv3d", _projected(lambda: ad.conv3d(x3, w3, None, 1, 1), (1, 3, 3, 5, 5), rng),
                  [x3, w3], False, LINEAR_EPS))
    xv = _param(rng, 2 * 9, 3, 4, 5)
    cases.append(("reshape_views", _projected(lambda: ad.reshape_views(xv, "angular", 2, (3, 3), (4, 5)),
                                              (2 * 20, 3, 3, 3), rng), [xv], False, LINEAR_EPS))

    img = _param(rng, 2, 6, 7)
    # Sample points strictly inside cells, plus a few outside the frame.
    base = rng.integers(0, 5, size=(5, 5, 2)).astype(float)
    crd = Tensor(base + rng.uniform(0.2, 0.8, size=(5, 5, 2)), requires_grad=True)
    crd.data[0, 0] = [-2.5, 3.3]
    cases.append(("bilinear_sample", _projected(lambda: ad.bilinear_sample(img, crd), (2, 5, 5), rng),
                  [img, crd], True, 1e-6))
    return cases


def _loss_cases(rng):
    cases = []
    gt = rng.uniform(size=(2, 2, 4, 4, 1))
    pred = Tensor(gt + _away_from_zero(rng, gt.shape, 0.1) * 0.3, requires_grad=True)
    cases.append(("loss_recon", lambda: loss_recon(gt, pred), [pred], True, 1e-6))
    pe = Tensor(gt + rng.standard_normal(gt.shape), requires_grad=True)
    # Piecewise linear; a wide step keeps round-off off the zero-gradient entries.
    cases.append(("loss_epi_gradient", lambda: loss_epi_gradient(gt, pe), [pe], True, 1e-3))
    warps = Tensor(gt[None] + _away_from_zero(rng, (2,) + gt.shape, 0.1) * 0.3, requires_grad=True)
    depth = Tensor(np.cumsum(rng.uniform(0.1, 0.3, size=(2, 2, 4, 4)), axis=-1)
                   + np.cumsum(rng.uniform(0.1, 0.3, size=(2, 2, 4, 1)), axis=-2), requires_grad=True)
    cases.append(("loss_depth", lambda: loss_depth(gt, warps, depth), [warps, depth], True, 1e-6))
    return cases


def tiny_model(seed: int = 0) -> LFASRModel:
    """2x2 -> 3x3 model with narrow layers and non-zero initial depth and
    residual, so every parameter carries gradient.

    Biases are randomised too: with zero biases a dead channel leaves the next
    layer's pre-activations at exactly 0, a relu kink at the probe point.
    """
    m = LFASRModel(ModelConfig(grid=(3, 3), depth_width=3, blend_width=3, blend_blocks=1, tail_widths=(2, 2),
                               seed=seed))
    rng = np.random.default_rng([seed, 7])
    for name, p in m.named_parameters().items():
        if name.endswith("bias"):
            p.data = rng.uniform(-0.1, 0.1, size=p.shape)
    last = m.depth.convs[-1]
    last.weight.data = rng.standard_normal(last.weight.shape) * 0.003
    # Disparities of roughly +-1.5 px after the 21.5 * tanh bound.
    last.bias.data = rng.uniform(-0.07, 0.07, size=last.bias.shape)
    tail = m.blend.tail[-1]
    tail.weight.data = rng.standard_normal(tail.weight.shape) * 0.05
    return m


def _objective_case(rng, max_entries):
    m = tiny_model()
    src = rng.uniform(size=(4, 8, 8, 1))
    gt = rng.uniform(size=(3, 3, 8, 8, 1))
    params = list(m.named_parameters().values())

    def objective():
        out = m.forward(Tensor(src))
        return total_loss(gt, out.warps, out.depth, out.pred, 1.0).tensor

    return ("total_objective", objective, params, True, 1e-5, max_entries)


def run_suite(tol: float = 1e-4, seed: int = 0, max_entries: int = 12,
              progress: Callable[[GradCase], None] | None = None) -> list[GradCase]:
    rng = np.random.default_rng(seed)
    specs = [c + (None,) for c in _op_cases(rng) + _loss_cases(rng)]
    specs.append(_objective_case(rng, max_entries))
    results = []
    for name, fn, inputs, kinked, eps, sub in specs:
        t0 = time.perf_counter()
        probed = sum(t.size if sub is None else min(t.size, sub) for t in inputs)
        skipped = 0
        if sub is None:
            err = check_gradients(fn, inputs, eps=eps)
        else:
            err, skipped = check_gradients_skipping_kinks(fn, inputs, eps=eps, max_entries=sub,
                                                          rng=np.random.default_rng(seed))
        case = GradCase(name, err, tol if kinked else tol / 100, time.perf_counter() - t0, probed, skipped)
        results.append(case)
        if progress is not None:
            progress(case)
    return results
