"""Training objectives: warp/depth loss, reconstruction loss, EPI gradient loss.

All sums are normalized to means so the weights do not depend on grid or
patch size.
"""
from __future__ import annotations

from dataclasses import dataclass

from . import autodiff as ad
from .autodiff import Tensor
from .core import DepthField, LightField
from .warp import WarpStack

DEFAULT_SMOOTH_WEIGHT = 0.01

_LF_X, _LF_Y, _LF_U, _LF_V = 3, 2, 0, 1


def _tensor(x) -> Tensor:
    if isinstance(x, LightField):
        return Tensor(x.views)
    if isinstance(x, DepthField):
        return Tensor(x.disparity)
    if isinstance(x, WarpStack):
        return x.values
    return ad.as_tensor(x)


def _same_shape(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def depth_smoothness(depth) -> Tensor:
    """Anisotropic total variation ``mean|dD/dx| + mean|dD/dy|``."""
    d = _tensor(depth)
    gx, gy = ad.spatial_gradient(d)
    return ad.add(ad.mean(ad.abs(gx)), ad.mean(ad.abs(gy)))


def warp_error(gt, warp_stack) -> Tensor:
    """Mean absolute error between every warped view and its target."""
    g, w = _tensor(gt), _tensor(warp_stack)
    if w.shape[1:] != g.shape:
        raise ValueError(f"warp stack {w.shape} does not match light field {g.shape}")
    return ad.mean(ad.abs(ad.sub(w, g)))


def loss_depth(gt, warp_stack, depth, smooth_weight: float = DEFAULT_SMOOTH_WEIGHT) -> Tensor:
    d = _tensor(depth)
    g = _tensor(gt)
    if d.shape != g.shape[:4]:
        raise ValueError(f"depth {d.shape} does not match light field {g.shape}")
    return ad.add(warp_error(gt, warp_stack), ad.mul(depth_smoothness(d), smooth_weight))


def loss_recon(gt, pred) -> Tensor:
    g, p = _tensor(gt), _tensor(pred)
    _same_shape(g, p, "loss_recon")
    return ad.mean(ad.abs(ad.sub(g, p)))


def loss_epi_gradient(gt, pred) -> Tensor:
    """L1 distance between EPI gradients of ``gt`` and ``pred``.

    Horizontal EPIs contribute their ``x`` and ``u`` gradients, vertical EPIs
    their ``y`` and ``v`` gradients; each term is a mean over all EPIs of that
    orientation. Since differences are linear this is computed on the
    residual ``gt - pred``.
    """
    g, p = _tensor(gt), _tensor(pred)
    _same_shape(g, p, "loss_epi_gradient")
    M, N, H, W = g.shape[:4]
    if min(M, N, H, W) < 2:
        raise ValueError(f"EPI gradients need every angular and spatial extent >= 2, got {g.shape[:4]}")
    r = ad.sub(g, p)
    terms = [ad.mean(ad.abs(ad.diff(r, axis))) for axis in (_LF_X, _LF_U, _LF_Y, _LF_V)]
    out = terms[0]
    for t in terms[1:]:
        out = ad.add(out, t)
    return out


@dataclass
class LossReport:
    l_d: float
    l_b: float
    l_e: float
    total: float
    warp_error: float
    smoothness: float
    lambda_epi: float
    tensor: Tensor | None = None

    def as_row(self) -> dict:
        return {"l_d": self.l_d, "l_b": self.l_b, "l_e": self.l_e, "total": self.total}

    @classmethod
    def mean(cls, reports: list["LossReport"]) -> "LossReport":
        """Average over a batch; the tensor is the mean of the totals."""
        n = len(reports)
        avg = {k: sum(getattr(r, k) for r in reports) / n
               for k in ("l_d", "l_b", "l_e", "total", "warp_error", "smoothness")}
        t = reports[0].tensor
        for r in reports[1:]:
            t = ad.add(t, r.tensor)
        return cls(**avg, lambda_epi=reports[0].lambda_epi, tensor=ad.mul(t, 1.0 / n))


def total_loss(gt, warp_stack, depth, pred, lambda_epi: float = 1.0,
               smooth_weight: float = DEFAULT_SMOOTH_WEIGHT) -> LossReport:
    """``l_d + l_b + lambda * l_e``. The differentiable total sits in
    ``report.tensor``."""
    if lambda_epi < 0:
        raise ValueError("lambda_epi must be >= 0")
    we = warp_error(gt, warp_stack)
    sm = depth_smoothness(depth)
    l_d = ad.add(we, ad.mul(sm, smooth_weight))
    l_b = loss_recon(gt, pred)
    l_e = loss_epi_gradient(gt, pred)
    total = ad.add(ad.add(l_d, l_b), ad.mul(l_e, lambda_epi))
    return LossReport(float(l_d.data), float(l_b.data), float(l_e.data), float(total.data),
                      float(we.data), float(sm.data), float(lambda_epi), total)
