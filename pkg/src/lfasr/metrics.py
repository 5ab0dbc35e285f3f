"""PSNR, SSIM, EPI-gradient distance and parallax-edge PR curves."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import LightField, to_luminance

SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def _array(x) -> np.ndarray:
    return np.asarray(x.views if isinstance(x, LightField) else x, dtype=np.float64)


def psnr(gt, pred, peak: float = 1.0) -> float:
    """``10 log10(peak^2 / MSE)``; identical inputs give ``math.inf``."""
    a, b = _array(gt), _array(pred)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    # Correctly rounded sum: a uniform error gives the same MSE at any size.
    sq = (a - b) ** 2
    mse = math.fsum(sq.ravel()) / sq.size
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    a = sliding_window_view(img, g.size, axis=0) @ g
    return sliding_window_view(a, g.size, axis=1) @ g


def _gray(x) -> np.ndarray:
    a = _array(x)
    if a.ndim == 3:
        if a.shape[-1] not in (1, 3):
            raise ValueError(f"expected (H, W), (H, W, 1) or (H, W, 3), got {a.shape}")
        a = to_luminance(a)[..., 0]
    if a.ndim != 2:
        raise ValueError(f"ssim works on single images, got shape {a.shape}")
    return a


def ssim(gt, pred, data_range: float = 1.0) -> float:
    """Mean SSIM over all valid 11x11 Gaussian windows (sigma 1.5)."""
    a, b = _gray(gt), _gray(pred)
    if a.shape != b.shape:
        raise ValueError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"image {a.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    g = gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a**2
    sbb = _filter_valid(b * b, g) - mu_b**2
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


def epi_gradient_distance(gt, pred) -> float:
    from .losses import loss_epi_gradient

    return float(loss_epi_gradient(_array(gt), _array(pred)).data)


# -- parallax-edge precision/recall -----------------------------------------------------

def epi_gradient_magnitudes(lf) -> tuple[np.ndarray, np.ndarray]:
    """Forward-difference gradient magnitude of every EPI of the luminance.

    Returns ``(horizontal, vertical)`` with shapes ``(M-1, N, H, W-1)`` (EPIs
    indexed by ``(v, y)``) and ``(M, N-1, H-1, W)`` (EPIs indexed by ``(u, x)``).
    """
    a = to_luminance(_array(lf))[..., 0]
    if a.shape[0] < 2 or a.shape[1] < 2:
        raise ValueError("parallax edges need at least 2 views along each angular axis")
    gx = np.diff(a, axis=3)[:-1]
    gu = np.diff(a, axis=0)[..., :-1]
    gy = np.diff(a, axis=2)[:, :-1]
    gv = np.diff(a, axis=1)[:, :, :-1]
    return np.hypot(gx, gu), np.hypot(gy, gv)


@dataclass
class PRCurve:
    thresholds: list
    precision: list
    recall: list
    tau_gt: float
    label: str = "EPI-gradient-magnitude parallax edges"

    def rows(self):
        return list(zip(self.thresholds, self.precision, self.recall))


def parallax_pr_curve(gt, pred, tau_gt: float, thresholds) -> PRCurve:
    """Precision/recall of predicted EPI edge pixels against ground-truth edges.

    Ground-truth edges are pixels whose EPI gradient magnitude is at least
    ``tau_gt``; predicted edges use each threshold in turn. Precision is
    averaged over every EPI of both orientations, taking 1 for an EPI with no
    predicted edges. Recall is averaged over EPIs that contain ground-truth
    edges.
    """
    gh, gv = epi_gradient_magnitudes(gt)
    ph, pv = epi_gradient_magnitudes(pred)
    if gh.shape != ph.shape or gv.shape != pv.shape:
        raise ValueError("gt and pred light fields differ in shape")
    eh, ev = gh >= tau_gt, gv >= tau_gt
    # EPI (v, y) reduces over (u, x); EPI (u, x) reduces over (v, y).
    h_axes, v_axes = (0, 3), (1, 2)
    gt_h, gt_v = eh.sum(axis=h_axes).ravel(), ev.sum(axis=v_axes).ravel()
    gt_counts = np.concatenate([gt_h, gt_v])
    if gt_counts.sum() == 0:
        raise ValueError(f"no ground-truth parallax edges at tau_gt={tau_gt}; lower tau_gt")
    has_gt = gt_counts > 0
    precision, recall = [], []
    for t in thresholds:
        qh, qv = ph >= t, pv >= t
        pred_counts = np.concatenate([qh.sum(axis=h_axes).ravel(), qv.sum(axis=v_axes).ravel()])
        hits = np.concatenate([(qh & eh).sum(axis=h_axes).ravel(), (qv & ev).sum(axis=v_axes).ravel()])
        with np.errstate(invalid="ignore", divide="ignore"):
            p = np.where(pred_counts > 0, hits / np.maximum(pred_counts, 1), 1.0)
            r = hits[has_gt] / gt_counts[has_gt]
        precision.append(float(p.mean()))
        recall.append(float(r.mean()))
    return PRCurve([float(t) for t in thresholds], precision, recall, float(tau_gt))


# -- whole-light-field report ---------------------------------------------------------------

DEFAULT_THRESHOLDS = tuple(np.round(np.linspace(0.01, 0.3, 30), 4))
DEFAULT_TAU_GT = 0.05


@dataclass
class EvalReport:
    scene: str
    method: str
    psnr: np.ndarray  # (M, N)
    ssim: np.ndarray  # (M, N)
    input_mask: np.ndarray  # (M, N) bool, True at input positions
    epi_distance: float
    pr: PRCurve | None = None
    extra: dict = field(default_factory=dict)

    def mean_psnr(self, novel_only: bool = True) -> float:
        sel = ~self.input_mask if novel_only and (~self.input_mask).any() else np.ones_like(self.input_mask)
        return float(np.mean(self.psnr[sel]))

    def mean_ssim(self, novel_only: bool = True) -> float:
        sel = ~self.input_mask if novel_only and (~self.input_mask).any() else np.ones_like(self.input_mask)
        return float(np.mean(self.ssim[sel]))


def evaluate_light_field(gt, pred, sources, scene: str = "", method: str = "",
                         tau_gt: float = DEFAULT_TAU_GT, thresholds=DEFAULT_THRESHOLDS,
                         with_pr: bool = True) -> EvalReport:
    a, b = _array(gt), _array(pred)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    M, N = a.shape[:2]
    ps = np.zeros((M, N))
    ss = np.zeros((M, N))
    for u in range(M):
        for v in range(N):
            ps[u, v] = psnr(a[u, v], b[u, v])
            ss[u, v] = ssim(a[u, v], b[u, v])
    mask = np.zeros((M, N), dtype=bool)
    for u, v in sources:
        mask[u, v] = True
    pr = None
    if with_pr:
        try:
            pr = parallax_pr_curve(a, b, tau_gt, thresholds)
        except ValueError:
            pr = None
    return EvalReport(scene, method, ps, ss, mask, epi_gradient_distance(a, b), pr)


EVAL_FIELDS = ["method", "scene", "u", "v", "is_input", "psnr", "ssim"]


def summary_row(reports: list[EvalReport], method: str) -> dict:
    return {
        "method": method, "scene": "SUMMARY", "u": "", "v": "", "is_input": "",
        "psnr": float(np.mean([r.mean_psnr() for r in reports])),
        "ssim": float(np.mean([r.mean_ssim() for r in reports])),
    }


def write_eval_csv(reports: list[EvalReport], path) -> None:
    """One row per view of every report, then one summary row per method
    (mean over scenes of the novel-view means)."""
    methods = []
    for r in reports:
        if r.method not in methods:
            methods.append(r.method)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=EVAL_FIELDS)
        w.writeheader()
        for r in reports:
            M, N = r.psnr.shape
            for u in range(M):
                for v in range(N):
                    w.writerow({"method": r.method, "scene": r.scene, "u": u, "v": v,
                                "is_input": int(r.input_mask[u, v]), "psnr": repr(float(r.psnr[u, v])),
                                "ssim": repr(float(r.ssim[u, v]))})
        for m in methods:
            row = summary_row([r for r in reports if r.method == m], m)
            row["psnr"], row["ssim"] = repr(row["psnr"]), repr(row["ssim"])
            w.writerow(row)


def read_eval_summary(path) -> dict[str, tuple[float, float]]:
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["scene"] == "SUMMARY":
                out[row["method"]] = (float(row["psnr"]), float(row["ssim"]))
    return out


def average_pr(curves: list[PRCurve]) -> PRCurve:
    curves = [c for c in curves if c is not None]
    if not curves:
        raise ValueError("no PR curves to average")
    p = np.mean([c.precision for c in curves], axis=0)
    r = np.mean([c.recall for c in curves], axis=0)
    return PRCurve(curves[0].thresholds, p.tolist(), r.tolist(), curves[0].tau_gt, curves[0].label)


def write_pr_csv(curve: PRCurve, path, method: str = "") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "threshold", "precision", "recall"])
        for t, p, r in curve.rows():
            w.writerow([method, repr(t), repr(p), repr(r)])
