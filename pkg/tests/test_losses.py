import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lfasr import autodiff as ad
from lfasr.autodiff import Tensor, check_gradients
from lfasr.core import LightField
from lfasr.losses import (depth_smoothness, loss_depth, loss_epi_gradient, loss_recon, total_loss,
                          warp_error)

from oracles import brute_force_losses


def sample(seed=0, K=2, M=3, N=3, H=5, W=6, C=1):
    rng = np.random.default_rng(seed)
    gt = rng.uniform(size=(M, N, H, W, C))
    warps = rng.uniform(size=(K, M, N, H, W, C))
    depth = rng.uniform(-2, 2, size=(M, N, H, W))
    pred = rng.uniform(-0.2, 1.2, size=(M, N, H, W, C))
    return gt, warps, depth, pred


@pytest.mark.parametrize("C", [1, 3])
def test_losses_match_brute_force(C):
    gt, warps, depth, pred = sample(1, C=C)
    ref = brute_force_losses(gt, warps, depth, pred, smooth_weight=0.01)
    rep = total_loss(gt, Tensor(warps), depth, pred, lambda_epi=0.7, smooth_weight=0.01)
    assert rep.l_d == pytest.approx(ref["l_d"], rel=1e-12)
    assert rep.l_b == pytest.approx(ref["l_b"], rel=1e-12)
    assert rep.l_e == pytest.approx(ref["l_e"], rel=1e-12)
    assert rep.total == pytest.approx(ref["l_d"] + ref["l_b"] + 0.7 * ref["l_e"], rel=1e-12)


def test_epi_loss_zero_for_identical_and_offset():
    gt, *_ = sample(2)
    assert float(loss_epi_gradient(gt, gt).data) == 0.0
    # Exactly zero whenever gt + c is representable without rounding...
    q = np.round(gt * 256) / 256
    assert float(loss_epi_gradient(q, q + 0.125).data) == 0.0
    # ...and at round-off level otherwise.
    assert float(loss_epi_gradient(gt, gt + 0.3).data) <= 1e-15


def test_epi_loss_positive_for_shuffled_views():
    gt, *_ = sample(3)
    pred = gt[::-1]
    assert float(loss_epi_gradient(gt, pred).data) > 0.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(-5, 5))
def test_epi_loss_offset_invariance_property(seed, c):
    gt, _, _, pred = sample(seed)
    a = float(loss_epi_gradient(gt, pred).data)
    b = float(loss_epi_gradient(gt, pred + c).data)
    assert b == pytest.approx(a, rel=1e-9, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_losses_nonnegative_property(seed):
    gt, warps, depth, pred = sample(seed)
    rep = total_loss(gt, Tensor(warps), depth, pred)
    assert rep.l_d >= 0 and rep.l_b >= 0 and rep.l_e >= 0


def test_recon_zero_iff_equal():
    gt, *_ = sample(4)
    assert float(loss_recon(gt, gt).data) == 0.0
    assert float(loss_recon(gt, gt + 1e-3).data) == pytest.approx(1e-3)


def test_warp_error_and_smoothness_zero_for_true_constant_case():
    gt, *_ = sample(5)
    warps = np.stack([gt, gt])
    assert float(warp_error(gt, Tensor(warps)).data) == 0.0
    assert float(depth_smoothness(np.full((3, 3, 5, 6), 2.0)).data) == 0.0


def test_smoothness_of_ramp():
    depth = np.broadcast_to(np.arange(6.0), (3, 3, 5, 6))
    # |dx| = 1 everywhere, |dy| = 0.
    assert float(depth_smoothness(depth).data) == 1.0


def test_lambda_zero_removes_epi_term():
    gt, warps, depth, pred = sample(6)
    r0 = total_loss(gt, Tensor(warps), depth, pred, lambda_epi=0.0)
    assert r0.total == pytest.approx(r0.l_d + r0.l_b)
    with pytest.raises(ValueError):
        total_loss(gt, Tensor(warps), depth, pred, lambda_epi=-1.0)


def test_shape_mismatch_errors():
    gt, warps, depth, pred = sample(7)
    with pytest.raises(ValueError):
        loss_recon(gt, pred[:, :, :4])
    with pytest.raises(ValueError):
        loss_depth(gt, Tensor(warps), depth[:2])
    with pytest.raises(ValueError):
        warp_error(gt, Tensor(warps[:, :2]))


def test_accepts_light_field_objects():
    gt, *_ = sample(8)
    assert float(loss_recon(LightField(gt), gt).data) == 0.0


def _kink_free(seed):
    # Residuals bounded away from zero so |.| is smooth at every entry.
    rng = np.random.default_rng(seed)
    gt = rng.uniform(size=(2, 2, 4, 4, 1))
    sign = rng.choice([-1.0, 1.0], size=gt.shape)
    return gt, rng, sign


def test_loss_recon_gradcheck():
    gt, rng, sign = _kink_free(9)
    pred = Tensor(gt + sign * rng.uniform(0.1, 0.3, size=gt.shape), requires_grad=True)
    assert check_gradients(lambda: loss_recon(gt, pred), [pred]) <= 1e-6


def test_loss_epi_gradcheck():
    rng = np.random.default_rng(10)
    gt = rng.uniform(size=(2, 2, 4, 4, 1))
    pred = Tensor(gt + rng.standard_normal(gt.shape), requires_grad=True)
    # Piecewise linear: central differences are exact unless a step crosses a
    # kink, so a wide step keeps round-off off the exactly-zero entries.
    assert check_gradients(lambda: loss_epi_gradient(gt, pred), [pred], eps=1e-3) <= 1e-6


def test_loss_depth_gradcheck():
    gt, rng, sign = _kink_free(11)
    warps = Tensor(gt[None] + sign[None] * rng.uniform(0.1, 0.3, size=(2,) + gt.shape), requires_grad=True)
    depth = Tensor(np.cumsum(rng.uniform(0.1, 0.3, size=(2, 2, 4, 4)), axis=-1)
                   + np.cumsum(rng.uniform(0.1, 0.3, size=(2, 2, 4, 1)), axis=-2), requires_grad=True)
    assert check_gradients(lambda: loss_depth(gt, warps, depth), [warps, depth]) <= 1e-6
