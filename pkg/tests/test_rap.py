"""Evidential Dirichlet head: KL oracle, NLL forms, schedules, uncertainty stats."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evidscan import tensor as T
from evidscan.rap import (
    EdlLossConfig,
    adaptive_lambda,
    batch_norm_entropy,
    dirichlet_from_evidence,
    edl_loss,
    edl_nll,
    evidence,
    init_head,
    kl_to_uniform,
    uncertainty_summary,
)
from evidscan.rng import Rng
from evidscan.special import digamma_np, lgamma_np
from evidscan.tensor import DomainError, Tensor, backward, tape

# KL( Dir(2,1) || Dir(1,1) ) by hand:
#   lnG(3) - lnG(2) - lnG(1) - lnG(2) + (2-1)(psi(2) - psi(3))
#   = ln 2 + (psi(2) - psi(3)) = ln 2 - 1/2
KL_2_1 = math.log(2.0) - 0.5  # 0.19314718...


def test_kl_hand_derived_value():
    got = kl_to_uniform(Tensor(np.array([2.0, 1.0]))).item()
    assert got == pytest.approx(KL_2_1, abs=1e-12)
    assert got == pytest.approx(0.19315, abs=1e-5)


def test_kl_zero_at_uniform():
    for k in (2, 3, 7):
        assert kl_to_uniform(Tensor(np.ones(k))).item() == 0.0


def test_kl_batched_matches_per_row():
    rows = np.array([[2.0, 1.0], [1.0, 1.0], [3.5, 1.2]])
    batched = kl_to_uniform(Tensor(rows)).data
    singles = [kl_to_uniform(Tensor(r)).item() for r in rows]
    np.testing.assert_allclose(batched, singles, rtol=1e-12)


def test_kl_rejects_alpha_below_one():
    with pytest.raises(DomainError):
        kl_to_uniform(Tensor(np.array([0.5, 2.0])))


def test_kl_nonnegative_property():
    rng = np.random.default_rng(0)
    for _ in range(50):
        alpha = 1.0 + rng.gamma(2.0, 2.0, size=rng.integers(2, 9))
        assert kl_to_uniform(Tensor(alpha)).item() >= -1e-12


def test_kl_gradient_vs_closed_form():
    # d/da_k KL = psi(a_k)(a_k - 1)' terms; verify against finite differences
    alpha0 = np.array([2.0, 1.5, 3.0])
    a = Tensor(alpha0.copy(), requires_grad=True)
    with tape() as tp:
        backward(kl_to_uniform(a), tp)
    h = 1e-6
    for k in range(3):
        ap = alpha0.copy()
        ap[k] += h
        am = alpha0.copy()
        am[k] -= h
        fd = (kl_to_uniform(Tensor(ap)).item() - kl_to_uniform(Tensor(am)).item()) / (2 * h)
        assert a.grad[k] == pytest.approx(fd, rel=1e-5)


def test_dirichlet_from_evidence_fields():
    d = dirichlet_from_evidence(np.array([1.0, 0.0, 3.0]))
    np.testing.assert_allclose(d.alpha, [2.0, 1.0, 4.0])
    assert d.S == 7.0
    np.testing.assert_allclose(d.p_hat, [2 / 7, 1 / 7, 4 / 7])
    assert d.label == 2
    assert d.entropy == pytest.approx(-(d.p_hat * np.log(d.p_hat)).sum())
    assert abs(d.p_hat.sum() - 1.0) < 1e-12


def test_dirichlet_rejects_negative_evidence():
    with pytest.raises(ValueError):
        dirichlet_from_evidence(np.array([-0.1, 1.0]))


def test_evidence_head_nonnegative():
    params = init_head(16, 5, Rng(0))
    z = Tensor(np.random.default_rng(1).normal(scale=3.0, size=(4, 16)).astype(np.float32))
    e = evidence(z, params)
    assert e.shape == (4, 5)
    assert np.all(e.data >= 0.0)


def test_digamma_ce_oracle():
    alpha = np.array([2.0, 1.0, 4.0])
    y = np.array([0.0, 0.0, 1.0])
    want = digamma_np(7.0) - digamma_np(4.0)
    got = edl_nll(Tensor(alpha), Tensor(y), "digamma_ce").item()
    assert got == pytest.approx(float(want), rel=1e-12)


def test_log_marginal_oracle():
    alpha = np.array([2.0, 1.0, 4.0])
    y = np.array([1.0, 0.0, 0.0])
    got = edl_nll(Tensor(alpha), Tensor(y), "log_marginal").item()
    assert got == pytest.approx(math.log(7.0) - math.log(2.0), rel=1e-12)


def test_brier_oracle():
    alpha = np.array([2.0, 2.0])
    y = np.array([1.0, 0.0])
    p = alpha / 4.0
    want = ((y - p) ** 2 + p * (1 - p) / 5.0).sum()
    got = edl_nll(Tensor(alpha), Tensor(y), "brier").item()
    assert got == pytest.approx(float(want), rel=1e-12)


def test_nll_rejects_bad_labels():
    with pytest.raises(ValueError):
        edl_nll(Tensor(np.ones(3)), Tensor(np.array([0.5, 0.5, 0.0])))
    with pytest.raises(ValueError):
        edl_nll(Tensor(np.ones(3)), Tensor(np.zeros(3)), "brier")
    with pytest.raises(ValueError):
        edl_nll(Tensor(np.ones(3)), Tensor(np.array([1.0, 0.0, 0.0])), "wat")


def test_adaptive_lambda_defaults():
    # coef 5e-3, scale 1.2, fully uncertain batch -> 5e-3 * 1.2 = 6e-3
    assert adaptive_lambda(5e-3, 1.2, 1.0) == pytest.approx(6e-3, rel=1e-12)
    assert adaptive_lambda(5e-3, 1.2, 0.0) == pytest.approx(5e-3, rel=1e-12)


def test_fixed_and_anneal_schedules():
    assert adaptive_lambda(1e-2, 1.2, 0.7, "fixed", epoch=99) == 1e-2
    assert adaptive_lambda(1e-2, 1.2, 0.7, "anneal", epoch=25, anneal_horizon=50) == pytest.approx(5e-3)
    assert adaptive_lambda(1e-2, 1.2, 0.7, "anneal", epoch=200, anneal_horizon=50) == 1e-2
    with pytest.raises(ValueError):
        adaptive_lambda(1e-2, 1.2, 0.5, "warp")


def test_batch_norm_entropy_bounds():
    assert batch_norm_entropy(np.ones((3, 4))) == pytest.approx(1.0)
    peaked = np.array([[1000.0, 1.0, 1.0, 1.0]])
    assert batch_norm_entropy(peaked) < 0.05


def test_edl_loss_masking_spares_true_class():
    # with masking, growing only true-class evidence must not raise the KL term
    cfg = EdlLossConfig(schedule="fixed")
    y = Tensor(np.array([[1.0, 0.0, 0.0]]))
    lo = Tensor(np.array([[2.0, 1.0, 1.0]]))
    hi = Tensor(np.array([[9.0, 1.0, 1.0]]))
    masked_lo = (y.data + (1 - y.data) * lo.data)
    masked_hi = (y.data + (1 - y.data) * hi.data)
    np.testing.assert_array_equal(masked_lo, masked_hi)  # both collapse to all-ones
    assert kl_to_uniform(Tensor(masked_hi)).data[0] == 0.0


def test_edl_loss_unmasked_penalizes_all_evidence():
    cfg = EdlLossConfig(schedule="fixed", kl_masking=False, kl_coef=1.0)
    y = Tensor(np.array([[1.0, 0.0]]))
    lo, _ = edl_loss(Tensor(np.array([[2.0, 1.0]])), y, cfg)
    hi, _ = edl_loss(Tensor(np.array([[20.0, 1.0]])), y, cfg)
    # the KL half of the loss must grow with unmasked true-class evidence
    kl_lo = kl_to_uniform(Tensor(np.array([2.0, 1.0]))).item()
    kl_hi = kl_to_uniform(Tensor(np.array([20.0, 1.0]))).item()
    assert kl_hi > kl_lo


def test_edl_loss_returns_lambda_in_range():
    cfg = EdlLossConfig()  # adaptive schedule
    alpha = Tensor(np.abs(np.random.default_rng(2).normal(size=(8, 4))) + 1.0)
    labels = np.eye(4)[np.random.default_rng(3).integers(0, 4, 8)]
    loss, lam = edl_loss(alpha, Tensor(labels), cfg)
    assert loss.size == 1
    assert np.isfinite(loss.item())
    assert cfg.kl_coef <= lam <= cfg.kl_coef * cfg.kl_scale


def test_config_validation():
    with pytest.raises(ValueError):
        EdlLossConfig(nll_form="xent").validate()
    with pytest.raises(ValueError):
        EdlLossConfig(schedule="linear").validate()
    with pytest.raises(ValueError):
        EdlLossConfig(kl_coef=-1.0).validate()


def test_uncertainty_summary():
    d = dirichlet_from_evidence(np.array([3.0, 0.0]))
    conf, ent, total = uncertainty_summary(d)
    assert conf == pytest.approx(4.0 / 5.0)
    assert ent == pytest.approx(d.entropy)
    assert total == 5.0


@given(st.lists(st.floats(min_value=0.0, max_value=50.0, allow_nan=False),
                min_size=2, max_size=10))
@settings(max_examples=60, deadline=None)
def test_p_hat_sums_to_one(ev):
    d = dirichlet_from_evidence(np.asarray(ev))
    assert d.p_hat.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(d.p_hat > 0)


@given(st.floats(min_value=0.0, max_value=1.0),
       st.floats(min_value=1e-4, max_value=0.1),
       st.floats(min_value=1.0, max_value=3.0))
@settings(max_examples=60, deadline=None)
def test_adaptive_lambda_bounds_property(h, coef, scale):
    lam = adaptive_lambda(coef, scale, h)
    assert coef - 1e-15 <= lam <= coef * scale + 1e-15
