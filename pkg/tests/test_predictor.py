import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from siamgrad.numerics import DimensionError, l2_normalize, sym_eig
from siamgrad.predictor import (
    DIAGNOSTIC_FIELDS,
    CorrelationState,
    balance_lambda,
    batch_correlation,
    compute_predictor,
    diagnostics_row,
    update_correlation,
)


def unit(rng, n, c):
    return l2_normalize(rng.standard_normal((n, c)))


def test_first_update_has_unit_trace():
    rng = np.random.default_rng(0)
    s = update_correlation(CorrelationState(5), unit(rng, 8, 5), unit(rng, 8, 5))
    assert s.initialized and s.step == 1
    assert abs(s.trace - 1.0) < 1e-12


def test_repeated_identical_update_is_fixed_point():
    rng = np.random.default_rng(1)
    b1, b2 = unit(rng, 6, 4), unit(rng, 6, 4)
    s = update_correlation(CorrelationState(4, 0.5), b1, b2)
    s = update_correlation(s, b1, b2)
    tmp = batch_correlation(b1, b2)
    np.testing.assert_allclose(s.f, 0.5 * (tmp + tmp.T), atol=1e-15)


def test_unrolled_recurrence():
    rng = np.random.default_rng(2)
    rho, k = 0.8, 6
    batches = [(unit(rng, 4, 3), unit(rng, 4, 3)) for _ in range(k)]
    s = CorrelationState(3, rho)
    for b in batches:
        s = update_correlation(s, *b)
    tmps = [batch_correlation(*b) for b in batches]
    expect = rho ** (k - 1) * tmps[0]
    for j in range(1, k):
        expect = expect + (1 - rho) * rho ** (k - 1 - j) * tmps[j]
    np.testing.assert_allclose(s.f, expect, atol=1e-10)


def test_update_is_pure():
    rng = np.random.default_rng(3)
    s0 = CorrelationState(3)
    s1 = update_correlation(s0, unit(rng, 4, 3), unit(rng, 4, 3))
    assert not s0.initialized and np.all(s0.f == 0)
    assert s1 is not s0


def test_update_dimension_errors():
    rng = np.random.default_rng(4)
    with pytest.raises(DimensionError):
        update_correlation(CorrelationState(3), unit(rng, 4, 4), unit(rng, 4, 4))
    with pytest.raises(DimensionError):
        update_correlation(CorrelationState(3), unit(rng, 4, 3), unit(rng, 5, 3))


@pytest.mark.parametrize("rho", [0.0, 1.0, 1.5])
def test_rho_range(rho):
    with pytest.raises(ValueError):
        CorrelationState(3, rho)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.01, 0.99), st.integers(1, 30))
def test_trace_and_psd_preserved(seed, rho, steps):
    rng = np.random.default_rng(seed)
    s = CorrelationState(4, rho)
    for _ in range(steps):
        s = update_correlation(s, unit(rng, 3, 4), unit(rng, 3, 4))
    assert abs(s.trace - 1.0) < 1e-6
    np.testing.assert_array_equal(s.f, s.f.T)
    assert np.linalg.eigvalsh(s.f).min() >= -1e-10


def test_predictor_identity():
    p = compute_predictor(CorrelationState(4, 0.9, np.eye(4), True), 0.1)
    np.testing.assert_allclose(p.wh, 1.1 * np.eye(4), atol=1e-15)
    assert p.lambda_max == 1.0


def test_predictor_square_root():
    p = compute_predictor(CorrelationState(2, 0.9, np.diag([4.0, 1.0]), True), 0.0)
    np.testing.assert_allclose(p.wh, np.diag([2.0, 1.0]), atol=1e-15)


def test_predictor_spectrum_and_commutator():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((6, 6))
    f = a @ a.T / 6
    state = CorrelationState(6, 0.9, f, True)
    p = compute_predictor(state, 0.1)
    vals = np.linalg.eigvalsh(f)[::-1]
    expect = np.sqrt(vals) + 0.1 * vals[0]
    np.testing.assert_allclose(sym_eig(p.wh)[0], expect, atol=1e-8)
    assert np.linalg.norm(p.wh @ f - f @ p.wh) < 1e-8
    np.testing.assert_allclose(p.wh, p.wh.T, atol=1e-10)


def test_predictor_clamps_negative_eigenvalues():
    f = np.diag([1.0, -1e-14])
    p = compute_predictor(CorrelationState(2, 0.9, f, True), 0.0)
    assert np.all(np.isfinite(p.wh))
    assert p.eigenvalues.min() == 0.0


def test_predictor_needs_initialized_state():
    with pytest.raises(ValueError):
        compute_predictor(CorrelationState(3), 0.1)


def test_balance_examples():
    state = CorrelationState(3, 0.9, np.eye(3), True)
    pred = compute_predictor(state, 0.0)
    u = l2_normalize(np.array([1.0, 2.0, 2.0]))
    assert abs(balance_lambda(u, u, pred, state) - 1.0) < 1e-15
    v = np.array([2.0, -1.0, 0.0]) / np.sqrt(5.0)
    assert balance_lambda(u, v, pred, state) == 0.0


def test_balance_quadratic_forms():
    rng = np.random.default_rng(6)
    corr = CorrelationState(5, 0.9)
    corr = update_correlation(corr, unit(rng, 8, 5), unit(rng, 8, 5))
    pred = compute_predictor(corr, 0.1)
    u1, u2 = unit(rng, 4, 5), unit(rng, 4, 5)
    got = balance_lambda(u1, u2, pred, corr)
    shift = (0.1 * pred.lambda_max) ** 2
    for i in range(4):
        num = u1[i] @ pred.wh.T @ u2[i]
        den = u1[i] @ (corr.f + shift * np.eye(5)) @ u1[i]
        assert abs(got[i] - num / den) < 1e-12
    main = balance_lambda(u1, u2, pred, corr, "plain")
    den = np.einsum("ij,jk,ik->i", u1, corr.f + 0.01 * np.eye(5), u1)
    np.testing.assert_allclose(main, np.einsum("ij,kj,ik->i", u1, pred.wh, u2) / den, rtol=1e-12)
    with pytest.raises(ValueError):
        balance_lambda(u1, u2, pred, corr, "other")


def test_balance_vanishing_denominator():
    state = CorrelationState(2, 0.9, np.diag([1.0, 0.0]), True)
    pred = compute_predictor(state, 0.0)
    with pytest.raises(ValueError):
        balance_lambda(np.array([0.0, 1.0]), np.array([0.0, 1.0]), pred, state)


def test_diagnostics_row():
    rng = np.random.default_rng(7)
    s = update_correlation(CorrelationState(3), unit(rng, 5, 3), unit(rng, 5, 3))
    row = diagnostics_row(10, [1.0, 3.0], s)
    assert list(row) == DIAGNOSTIC_FIELDS
    assert row["lambda_mean"] == 2.0 and row["lambda_std"] == 1.0
    assert abs(row["trace_f"] - 1.0) < 1e-12
    assert abs(row["top_eigenvalue"] - np.linalg.eigvalsh(s.f)[-1]) < 1e-12
