import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from siamgrad.numerics import (
    ConvergenceError,
    DimensionError,
    batch_norm_cols,
    col_std,
    cosine_sim,
    decenter_cols,
    l2_normalize,
    softmax_scaled,
    sym_eig,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_l2_normalize_examples():
    np.testing.assert_allclose(l2_normalize([3.0, 4.0]), [0.6, 0.8], atol=1e-15)
    assert np.array_equal(l2_normalize([0.0, 0.0]), [0.0, 0.0])
    v = np.random.default_rng(0).standard_normal(16)
    assert abs(np.linalg.norm(l2_normalize(v)) - 1.0) < 1e-12


def test_l2_normalize_empty():
    with pytest.raises(DimensionError):
        l2_normalize([])


def test_l2_normalize_below_clamp_is_zero():
    v = np.full(7, 1.3e-17)
    assert not l2_normalize(v).any()
    np.testing.assert_allclose(np.linalg.norm(l2_normalize(np.full(7, 1e-12))), 1.0, atol=1e-12)


@given(arrays(np.float64, 7, elements=finite))
def test_l2_normalize_idempotent(v):
    once = l2_normalize(v)
    np.testing.assert_allclose(l2_normalize(once), once, atol=1e-12)


def test_cosine_examples():
    assert cosine_sim([1, 0], [0, 1]) == 0.0
    assert cosine_sim([1, 0], [1, 0]) == 1.0
    assert abs(cosine_sim([1, 1], [1, 0]) - 0.70710678118654752) < 1e-15


def test_cosine_errors():
    with pytest.raises(DimensionError):
        cosine_sim([1, 0], [1, 0, 0])
    with pytest.raises(DimensionError):
        cosine_sim([0, 0], [1, 0])


def test_softmax_examples():
    np.testing.assert_allclose(softmax_scaled([0, 0, 0], 1.0), [1 / 3] * 3, atol=1e-15)
    np.testing.assert_allclose(softmax_scaled([1, 1], 0.5), [0.5, 0.5], atol=1e-15)
    np.testing.assert_allclose(softmax_scaled([2, 0], 1.0), [0.880797, 0.119203], atol=1e-6)
    e2 = np.exp(2.0)
    assert abs(softmax_scaled([2, 0], 1.0)[0] - e2 / (e2 + 1.0)) < 1e-15


@pytest.mark.parametrize("tau", [0.0, -1.0])
def test_softmax_rejects_tau(tau):
    with pytest.raises(ValueError):
        softmax_scaled([1.0, 2.0], tau)


@given(arrays(np.float64, 6, elements=finite), st.floats(0.05, 5.0), finite)
def test_softmax_sums_to_one_and_shift_invariant(s, tau, shift):
    p = softmax_scaled(s, tau)
    assert abs(p.sum() - 1.0) < 1e-12
    np.testing.assert_allclose(softmax_scaled(s + shift, tau), p, atol=1e-12)


def test_sym_eig_diagonal():
    vals, vecs = sym_eig(np.diag([4.0, 1.0]))
    np.testing.assert_array_equal(vals, [4.0, 1.0])
    np.testing.assert_allclose(np.abs(vecs), np.eye(2), atol=1e-15)


def test_sym_eig_identity():
    vals, _ = sym_eig(np.eye(8))
    np.testing.assert_array_equal(vals, np.ones(8))


def test_sym_eig_random_psd_64():
    a = np.random.default_rng(1).standard_normal((64, 64))
    s = a.T @ a
    vals, vecs = sym_eig(s)
    assert np.linalg.norm((vecs * vals) @ vecs.T - s) < 1e-8
    assert np.linalg.norm(vecs.T @ vecs - np.eye(64)) < 1e-8
    assert np.all(np.diff(vals) <= 0)


def test_sym_eig_sign_convention():
    a = np.random.default_rng(2).standard_normal((6, 6))
    _, vecs = sym_eig(a + a.T)
    for col in vecs.T:
        first = col[np.flatnonzero(np.abs(col) > 1e-12)[0]]
        assert first > 0


def test_sym_eig_matches_independent_eigvalsh():
    a = np.random.default_rng(3).standard_normal((10, 10))
    s = a + a.T
    np.testing.assert_allclose(sym_eig(s)[0], np.linalg.eigvalsh(s)[::-1], atol=1e-10)


def test_sym_eig_tiny_coupling_does_not_overflow():
    s = np.diag([1.0, 2.0])
    s[0, 1] = s[1, 0] = 1e-310
    with np.errstate(over="raise"):
        vals, _ = sym_eig(s)
    np.testing.assert_array_equal(vals, [2.0, 1.0])


def test_sym_eig_errors():
    with pytest.raises(DimensionError):
        sym_eig(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))
    a = np.random.default_rng(4).standard_normal((12, 12))
    with pytest.raises(ConvergenceError):
        sym_eig(a + a.T, max_sweeps=1)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**31))
def test_sym_eig_psd_property(c, seed):
    a = np.random.default_rng(seed).standard_normal((c + 2, c))
    s = a.T @ a
    vals, vecs = sym_eig(s)
    assert np.linalg.norm((vecs * vals) @ vecs.T - s) < 1e-8
    assert np.linalg.norm(vecs.T @ vecs - np.eye(c)) < 1e-8


def test_batch_norm_examples():
    np.testing.assert_allclose(batch_norm_cols([[1.0], [3.0]]), [[-1.0], [1.0]])
    assert np.array_equal(batch_norm_cols(np.full((4, 2), 7.0)), np.zeros((4, 2)))
    x = batch_norm_cols(np.random.default_rng(5).standard_normal((8, 4)))
    assert np.all(np.abs(x.mean(axis=0)) < 1e-12)
    np.testing.assert_allclose(x.std(axis=0), 1.0, atol=1e-9)
    with pytest.raises(DimensionError):
        batch_norm_cols(np.ones((1, 3)))


@settings(deadline=None)
@given(arrays(np.float64, (6, 3), elements=st.floats(-100, 100)))
def test_batch_norm_idempotent(x):
    once = batch_norm_cols(x)
    np.testing.assert_allclose(batch_norm_cols(once), once, atol=1e-9)


def test_decenter_examples():
    np.testing.assert_array_equal(decenter_cols([[1.0], [3.0]]), [[-1.0], [1.0]])
    x = decenter_cols(np.random.default_rng(6).standard_normal((8, 4)))
    assert np.all(np.abs(x.mean(axis=0)) < 1e-12)
    np.testing.assert_allclose(decenter_cols(x), x, atol=1e-12)


def test_col_std_examples():
    np.testing.assert_allclose(col_std([[0.0], [2.0]]), [np.sqrt(2.0)])
    assert col_std(np.full((5, 1), 3.0))[0] == 0.0
    x = np.random.default_rng(7).standard_normal((16, 3))
    mean = x.sum(axis=0) / 16
    two_pass = np.sqrt(((x - mean) ** 2).sum(axis=0) / 15)
    np.testing.assert_allclose(col_std(x), two_pass, rtol=1e-14)
    with pytest.raises(DimensionError):
        col_std(np.ones((1, 2)))
