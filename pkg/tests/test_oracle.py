import numpy as np
import pytest

from siamgrad.numerics import DimensionError, cosine_sim, l2_normalize
from siamgrad.oracle import (
    ORACLE_PAIRS,
    STRUCTURAL_CHECKS,
    check_pair,
    check_structure,
    grad_check,
    numeric_grad,
)


def test_numeric_grad_quadratic():
    g = numeric_grad(lambda x: float(np.sum(x**2)), np.array([[1.0, 2.0]]))
    np.testing.assert_allclose(g, [[2.0, 4.0]], atol=1e-8)


def test_numeric_grad_constant():
    assert np.array_equal(numeric_grad(lambda x: 3.0, np.ones((2, 3))), np.zeros((2, 3)))


def test_numeric_grad_cosine_projection():
    rng = np.random.default_rng(0)
    x = l2_normalize(rng.standard_normal(5))
    b = rng.standard_normal(5)
    g = numeric_grad(lambda v: cosine_sim(v, b), x)
    nb = np.linalg.norm(b)
    closed = (b / nb - (x @ b / nb) * x) / np.linalg.norm(x)
    np.testing.assert_allclose(g, closed, atol=1e-7)


def test_numeric_grad_quadratic_form_round_off_only():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((4, 4))
    x = rng.standard_normal((1, 4))
    g = numeric_grad(lambda v: float(v[0] @ a @ v[0] + 3 * v[0, 0]), x)
    exact = x[0] @ (a + a.T) + np.array([3.0, 0, 0, 0])
    assert np.max(np.abs(g[0] - exact)) < 1e-8


def test_numeric_grad_non_finite():
    with pytest.raises(FloatingPointError), np.errstate(invalid="ignore"):
        numeric_grad(lambda x: float(np.log(x[0, 0])), np.array([[1e-6]]))


def test_numeric_grad_skip_mask():
    skip = np.array([[True, False]])
    g = numeric_grad(lambda x: float(np.sum(x**2)), np.array([[1.0, 2.0]]), skip=skip)
    assert np.isnan(g[0, 0]) and abs(g[0, 1] - 4.0) < 1e-8


def test_grad_check_identical():
    a = np.random.default_rng(2).standard_normal((3, 4))
    rep = grad_check(a, a.copy())
    assert rep.max_rel_err == 0.0 and rep.mean_cosine == 1.0 and rep.passed()


def test_grad_check_scale_mismatch():
    a = np.random.default_rng(3).standard_normal((3, 4))
    rep = grad_check(2 * a, a)
    assert abs(rep.max_rel_err - 0.5) < 1e-15
    assert abs(rep.mean_cosine - 1.0) < 1e-12
    assert not rep.passed()


def test_grad_check_symmetric_abs_err_and_shape():
    rng = np.random.default_rng(4)
    a, b = rng.standard_normal((2, 3)), rng.standard_normal((2, 3))
    assert grad_check(a, b).max_abs_err == grad_check(b, a).max_abs_err
    assert 0.0 <= grad_check(a, b).max_rel_err
    assert -1.0 <= grad_check(a, b).mean_cosine <= 1.0
    with pytest.raises(DimensionError):
        grad_check(a, b[:1])


def test_grad_check_ignores_skipped():
    a = np.ones((1, 2))
    b = np.array([[np.nan, 1.0]])
    rep = grad_check(a, b)
    assert rep.skipped == 1 and rep.max_rel_err == 0.0


@pytest.mark.parametrize("name", list(ORACLE_PAIRS))
@pytest.mark.parametrize("n,c", [(2, 4), (8, 16)])
def test_oracle_pairs(name, n, c):
    assert check_pair(name, 0, n, c).max_rel_err < 1e-4


def test_corrupted_gradient_is_caught():
    def broken(rng, n, c):
        analytic, loss, x, skip = ORACLE_PAIRS["unigrad"](rng, n, c)
        return 1.01 * analytic, loss, x, skip

    rep = check_pair("broken", 0, 4, 8, builders={"broken": broken})
    assert not rep.passed()


def test_vicreg_kink_is_skipped_not_failed():
    from siamgrad.methods import BatchViews, MethodConfig, vicreg_grad, vicreg_loss
    from siamgrad.numerics import col_std

    rng = np.random.default_rng(5)
    u1, u2 = rng.standard_normal((6, 3)), rng.standard_normal((6, 3))
    u1[:, 0] /= col_std(u1)[0]  # first column sits exactly on the hinge
    skip = np.broadcast_to(np.abs(col_std(u1) - 1.0) < 1e-4, u1.shape)
    num = numeric_grad(lambda x: vicreg_loss(BatchViews(x, u2), symmetric=False), u1, skip=skip)
    rep = grad_check(vicreg_grad(BatchViews(u1, u2), MethodConfig(), "full").total, num)
    assert rep.skipped == 6 and rep.passed()


@pytest.mark.parametrize("name", list(STRUCTURAL_CHECKS))
def test_structural_checks(name):
    for n, c in [(2, 4), (3, 5), (8, 16)]:
        assert check_structure(name, 0, n, c).passed
