"""Central-difference gradients and comparison against analytic gradients."""

from dataclasses import dataclass

import numpy as np

from .methods import (
    METHOD_IDS,
    BatchViews,
    GradState,
    MemoryBank,
    MethodConfig,
    asymmetric_grad,
    asymmetric_loss,
    barlow_grad,
    barlow_loss,
    contrastive_grad,
    infonce_loss,
    unigrad_grad,
    unified_grad,
    unigrad_loss,
    vicreg_grad,
    vicreg_loss,
)
from .numerics import DimensionError, col_std, l2_normalize, sym_eig
from .predictor import CorrelationState, compute_predictor, update_correlation

DEFAULT_H = 1e-5
DEFAULT_REL_FLOOR = 1e-8


@dataclass
class GradCheckReport:
    max_abs_err: float
    max_rel_err: float
    mean_cosine: float
    worst_index: tuple
    h: float = DEFAULT_H
    skipped: int = 0

    def passed(self, tol=1e-4):
        return bool(self.max_rel_err < tol)


def numeric_grad(loss_fn, x, h=DEFAULT_H, skip=None):
    """Central-difference gradient of a scalar ``loss_fn`` at the array ``x``.

    Coordinates where the boolean mask ``skip`` is set are not probed and come
    back as NaN.
    """
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    probe = x.copy()
    for idx in np.ndindex(x.shape):
        if skip is not None and skip[idx]:
            grad[idx] = np.nan
            continue
        orig = probe[idx]
        probe[idx] = orig + h
        f_plus = loss_fn(probe)
        probe[idx] = orig - h
        f_minus = loss_fn(probe)
        probe[idx] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise FloatingPointError(f"non-finite loss when probing index {idx}")
        grad[idx] = (f_plus - f_minus) / (2.0 * h)
    return grad


def grad_check(analytic, numeric, rel_floor=DEFAULT_REL_FLOOR, h=DEFAULT_H):
    """Compare two gradient arrays; NaN entries in ``numeric`` are ignored."""
    a = np.atleast_2d(np.asarray(analytic, dtype=np.float64))
    b = np.atleast_2d(np.asarray(numeric, dtype=np.float64))
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    valid = np.isfinite(b) & np.isfinite(a)
    a0, b0 = np.where(valid, a, 0.0), np.where(valid, b, 0.0)
    abs_err = np.abs(a0 - b0)
    rel_err = abs_err / np.maximum(np.maximum(np.abs(a0), np.abs(b0)), rel_floor)
    worst = np.unravel_index(np.argmax(rel_err), rel_err.shape)

    na, nb = np.linalg.norm(a0, axis=1), np.linalg.norm(b0, axis=1)
    both = (na > 0) & (nb > 0)
    cos = np.ones(len(a0))
    cos[both] = np.sum(a0 * b0, axis=1)[both] / (na[both] * nb[both])
    cos[(na > 0) ^ (nb > 0)] = 0.0
    return GradCheckReport(
        max_abs_err=float(abs_err.max()),
        max_rel_err=float(rel_err.max()),
        mean_cosine=float(np.clip(cos.mean(), -1.0, 1.0)),
        worst_index=tuple(int(i) for i in worst),
        h=h,
        skipped=int((~valid).sum()),
    )


# --- the (loss, analytic gradient) pairs ----------------------------------------


def _unit(rng, n, c):
    return l2_normalize(rng.standard_normal((n, c)))


def _correlation(rng, c, batches=3, n=8, rho=0.9):
    state = CorrelationState(c, rho)
    for _ in range(batches):
        state = update_correlation(state, _unit(rng, n, c), _unit(rng, n, c))
    return state


def _moco(rng, n, c, tau=0.2):
    u1, u2, bank = _unit(rng, n, c), _unit(rng, n, c), _unit(rng, 16, c)
    analytic = contrastive_grad(BatchViews(u1, u2), "moco", tau, bank).total
    loss = lambda x: infonce_loss(BatchViews(x, u2), bank, tau, symmetric=False)
    return analytic, loss, u1, None


def _simclr(rng, n, c, tau=0.2):
    u1, u2 = _unit(rng, n, c), _unit(rng, n, c)
    analytic = contrastive_grad(BatchViews(u1, u2), "simclr_full", tau).total
    # the full form differentiates the summed per-anchor losses of both views
    loss = lambda x: 2.0 * infonce_loss(BatchViews(x, u2), "batch", tau, symmetric=True)
    return analytic, loss, u1, None


def _directpred(rng, n, c, eps=0.1):
    u1, u2 = _unit(rng, n, c), _unit(rng, n, c)
    corr = _correlation(rng, c)
    pred = compute_predictor(corr, eps)
    analytic = asymmetric_grad(BatchViews(u1, u2), corr, pred, "full").total
    loss = lambda x: asymmetric_loss(BatchViews(x, u2), pred.wh, symmetric=False)
    return analytic, loss, u1, None


def _barlow(rng, n, c, lam=5e-3):
    u1, u2 = _unit(rng, n, c), _unit(rng, n, c)
    analytic = barlow_grad(BatchViews(u1, u2), lam, "full", "none").total
    loss = lambda x: barlow_loss(BatchViews(x, u2), lam, "none")
    return analytic, loss, u1, None


def _vicreg(rng, n, c, h=DEFAULT_H):
    cfg = MethodConfig(lambda1=1.0, lambda2=1.0, gamma=1.0)
    u1, u2 = rng.standard_normal((n, c)), rng.standard_normal((n, c))
    analytic = vicreg_grad(BatchViews(u1, u2), cfg, "full").total
    loss = lambda x: vicreg_loss(BatchViews(x, u2), 1.0, 1.0, 1.0, symmetric=False)
    # columns whose std sits within 10h of the hinge are not probed
    near_kink = np.abs(col_std(u1) - cfg.gamma) < 10 * h
    skip = np.broadcast_to(near_kink, u1.shape) if near_kink.any() else None
    return analytic, loss, u1, skip


def _unigrad(rng, n, c, lam=100.0):
    u1, u2 = _unit(rng, n, c), _unit(rng, n, c)
    corr = _correlation(rng, c)
    analytic = unigrad_grad(BatchViews(u1, u2), corr, lam).total
    loss = lambda x: unigrad_loss(BatchViews(x, u2), corr, lam, symmetric=False)
    return analytic, loss, u1, None


ORACLE_PAIRS = {
    "moco": _moco,
    "simclr_full": _simclr,
    "byol_directpred_full": _directpred,
    "barlow_full": _barlow,
    "vicreg_full": _vicreg,
    "unigrad": _unigrad,
}


def check_pair(name, seed, n, c, h=DEFAULT_H, rel_floor=DEFAULT_REL_FLOOR, builders=None):
    """Oracle comparison for one registered pair; ``builders`` defaults to ORACLE_PAIRS."""
    builders = ORACLE_PAIRS if builders is None else builders
    rng = np.random.default_rng([seed, n, c, list(builders).index(name)])
    analytic, loss, x, skip = builders[name](rng, n, c)
    numeric = numeric_grad(loss, x, h, skip)
    return grad_check(analytic, numeric, rel_floor, h)


# --- structural reductions -------------------------------------------------------


@dataclass
class StructuralCheck:
    name: str
    error: float
    tol: float

    @property
    def passed(self):
        return bool(self.error <= self.tol)


def _simclr_reduction(rng, n, c):
    bv = BatchViews(_unit(rng, n, c), _unit(rng, n, c))
    full = contrastive_grad(bv, "simclr_full")
    simple = contrastive_grad(bv, "simclr_simplified")
    reduced = full.total - full.scale * full.terms["second"]
    return float(np.max(np.abs(reduced - simple.total))), 1e-12


def _directpred_eps0(rng, n, c):
    bv = BatchViews(_unit(rng, n, c), _unit(rng, n, c))
    corr = _correlation(rng, c)
    pred = compute_predictor(corr, 0.0)
    full = asymmetric_grad(bv, corr, pred, "full")
    simple = asymmetric_grad(bv, corr, pred, "simplified")
    return float(np.max(np.abs(full.total - simple.total))), 1e-10


def _barlow_diag_only_pos(rng, n, c):
    bv = BatchViews(rng.standard_normal((n, c)), rng.standard_normal((n, c)))
    full = barlow_grad(bv, 5e-3, "full")
    diag = barlow_grad(bv, 5e-3, "diag_substituted")
    err = max(
        float(np.max(np.abs(full.g_neg - diag.g_neg))),
        abs(full.balance - diag.balance),
        abs(full.scale - diag.scale),
    )
    return err, 0.0


def _centered_unit(rng, n, c):
    """Unit rows with an exactly zero column mean: +/- pairs, plus a planar triple for odd n."""
    half = n // 2 if n % 2 == 0 else (n - 3) // 2
    rows = []
    if half:
        v = _unit(rng, half, c)
        rows += [v, -v]
    if n % 2:
        q, _ = np.linalg.qr(rng.standard_normal((c, 2)))
        ang = 2.0 * np.pi * np.arange(3) / 3.0
        rows.append(np.cos(ang)[:, None] * q[:, 0] + np.sin(ang)[:, None] * q[:, 1])
    return np.concatenate(rows)[rng.permutation(n)]


def _vicreg_first_term(rng, n, c):
    bv = BatchViews(_centered_unit(rng, n, c), _unit(rng, n, c))
    full = vicreg_grad(bv, MethodConfig(), "full")
    simple = vicreg_grad(bv, MethodConfig(), "simplified")
    return float(np.max(np.abs(full.terms["decorrelation"] - simple.g_neg))), 1e-10


def _state_for(method, rng, c):
    state = GradState()
    if method == "moco":
        state.bank = MemoryBank(32, c)
        state.bank.enqueue(_unit(rng, 32, c))
    if method in ("byol_directpred_full", "byol_directpred_simplified", "unigrad"):
        state.corr = _correlation(rng, c)
        state.predictor = compute_predictor(state.corr, 0.1)
    return state


def _decomposition_contract(rng, n, c):
    """``total == scale * (g_pos + balance * g_neg)`` for every method id."""
    worst = 0.0
    for method in METHOD_IDS:
        cfg = MethodConfig()
        norm = cfg.norm_for(method)
        u1, u2 = rng.standard_normal((n, c)), rng.standard_normal((n, c))
        if norm == "l2":
            u1, u2 = l2_normalize(u1), l2_normalize(u2)
        d = unified_grad(method, BatchViews(u1, u2), cfg, _state_for(method, rng, c))
        scale = np.asarray(d.scale, dtype=np.float64)
        balance = np.asarray(d.balance, dtype=np.float64)
        scale = scale[:, None] if scale.ndim else scale
        balance = balance[:, None] if balance.ndim else balance
        expect = scale * (d.g_pos + balance * d.g_neg)
        worst = max(worst, float(np.max(np.abs(d.total - expect))))
    return worst, 1e-12


def _random_psd(rng, c):
    a = rng.standard_normal((c, c))
    return a @ a.T / c


def _jacobi_reconstruction(rng, n, c):
    s = _random_psd(rng, c)
    vals, vecs = sym_eig(s)
    return float(np.linalg.norm((vecs * vals) @ vecs.T - s)), 1e-8


def _predictor_commutator(rng, n, c):
    corr = _correlation(rng, c)
    wh = compute_predictor(corr, 0.1).wh
    return float(np.linalg.norm(wh @ corr.f - corr.f @ wh)), 1e-8


def _predictor_identity(rng, n, c):
    state = CorrelationState(c, 0.9, np.eye(c), True)
    wh = compute_predictor(state, 0.1).wh
    return float(np.max(np.abs(wh - 1.1 * np.eye(c)))), 1e-14


STRUCTURAL_CHECKS = {
    "simclr_reduction": _simclr_reduction,
    "directpred_eps0": _directpred_eps0,
    "barlow_diag_pos_only": _barlow_diag_only_pos,
    "vicreg_first_term": _vicreg_first_term,
    "decomposition_contract": _decomposition_contract,
    "jacobi_reconstruction": _jacobi_reconstruction,
    "predictor_commutator": _predictor_commutator,
    "predictor_identity": _predictor_identity,
}


def check_structure(name, seed, n, c):
    rng = np.random.default_rng([seed, n, c, 100 + list(STRUCTURAL_CHECKS).index(name)])
    err, tol = STRUCTURAL_CHECKS[name](rng, n, c)
    return StructuralCheck(name, err, tol)
