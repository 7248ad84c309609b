"""Moving-average feature correlation and the analytic (DirectPred) predictor."""

from dataclasses import dataclass, field

import numpy as np

from .numerics import DimensionError, as_batch, sym_eig


@dataclass(frozen=True)
class CorrelationState:
    """Running correlation ``F = sum_v rho_v v v^T`` over all past samples.

    Per-sample weights are geometric in batch order: every update multiplies
    the old matrix by ``rho`` and adds the new batch with weight ``1 - rho``.
    """

    dim: int
    rho: float = 0.99
    f: np.ndarray = None
    initialized: bool = False
    step: int = 0

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")
        if self.f is None:
            object.__setattr__(self, "f", np.zeros((self.dim, self.dim)))

    @property
    def trace(self):
        return float(np.trace(self.f))


def batch_correlation(batch1, batch2):
    b1, b2 = as_batch(batch1), as_batch(batch2)
    if b1.shape != b2.shape:
        raise DimensionError(f"view shapes differ: {b1.shape} vs {b2.shape}")
    return (b1.T @ b1 + b2.T @ b2) / (2 * b1.shape[0])


def update_correlation(state, batch1, batch2):
    """Fold one batch (both views) into the moving average; returns a new state."""
    tmp = batch_correlation(batch1, batch2)
    if tmp.shape != state.f.shape:
        raise DimensionError(f"feature dim {tmp.shape[0]} does not match state dim {state.dim}")
    if state.initialized:
        f = state.rho * state.f + (1.0 - state.rho) * tmp
    else:
        f = tmp
    f = 0.5 * (f + f.T)
    return CorrelationState(state.dim, state.rho, f, True, state.step + 1)


@dataclass(frozen=True)
class PredictorMatrix:
    wh: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    epsilon: float
    lambda_max: float
    sqrt_f: np.ndarray = field(repr=False, default=None)


def compute_predictor(state, epsilon=0.1):
    """``W_h = U (sqrt(Lambda_F) + epsilon * lambda_max) U^T`` from the state's F.

    Negative eigenvalues (round-off) are clamped to zero before the square root.
    """
    if not state.initialized:
        raise ValueError("correlation state has not seen any batch yet")
    vals, vecs = sym_eig(state.f)
    vals = np.maximum(vals, 0.0)
    lam_max = float(vals[0])
    root = np.sqrt(vals)
    wh = (vecs * (root + epsilon * lam_max)) @ vecs.T
    sqrt_f = (vecs * root) @ vecs.T
    return PredictorMatrix(
        wh=0.5 * (wh + wh.T),
        eigenvalues=vals,
        eigenvectors=vecs,
        epsilon=epsilon,
        lambda_max=lam_max,
        sqrt_f=0.5 * (sqrt_f + sqrt_f.T),
    )


def balance_lambda(u1, u2, pred, state, denominator="scaled"):
    """Dynamic balance factor of the simplified asymmetric gradient.

    Works on single vectors or row-wise on ``(N, C)`` batches. ``denominator``
    selects ``F + eps^2 lambda_max^2 I`` ("scaled", default) or
    ``F + eps^2 I`` ("plain").
    """
    u1 = np.asarray(u1, dtype=np.float64)
    u2 = np.asarray(u2, dtype=np.float64)
    if denominator == "scaled":
        shift = (pred.epsilon * pred.lambda_max) ** 2
    elif denominator == "plain":
        shift = pred.epsilon**2
    else:
        raise ValueError(f"unknown denominator form {denominator!r}")
    num = np.sum((u1 @ pred.wh.T) * u2, axis=-1)
    den = np.sum((u1 @ state.f) * u1, axis=-1) + shift * np.sum(u1 * u1, axis=-1)
    if np.any(np.abs(den) < 1e-12):
        raise ValueError("balance factor denominator vanished")
    return num / den


def diagnostics_row(step, lambdas, state, top_eigenvalue=None):
    """One row for the predictor diagnostics CSV."""
    top = top_eigenvalue
    if top is None:
        top = float(sym_eig(state.f)[0][0]) if state.initialized else float("nan")
    lambdas = np.asarray(lambdas, dtype=np.float64)
    return {
        "step": step,
        "lambda_mean": float(lambdas.mean()) if lambdas.size else float("nan"),
        "lambda_std": float(lambdas.std()) if lambdas.size else float("nan"),
        "trace_f": state.trace,
        "top_eigenvalue": top,
    }


DIAGNOSTIC_FIELDS = ["step", "lambda_mean", "lambda_std", "trace_f", "top_eigenvalue"]

__all__ = [
    "CorrelationState",
    "PredictorMatrix",
    "batch_correlation",
    "update_correlation",
    "compute_predictor",
    "balance_lambda",
    "diagnostics_row",
    "DIAGNOSTIC_FIELDS",
]
