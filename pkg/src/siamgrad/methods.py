"""Losses and analytic gradients for the siamese SSL families.

Every gradient is returned as a :class:`GradientDecomposition`: a positive
(attraction) term, a negative (repulsion) term, a balance factor weighting the
negative term, and a prefactor, with ``total = scale * (g_pos + balance * g_neg)``.

Inputs ``u1`` (online branch) and ``u2`` (target branch) are ``(N, C)`` arrays.
For the l2-normalized methods, similarities are written as inner products,
which equal cosines on the unit sphere; gradients are taken with respect to the
normalized representation itself; the trainer composes them with the
normalization Jacobian.
"""

from dataclasses import dataclass, field

import numpy as np

from .numerics import (
    EPS_NORM,
    DimensionError,
    as_batch,
    batch_norm_cols,
    col_std,
    decenter_cols,
    l2_normalize,
    softmax_scaled,
)
from .predictor import CorrelationState, PredictorMatrix, balance_lambda, compute_predictor

METHOD_IDS = (
    "moco",
    "simclr_full",
    "simclr_simplified",
    "byol_directpred_full",
    "byol_directpred_simplified",
    "barlow_full",
    "barlow_diag",
    "vicreg_full",
    "vicreg_simplified",
    "unigrad",
)
TARGET_KINDS = ("weight_sharing", "stop_gradient", "momentum")
NORM_MODES = ("l2", "batch_norm", "none")

# balance factors for the fixed-lambda gradient forms
DEFAULT_BALANCE = {
    "barlow_batch_norm": 5e-3,
    "barlow_l2": 50.0,
    "vicreg_simplified": 25.0,
    "unigrad": 100.0,
}


@dataclass
class MethodConfig:
    tau: float = 0.2
    lambda_balance: float = None
    lambda1: float = 1.0
    lambda2: float = 1.0
    gamma: float = 1.0
    epsilon_pred: float = 0.1
    rho: float = 0.99
    barlow_diag_scale: float = 0.1
    norm_mode: str = None
    bank_size: int = 4096
    lambda_denominator: str = "scaled"
    predictor_every: int = 1

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.norm_mode is not None and self.norm_mode not in NORM_MODES:
            raise ValueError(f"unknown norm_mode {self.norm_mode!r}")
        for name in ("lambda1", "lambda2", "epsilon_pred"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.lambda_balance is not None and self.lambda_balance < 0:
            raise ValueError("lambda_balance must be nonnegative")
        if self.predictor_every < 1:
            raise ValueError("predictor_every must be >= 1")
        if self.lambda_denominator not in ("scaled", "plain"):
            raise ValueError(f"unknown lambda_denominator {self.lambda_denominator!r}")

    def norm_for(self, method):
        if self.norm_mode is not None:
            return self.norm_mode
        if method in ("barlow_full", "barlow_diag"):
            return "batch_norm"
        if method == "vicreg_full":
            return "none"
        return "l2"

    def balance_for(self, method):
        if self.lambda_balance is not None:
            return self.lambda_balance
        if method.startswith("barlow"):
            bn = self.norm_for(method) == "batch_norm"
            return DEFAULT_BALANCE["barlow_batch_norm" if bn else "barlow_l2"]
        if method in DEFAULT_BALANCE:
            return DEFAULT_BALANCE[method]
        return 1.0


@dataclass(frozen=True)
class BatchViews:
    u1: np.ndarray
    u2: np.ndarray
    target_kind: str = "stop_gradient"

    def __post_init__(self):
        u1, u2 = as_batch(self.u1, "u1"), as_batch(self.u2, "u2")
        if u1.shape != u2.shape:
            raise DimensionError(f"view shapes differ: {u1.shape} vs {u2.shape}")
        if self.target_kind not in TARGET_KINDS:
            raise ValueError(f"unknown target kind {self.target_kind!r}")
        object.__setattr__(self, "u1", u1)
        object.__setattr__(self, "u2", u2)

    @property
    def n(self):
        return self.u1.shape[0]

    @property
    def c(self):
        return self.u1.shape[1]

    def swapped(self):
        return BatchViews(self.u2, self.u1, self.target_kind)


class MemoryBank:
    """FIFO store of past target representations used as negatives."""

    def __init__(self, capacity, dim):
        if capacity < 1:
            raise ValueError("bank capacity must be positive")
        self.capacity = capacity
        self.dim = dim
        self._data = np.zeros((capacity, dim))
        self._count = 0
        self._head = 0

    def __len__(self):
        return self._count

    def enqueue(self, batch):
        batch = l2_normalize(as_batch(batch))
        if batch.shape[1] != self.dim:
            raise DimensionError(f"bank dim {self.dim} vs batch dim {batch.shape[1]}")
        for row in batch[-self.capacity :]:
            self._data[self._head] = row
            self._head = (self._head + 1) % self.capacity
        self._count = min(self._count + len(batch), self.capacity)

    @property
    def entries(self):
        """Stored vectors, oldest first."""
        if self._count < self.capacity:
            return self._data[: self._count].copy()
        return np.roll(self._data, -self._head, axis=0)

    def copy(self):
        other = MemoryBank(self.capacity, self.dim)
        other._data = self._data.copy()
        other._count, other._head = self._count, self._head
        return other


@dataclass
class GradientDecomposition:
    """``total = scale * (g_pos + balance * g_neg)``.

    ``balance`` and ``scale`` are scalars or length-N arrays (one per row).
    ``terms`` keeps named sub-terms that some variants expose for diagnostics.
    """

    g_pos: np.ndarray
    g_neg: np.ndarray
    balance: object
    scale: object
    terms: dict = field(default_factory=dict)
    total: np.ndarray = None

    def __post_init__(self):
        if self.total is None:
            self.total = _rowwise(self.scale) * (
                self.g_pos + _rowwise(self.balance) * self.g_neg
            )


def _rowwise(x):
    x = np.asarray(x, dtype=np.float64)
    return x[:, None] if x.ndim == 1 else x


def _bank_array(bank):
    if isinstance(bank, MemoryBank):
        return bank.entries
    return as_batch(bank, "bank")


# --- contrastive -----------------------------------------------------------


def _infonce_bank(u1, u2, bank, tau):
    pos = np.sum(u1 * u2, axis=1, keepdims=True)
    logits = np.concatenate([pos, u1 @ bank.T], axis=1) / tau
    top = logits.max(axis=1, keepdims=True)
    lse = top[:, 0] + np.log(np.exp(logits - top).sum(axis=1))
    return float(np.mean(lse - logits[:, 0]))


def _batch_logits(u1, u2, tau):
    z = np.concatenate([u1, u2], axis=0)
    logits = z @ z.T / tau
    np.fill_diagonal(logits, -np.inf)
    return z, logits


def _infonce_batch(u1, u2, tau, both):
    n = u1.shape[0]
    _, logits = _batch_logits(u1, u2, tau)
    anchors = np.arange(2 * n if both else n)
    positives = (anchors + n) % (2 * n)
    rows = logits[anchors]
    top = rows.max(axis=1, keepdims=True)
    lse = top[:, 0] + np.log(np.exp(rows - top).sum(axis=1))
    return float(np.mean(lse - rows[np.arange(len(anchors)), positives]))


def infonce_loss(bv, negatives="batch", tau=0.2, symmetric=True):
    """InfoNCE averaged over anchors.

    ``negatives="batch"`` contrasts each anchor against every other
    representation of both views (2N - 1 candidates, positive included).
    Otherwise ``negatives`` is a :class:`MemoryBank` (or ``(K, C)`` array) and
    each anchor's candidates are its positive plus the bank entries.
    With ``symmetric=False`` only the ``u1`` anchors count.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    if isinstance(negatives, str):
        if negatives != "batch":
            raise ValueError(f"unknown negative source {negatives!r}")
        return _infonce_batch(bv.u1, bv.u2, tau, both=symmetric)
    bank = _bank_array(negatives)
    if len(bank) == 0:
        raise ValueError("memory bank is empty")
    fwd = _infonce_bank(bv.u1, bv.u2, bank, tau)
    if not symmetric:
        return fwd
    return 0.5 * (fwd + _infonce_bank(bv.u2, bv.u1, bank, tau))


def contrastive_grad(bv, variant, tau=0.2, bank=None):
    """Gradient of InfoNCE with respect to ``u1``.

    moco: the ``u1``-anchor loss against a bank; the softmax runs over the
    positive and the bank entries, so ``g_neg`` is their ``s``-weighted sum.
    simclr_full: gradient of the sum over all 2N anchors (target not detached),
    which adds the ``t``-weighted term from other anchors' losses.
    simclr_simplified: first term of simclr_full only.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    u1, u2, n = bv.u1, bv.u2, bv.n
    scale = 1.0 / (tau * n)
    if variant == "moco":
        if bank is None:
            raise ValueError("moco needs a memory bank")
        entries = _bank_array(bank)
        if len(entries) == 0:
            raise ValueError("memory bank is empty")
        pos = np.sum(u1 * u2, axis=1, keepdims=True)
        s = softmax_scaled(np.concatenate([pos, u1 @ entries.T], axis=1), tau)
        g_neg = s[:, :1] * u2 + s[:, 1:] @ entries
        return GradientDecomposition(-u2, g_neg, 1.0, scale, terms={"weights": s})

    if variant not in ("simclr_full", "simclr_simplified"):
        raise ValueError(f"unknown contrastive variant {variant!r}")
    z, logits = _batch_logits(u1, u2, tau)
    p = softmax_scaled(logits, 1.0)
    first = (p @ z)[:n]
    if variant == "simclr_simplified":
        return GradientDecomposition(-u2, first, 1.0, scale, terms={"weights": p})
    second = (p.T @ z)[:n]
    return GradientDecomposition(
        -2.0 * u2,
        first + second,
        1.0,
        scale,
        terms={"first": -u2 + first, "second": -u2 + second, "weights": p},
    )


# --- asymmetric (DirectPred) -------------------------------------------------


def _asym_directional(u1, u2, wh):
    y = u1 @ wh.T
    ny = np.linalg.norm(y, axis=1)
    if np.any(ny < EPS_NORM):
        raise ValueError("predictor output vanished")
    return float(-np.mean(np.sum(y * u2, axis=1) / ny))


def asymmetric_loss(bv, wh, symmetric=True):
    """Mean negative cosine between the normalized predictor output and the target."""
    wh = np.asarray(wh, dtype=np.float64)
    if wh.shape != (bv.c, bv.c):
        raise DimensionError(f"predictor must be {bv.c}x{bv.c}")
    fwd = _asym_directional(bv.u1, bv.u2, wh)
    if not symmetric:
        return fwd
    return 0.5 * (fwd + _asym_directional(bv.u2, bv.u1, wh))


def asymmetric_grad(bv, corr, pred=None, variant="simplified", epsilon_pred=0.1,
                    denominator="scaled"):
    if pred is None:
        pred = compute_predictor(corr, epsilon_pred)
    u1, u2, n = bv.u1, bv.u2, bv.n
    wh, f = pred.wh, corr.f
    ny = np.linalg.norm(u1 @ wh.T, axis=1)
    if np.any(ny < EPS_NORM):
        raise ValueError("predictor output vanished")
    scale = 1.0 / (ny * n)
    g_pos = -(u2 @ wh)
    fu = u1 @ f
    if variant == "simplified":
        lam = balance_lambda(u1, u2, pred, corr, denominator)
        return GradientDecomposition(g_pos, fu, lam, scale)
    if variant != "full":
        raise ValueError(f"unknown asymmetric variant {variant!r}")
    boost = pred.epsilon * pred.lambda_max
    root_term = 2.0 * boost * (u1 @ pred.sqrt_f)
    shift_term = boost**2 * u1
    g_neg = fu + root_term + shift_term
    num = np.sum((u1 @ wh.T) * u2, axis=1)
    den = np.sum(g_neg * u1, axis=1)
    if np.any(np.abs(den) < 1e-12):
        raise ValueError("balance factor denominator vanished")
    return GradientDecomposition(
        g_pos, g_neg, num / den, scale,
        terms={"correlation": fu, "root": root_term, "shift": shift_term},
    )


# --- feature decorrelation -------------------------------------------------


def _normalize(x, norm_mode):
    if norm_mode == "l2":
        return l2_normalize(x)
    if norm_mode == "batch_norm":
        return batch_norm_cols(x)
    if norm_mode == "none":
        return x
    raise ValueError(f"unknown norm_mode {norm_mode!r}")


def barlow_loss(bv, lambda_balance=5e-3, norm_mode="batch_norm"):
    x1, x2 = _normalize(bv.u1, norm_mode), _normalize(bv.u2, norm_mode)
    w = x1.T @ x2 / bv.n
    diag = np.diag(w)
    off = w - np.diag(diag)
    return float(np.sum((diag - 1.0) ** 2) + lambda_balance * np.sum(off**2))


def barlow_grad(bv, lambda_balance=5e-3, variant="full", norm_mode="batch_norm",
                diag_scale=0.1):
    """Gradient with respect to the normalized ``u1``; batch statistics are constants."""
    x1, x2 = _normalize(bv.u1, norm_mode), _normalize(bv.u2, norm_mode)
    n = bv.n
    g_neg = (x2 @ x2.T / n) @ x1
    if variant == "full":
        w_diag = np.einsum("ni,ni->i", x1, x2) / n
        g_pos = -x2 * (1.0 - (1.0 - lambda_balance) * w_diag)
    elif variant == "diag_substituted":
        g_pos = -diag_scale * x2
    else:
        raise ValueError(f"unknown barlow variant {variant!r}")
    return GradientDecomposition(g_pos, g_neg, lambda_balance, 2.0 / n)


def _vicreg_directional(u1, u2, lambda1, lambda2, gamma):
    n, c = u1.shape
    inv = np.sum((u1 - u2) ** 2) / n
    centered = decenter_cols(u1)
    cov = centered.T @ centered / (n - 1)
    off = cov - np.diag(np.diag(cov))
    var = np.maximum(0.0, gamma - col_std(u1))
    return float(inv + lambda1 / c * np.sum(off**2) + lambda2 / c * np.sum(var))


def vicreg_loss(bv, lambda1=1.0, lambda2=1.0, gamma=1.0, symmetric=True):
    """Invariance + covariance + variance hinge, the latter two on the online view."""
    if bv.n < 2:
        raise DimensionError("VICReg needs at least 2 samples")
    fwd = _vicreg_directional(bv.u1, bv.u2, lambda1, lambda2, gamma)
    if not symmetric:
        return fwd
    return 0.5 * (fwd + _vicreg_directional(bv.u2, bv.u1, lambda1, lambda2, gamma))


def vicreg_grad(bv, cfg=None, variant="simplified"):
    cfg = cfg or MethodConfig()
    u1, u2, n, c = bv.u1, bv.u2, bv.n, bv.c
    if variant == "simplified":
        g_neg = (u1 @ u1.T / n) @ u1
        return GradientDecomposition(-u2, g_neg, cfg.balance_for("vicreg_simplified"), 2.0 / n)
    if variant != "full":
        raise ValueError(f"unknown vicreg variant {variant!r}")
    if n < 2:
        raise DimensionError("VICReg needs at least 2 samples")
    if cfg.lambda1 <= 0:
        raise ValueError("the full VICReg decomposition needs lambda1 > 0")
    centered = decenter_cols(u1)
    cov_diag = np.sum(centered**2, axis=0) / (n - 1)
    std = col_std(u1)
    lam = 2.0 * cfg.lambda1 * n**2 / (c * (n - 1) ** 2)
    # indicator(0 > 0) = 0 at the hinge
    active = (cfg.gamma - std) > 0
    b_diag = n / (lam * c * (n - 1)) * (
        2.0 * cfg.lambda1 * cov_diag
        + 0.5 * cfg.lambda2 * np.where(active, 1.0 / np.maximum(std, EPS_NORM), 0.0)
    )
    decor = (centered @ centered.T / n) @ centered
    residual = u1 / lam - centered * b_diag
    return GradientDecomposition(
        -u2, decor + residual, lam, 2.0 / n,
        terms={"decorrelation": decor, "residual": residual},
    )


# --- UniGrad -------------------------------------------------------------------


def _require_corr(corr):
    if corr is None or not corr.initialized:
        raise ValueError("correlation state is not initialized")


def unigrad_grad(bv, corr, lambda_balance=100.0):
    """``(1/N) (-u2 + lambda F u1)`` row-wise."""
    _require_corr(corr)
    return GradientDecomposition(-bv.u2, bv.u1 @ corr.f, lambda_balance, 1.0 / bv.n)


def unigrad_loss(bv, corr, lambda_balance=100.0, symmetric=True):
    """Mean of ``-u1.u2 + (lambda/2) u1^T F u1`` with F held fixed."""
    _require_corr(corr)

    def directional(a, b):
        quad = np.sum((a @ corr.f) * a, axis=1)
        return float(np.mean(-np.sum(a * b, axis=1) + 0.5 * lambda_balance * quad))

    fwd = directional(bv.u1, bv.u2)
    if not symmetric:
        return fwd
    return 0.5 * (fwd + directional(bv.u2, bv.u1))


# --- dispatch ----------------------------------------------------------------


@dataclass
class GradState:
    """Cross-step state a method may need: memory bank, correlation, predictor."""

    bank: MemoryBank = None
    corr: CorrelationState = None
    predictor: PredictorMatrix = None


def unified_grad(method, bv, cfg=None, state=None):
    """Single entry point: the method's gradient with respect to ``bv.u1``."""
    cfg = cfg or MethodConfig()
    state = state or GradState()
    if method == "moco":
        return contrastive_grad(bv, "moco", cfg.tau, state.bank)
    if method in ("simclr_full", "simclr_simplified"):
        return contrastive_grad(bv, method, cfg.tau)
    if method in ("byol_directpred_full", "byol_directpred_simplified"):
        _require_corr(state.corr)
        return asymmetric_grad(
            bv, state.corr, state.predictor, method.rsplit("_", 1)[1],
            cfg.epsilon_pred, cfg.lambda_denominator,
        )
    if method in ("barlow_full", "barlow_diag"):
        variant = "full" if method == "barlow_full" else "diag_substituted"
        return barlow_grad(bv, cfg.balance_for(method), variant, cfg.norm_for(method),
                           cfg.barlow_diag_scale)
    if method in ("vicreg_full", "vicreg_simplified"):
        return vicreg_grad(bv, cfg, method.split("_", 1)[1])
    if method == "unigrad":
        return unigrad_grad(bv, state.corr, cfg.balance_for(method))
    raise ValueError(f"unknown method {method!r}; expected one of {METHOD_IDS}")
