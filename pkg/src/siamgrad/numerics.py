"""Dense linear algebra helpers shared by every other module.

Feature batches are plain ``float64`` arrays of shape ``(N, C)``, one row per
sample. Everything here is a pure function of its inputs.
"""

import numpy as np

EPS_NORM = 1e-12


class DimensionError(ValueError):
    """Raised when array shapes do not fit the operation."""


class ConvergenceError(RuntimeError):
    """Raised when the Jacobi eigensolver exhausts its sweep budget."""


def as_batch(x, name="x"):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"{name} must be 2-d (N, C), got shape {x.shape}")
    return x


def l2_normalize(v, axis=-1):
    """Scale ``v`` to unit Euclidean norm along ``axis``.

    Vectors with norm below ``EPS_NORM`` map to zero rather than NaN, so the
    result is always unit or zero and normalizing twice changes nothing.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0 or v.shape[axis] == 0:
        raise DimensionError("cannot normalize an empty vector")
    norm = np.linalg.norm(v, axis=axis, keepdims=True)
    tiny = norm < EPS_NORM
    return np.where(tiny, 0.0, v / np.where(tiny, 1.0, norm))


def cosine_sim(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < EPS_NORM or nb < EPS_NORM:
        raise DimensionError("cosine similarity of a zero vector is undefined")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def softmax_scaled(scores, tau, axis=-1):
    """Softmax of ``scores / tau`` along ``axis`` (max-subtracted)."""
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    z = np.asarray(scores, dtype=np.float64) / tau
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _round_robin(n):
    """Pairings for a parallel cyclic sweep: every (p, q) once, disjoint per round."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        pairs = [(players[i], players[m - 1 - i]) for i in range(m // 2)]
        pairs = [(min(p, q), max(p, q)) for p, q in pairs if p < n and q < n]
        p, q = zip(*pairs)
        rounds.append((np.array(p), np.array(q)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def _fix_signs(vecs):
    for j in range(vecs.shape[1]):
        nz = np.flatnonzero(np.abs(vecs[:, j]) > 1e-12)
        if nz.size and vecs[nz[0], j] < 0:
            vecs[:, j] = -vecs[:, j]
    return vecs


def sym_eig(s, tol=1e-12, max_sweeps=100):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Rotations are applied in round-robin order so that each round touches
    disjoint index pairs and can be vectorized. Returns ``(eigenvalues,
    eigenvectors)`` with eigenvalues descending and each eigenvector's first
    nonzero entry positive.
    """
    a = np.array(s, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {a.shape}")
    if np.max(np.abs(a - a.T), initial=0.0) > 1e-10:
        raise ValueError("matrix is not symmetric within 1e-10")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    n = a.shape[0]
    a = 0.5 * (a + a.T)
    vecs = np.eye(n)
    threshold = tol * np.linalg.norm(a)

    if n > 1:
        rounds = _round_robin(n)
        off_mask = ~np.eye(n, dtype=bool)
        for sweep in range(max_sweeps + 1):
            off = np.sqrt(np.sum(a[off_mask] ** 2))
            if off <= threshold:
                break
            if sweep == max_sweeps:
                raise ConvergenceError(
                    f"Jacobi did not converge in {max_sweeps} sweeps (off-norm {off:.3e})"
                )
            for p, q in rounds:
                apq = a[p, q]
                active = np.abs(apq) > 0.0
                if not active.any():
                    continue
                p, q, apq = p[active], q[active], apq[active]
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                big = np.abs(theta) > 1e150
                safe = np.where(big, 1.0, theta)
                t = np.sign(safe) / (np.abs(safe) + np.sqrt(safe * safe + 1.0))
                # theta^2 would overflow; t ~ 1/(2 theta)
                t = np.where(big, 0.5 / np.where(big, theta, 1.0), t)
                t[theta == 0.0] = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                sn = t * c

                ap, aq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c[:, None] * ap - sn[:, None] * aq
                a[q, :] = sn[:, None] * ap + c[:, None] * aq
                ap, aq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = ap * c - aq * sn
                a[:, q] = ap * sn + aq * c
                a[p, q] = 0.0
                a[q, p] = 0.0

                vp, vq = vecs[:, p].copy(), vecs[:, q].copy()
                vecs[:, p] = vp * c - vq * sn
                vecs[:, q] = vp * sn + vq * c

    vals = np.diag(a).copy()
    order = np.argsort(-vals, kind="stable")
    return vals[order], _fix_signs(vecs[:, order])


def batch_norm_cols(x):
    """Standardize every column to mean 0, population std 1."""
    x = as_batch(x)
    if x.shape[0] < 2:
        raise DimensionError("batch normalization needs at least 2 samples")
    centered = x - x.mean(axis=0)
    std = np.sqrt(np.mean(centered**2, axis=0))
    # a constant column leaves only rounding residue after centering
    floor = EPS_NORM * np.maximum(np.max(np.abs(x), axis=0), 1.0)
    flat = std <= floor
    return np.where(flat, 0.0, centered / np.where(flat, 1.0, std))


def decenter_cols(x):
    x = as_batch(x)
    if x.shape[0] < 1:
        raise DimensionError("empty batch")
    return x - x.mean(axis=0)


def col_std(x):
    """Per-column standard deviation with the unbiased (N - 1) denominator."""
    x = as_batch(x)
    n = x.shape[0]
    if n < 2:
        raise DimensionError("column std needs at least 2 samples")
    centered = x - x.mean(axis=0)
    return np.sqrt(np.sum(centered**2, axis=0) / (n - 1))
