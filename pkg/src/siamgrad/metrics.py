"""Representation-quality statistics logged along a training trajectory."""

import csv
import io
import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .numerics import DimensionError, as_batch, decenter_cols, l2_normalize, sym_eig

LOG_FIELDS = [
    "step",
    "loss",
    "pos_cos_mean",
    "neg_cos_mean",
    "neg_abs_cos_mean",
    "knn_acc",
    "pc90_rank",
    "lambda_diag",
]


def positive_cosine(u1, u2):
    u1, u2 = as_batch(u1, "u1"), as_batch(u2, "u2")
    if u1.shape != u2.shape:
        raise DimensionError(f"shape mismatch: {u1.shape} vs {u2.shape}")
    return float(np.mean(np.sum(l2_normalize(u1) * l2_normalize(u2), axis=1)))


def negative_cosine(u):
    """Mean and mean-absolute cosine over all ordered pairs ``i != j``."""
    u = as_batch(u, "u")
    n = u.shape[0]
    if n < 2:
        raise DimensionError("need at least 2 samples")
    un = l2_normalize(u)
    sims = np.clip(un @ un.T, -1.0, 1.0)
    off = ~np.eye(n, dtype=bool)
    return float(sims[off].mean()), float(np.abs(sims[off]).mean())


def knn_accuracy(features, labels, k=5, split_seed=0, test_fraction=0.2):
    """Cosine k-NN accuracy on a seeded 80/20 split.

    Neighbours with equal similarity are ranked by smaller training index; a
    tied vote goes to the label whose best-ranked neighbour comes first.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    x = l2_normalize(as_batch(features, "features"))
    labels = np.asarray(labels)
    m = len(x)
    if m < k + 1:
        raise ValueError(f"need more than k={k} samples")
    perm = np.random.default_rng(split_seed).permutation(m)
    n_test = max(1, int(round(test_fraction * m)))
    n_test = min(n_test, m - k)
    test = np.sort(perm[:n_test])
    train = np.sort(perm[n_test:])
    sims = x[test] @ x[train].T
    order = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    neigh = labels[train][order]
    correct = 0
    for row, truth in zip(neigh, labels[test]):
        values, first, counts = np.unique(row, return_index=True, return_counts=True)
        best = np.flatnonzero(counts == counts.max())
        pred = values[best[np.argmin(first[best])]]
        correct += pred == truth
    return correct / len(test)


def principal_component_ratio(features, threshold=0.9):
    """Smallest r whose top-r covariance eigenvalues carry more than ``threshold`` of the total."""
    x = as_batch(features, "features")
    if x.shape[0] < 2:
        raise DimensionError("need at least 2 samples")
    centered = decenter_cols(x)
    cov = centered.T @ centered / (x.shape[0] - 1)
    vals = np.maximum(sym_eig(cov)[0], 0.0)
    total = vals.sum()
    if not total > 0:
        raise ValueError("covariance is identically zero")
    ratios = np.cumsum(vals) / total
    above = np.flatnonzero(ratios > threshold)
    return int(above[0] + 1) if above.size else len(vals)


def atomic_write_text(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, fields, rows, header=None):
    """Write rows (dicts) as CSV; ``header`` entries become leading ``# key: json`` lines."""
    buf = io.StringIO()
    for key, value in (header or {}).items():
        buf.write(f"# {key}: {json.dumps(value, sort_keys=True)}\n")
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(row.get(k)) for k in fields})
    atomic_write_text(path, buf.getvalue())


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def read_csv(path):
    """Returns ``(header, rows)``; numeric cells are parsed as floats."""
    header, lines = {}, []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("# "):
                key, _, value = line[2:].partition(": ")
                header[key] = json.loads(value)
            else:
                lines.append(line)
    rows = []
    for row in csv.DictReader(lines):
        rows.append({k: _parse(v) for k, v in row.items()})
    return header, rows


def _parse(v):
    if v == "":
        return None
    try:
        return float(v)
    except ValueError:
        return v


@dataclass
class TrajectoryLog:
    rows: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)

    def append(self, row):
        if self.rows and row["step"] <= self.rows[-1]["step"]:
            raise ValueError("log steps must be strictly increasing")
        self.rows.append(row)

    @property
    def last(self):
        return self.rows[-1]

    def column(self, name):
        return np.array([np.nan if r.get(name) is None else r[name] for r in self.rows], float)

    def to_csv(self, path, header=None):
        write_csv(path, LOG_FIELDS, self.rows, header)

    @classmethod
    def from_csv(cls, path):
        _, rows = read_csv(path)
        for r in rows:
            r["step"] = int(r["step"])
            if r.get("pc90_rank") is not None:
                r["pc90_rank"] = int(r["pc90_rank"])
        return cls(rows)
