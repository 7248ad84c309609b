"""Desk-scale siamese training with a hand-written MLP encoder.

The online branch is the only one that receives gradients. Target features
come from the online weights (weight sharing / stop-gradient), from an EMA copy
(momentum), or from both in the ``mixed`` mode where the positive term uses the
momentum branch and the negative term uses stop-gradient online features.
"""

import dataclasses
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .methods import METHOD_IDS, BatchViews, GradientDecomposition, GradState, MemoryBank
from .methods import MethodConfig, unified_grad
from .metrics import (
    TrajectoryLog,
    knn_accuracy,
    negative_cosine,
    positive_cosine,
    principal_component_ratio,
)
from .numerics import EPS_NORM, DimensionError
from .predictor import CorrelationState, compute_predictor, diagnostics_row, update_correlation

TRAIN_KINDS = ("weight_sharing", "stop_gradient", "momentum", "mixed")
PREDICTOR_METHODS = ("byol_directpred_full", "byol_directpred_simplified")
CORRELATION_METHODS = PREDICTOR_METHODS + ("unigrad",)


class TrainingDiverged(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


# --- network ---------------------------------------------------------------------


@dataclass
class MlpParams:
    """Fully connected ReLU network; ``weights[i]`` has shape (out, in)."""

    weights: list
    biases: list

    def __post_init__(self):
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (w.shape[0],):
                raise DimensionError(f"layer {i}: bias shape {b.shape} vs weight {w.shape}")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise DimensionError(f"layer {i} input does not chain with layer {i - 1}")

    @property
    def output_dim(self):
        return self.weights[-1].shape[0]

    @classmethod
    def init(cls, widths, rng):
        weights, biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            weights.append(rng.standard_normal((fan_out, fan_in)) * math.sqrt(2.0 / fan_in))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @classmethod
    def identity(cls, dim):
        return cls([np.eye(dim)], [np.zeros(dim)])

    def copy(self):
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def arrays(self):
        return self.weights + self.biases

    def tobytes(self):
        return b"".join(a.tobytes() for a in self.arrays())


def forward(params, x, norm_mode="l2"):
    """Run the MLP and normalize its output; returns ``(features, cache)``."""
    h = np.asarray(x, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != params.weights[0].shape[1]:
        raise DimensionError(f"input shape {h.shape} does not fit first layer")
    inputs, pre = [], []
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        a = h @ w.T + b
        pre.append(a)
        h = a if i == last else np.maximum(a, 0.0)
    z = h
    if norm_mode == "l2":
        norm = np.maximum(np.linalg.norm(z, axis=1, keepdims=True), EPS_NORM)
        u, aux = z / norm, norm
    elif norm_mode == "batch_norm":
        if len(z) < 2:
            raise DimensionError("batch normalization needs at least 2 samples")
        std = np.sqrt(np.maximum(z.var(axis=0), EPS_NORM**2))
        u, aux = (z - z.mean(axis=0)) / std, std
    elif norm_mode == "none":
        u, aux = z, None
    else:
        raise ValueError(f"unknown norm_mode {norm_mode!r}")
    cache = {"params": params, "inputs": inputs, "pre": pre, "out": u, "norm": norm_mode, "aux": aux}
    return u, cache


def backward(params, cache, grad_out):
    """Parameter gradients given the gradient with respect to the normalized output.

    Batch-norm statistics are treated as constants, matching the gradient forms.
    """
    if cache.get("params") is not params:
        raise ValueError("stale cache: it was produced by a different parameter set")
    g = np.asarray(grad_out, dtype=np.float64)
    u = cache["out"]
    if cache["norm"] == "l2":
        g = (g - u * np.sum(u * g, axis=1, keepdims=True)) / cache["aux"]
    elif cache["norm"] == "batch_norm":
        g = g / cache["aux"]
    grads_w, grads_b = [None] * len(params.weights), [None] * len(params.weights)
    for i in reversed(range(len(params.weights))):
        if i != len(params.weights) - 1:
            g = g * (cache["pre"][i] > 0)
        grads_w[i] = g.T @ cache["inputs"][i]
        grads_b[i] = g.sum(axis=0)
        g = g @ params.weights[i]
    return MlpParams(grads_w, grads_b)


# --- data ------------------------------------------------------------------------


@dataclass
class SyntheticDataset:
    points: np.ndarray
    labels: np.ndarray
    num_clusters: int
    noise_sigma: float = 0.3
    p_drop: float = 0.1

    def digest(self):
        h = hashlib.sha256(self.points.tobytes())
        h.update(self.labels.astype(np.int64).tobytes())
        return h.hexdigest()[:16]


def generate_dataset(k=4, d=32, m=2048, separation=6.0, seed=0, cluster_std=1.0,
                     noise_sigma=0.3, p_drop=0.1):
    """Isotropic Gaussian clusters whose centers are pairwise ``separation`` apart or more.

    ``separation`` is in units of ``cluster_std``. With ``k <= d`` the centers
    are scaled orthonormal directions (all pairwise distances equal); otherwise
    they are rejection-sampled on a sphere.
    """
    if k < 2 or d < 2:
        raise ValueError("need at least 2 clusters in at least 2 dimensions")
    rng = np.random.default_rng(seed)
    dist = separation * cluster_std
    if k <= d:
        q, _ = np.linalg.qr(rng.standard_normal((d, k)))
        centers = q.T * (dist / math.sqrt(2.0))
    else:
        centers = _sample_spread_centers(rng, k, d, dist)
    labels = rng.permutation(np.arange(m) % k)
    points = centers[labels] + cluster_std * rng.standard_normal((m, d))
    return SyntheticDataset(points, labels, k, noise_sigma, p_drop)


def _sample_spread_centers(rng, k, d, dist, tries=10_000):
    radius = dist
    centers = []
    for _ in range(tries):
        c = rng.standard_normal(d)
        c *= radius / np.linalg.norm(c)
        if all(np.linalg.norm(c - o) >= dist for o in centers):
            centers.append(c)
            if len(centers) == k:
                return np.array(centers)
    raise ValueError(f"cannot place {k} centers {dist} apart in {d} dimensions")


def augment(x, rng, noise_sigma=0.3, p_drop=0.1):
    """Two views: additive Gaussian noise, then independent coordinate dropout."""
    x = np.asarray(x, dtype=np.float64)

    def view():
        v = x + noise_sigma * rng.standard_normal(x.shape)
        return np.where(rng.random(x.shape) < p_drop, 0.0, v)

    return view(), view()


# --- schedule and state --------------------------------------------------------


def lr_schedule(step, total_steps, base_lr, warmup_steps=0):
    """Linear warmup followed by cosine decay to zero."""
    if step < warmup_steps:
        return base_lr * (step + 1) / warmup_steps
    span = max(total_steps - warmup_steps, 1)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * (step - warmup_steps) / span))


def momentum_schedule(step, total_steps, m_init=0.996, m_final=1.0):
    return m_final - (m_final - m_init) * (math.cos(math.pi * step / total_steps) + 1.0) / 2.0


@dataclass
class SiameseState:
    online: MlpParams
    target: MlpParams
    target_kind: str
    momentum_m: float = 0.996
    velocity: MlpParams = None


def ema_update(state, step, total_steps, m_init=0.996, m_final=1.0):
    if state.target_kind not in ("momentum", "mixed"):
        raise ValueError(f"EMA update on a {state.target_kind!r} target")
    m = momentum_schedule(step, total_steps, m_init, m_final)
    target = MlpParams(
        [m * t + (1.0 - m) * o for t, o in zip(state.target.weights, state.online.weights)],
        [m * t + (1.0 - m) * o for t, o in zip(state.target.biases, state.online.biases)],
    )
    return dataclasses.replace(state, target=target, momentum_m=m)


# --- config --------------------------------------------------------------------


@dataclass
class DatasetConfig:
    k: int = 4
    d: int = 32
    m: int = 2048
    separation: float = 6.0
    cluster_std: float = 1.0
    noise_sigma: float = 0.3
    p_drop: float = 0.1

    def __post_init__(self):
        if self.k < 2 or self.d < 2 or self.m < self.k:
            raise ConfigError("dataset needs k >= 2, d >= 2 and m >= k")
        if not (self.separation > 0 and self.cluster_std >= 0 and self.noise_sigma >= 0):
            raise ConfigError("separation must be positive, cluster_std and noise_sigma nonnegative")
        if not 0.0 <= self.p_drop <= 1.0:
            raise ConfigError("p_drop must lie in [0, 1]")


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_n: int = 128
    lr: float = 0.025
    warmup_steps: int = 100
    sgd_momentum: float = 0.9
    weight_decay: float = 1e-4
    momentum_init: float = 0.996
    momentum_final: float = 1.0
    method: str = "unigrad"
    method_config: MethodConfig = field(default_factory=MethodConfig)
    target_kind: str = "momentum"
    seed: int = 0
    log_every: int = 100
    widths: tuple = (64, 64, 64, 64, 32)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)

    def __post_init__(self):
        if not self.lr >= 0:
            raise ConfigError("lr must be nonnegative")
        if not self.momentum_init <= self.momentum_final <= 1.0:
            raise ConfigError("need momentum_init <= momentum_final <= 1")
        if self.method not in METHOD_IDS:
            raise ConfigError(f"unknown method {self.method!r}")
        if self.target_kind not in TRAIN_KINDS:
            raise ConfigError(f"unknown target kind {self.target_kind!r}")
        if self.steps < 1 or self.batch_n < 2 or self.log_every < 1:
            raise ConfigError("steps, log_every must be >= 1 and batch_n >= 2")
        self.widths = tuple(self.widths)
        if not self.widths or min(self.widths) < 1:
            raise ConfigError("widths must be positive layer sizes")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        _reject_unknown(cls, doc, "train")
        if "method_config" in doc:
            _reject_unknown(MethodConfig, doc["method_config"], "method_config")
            try:
                doc["method_config"] = MethodConfig(**doc["method_config"])
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        if "dataset" in doc:
            _reject_unknown(DatasetConfig, doc["dataset"], "dataset")
            doc["dataset"] = DatasetConfig(**doc["dataset"])
        return cls(**doc)


def _reject_unknown(cls, doc, where):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where} must be a JSON object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown {where} keys: {sorted(unknown)}")


def dataset_for(cfg):
    ds = cfg.dataset
    return generate_dataset(ds.k, ds.d, ds.m, ds.separation, cfg.seed, ds.cluster_std,
                            ds.noise_sigma, ds.p_drop)


# --- training loop ---------------------------------------------------------------


def _sgd(params, grads, velocity, lr, mu, wd):
    new_p, new_v = [], []
    for p, g, v in zip(params.arrays(), grads.arrays(), velocity.arrays()):
        v = mu * v + g + wd * p
        new_v.append(v)
        new_p.append(p - lr * v)
    half = len(params.weights)
    return MlpParams(new_p[:half], new_p[half:]), MlpParams(new_v[:half], new_v[half:])


def _add(a, b):
    return MlpParams([x + y for x, y in zip(a.weights, b.weights)],
                     [x + y for x, y in zip(a.biases, b.biases)])


def _zeros_like(p):
    return MlpParams([np.zeros_like(w) for w in p.weights], [np.zeros_like(b) for b in p.biases])


class _Trainer:
    def __init__(self, cfg, data):
        self.cfg = cfg
        self.data = data
        self.mcfg = cfg.method_config
        self.norm_mode = self.mcfg.norm_for(cfg.method)
        self.rng = np.random.default_rng([cfg.seed, 1])
        widths = (data.points.shape[1],) + cfg.widths
        online = MlpParams.init(widths, np.random.default_rng([cfg.seed, 0]))
        uses_ema = cfg.target_kind in ("momentum", "mixed")
        self.state = SiameseState(
            online=online,
            target=online.copy() if uses_ema else online,
            target_kind=cfg.target_kind,
            momentum_m=cfg.momentum_init,
            velocity=_zeros_like(online),
        )
        c = widths[-1]
        self.gstate = GradState()
        if cfg.method == "moco":
            self.gstate.bank = MemoryBank(self.mcfg.bank_size, c)
        if cfg.method in CORRELATION_METHODS:
            self.gstate.corr = CorrelationState(c, self.mcfg.rho)
        eval_rng = np.random.default_rng([cfg.seed, 2])
        n_pair = min(512, len(data.points))
        sub = data.points[eval_rng.choice(len(data.points), n_pair, replace=False)]
        self.eval_pair = augment(sub, eval_rng, data.noise_sigma, data.p_drop)
        self.log = TrajectoryLog()
        self.last_lambda = None

    def features(self, params, x):
        return forward(params, x, self.norm_mode)

    def decompose(self, online, pos_target, neg_target):
        method, kind = self.cfg.method, self.cfg.target_kind
        tk = "stop_gradient" if kind == "mixed" else kind
        pos = unified_grad(method, BatchViews(online, pos_target, tk), self.mcfg, self.gstate)
        if neg_target is pos_target:
            return pos
        neg = unified_grad(method, BatchViews(online, neg_target, tk), self.mcfg, self.gstate)
        return GradientDecomposition(pos.g_pos, neg.g_neg, pos.balance, pos.scale)

    def step(self, t):
        cfg, st = self.cfg, self.state
        idx = self.rng.choice(len(self.data.points), cfg.batch_n, replace=False)
        x1, x2 = augment(self.data.points[idx], self.rng, self.data.noise_sigma, self.data.p_drop)
        o1, c1 = self.features(st.online, x1)
        o2, c2 = self.features(st.online, x2)
        # target outputs never reach backward: only c1/c2 are consumed
        if cfg.target_kind in ("momentum", "mixed"):
            m1, _ = self.features(st.target, x1)
            m2, _ = self.features(st.target, x2)
        else:
            m1, m2 = o1, o2
        n1, n2 = (o1, o2) if cfg.target_kind == "mixed" else (m1, m2)

        gs = self.gstate
        if gs.corr is not None and not gs.corr.initialized:
            gs.corr = update_correlation(gs.corr, o1, o2)
        if gs.bank is not None and len(gs.bank) == 0:
            gs.bank.enqueue(np.concatenate([m1, m2]))
        if cfg.method in PREDICTOR_METHODS and (
            gs.predictor is None or t % self.mcfg.predictor_every == 0
        ):
            gs.predictor = compute_predictor(gs.corr, self.mcfg.epsilon_pred)

        d1 = self.decompose(o1, m2, n2)
        d2 = self.decompose(o2, m1, n1)
        g1, g2 = 0.5 * d1.total, 0.5 * d2.total
        loss = float(np.sum(o1 * g1) + np.sum(o2 * g2))
        if not np.isfinite(loss) or not (np.all(np.isfinite(g1)) and np.all(np.isfinite(g2))):
            raise TrainingDiverged(f"non-finite loss at step {t}")
        if cfg.method in PREDICTOR_METHODS:
            self.last_lambda = np.concatenate([np.atleast_1d(d1.balance), np.atleast_1d(d2.balance)])

        grads = _add(backward(st.online, c1, g1), backward(st.online, c2, g2))
        lr = lr_schedule(t, cfg.steps, cfg.lr, cfg.warmup_steps)
        online, velocity = _sgd(st.online, grads, st.velocity, lr, cfg.sgd_momentum,
                                cfg.weight_decay)
        if cfg.target_kind in ("momentum", "mixed"):
            st = dataclasses.replace(st, online=online, velocity=velocity)
            st = ema_update(st, t, cfg.steps, cfg.momentum_init, cfg.momentum_final)
        else:
            st = dataclasses.replace(st, online=online, target=online, velocity=velocity)
        self.state = st

        # cross-step state is updated strictly after the gradient
        if gs.corr is not None:
            gs.corr = update_correlation(gs.corr, o1, o2)
        if gs.bank is not None:
            gs.bank.enqueue(np.concatenate([m1, m2]))
        return loss

    def evaluate(self, step, loss):
        online = self.state.online
        feats, _ = self.features(online, self.data.points)
        p1, _ = self.features(online, self.eval_pair[0])
        p2, _ = self.features(online, self.eval_pair[1])
        neg_mean, neg_abs = negative_cosine(feats)
        try:
            pc = principal_component_ratio(feats)
        except ValueError:
            pc = 1
        row = {
            "step": step,
            "loss": loss,
            "pos_cos_mean": positive_cosine(p1, p2),
            "neg_cos_mean": neg_mean,
            "neg_abs_cos_mean": neg_abs,
            "knn_acc": float(knn_accuracy(feats, self.data.labels, 5, self.cfg.seed)),
            "pc90_rank": pc,
            "lambda_diag": None,
        }
        if self.last_lambda is not None:
            row["lambda_diag"] = float(np.mean(self.last_lambda))
        self.log.append(row)
        if self.gstate.corr is not None and self.gstate.corr.initialized:
            top = None
            if self.gstate.predictor is not None:
                top = float(self.gstate.predictor.eigenvalues[0])
            lambdas = self.last_lambda if self.last_lambda is not None else []
            self.log.diagnostics.append(diagnostics_row(step, lambdas, self.gstate.corr, top))

    def run(self):
        for t in range(self.cfg.steps):
            loss = self.step(t)
            if (t + 1) % self.cfg.log_every == 0 or t + 1 == self.cfg.steps:
                self.evaluate(t + 1, loss)
        return self.log


def train_run(cfg, data=None, return_state=False):
    """Train per ``cfg`` and return the :class:`TrajectoryLog`."""
    data = data if data is not None else dataset_for(cfg)
    trainer = _Trainer(cfg, data)
    log = trainer.run()
    return (log, trainer.state) if return_state else log
