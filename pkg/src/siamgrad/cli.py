"""Command line entry point: verify, train, sweep, eval, plot.

Experiments are declared in one JSON document. Only ``--config``,
``--output-dir``, ``--seed`` and ``--jobs`` exist as flags; the log files
consumed by ``eval`` and ``plot`` may also be given positionally.

Exit codes: 0 success, 1 verification failure, 2 config error, 3 divergence.
"""

import argparse
import dataclasses
import itertools
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

from . import oracle
from .methods import METHOD_IDS
from .metrics import LOG_FIELDS, atomic_write_text, read_csv, write_csv
from .predictor import DIAGNOSTIC_FIELDS
from .trainer import ConfigError, TrainConfig, TrainingDiverged, dataset_for, train_run

COMMANDS = ("verify", "train", "sweep", "eval", "plot")
SWEEP_METHODS = ["simclr_simplified", "byol_directpred_simplified", "vicreg_simplified"]
SWEEP_KINDS = ["stop_gradient", "momentum", "mixed"]
DEFAULT_SIZES = [[n, c] for n in (2, 4, 8) for c in (4, 8, 16)]

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3

VERIFY_FIELDS = ["method", "variant", "N", "C", "seed", "max_rel_err", "pass", "skipped"]
SUMMARY_FIELDS = [
    "method",
    "target_kind",
    "status",
    "knn_acc",
    "pos_cos_mean",
    "neg_abs_cos_mean",
    "pc90_rank",
    "log",
]


@dataclass
class ExperimentConfig:
    command: str = "train"
    train: TrainConfig = field(default_factory=TrainConfig)
    methods: list = field(default_factory=lambda: list(SWEEP_METHODS))
    target_kinds: list = field(default_factory=lambda: list(SWEEP_KINDS))
    output_dir: str = "runs"
    plot_series: list = field(default_factory=lambda: ["knn_acc"])
    logs: list = field(default_factory=list)
    seeds: int = 20
    sizes: list = field(default_factory=lambda: [list(s) for s in DEFAULT_SIZES])

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        bad = [m for m in self.methods if m not in METHOD_IDS]
        if bad:
            raise ConfigError(f"unknown method ids {bad}")
        if self.seeds < 1:
            raise ConfigError("seeds must be >= 1")
        for size in self.sizes:
            if len(size) != 2 or size[0] < 2 or size[1] < 1:
                raise ConfigError(f"bad (N, C) size {size}")

    def to_dict(self):
        doc = dataclasses.asdict(self)
        doc["train"] = self.train.to_dict()
        return doc

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        doc = dict(doc)
        try:
            if "train" in doc:
                doc["train"] = TrainConfig.from_dict(doc["train"])
            return cls(**doc)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def load_config(path):
    """Read a JSON config, or the ``config`` header embedded in an output CSV."""
    with open(path) as fh:
        text = fh.read()
    if text.startswith("# "):
        header, _ = read_csv(path)
        if "config" not in header:
            raise ConfigError(f"{path} has no embedded config")
        return ExperimentConfig.from_dict(header["config"])
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return ExperimentConfig.from_dict(doc)


def _embedded(cfg, **changes):
    """The config as written into output headers; output_dir is a location, not content."""
    doc = dataclasses.replace(cfg, **changes).to_dict()
    doc.pop("output_dir")
    return doc


# --- verify ----------------------------------------------------------------------


def cmd_verify(cfg, pairs=None):
    """Run every oracle pair and structural check; returns (exit status, report path)."""
    pairs = oracle.ORACLE_PAIRS if pairs is None else pairs
    base = cfg.train.seed
    rows = []
    for name in pairs:
        for seed, (n, c) in itertools.product(range(base, base + cfg.seeds), cfg.sizes):
            rep = oracle.check_pair(name, seed, n, c, builders=pairs)
            ok = rep.passed()
            rows.append(dict(method=name, variant="oracle", N=n, C=c, seed=seed,
                             max_rel_err=rep.max_rel_err, ok=ok, skipped=rep.skipped))
            if rep.skipped:
                rows.append(dict(method=name, variant="kink_skip", N=n, C=c, seed=seed,
                                 max_rel_err=None, ok=True, skipped=rep.skipped))
    for name in oracle.STRUCTURAL_CHECKS:
        for seed, (n, c) in itertools.product(range(base, base + cfg.seeds), cfg.sizes):
            chk = oracle.check_structure(name, seed, n, c)
            rows.append(dict(method=name, variant="structural", N=n, C=c, seed=seed,
                             max_rel_err=chk.error, ok=chk.passed, skipped=0))
    for r in rows:
        r["pass"] = str(bool(r.pop("ok"))).lower()
    path = os.path.join(cfg.output_dir, "verify.csv")
    write_csv(path, VERIFY_FIELDS, rows, {"config": _embedded(cfg, command="verify")})
    failed = sum(r["pass"] == "false" for r in rows)
    print(f"verify: {len(rows) - failed}/{len(rows)} rows pass -> {path}")
    return (EXIT_VERIFY if failed else EXIT_OK), path


# --- train / sweep ---------------------------------------------------------------


def _run_name(train):
    return f"{train.method}_{train.target_kind}"


def _run_one(cfg, train):
    """Train one cell and write its log; returns a summary row."""
    try:
        data = dataset_for(train)
    except ValueError as exc:
        raise ConfigError(f"dataset: {exc}") from exc
    name = _run_name(train)
    path = os.path.join(cfg.output_dir, name + ".csv")
    row = {"method": train.method, "target_kind": train.target_kind, "log": name + ".csv"}
    try:
        log = train_run(train, data)
    except TrainingDiverged as exc:
        row["status"] = f"diverged: {exc}"
        return row
    header = {
        "config": _embedded(cfg, command="train", train=train),
        "seed": train.seed,
        "dataset_hash": data.digest(),
    }
    log.to_csv(path, header)
    if log.diagnostics:
        write_csv(os.path.join(cfg.output_dir, name + "_predictor.csv"), DIAGNOSTIC_FIELDS,
                  log.diagnostics, header)
    last = log.last
    row.update(status="ok", **{k: last[k] for k in SUMMARY_FIELDS if k in last})
    return row


def cmd_train(cfg):
    row = _run_one(cfg, cfg.train)
    if row["status"] != "ok":
        print(f"train: {row['status']}", file=sys.stderr)
        return EXIT_DIVERGED
    print(f"train: {row['log']} knn_acc={row['knn_acc']:.4f} pc90_rank={row['pc90_rank']}")
    return EXIT_OK


def sweep_cells(cfg):
    return [
        dataclasses.replace(cfg.train, method=m, target_kind=k)
        for m in cfg.methods
        for k in cfg.target_kinds
    ]


def cmd_sweep(cfg, jobs=1):
    cells = sweep_cells(cfg)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_one, [cfg] * len(cells), cells))
    else:
        rows = [_run_one(cfg, cell) for cell in cells]
    path = os.path.join(cfg.output_dir, "summary.csv")
    write_csv(path, SUMMARY_FIELDS, rows, {"config": _embedded(cfg, command="sweep")})
    for r in rows:
        acc = r.get("knn_acc")
        shown = f"{acc:.4f}" if acc is not None else "-"
        print(f"sweep: {r['method']:<28} {r['target_kind']:<14} {r['status']:<10} knn={shown}")
    return EXIT_OK


# --- eval ------------------------------------------------------------------------


def cmd_eval(cfg):
    """Final-row metrics of existing trajectory logs, as one summary table."""
    if not cfg.logs:
        raise ConfigError("eval needs at least one log")
    rows = []
    for path in cfg.logs:
        header, body = read_csv(path)
        if not body:
            raise ConfigError(f"{path} has no rows")
        train = header.get("config", {}).get("train", {})
        last = body[-1]
        row = {
            "method": train.get("method", ""),
            "target_kind": train.get("target_kind", ""),
            "status": "ok",
            "log": os.path.basename(path),
        }
        row.update({k: last.get(k) for k in SUMMARY_FIELDS if k in LOG_FIELDS})
        if row.get("pc90_rank") is not None:
            row["pc90_rank"] = int(row["pc90_rank"])
        rows.append(row)
    out = os.path.join(cfg.output_dir, "eval.csv")
    write_csv(out, SUMMARY_FIELDS, rows, {"config": _embedded(cfg, command="eval")})
    for r in rows:
        print(f"eval: {r['log']} knn_acc={r['knn_acc']} pc90_rank={r['pc90_rank']}")
    return EXIT_OK


# --- plot ------------------------------------------------------------------------

_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b"]


def svg_line_chart(series, title, xlabel, ylabel, comment=None, width=640, height=400):
    """Standalone SVG document with one polyline per ``(label, xs, ys)``."""
    left, right, top, bottom = 70, 170, 40, 50
    xs = [x for _, sx, _ in series for x in sx]
    ys = [y for _, _, sy in series for y in sy]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw, ph = width - left - right, height - top - bottom

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + ph - (y - y0) / (y1 - y0) * ph

    out = ['<?xml version="1.0" encoding="UTF-8"?>']
    if comment is not None:
        out.append("<!-- " + comment.replace("--", "- -") + " -->")
    out.append(f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
               f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">')
    out.append(f'<rect width="{width}" height="{height}" fill="white"/>')
    out.append(f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>')
    out.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>')
    for i in range(5):
        fx = x0 + (x1 - x0) * i / 4
        fy = y0 + (y1 - y0) * i / 4
        out.append(f'<text x="{px(fx):.1f}" y="{top + ph + 16}" text-anchor="middle">{fx:.4g}</text>')
        out.append(f'<text x="{left - 6}" y="{py(fy) + 4:.1f}" text-anchor="end">{fy:.4g}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{top + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + ph / 2})">{escape(ylabel)}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{top - 14}" text-anchor="middle" '
               f'font-size="14">{escape(title)}</text>')
    for i, (label, sx, sy) in enumerate(series):
        color = _COLORS[i % len(_COLORS)]
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(sx, sy))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = top + 14 + 18 * i
        out.append(f'<line x1="{left + pw + 12}" y1="{ly}" x2="{left + pw + 32}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 38}" y="{ly + 4}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def cmd_plot(cfg):
    if not cfg.logs:
        raise ConfigError("plot needs at least one log")
    if not cfg.plot_series:
        raise ConfigError("plot needs at least one series")
    logs = []
    for path in cfg.logs:
        _, rows = read_csv(path)
        logs.append((os.path.splitext(os.path.basename(path))[0], rows))
    written = []
    for column in cfg.plot_series:
        if column not in LOG_FIELDS or column == "step":
            raise ConfigError(f"unknown column {column!r}")
        series = []
        for stem, rows in logs:
            pts = [(r["step"], r[column]) for r in rows if r.get(column) is not None]
            if pts:
                series.append((stem, [p[0] for p in pts], [p[1] for p in pts]))
        if not series:
            raise ConfigError(f"no values for {column!r} in the given logs")
        comment = json.dumps({"config": _embedded(cfg, command="plot", plot_series=[column])},
                             sort_keys=True)
        svg = svg_line_chart(series, column, "step", column, comment)
        path = os.path.join(cfg.output_dir, column + ".svg")
        atomic_write_text(path, svg)
        written.append(path)
    print("plot: " + ", ".join(written))
    return EXIT_OK


# --- entry -------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="siamgrad", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config, or an output CSV with an embedded config")
        p.add_argument("--output-dir")
        p.add_argument("--seed", type=int)
        p.add_argument("--jobs", type=int, default=1)
        if name in ("eval", "plot"):
            p.add_argument("logs", nargs="*", help="trajectory CSVs")
    return parser


def resolve(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    changes = {"command": args.command}
    if args.output_dir is not None:
        changes["output_dir"] = args.output_dir
    if args.seed is not None:
        changes["train"] = dataclasses.replace(cfg.train, seed=args.seed)
    if getattr(args, "logs", None):
        changes["logs"] = list(args.logs)
    return dataclasses.replace(cfg, **changes)


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = resolve(args)
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        if cfg.command == "verify":
            return cmd_verify(cfg)[0]
        if cfg.command == "train":
            return cmd_train(cfg)
        if cfg.command == "sweep":
            return cmd_sweep(cfg, args.jobs)
        if cfg.command == "eval":
            return cmd_eval(cfg)
        return cmd_plot(cfg)
    except (ConfigError, OSError) as exc:
        print(f"siamgrad: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as exc:
        print(f"siamgrad: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
