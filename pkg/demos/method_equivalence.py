"""
Three simplified methods, one benchmark
=======================================

A contrastive, an asymmetric and a decorrelation method, each reduced to its
simplified gradient, trained with the same network, data and schedule. Their
k-NN accuracy curves end close together.
"""
import os

from siamgrad.cli import svg_line_chart
from siamgrad.metrics import atomic_write_text
from siamgrad.trainer import TrainConfig, train_run

out = os.path.join(os.path.dirname(__file__), "out")
methods = ["simclr_simplified", "byol_directpred_simplified", "vicreg_simplified"]

series = []
for method in methods:
    log = train_run(TrainConfig(method=method))
    series.append((method, log.column("step"), log.column("knn_acc")))
    print(f"{method:<28} knn={log.last['knn_acc']:.3f} pc90={log.last['pc90_rank']}")

finals = [s[2][-1] for s in series]
print(f"spread: {100 * (max(finals) - min(finals)):.1f} points")
path = os.path.join(out, "equivalence_knn.svg")
atomic_write_text(path, svg_line_chart(series, "k-NN accuracy", "step", "knn_acc"))
print("wrote", path)
