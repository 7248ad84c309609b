"""
Collapse with and without the balance term
==========================================

UniGrad trained twice on the synthetic clusters: once with the negative
gradient switched off (lambda = 0) and once at lambda = 100. The run without
it aligns every representation; the balanced run keeps samples apart and
clusters recoverable by k-NN.
"""
import os

from siamgrad.cli import svg_line_chart
from siamgrad.methods import MethodConfig
from siamgrad.metrics import atomic_write_text
from siamgrad.trainer import TrainConfig, train_run

out = os.path.join(os.path.dirname(__file__), "out")

logs = {}
for lam in (0.0, 100.0):
    cfg = TrainConfig(method="unigrad", lr=0.005, warmup_steps=500,
                      method_config=MethodConfig(lambda_balance=lam))
    logs[lam] = train_run(cfg)
    last = logs[lam].last
    print(f"lambda={lam:>5}: |cos|={last['neg_abs_cos_mean']:.3f} "
          f"pc90={last['pc90_rank']} knn={last['knn_acc']:.3f}")

for column in ("neg_abs_cos_mean", "pc90_rank", "knn_acc"):
    series = [(f"lambda={lam:g}", log.column("step"), log.column(column))
              for lam, log in logs.items()]
    path = os.path.join(out, f"collapse_{column}.svg")
    atomic_write_text(path, svg_line_chart(series, column, "step", column))
    print("wrote", path)
