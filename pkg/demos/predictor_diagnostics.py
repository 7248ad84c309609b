"""
Predictor statistics during training
====================================

DirectPred builds its linear predictor from the running correlation matrix
of the online features. The diagnostics log tracks the balance factor it
implies, the trace of the correlation matrix and its top eigenvalue.
"""
import numpy as np

from siamgrad.methods import MethodConfig
from siamgrad.trainer import TrainConfig, train_run

cfg = TrainConfig(method="byol_directpred_simplified", steps=600, log_every=100,
                  method_config=MethodConfig(predictor_every=1))
log = train_run(cfg)

print(f"{'step':>6}{'lambda mean':>13}{'lambda std':>12}{'trace F':>10}{'top eig':>10}")
for row in log.diagnostics[:: max(1, len(log.diagnostics) // 12)]:
    print(f"{row['step']:>6}{row['lambda_mean']:>13.4f}{row['lambda_std']:>12.4f}"
          f"{row['trace_f']:>10.6f}{row['top_eigenvalue']:>10.4f}")

traces = np.array([r["trace_f"] for r in log.diagnostics])
print(f"trace F stays within {np.max(np.abs(traces - 1)):.1e} of 1")
