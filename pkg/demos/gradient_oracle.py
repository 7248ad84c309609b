"""
Gradient oracle
===============

Central differences against every closed-form gradient, on a few batch shapes.
Prints the worst relative error per loss.
"""
import itertools

from siamgrad.oracle import ORACLE_PAIRS, check_pair

sizes = list(itertools.product((2, 4, 8), (4, 8, 16)))

print(f"{'loss':<24}{'worst rel err':>15}{'checks':>8}")
for name in ORACLE_PAIRS:
    reports = [check_pair(name, seed, n, c) for seed in range(3) for n, c in sizes]
    worst = max(r.max_rel_err for r in reports)
    print(f"{name:<24}{worst:>15.2e}{len(reports):>8}")
