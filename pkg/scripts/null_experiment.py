#!/usr/bin/env python3
"""Leakage check: with signal_strength=0 every injected error is statistically
invisible, so any test AUC meaningfully away from 0.5 means a leak (target
encoding touching its own row, or a split that lets the future in).

Usage: python scripts/null_experiment.py [--seed N] [--instruments N] [--months N]
"""

import argparse
import sys

from dqx.datagen import GenConfig, generate_universe, inject_exceptions
from dqx.features import SPLIT_TEST, SPLIT_TRAIN, SPLIT_VAL, featurize
from dqx.learners import TrainParams, train_gbm
from dqx.metrics import auc_score
from dqx.store import assemble_training
from dqx.types import ExceptionType


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--instruments", type=int, default=3000)
    ap.add_argument("--months", type=int, default=14)
    ap.add_argument("--error-rate", type=float, default=0.15)
    args = ap.parse_args()

    cfg = GenConfig(n_instruments=args.instruments, n_months=args.months,
                    error_rate=args.error_rate, signal_strength=0.0,
                    seed=args.seed)
    corpus = generate_universe(cfg)
    corrupted, _, audits = inject_exceptions(corpus, cfg)
    labels = assemble_training(corrupted, audits, cutoff_month=corrupted.months[-1])
    matrix = featurize(corrupted, labels, seed=cfg.seed)

    print(f"{'type':22s} {'test_pos':>8s} {'AUC':>7s}   verdict")
    worst = 0.0
    for t in ExceptionType:
        X = matrix.matrix_for(t)
        y = matrix.labels[t]
        model = train_gbm(X[matrix.row_mask(t, SPLIT_TRAIN)],
                          y[matrix.row_mask(t, SPLIT_TRAIN)],
                          X[matrix.row_mask(t, SPLIT_VAL)],
                          y[matrix.row_mask(t, SPLIT_VAL)], TrainParams(seed=1))
        tem = matrix.row_mask(t, SPLIT_TEST)
        auc = auc_score(model.predict_proba(X[tem]), y[tem])
        worst = max(worst, abs(auc - 0.5))
        verdict = "ok" if 0.45 <= auc <= 0.55 else "LEAK?"
        print(f"{t.value:22s} {int(y[tem].sum()):8d} {auc:7.4f}   {verdict}")
    print(f"\nmax |AUC - 0.5| = {worst:.4f} (leak-free target: <= 0.05)")
    return 0 if worst <= 0.05 else 1


if __name__ == "__main__":
    sys.exit(main())
