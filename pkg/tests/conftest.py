"""Shared fixtures: a small end-to-end pipeline for module tests and the
larger synthetic benchmark used by the acceptance suite."""

from __future__ import annotations

import numpy as np
import pytest

from dqx.datagen import GenConfig, generate_universe, inject_exceptions
from dqx.features import SPLIT_TRAIN, SPLIT_VAL, featurize
from dqx.learners import TrainParams, train_gbm
from dqx.store import assemble_training
from dqx.types import ExceptionType


@pytest.fixture(scope="session")
def small_pipeline():
    """600 instruments x 10 months at full signal: corpus, truth, matrix, models."""
    cfg = GenConfig(n_instruments=600, n_months=10, error_rate=0.06,
                    signal_strength=1.0, seed=42)
    corpus = generate_universe(cfg)
    corrupted, gt, audits = inject_exceptions(corpus, cfg)
    labels = assemble_training(corrupted, audits, cutoff_month=corrupted.months[-1])
    matrix = featurize(corrupted, labels, seed=cfg.seed)
    params = TrainParams(n_rounds=120, seed=1)
    models = {}
    for t in ExceptionType:
        X = matrix.matrix_for(t)
        y = matrix.labels[t]
        trm = matrix.row_mask(t, SPLIT_TRAIN)
        vam = matrix.row_mask(t, SPLIT_VAL)
        if 0 < y[trm].sum() < trm.sum():
            models[t] = train_gbm(X[trm], y[trm], X[vam], y[vam], params,
                                  schema_hash=matrix.type_schema_hash(t))
        else:
            models[t] = None
    return {"config": cfg, "corpus": corrupted, "truth": gt, "audits": audits,
            "labels": labels, "matrix": matrix, "models": models, "params": params}


def make_stump(feature=0, threshold=0.0, left_val=-1.0, right_val=1.0,
               left_cover=50.0, right_cover=50.0):
    """Hand-built single-split tree with filled internal expectations."""
    from dqx.learners.gbm import Tree

    t = Tree(feature=np.array([feature, -1, -1], dtype=np.int32),
             threshold=np.array([threshold, 0.0, 0.0]),
             left=np.array([1, -1, -1], dtype=np.int32),
             right=np.array([2, -1, -1], dtype=np.int32),
             value=np.array([0.0, left_val, right_val]),
             cover=np.array([left_cover + right_cover, left_cover, right_cover]))
    t.fill_expectations()
    return t


@pytest.fixture()
def toy_separable():
    """1-D linearly separable set with margin 1.0 around x=0."""
    rng = np.random.default_rng(7)
    n = 200
    x_neg = -1.0 - rng.random(n)
    x_pos = 1.0 + rng.random(n)
    X = np.concatenate([x_neg, x_pos])[:, None]
    y = np.concatenate([np.zeros(n), np.ones(n)])
    order = rng.permutation(2 * n)
    return X[order], y[order]
