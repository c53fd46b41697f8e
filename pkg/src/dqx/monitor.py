"""Unsupervised production monitoring: bootstrap uncertainty and attribution
drift over time.

Uncertainty is the spread of predictions across an ensemble of models
trained on with-replacement resamples of the training set; rising spread on
incoming batches signals the model is being asked about data it was not
fitted on. Drift tracking watches each feature's mean absolute attribution
month over month and flags a month when it leaves the trailing window's
z-band by more than a relative floor (the floor suppresses the estimator
noise a plain k-sigma rule would trip on).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .explain import shap_values
from .learners.gbm import GbmModel, TrainParams, train_gbm

DRIFT_EPS = 1e-9
DRIFT_REL_FLOOR = 0.5


@dataclass
class UncertaintyEstimate:
    mean: float
    std: float
    n_models: int


def fit_bootstrap_ensemble(
    X_train: np.ndarray,
    y_train: np.ndarray,
    n_models: int,
    params: TrainParams,
    master_seed: int = 0,
    X_val: Optional[np.ndarray] = None,
    y_val: Optional[np.ndarray] = None,
) -> list[GbmModel]:
    """n_models boosted models, each on a same-size with-replacement resample.

    Member seeds derive from the master seed; a resample that degenerates to
    a single class is retried up to 10 times before erroring out.
    """
    if n_models < 2:
        raise ValueError("an ensemble needs at least 2 members")
    X = np.asarray(X_train, dtype=np.float64)
    y = np.asarray(y_train)
    n = len(y)
    ensemble = []
    for b in range(n_models):
        rng = np.random.default_rng(np.random.SeedSequence([master_seed, 0xB007, b]))
        for attempt in range(10):
            idx = rng.integers(0, n, size=n)
            if 0 < y[idx].sum() < n:
                break
        else:
            raise ValueError(f"resample {b} degenerated to a single class 10 times")
        member_params = TrainParams(**{**params.__dict__, "seed": params.seed + b + 1})
        ensemble.append(train_gbm(X[idx], y[idx], X_val, y_val, member_params))
    return ensemble


def uncertainty(ensemble: Sequence[GbmModel], row: np.ndarray) -> UncertaintyEstimate:
    """Mean and population std of the member probabilities for one row."""
    if len(ensemble) == 0:
        raise ValueError("empty ensemble")
    probs = np.array([m.predict_proba(np.asarray(row)[None, :])[0] for m in ensemble])
    return UncertaintyEstimate(mean=float(probs.mean()),
                               std=float(probs.std()), n_models=len(ensemble))


def batch_uncertainty(ensemble: Sequence[GbmModel], X: np.ndarray) -> np.ndarray:
    """Per-row prediction std over the ensemble, vectorized."""
    if len(ensemble) == 0:
        raise ValueError("empty ensemble")
    probs = np.stack([m.predict_proba(X) for m in ensemble])
    return probs.std(axis=0)


def uncertainty_alarm_threshold(
    ensemble: Sequence[GbmModel],
    X_pool: np.ndarray,
    batch_size: int,
    n_batches: int = 200,
    seed: int = 0,
    q: float = 0.99,
) -> float:
    """Alarm level for batch-mean uncertainty: the q-quantile of mean stds
    over seeded in-distribution batches of the same size. A production batch
    whose mean std exceeds this is flagged as off-distribution."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA1A27]))
    means = np.empty(n_batches)
    for b in range(n_batches):
        idx = rng.integers(0, len(X_pool), batch_size)
        means[b] = batch_uncertainty(ensemble, X_pool[idx]).mean()
    return float(np.quantile(means, q))


@dataclass
class DriftReport:
    feature_names: list[str]
    months: list[str]
    mean_abs_shap: np.ndarray  # (n_months, n_features)
    window: int
    k: float
    flags: list[tuple[str, str]] = field(default_factory=list)  # (feature, month)
    trailing_mean: Optional[np.ndarray] = None
    trailing_std: Optional[np.ndarray] = None

    def flagged_features(self, month: str) -> list[str]:
        return [f for f, m in self.flags if m == month]

    def to_json(self) -> dict:
        return {
            "window": self.window,
            "k": self.k,
            "months": self.months,
            "series": {name: [float(v) for v in self.mean_abs_shap[:, j]]
                       for j, name in enumerate(self.feature_names)},
            "flags": [{"feature": f, "month": m} for f, m in self.flags],
        }


def shap_drift(
    model: GbmModel,
    monthly_batches: dict[str, np.ndarray],
    feature_names: Sequence[str],
    window: int = 6,
    k: float = 3.0,
    rel_floor: float = DRIFT_REL_FLOOR,
) -> DriftReport:
    """Flag (feature, month) pairs whose mean |attribution| leaves the band.

    A month t > window is flagged for a feature when the jump versus the
    trailing-window mean exceeds k trailing sigma AND a floor of
    max(DRIFT_EPS, rel_floor * trailing mean). The floor exists because
    batch-sampling noise of tree attributions has heavy tails and a bare
    k-sigma band trips on it; it shrinks with batch size (1/sqrt(n)) while a
    genuine covariate shift does not, so monthly batches of several hundred
    rows separate cleanly. Flags are causal: month t only sees months <= t.
    """
    months = sorted(monthly_batches)
    if len(months) < window + 1:
        raise ValueError(f"need at least window+1={window + 1} months")
    series = []
    for m in months:
        batch = monthly_batches[m]
        if len(batch) == 0:
            raise ValueError(f"empty batch for month {m}")
        phi, _ = shap_values(model, batch)
        series.append(np.abs(phi).mean(axis=0))
    S = np.vstack(series)  # (n_months, n_features)

    flags = []
    n_months, n_feat = S.shape
    tmean = np.full_like(S, np.nan)
    tstd = np.full_like(S, np.nan)
    for ti in range(window, n_months):
        win = S[ti - window:ti]
        mu = win.mean(axis=0)
        sd = win.std(axis=0)
        tmean[ti] = mu
        tstd[ti] = sd
        jump = np.abs(S[ti] - mu)
        floor = np.maximum(DRIFT_EPS, rel_floor * mu)
        hit = (jump > k * sd) & (jump > floor)
        for j in np.flatnonzero(hit):
            flags.append((feature_names[j], months[ti]))
    return DriftReport(feature_names=list(feature_names), months=months,
                       mean_abs_shap=S, window=window, k=k, flags=flags,
                       trailing_mean=tmean, trailing_std=tstd)
