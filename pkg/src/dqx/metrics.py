"""Classification metrics and the full-vs-gold evaluation protocol.

Evaluation runs strictly on test-tagged rows. Each type is reported twice:
on the full test pool and on the gold pool (test rows minus positives whose
label came from the bulk tool). Undefined metrics (nothing flagged, or no
positives) are kept as NaN internally and rendered as flagged 0.000 in the
table output.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Optional

import numpy as np

from .features import SPLIT_TEST, FeatureMatrix
from .types import ExceptionType


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int
    threshold: float

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion(labels: np.ndarray, probs: np.ndarray, threshold: float) -> ConfusionMatrix:
    labels = np.asarray(labels)
    pred = np.asarray(probs) >= threshold
    pos = labels == 1
    return ConfusionMatrix(tp=int((pred & pos).sum()), fp=int((pred & ~pos).sum()),
                           fn=int((~pred & pos).sum()), tn=int((~pred & ~pos).sum()),
                           threshold=threshold)


def precision(cm: ConfusionMatrix) -> float:
    """TP/(TP+FP); NaN when nothing was flagged (rendered 0.000, flagged)."""
    if cm.tp + cm.fp == 0:
        return float("nan")
    return cm.tp / (cm.tp + cm.fp)


def recall(cm: ConfusionMatrix) -> float:
    """TP/(TP+FN); NaN when the pool has no positives."""
    if cm.tp + cm.fn == 0:
        return float("nan")
    return cm.tp / (cm.tp + cm.fn)


def _midranks(x: np.ndarray) -> np.ndarray:
    _, inv, counts = np.unique(x, return_inverse=True, return_counts=True)
    csum = np.cumsum(counts)
    mid = (csum - counts + 1 + csum) / 2.0
    return mid[inv]


def auc_score(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mann-Whitney AUC with midrank tie handling."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")
    ranks = _midranks(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


# --- evaluation protocol ------------------------------------------------------

@dataclass
class TypeMetrics:
    exception_type: str
    pool: str  # "full" | "gold"
    precision: float  # NaN when undefined
    recall: float
    auc: float
    n_rows: int
    n_pos: int
    n_flagged: int


@dataclass
class EvaluationReport:
    rows: list[TypeMetrics]
    threshold: float

    def row(self, t: ExceptionType, pool: str) -> TypeMetrics:
        for r in self.rows:
            if r.exception_type == t.value and r.pool == pool:
                return r
        raise KeyError((t, pool))

    def to_json_file(self, path: Path) -> None:
        doc = {"threshold": self.threshold,
               "rows": [{k: (None if isinstance(v, float) and math.isnan(v) else v)
                         for k, v in asdict(r).items()} for r in self.rows]}
        Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")

    def write_pool_csv(self, path: Path, pool: str) -> None:
        """Table-style CSV: exception_type, precision, recall, auc, pool.

        NaN cells render as 0.000; a trailing comment footnote names them.
        """
        undefined: list[str] = []
        with open(path, "w", newline="\n") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["exception_type", "precision", "recall", "auc", "pool"])
            for r in sorted((r for r in self.rows if r.pool == pool),
                            key=lambda r: r.exception_type):
                vals = []
                for name in ("precision", "recall", "auc"):
                    v = getattr(r, name)
                    if math.isnan(v):
                        undefined.append(f"{r.exception_type}.{name}")
                        vals.append("0.000")
                    else:
                        vals.append(f"{v:.3f}")
                w.writerow([r.exception_type, *vals, pool])
            if undefined:
                fh.write(f"# undefined (rendered 0.000): {' '.join(undefined)}\n")


def evaluate_models(
    models: dict[ExceptionType, Optional[object]],
    matrix: FeatureMatrix,
    threshold: float = 0.5,
) -> EvaluationReport:
    """Per-type precision/recall/AUC on the full test pool and the gold pool.

    A type with no model (never trained, e.g. zero positives in its history)
    reports zero flags: recall 0 when positives exist, precision undefined.
    """
    if matrix.split is None:
        raise ValueError("matrix has no split tags")
    rows: list[TypeMetrics] = []
    for t in sorted(ExceptionType, key=lambda t: t.value):
        if t not in models:
            raise KeyError(f"no entry for {t.value} in models")
        model = models[t]
        X = matrix.matrix_for(t) if model is not None else None
        for pool_name in ("full", "gold"):
            mask = matrix.row_mask(t, SPLIT_TEST) if pool_name == "full" \
                else matrix.gold_mask(t)
            y = matrix.labels[t][mask]
            if model is not None:
                probs = model.predict_proba(X[mask])
            else:
                probs = np.zeros(int(mask.sum()))
            cm = confusion(y, probs, threshold)
            try:
                auc = auc_score(probs, y) if model is not None else float("nan")
            except ValueError:
                auc = float("nan")
            rows.append(TypeMetrics(
                exception_type=t.value, pool=pool_name,
                precision=precision(cm), recall=recall(cm), auc=auc,
                n_rows=int(mask.sum()), n_pos=int((y == 1).sum()),
                n_flagged=cm.tp + cm.fp))
    return EvaluationReport(rows=rows, threshold=threshold)
