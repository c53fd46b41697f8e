"""Exception ranking by economic relevance times outlier probability, and
NDCG-based ranking evaluation.

The score of a record is probability * amount outstanding (market cap plays
the amount's role for equities). Discounted cumulative gain at position p
sums rel_i / log2(i+1) over the top p; NDCG normalizes by the ideal
ordering's DCG and is 0 by convention for pools without positives.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .features import FeatureMatrix
from .types import ExceptionType

DEFAULT_CUTOFFS = (10, 50, 100, 1000)


@dataclass(frozen=True)
class RankedException:
    instrument_id: str
    ref_month: str
    exception_type: str
    probability: float
    amount_outstanding: float
    rank_score: float
    position: int


def rank_score(probability: float, amount_outstanding: float) -> float:
    """Review priority: outlier probability times economic size."""
    if not 0.0 <= probability <= 1.0:
        raise ValueError("probability must be in [0, 1]")
    if amount_outstanding < 0.0:
        raise ValueError("amount_outstanding must be non-negative")
    return probability * amount_outstanding


def rank_queue(
    predictions: Sequence[tuple[str, str, ExceptionType, float, float]],
) -> list[RankedException]:
    """Order (id, month, type, probability, amount) tuples into a review queue.

    Sorted by rank score descending; ties by probability descending, then
    instrument id and month ascending, so the queue is a pure function of
    the input set.
    """
    scored = []
    for iid, month, t, prob, amount in predictions:
        scored.append((iid, month, t, prob, amount, rank_score(prob, amount)))
    scored.sort(key=lambda r: (-r[5], -r[3], r[0], r[1]))
    return [RankedException(instrument_id=iid, ref_month=month,
                            exception_type=t.value, probability=prob,
                            amount_outstanding=amount, rank_score=score,
                            position=i + 1)
            for i, (iid, month, t, prob, amount, score) in enumerate(scored)]


def dcg(relevances: Sequence[int], p: int) -> float:
    """Discounted cumulative gain accumulated at rank position p."""
    if p < 1:
        raise ValueError("cutoff p must be >= 1")
    return float(sum(rel / math.log2(i + 2)
                     for i, rel in enumerate(relevances[:p])))


def ndcg(relevances: Sequence[int], p: int) -> float:
    """DCG normalized by the ideal ordering; 0 when the pool has no positives."""
    ideal = dcg(sorted(relevances, reverse=True), p)
    if ideal == 0.0:
        return 0.0
    return dcg(relevances, p) / ideal


# --- ranking evaluation -------------------------------------------------------

@dataclass
class RankReportRow:
    exception_type: str
    k: int
    ndcg: float
    n_pool: int
    n_pos: int


@dataclass
class RankReport:
    rows: list[RankReportRow]

    def value(self, t: ExceptionType, k: int) -> float:
        for r in self.rows:
            if r.exception_type == t.value and r.k == k:
                return r.ndcg
        raise KeyError((t, k))

    def to_csv(self, path: Path) -> None:
        # byte-stable: type alphabetical, K ascending
        with open(path, "w", newline="\n") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["exception_type", "K", "ndcg"])
            for r in sorted(self.rows, key=lambda r: (r.exception_type, r.k)):
                w.writerow([r.exception_type, r.k, f"{r.ndcg:.3f}"])

    def to_json_file(self, path: Path) -> None:
        rows = [asdict(r) for r in sorted(self.rows, key=lambda r: (r.exception_type, r.k))]
        Path(path).write_text(json.dumps({"rows": rows}, sort_keys=True, indent=1) + "\n")


def queue_from_matrix(
    matrix: FeatureMatrix,
    model,
    t: ExceptionType,
    mask: np.ndarray,
    flag_threshold: Optional[float] = None,
) -> list[RankedException]:
    """Build the type-t queue over masked rows; optionally only flagged rows.

    A type without a model still materializes its pool at probability zero,
    so reviewers can act on records the models never flagged.
    """
    idx = np.flatnonzero(mask)
    if len(idx) == 0:
        return []
    if model is None:
        probs = np.zeros(len(idx))
    else:
        probs = model.predict_proba(matrix.matrix_for(t)[idx])
    preds = []
    for j, i in enumerate(idx):
        if flag_threshold is not None and probs[j] < flag_threshold:
            continue
        iid, month = matrix.keys[i]
        preds.append((iid, month, t, float(probs[j]), float(matrix.amounts[i])))
    return rank_queue(preds)


def evaluate_ranking(
    queues: dict[ExceptionType, list[RankedException]],
    relevance: dict[ExceptionType, set[tuple[str, str]]],
    cutoffs: Sequence[int] = DEFAULT_CUTOFFS,
) -> RankReport:
    """NDCG@K per exception type; rel_i = 1 iff the row is a true type error."""
    rows = []
    for t in sorted(ExceptionType, key=lambda t: t.value):
        if t not in queues:
            raise KeyError(f"missing queue for {t.value}")
        queue = queues[t]
        truth = relevance.get(t, set())
        rels = [1 if (q.instrument_id, q.ref_month) in truth else 0 for q in queue]
        for k in sorted(cutoffs):
            rows.append(RankReportRow(exception_type=t.value, k=k,
                                      ndcg=ndcg(rels, k), n_pool=len(queue),
                                      n_pos=sum(rels)))
    return RankReport(rows=rows)


def gold_rank_report(
    matrix: FeatureMatrix,
    models: dict[ExceptionType, Optional[object]],
    cutoffs: Sequence[int] = DEFAULT_CUTOFFS,
    flag_only: bool = False,
    threshold: float = 0.5,
) -> RankReport:
    """Table-3-style report: queues over the gold test pool per type."""
    queues = {}
    relevance = {}
    for t in ExceptionType:
        mask = matrix.gold_mask(t)
        queues[t] = queue_from_matrix(matrix, models.get(t), t, mask,
                                      flag_threshold=threshold if flag_only else None)
        idx = np.flatnonzero(mask & (matrix.labels[t] == 1))
        relevance[t] = {matrix.keys[i] for i in idx}
    return evaluate_ranking(queues, relevance, cutoffs)
