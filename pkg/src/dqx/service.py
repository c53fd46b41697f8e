"""HTTP surface: ranked queue, explanations, counterfactuals, feedback,
retraining and monitoring.

Scoring is batch: a scoring run materializes per-type queues from the
feature matrix and the currently published models; requests read that run
until a retrain publishes a new one. Feedback appends to the audit store
through the single writer and flips the item's review state. Every response
carries schema_version and the relevant model version so any number served
here can be recomputed offline.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from fastapi import FastAPI
from fastapi.responses import JSONResponse

from . import explain, monitor, rank
from .features import SPLIT_TRAIN, SPLIT_VAL, FeatureMatrix, featurize
from .learners import GbmModel, ModelRegistry, TrainParams, train_gbm
from .metrics import EvaluationReport, evaluate_models
from .store import AuditRecord, AuditStore, assemble_training
from .types import SNAPSHOT_FIELDS, Corpus, ExceptionType

SCHEMA_VERSION = 1

#: feature-space columns a reviewer cannot meaningfully act on
DEFAULT_IMMUTABLE_PREFIXES = ("enc__country", "enc__currency")
DERIVED_FLAG_SUFFIXES = ("__missing", "__prev_zero", "__chg", "__pct_missing",
                         "__medpct_missing")


def utc_clock() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class ServiceConfig:
    data_dir: Path
    model_dir: Path
    threshold: float = 0.5
    exemplars_k: int = 5
    seed: int = 0
    train_params: TrainParams = field(default_factory=TrainParams)
    monitor_ensemble_size: int = 6
    monitor_window: int = 4
    clock: Callable[[], str] = utc_clock


@dataclass
class QueueEntry:
    item_id: str
    ranked: rank.RankedException
    exception_type: ExceptionType
    row_index: int
    state: str = "open"  # open | confirmed | corrected


def _immutable_features(names: list[str]) -> frozenset[str]:
    out = set()
    for n in names:
        if n.startswith(DEFAULT_IMMUTABLE_PREFIXES) or n.endswith(DERIVED_FLAG_SUFFIXES):
            out.add(n)
    return frozenset(out)


class ServiceState:
    """Owns the corpus, audit store, registry and the current scoring run."""

    def __init__(self, config: ServiceConfig, corpus: Corpus, store: AuditStore,
                 registry: ModelRegistry):
        self.config = config
        self.corpus = corpus
        self.store = store
        self.registry = registry
        self.lock = threading.Lock()
        self.retraining = False
        self.matrix: Optional[FeatureMatrix] = None
        self.models: dict[ExceptionType, Optional[GbmModel]] = {}
        self.versions: dict[str, str] = {}
        self.run_id: Optional[str] = None
        self.queues: dict[ExceptionType, list[QueueEntry]] = {}
        self.items: dict[str, QueueEntry] = {}
        self.policies: dict[ExceptionType, explain.MutabilityPolicy] = {}
        self.retired_runs: dict[str, str] = {}  # old run id -> superseding run id
        self.last_report: Optional[EvaluationReport] = None
        self.meta = None
        self._ensemble = None
        self.snap_by_key = {(s.instrument_id, s.ref_month): s for s in corpus.snapshots}

    # -- scoring ---------------------------------------------------------

    def load_models(self) -> None:
        self.models = {}
        self.versions = {}
        for t in ExceptionType:
            version = self.registry.current_version(t)
            if version is None:
                self.models[t] = None
            else:
                self.models[t] = self.registry.load(t, version)
                self.versions[t.value] = version
        meta_version = self.registry.current_version("Meta")
        self.meta = self.registry.load("Meta", meta_version) if meta_version else None
        if meta_version:
            self.versions["Meta"] = meta_version

    def build_scoring_run(self, matrix: FeatureMatrix) -> None:
        self.matrix = matrix
        old_run = self.run_id
        run_id = hashlib.sha256(json.dumps(
            {"versions": self.versions, "months": matrix.months},
            sort_keys=True).encode()).hexdigest()[:12]
        queues: dict[ExceptionType, list[QueueEntry]] = {}
        items: dict[str, QueueEntry] = {}
        row_of = {key: i for i, key in enumerate(matrix.keys)}
        reviewed = {}
        for rec in self.store.records():
            if rec.source == "iDQM":
                reviewed[(rec.instrument_id, rec.ref_month, rec.exception_type)] = rec.action
        for t in ExceptionType:
            model = self.models.get(t)
            queue = rank.queue_from_matrix(matrix, model, t, matrix.eligible[t])
            entries = []
            for r in queue:
                item_id = f"{run_id}:{t.value}:{r.instrument_id}:{r.ref_month}"
                entry = QueueEntry(item_id=item_id, ranked=r, exception_type=t,
                                   row_index=row_of[(r.instrument_id, r.ref_month)])
                act = reviewed.get((r.instrument_id, r.ref_month, t))
                if act == "confirm":
                    entry.state = "confirmed"
                elif act == "correct":
                    entry.state = "corrected"
                entries.append(entry)
                items[item_id] = entry
            queues[t] = entries
        self.policies = {}
        names_kinds = {}
        for t in ExceptionType:
            schema = matrix.type_schema(t)
            names, kinds = schema.names, [s.kind for s in schema.specs]
            names_kinds[t] = (names, kinds)
            train_rows = matrix.matrix_for(t)[matrix.row_mask(t, SPLIT_TRAIN)]
            if len(train_rows) == 0:
                continue
            cat_candidates = {}
            for spec in schema.specs:
                if spec.kind != "encoded-categorical":
                    continue
                enc = matrix.encoders.get(f"{t.value}/{spec.source}")
                if enc is None:
                    continue
                cat_candidates[spec.name] = [
                    explain.Candidate(value=enc.encode(cat), label=cat)
                    for cat in sorted(enc.counts)]
            self.policies[t] = explain.build_policy(
                names, kinds, train_rows,
                immutable=_immutable_features(names),
                cat_candidates=cat_candidates)
        if old_run is not None:
            self.retired_runs[old_run] = run_id
        self.run_id = run_id
        self.queues = queues
        self.items = items

    def refresh(self) -> None:
        labels = assemble_training(self.corpus, self.store.records(),
                                   cutoff_month=self.corpus.months[-1])
        matrix = featurize(self.corpus, labels, seed=self.config.seed)
        self.load_models()
        self.build_scoring_run(matrix)

    def retrain(self, cutoff: str) -> dict:
        labels = assemble_training(self.corpus, self.store.records(), cutoff_month=cutoff)
        matrix = featurize(self.corpus, labels, seed=self.config.seed)
        models: dict[ExceptionType, Optional[GbmModel]] = {}
        for t in ExceptionType:
            X = matrix.matrix_for(t)
            y = matrix.labels[t]
            trm = matrix.row_mask(t, SPLIT_TRAIN)
            vam = matrix.row_mask(t, SPLIT_VAL)
            if y[trm].sum() == 0 or y[trm].sum() == trm.sum():
                models[t] = None
                continue
            models[t] = train_gbm(X[trm], y[trm], X[vam], y[vam],
                                  self.config.train_params,
                                  schema_hash=matrix.type_schema_hash(t))
        publish: dict = {t: m for t, m in models.items() if m is not None}
        meta = train_meta_on_validation(models, matrix)
        if meta is not None:
            publish["Meta"] = meta
        self.registry.publish(publish)
        self.load_models()
        self.build_scoring_run(matrix)
        report = evaluate_models(self.models, matrix, self.config.threshold)
        self.last_report = report
        job_id = hashlib.sha256(
            f"{cutoff}:{len(self.store)}:{self.run_id}".encode()).hexdigest()[:12]
        return {"job_id": job_id, "status": "completed", "cutoff": cutoff,
                "model_versions": dict(self.versions), "run_id": self.run_id}

    def monitoring_summary(self) -> dict:
        """Bootstrap-uncertainty baseline vs latest month, plus drift flags."""
        cfg = self.config
        matrix = self.matrix
        cand = [t for t in ExceptionType if self.models.get(t) is not None]
        if not cand:
            return {"status": "no models"}
        t = max(cand, key=lambda t: int(matrix.eligible[t].sum()))
        model = self.models[t]
        X = matrix.matrix_for(t)
        trm = matrix.row_mask(t, SPLIT_TRAIN)
        vam = matrix.row_mask(t, SPLIT_VAL)
        if self._ensemble is None:
            small = TrainParams(**{**cfg.train_params.__dict__,
                                   "n_rounds": min(60, cfg.train_params.n_rounds)})
            self._ensemble = monitor.fit_bootstrap_ensemble(
                X[trm], matrix.labels[t][trm], cfg.monitor_ensemble_size, small,
                master_seed=cfg.seed, X_val=X[vam], y_val=matrix.labels[t][vam])
        month_arr = np.array([m for _, m in matrix.keys])
        recent_mask = matrix.eligible[t] & (month_arr == matrix.months[-1])
        stds_recent = monitor.batch_uncertainty(self._ensemble, X[recent_mask])
        mean_recent = float(stds_recent.mean()) if len(stds_recent) else 0.0
        baseline_q99 = monitor.uncertainty_alarm_threshold(
            self._ensemble, X[trm], batch_size=max(int(recent_mask.sum()), 1),
            n_batches=50, seed=cfg.seed)

        window = min(cfg.monitor_window, len(matrix.months) - 1)
        batches = {}
        for m in matrix.months:
            mask = matrix.eligible[t] & (month_arr == m)
            batches[m] = X[mask]
        drift = monitor.shap_drift(model, batches, matrix.type_schema(t).names,
                                   window=window)
        return {
            "monitored_type": t.value,
            "uncertainty": {"baseline_q99": baseline_q99,
                            "latest_month_mean_std": mean_recent,
                            "alarm": bool(mean_recent > baseline_q99),
                            "ensemble_size": len(self._ensemble)},
            "drift": drift.to_json(),
        }


def type_probability_matrix(models: dict[ExceptionType, Optional[GbmModel]],
                            matrix: FeatureMatrix, mask: np.ndarray) -> np.ndarray:
    """(n, 7) per-type probabilities; 0 where the type has no model or the
    row is outside its eligibility pool."""
    idx = np.flatnonzero(mask)
    P = np.zeros((len(idx), len(ExceptionType)))
    for j, t in enumerate(ExceptionType):
        model = models.get(t)
        if model is None:
            continue
        sub = matrix.eligible[t][idx]
        if sub.any():
            P[sub, j] = model.predict_proba(matrix.matrix_for(t)[idx[sub]])
    return P


def train_meta_on_validation(models: dict[ExceptionType, Optional[GbmModel]],
                             matrix: FeatureMatrix):
    """Fit the 8-class calibration layer on validation rows; None when the
    label set is degenerate (fewer than two classes present)."""
    from .learners import NOMINAL, train_meta

    mask = matrix.split == SPLIT_VAL
    P = type_probability_matrix(models, matrix, mask)
    idx = np.flatnonzero(mask)
    classes = []
    for i in idx:
        label = NOMINAL
        for t in ExceptionType:
            if matrix.labels[t][i] == 1 and matrix.eligible[t][i]:
                label = t.value
                break
        classes.append(label)
    if len(set(classes)) < 2:
        return None
    return train_meta(P, classes)


def _err(status: int, message: str, **extra) -> JSONResponse:
    return JSONResponse(status_code=status,
                        content={"error": message, "schema_version": SCHEMA_VERSION, **extra})


def build_app(state: ServiceState) -> FastAPI:
    from fastapi.middleware.cors import CORSMiddleware

    app = FastAPI(title="dqx review service")
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])
    app.state.dqx = state
    cfg = state.config

    def common(t: Optional[ExceptionType] = None) -> dict:
        return {"schema_version": SCHEMA_VERSION, "run_id": state.run_id,
                "model_version": state.versions.get(t.value) if t else None,
                "model_versions": dict(state.versions)}

    def item_payload(e: QueueEntry) -> dict:
        r = e.ranked
        return {"item_id": e.item_id, "position": r.position,
                "instrument_id": r.instrument_id, "ref_month": r.ref_month,
                "exception_type": r.exception_type,
                "probability": r.probability,
                "amount_outstanding": r.amount_outstanding,
                "rank_score": r.rank_score, "state": e.state,
                "links": {"explanation": f"/explain/{e.item_id}",
                          "counterfactual": f"/counterfactual/{e.item_id}",
                          "exemplars": f"/exemplars/{e.item_id}"}}

    def resolve_item(item_id: str):
        """Returns (entry, error_response)."""
        if state.run_id is None:
            return None, _err(409, "no scoring run available")
        entry = state.items.get(item_id)
        if entry is not None:
            return entry, None
        run = item_id.split(":", 1)[0]
        if run in state.retired_runs:
            return None, _err(410, "model version retired",
                              superseding_run=state.retired_runs[run],
                              superseding_versions=dict(state.versions))
        return None, _err(404, f"unknown item {item_id}")

    @app.get("/queue")
    def get_queue(type: str, limit: int = 50, offset: int = 0):
        try:
            t = ExceptionType(type)
        except ValueError:
            return _err(400, f"unknown exception type {type!r}")
        if state.run_id is None:
            return _err(409, "no scoring run available")
        entries = state.queues.get(t, [])
        page = entries[offset:offset + limit]
        return {**common(t), "total": len(entries),
                "items": [item_payload(e) for e in page]}

    @app.get("/explain/{item_id}")
    def get_explain(item_id: str):
        entry, err = resolve_item(item_id)
        if err:
            return err
        t = entry.exception_type
        model = state.models[t]
        if model is None:
            # the type is served at probability 0 so reviewers can act, but
            # there is no model to explain
            return _err(409, f"no trained model for {t.value}")
        matrix = state.matrix
        row = matrix.matrix_for(t)[entry.row_index]
        att = explain.shap_local(model, row, row_id=entry.item_id,
                                 model_id=state.versions.get(t.value, ""))
        margin = float(model.predict_margin(row[None, :])[0])
        if abs(att.base + att.contributions.sum() - margin) > 1e-6:
            return _err(500, "attribution additivity check failed")
        names = matrix.type_schema(t).names
        probs = np.array([[state.models[tt].predict_proba(
            matrix.matrix_for(tt)[entry.row_index][None, :])[0]
            if state.models.get(tt) is not None and matrix.eligible[tt][entry.row_index]
            else 0.0 for tt in ExceptionType]])
        proposal = None
        if state.meta is not None:
            klass = state.meta.predict_class(probs)[0]
            top = names[int(np.argmax(np.abs(att.contributions)))]
            proposal = {"exception_type": klass, "top_feature": top}
        return {**common(t), "item_id": item_id,
                "base": att.base, "margin": margin,
                "contributions": [{"feature": n, "value": float(v)}
                                  for n, v in zip(names, att.contributions)],
                "proposal": proposal}

    @app.get("/counterfactual/{item_id}")
    def get_counterfactual(item_id: str, n: int = 3):
        entry, err = resolve_item(item_id)
        if err:
            return err
        t = entry.exception_type
        if state.models[t] is None:
            return _err(409, f"no trained model for {t.value}")
        policy = state.policies.get(t)
        if policy is None:
            return _err(409, f"no policy available for {t.value}")
        row = state.matrix.matrix_for(t)[entry.row_index]
        res = explain.find_counterfactuals(state.models[t], row, policy,
                                           threshold=cfg.threshold, n=n,
                                           seed=cfg.seed)
        for cf in res.counterfactuals:
            if any(name in policy.immutable for name, _, _ in cf.changes):
                return _err(500, "immutable feature leaked into counterfactual")
        return {**common(t), "item_id": item_id,
                "budget_exhausted": res.budget_exhausted,
                "counterfactuals": [{
                    "cost": cf.cost, "original_class": cf.original_class,
                    "new_class": cf.new_class,
                    "changes": [{"feature": f, "from": a, "to": b}
                                for f, a, b in cf.changes]}
                    for cf in res.counterfactuals]}

    @app.get("/exemplars/{item_id}")
    def get_exemplars(item_id: str):
        entry, err = resolve_item(item_id)
        if err:
            return err
        t = entry.exception_type
        matrix = state.matrix
        schema = matrix.type_schema(t)
        train_mask = matrix.row_mask(t, SPLIT_TRAIN)
        idx = np.flatnonzero(train_mask)
        X = matrix.matrix_for(t)
        found = explain.nearest_exemplars(
            X[entry.row_index], X[idx], [s.kind for s in schema.specs],
            k=cfg.exemplars_k, labels=matrix.labels[t][idx],
            row_ids=[f"{matrix.keys[i][0]}:{matrix.keys[i][1]}" for i in idx])
        return {**common(t), "item_id": item_id, "exemplars": found}

    @app.post("/feedback")
    def post_feedback(body: dict):
        item_id = body.get("item")
        action = body.get("action")
        if action not in ("confirm", "correct"):
            return _err(422, "action must be confirm or correct")
        entry, err = resolve_item(item_id)
        if err:
            return err
        with state.lock:
            if entry.state != "open":
                return _err(409, f"item already {entry.state}")
            t = entry.exception_type
            iid, month = entry.ranked.instrument_id, entry.ranked.ref_month
            snap = state.snap_by_key[(iid, month)]
            if action == "correct":
                fieldname = body.get("field")
                if fieldname not in SNAPSHOT_FIELDS:
                    return _err(422, f"correct requires a valid field, got {fieldname!r}")
                if "new_value" not in body:
                    return _err(422, "correct requires new_value")
                before = getattr(snap, fieldname)
                after = body["new_value"]
                if before == after:
                    return _err(422, "new_value equals the current value")
            else:
                fieldname = body.get("field") or "record"
                before = after = getattr(snap, fieldname, None) if fieldname != "record" else None
            rec = AuditRecord(audit_id=-1, instrument_id=iid, ref_month=month,
                              field=fieldname, before=before, after=after,
                              exception_type=t, source="iDQM",
                              actor=body.get("actor", "reviewer"),
                              timestamp=cfg.clock(), action=action)
            audit_id = state.store.append(rec)
            entry.state = "confirmed" if action == "confirm" else "corrected"
        return {**common(t), "audit_id": audit_id, "item_id": item_id,
                "state": entry.state}

    @app.post("/retrain")
    def post_retrain(body: dict):
        cutoff = body.get("cutoff") or state.corpus.months[-1]
        with state.lock:
            if state.retraining:
                return _err(409, "retrain already running")
            state.retraining = True
        try:
            result = state.retrain(cutoff)
        finally:
            state.retraining = False
        return {**common(), **result}

    @app.get("/monitoring")
    def get_monitoring():
        if state.run_id is None:
            return _err(409, "no scoring run available")
        return {**common(), **state.monitoring_summary()}

    return app
