"""Single-binary pipeline driver: gen | featurize | train | evaluate | rank |
explain | copy | monitor | serve | loop-demo.

Every subcommand reads/writes the documented artifact files under --out-dir
and writes a manifest (config hash, seed, artifact hashes, timings) to
manifests/<command>.json. Artifacts are bit-identical across runs for a
fixed config and seed; manifests carry wall-clock timings and are the one
file excluded from that guarantee.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from . import __version__
from .types import ExceptionType, load_corpus, save_corpus, corpus_to_csv

DEFAULT_CONFIG: dict = {
    "gen": {"n_instruments": 4000, "n_months": 16, "error_rate": 0.03,
            "signal_strength": 1.0, "seed": 0, "bulk_share": 0.9,
            "start_month": "2019-01"},
    "features": {"smoothing": 10.0, "k_folds": 5},
    "train": {"n_rounds": 200, "max_depth": 4, "learning_rate": 0.1,
              "min_child_cover": 10, "l2_leaf_reg": 1.0,
              "early_stopping_patience": 20},
    "evaluate": {"threshold": 0.5, "cutoffs": [10, 50, 100, 1000]},
    "copy": {"kinds": ["tree", "glm"], "max_depth": 6},
    "monitor": {"ensemble": 8, "window": 4, "k": 3.0},
    "serve": {"port": 8321},
    "loop_demo": {"pattern_type": "CouponDate", "pattern_rate": 0.05,
                  "n_corrections": 200, "n_instruments": 1200, "n_months": 14},
}


class CliError(Exception):
    pass


def load_config(path: Optional[str]) -> dict:
    cfg = json.loads(json.dumps(DEFAULT_CONFIG))  # deep copy
    if path:
        p = Path(path)
        if not p.exists():
            raise CliError(f"config file not found: {p}")
        with open(p, "rb") as fh:
            user = tomllib.load(fh)
        for section, values in user.items():
            if section not in cfg:
                raise CliError(f"unknown config section [{section}]")
            cfg[section].update(values)
    return cfg


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class Run:
    """Collects artifacts and writes the manifest for one subcommand."""

    def __init__(self, command: str, out_dir: Path, config: dict, seed: int):
        self.command = command
        self.out_dir = out_dir
        self.config = config
        self.seed = seed
        self.t0 = time.time()
        self.artifacts: list[Path] = []
        self.timings: dict[str, float] = {}
        out_dir.mkdir(parents=True, exist_ok=True)

    def add(self, *paths: Path) -> None:
        self.artifacts.extend(paths)

    def lap(self, name: str) -> None:
        self.timings[name] = round(time.time() - self.t0, 3)

    def finish(self, extra: Optional[dict] = None) -> Path:
        mdir = self.out_dir / "manifests"
        mdir.mkdir(exist_ok=True)
        config_hash = hashlib.sha256(
            json.dumps(self.config, sort_keys=True).encode()).hexdigest()[:16]
        manifest = {
            "command": self.command,
            "package_version": __version__,
            "config": self.config,
            "config_hash": config_hash,
            "seed": self.seed,
            "artifacts": [{"path": str(p.relative_to(self.out_dir)),
                           "sha256": _sha256(p), "bytes": p.stat().st_size}
                          for p in sorted(set(self.artifacts))],
            "timings": {**self.timings, "total_s": round(time.time() - self.t0, 3)},
        }
        if extra:
            manifest["result"] = extra
        path = mdir / f"{self.command}.json"
        path.write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
        return path


# --- artifact helpers ---------------------------------------------------------

def _paths(out_dir: Path) -> dict[str, Path]:
    return {
        "corpus": out_dir / "corpus.jsonl",
        "corpus_csv": out_dir / "corpus.csv",
        "ground_truth": out_dir / "ground_truth.jsonl",
        "audit_log": out_dir / "audit.log",
        "audit_csv": out_dir / "audits.csv",
        "matrix": out_dir / "matrix.csv",
        "matrix_schema": out_dir / "matrix_schema.json",
        "models": out_dir / "models",
        "reports": out_dir / "reports",
    }


def _load_pipeline(out_dir: Path, need=("corpus", "matrix", "models")):
    from .features import load_matrix
    from .learners import ModelRegistry
    from .store import AuditStore

    p = _paths(out_dir)
    out = {}
    if "corpus" in need:
        if not p["corpus"].exists():
            raise CliError(f"missing {p['corpus']}; run `dqx gen` first")
        out["corpus"] = load_corpus(p["corpus"])
        out["store"] = AuditStore(p["audit_log"])
    if "matrix" in need:
        if not p["matrix"].exists():
            raise CliError(f"missing {p['matrix']}; run `dqx featurize` first")
        out["matrix"] = load_matrix(p["matrix"], p["matrix_schema"])
    if "models" in need:
        out["registry"] = ModelRegistry(p["models"])
    return out


def _load_models(registry) -> dict[ExceptionType, Optional[object]]:
    models = {}
    for t in ExceptionType:
        version = registry.current_version(t)
        models[t] = registry.load(t, version) if version else None
    return models


# --- subcommands ----------------------------------------------------------------

def cmd_gen(args, config: dict) -> dict:
    from .datagen import GenConfig, generate_universe, inject_exceptions
    from .store import AuditStore

    g = config["gen"]
    gen_cfg = GenConfig(
        n_instruments=g["n_instruments"], n_months=g["n_months"],
        error_rate=g["error_rate"], signal_strength=g["signal_strength"],
        seed=g["seed"], start_month=g["start_month"], bulk_share=g["bulk_share"],
        error_rate_overrides=tuple(tuple(o) for o in g.get("error_rate_overrides", [])))
    run = Run("gen", args.out_dir, config, g["seed"])
    p = _paths(args.out_dir)
    corpus = generate_universe(gen_cfg)
    run.lap("generate")
    corrupted, gt, audits = inject_exceptions(corpus, gen_cfg)
    run.lap("inject")
    save_corpus(corrupted, p["corpus"])
    corpus_to_csv(corrupted, p["corpus_csv"])
    gt.save(p["ground_truth"])
    if p["audit_log"].exists():
        p["audit_log"].unlink()
    store = AuditStore(p["audit_log"])
    for rec in audits:
        store.append(rec)
    store.export_csv(p["audit_csv"])
    store.close()
    run.add(p["corpus"], p["corpus_csv"], p["ground_truth"], p["audit_log"], p["audit_csv"])
    result = {"snapshots": len(corrupted.snapshots), "errors": len(gt.entries),
              "audits": len(audits)}
    run.finish(result)
    return result


def cmd_featurize(args, config: dict) -> dict:
    from .features import featurize, save_matrix
    from .store import assemble_training

    f = config["features"]
    run = Run("featurize", args.out_dir, config, config["gen"]["seed"])
    p = _paths(args.out_dir)
    data = _load_pipeline(args.out_dir, need=("corpus",))
    corpus, store = data["corpus"], data["store"]
    labels = assemble_training(corpus, store.records(), cutoff_month=corpus.months[-1])
    matrix = featurize(corpus, labels, m=f["smoothing"], k_folds=f["k_folds"],
                       seed=config["gen"]["seed"])
    run.lap("featurize")
    save_matrix(matrix, p["matrix"], p["matrix_schema"])
    store.close()
    run.add(p["matrix"], p["matrix_schema"])
    result = {"rows": matrix.n_rows, "base_features": len(matrix.base_schema)}
    run.finish(result)
    return result


def _train_params(config: dict, seed: int):
    from .learners import TrainParams

    t = config["train"]
    return TrainParams(n_rounds=t["n_rounds"], max_depth=t["max_depth"],
                       learning_rate=t["learning_rate"],
                       min_child_cover=t["min_child_cover"],
                       l2_leaf_reg=t["l2_leaf_reg"],
                       early_stopping_patience=t["early_stopping_patience"],
                       seed=seed)


def cmd_train(args, config: dict) -> dict:
    from .features import SPLIT_TRAIN, SPLIT_VAL
    from .learners import ModelRegistry, train_gbm
    from .service import train_meta_on_validation

    seed = config["gen"]["seed"]
    run = Run("train", args.out_dir, config, seed)
    p = _paths(args.out_dir)
    data = _load_pipeline(args.out_dir, need=("matrix",))
    matrix = data["matrix"]
    params = _train_params(config, seed)
    registry = ModelRegistry(p["models"])
    models = {}
    skipped = []
    for t in ExceptionType:
        X = matrix.matrix_for(t)
        y = matrix.labels[t]
        trm = matrix.row_mask(t, SPLIT_TRAIN)
        vam = matrix.row_mask(t, SPLIT_VAL)
        n_pos = int(y[trm].sum())
        if n_pos == 0 or n_pos == int(trm.sum()):
            models[t] = None
            skipped.append(t.value)
            continue
        models[t] = train_gbm(X[trm], y[trm], X[vam], y[vam], params,
                              schema_hash=matrix.type_schema_hash(t))
        run.lap(f"train_{t.value}")
    publish = {t: m for t, m in models.items() if m is not None}
    meta = train_meta_on_validation(models, matrix)
    if meta is not None:
        publish["Meta"] = meta
    versions = registry.publish(publish)
    run.add(registry.index_path,
            *[p["models"] / key / f"{v}.json" for key, v in versions.items()])
    result = {"versions": versions, "skipped": skipped,
              "rounds": {t.value: m.n_rounds for t, m in models.items() if m is not None}}
    run.finish(result)
    return result


def cmd_evaluate(args, config: dict) -> dict:
    from .metrics import evaluate_models
    from .rank import gold_rank_report

    threshold = args.threshold if args.threshold is not None \
        else config["evaluate"]["threshold"]
    run = Run("evaluate", args.out_dir, config, config["gen"]["seed"])
    p = _paths(args.out_dir)
    data = _load_pipeline(args.out_dir, need=("matrix", "models"))
    matrix, registry = data["matrix"], data["registry"]
    models = _load_models(registry)
    report = evaluate_models(models, matrix, threshold)
    rdir = p["reports"]
    rdir.mkdir(exist_ok=True)
    report.write_pool_csv(rdir / "detection_full.csv", "full")
    report.write_pool_csv(rdir / "detection_gold.csv", "gold")
    report.to_json_file(rdir / "evaluation.json")
    run.lap("detection")
    ndcg_report = gold_rank_report(matrix, models,
                                   cutoffs=config["evaluate"]["cutoffs"],
                                   threshold=threshold)
    ndcg_report.to_csv(rdir / "ndcg_gold.csv")
    ndcg_report.to_json_file(rdir / "ndcg_gold.json")
    run.add(rdir / "detection_full.csv", rdir / "detection_gold.csv",
            rdir / "evaluation.json", rdir / "ndcg_gold.csv", rdir / "ndcg_gold.json")
    result = {"threshold": threshold,
              "full": {r.exception_type: {"precision": r.precision, "recall": r.recall}
                       for r in report.rows if r.pool == "full"}}
    run.finish(json.loads(json.dumps(result, default=lambda x: None)))
    return result


def cmd_rank(args, config: dict) -> dict:
    from .features import SPLIT_TEST
    from .rank import queue_from_matrix

    run = Run("rank", args.out_dir, config, config["gen"]["seed"])
    p = _paths(args.out_dir)
    data = _load_pipeline(args.out_dir, need=("matrix", "models"))
    matrix, registry = data["matrix"], data["registry"]
    models = _load_models(registry)
    rdir = p["reports"]
    rdir.mkdir(exist_ok=True)
    path = rdir / "queue.csv"
    n_items = 0
    with open(path, "w", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["exception_type", "position", "instrument_id", "ref_month",
                    "probability", "amount_outstanding", "rank_score"])
        for t in sorted(ExceptionType, key=lambda t: t.value):
            queue = queue_from_matrix(matrix, models.get(t), t,
                                      matrix.row_mask(t, SPLIT_TEST))
            for item in queue:
                w.writerow([item.exception_type, item.position, item.instrument_id,
                            item.ref_month, repr(item.probability),
                            repr(item.amount_outstanding), repr(item.rank_score)])
                n_items += 1
    run.add(path)
    result = {"items": n_items}
    run.finish(result)
    return result


def cmd_explain(args, config: dict) -> dict:
    from .explain import ranked_global, shap_global, shap_local
    from .features import SPLIT_TEST

    run = Run("explain", args.out_dir, config, config["gen"]["seed"])
    p = _paths(args.out_dir)
    data = _load_pipeline(args.out_dir, need=("matrix", "models"))
    matrix, registry = data["matrix"], data["registry"]
    models = _load_models(registry)
    rdir = p["reports"]
    rdir.mkdir(exist_ok=True)
    gpath = rdir / "global_importance.csv"
    with open(gpath, "w", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["exception_type", "rank", "feature", "mean_abs_contribution"])
        for t in sorted(ExceptionType, key=lambda t: t.value):
            model = models.get(t)
            if model is None:
                continue
            mask = matrix.row_mask(t, SPLIT_TEST)
            if not mask.any():
                continue
            g = shap_global(model, matrix.matrix_for(t)[mask])
            for i, (name, v) in enumerate(ranked_global(g, matrix.type_schema(t).names)):
                w.writerow([t.value, i + 1, name, repr(v)])
    run.add(gpath)
    result = {"global_importance": str(gpath)}
    if args.instrument and args.month and args.type:
        t = ExceptionType(args.type)
        model = models.get(t)
        if model is None:
            raise CliError(f"no model for {t.value}")
        try:
            i = matrix.keys.index((args.instrument, args.month))
        except ValueError:
            raise CliError(f"row ({args.instrument}, {args.month}) not in matrix")
        att = shap_local(model, matrix.matrix_for(t)[i],
                         row_id=f"{args.instrument}:{args.month}")
        lpath = rdir / "explain_local.json"
        names = matrix.type_schema(t).names
        lpath.write_text(json.dumps({
            "instrument_id": args.instrument, "ref_month": args.month,
            "exception_type": t.value, "base": att.base, "margin": att.margin,
            "contributions": {n: float(v) for n, v in zip(names, att.contributions)},
        }, sort_keys=True, indent=1) + "\n")
        run.add(lpath)
        result["local"] = str(lpath)
    run.finish(result)
    return result


def cmd_copy(args, config: dict) -> dict:
    from .explain import copy_model
    from .features import SPLIT_TRAIN
    from .learners import SimpleParams

    run = Run("copy", args.out_dir, config, config["gen"]["seed"])
    p = _paths(args.out_dir)
    data = _load_pipeline(args.out_dir, need=("matrix", "models"))
    matrix, registry = data["matrix"], data["registry"]
    models = _load_models(registry)
    rdir = p["reports"]
    rdir.mkdir(exist_ok=True)
    path = rdir / "copy_report.csv"
    params = SimpleParams(max_depth=config["copy"]["max_depth"],
                          seed=config["gen"]["seed"])
    fidelity = {}
    with open(path, "w", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["exception_type", "metric", "original", "tree_copy", "glm_copy"])
        for t in sorted(ExceptionType, key=lambda t: t.value):
            model = models.get(t)
            if model is None:
                continue
            mask = matrix.row_mask(t, SPLIT_TRAIN)
            pool = matrix.matrix_for(t)[mask]
            y = matrix.labels[t][mask]
            reports = {}
            for kind in config["copy"]["kinds"]:
                _, rep = copy_model(model, pool, kind, params=params,
                                    true_labels=y, seed=config["gen"]["seed"])
                reports[kind] = rep
            for metric in ("auc", "precision", "recall"):
                w.writerow([t.value, metric,
                            f"{reports['tree'].metrics_original[metric]:.3f}",
                            f"{reports['tree'].metrics_copy[metric]:.3f}" if "tree" in reports else "",
                            f"{reports['glm'].metrics_copy[metric]:.3f}" if "glm" in reports else ""])
            w.writerow([t.value, "fidelity", "1.000",
                        f"{reports['tree'].fidelity:.3f}" if "tree" in reports else "",
                        f"{reports['glm'].fidelity:.3f}" if "glm" in reports else ""])
            fidelity[t.value] = {k: rep.fidelity for k, rep in reports.items()}
    run.add(path)
    result = {"fidelity": fidelity}
    run.finish(result)
    return result


def cmd_monitor(args, config: dict) -> dict:
    from .features import SPLIT_TRAIN, SPLIT_VAL
    from .monitor import batch_uncertainty, fit_bootstrap_ensemble, shap_drift

    m = config["monitor"]
    seed = config["gen"]["seed"]
    run = Run("monitor", args.out_dir, config, seed)
    p = _paths(args.out_dir)
    data = _load_pipeline(args.out_dir, need=("matrix", "models"))
    matrix, registry = data["matrix"], data["registry"]
    models = _load_models(registry)
    cand = [t for t in ExceptionType if models.get(t) is not None]
    if not cand:
        raise CliError("no trained models; run `dqx train` first")
    t = max(cand, key=lambda t: int(matrix.eligible[t].sum()))
    X = matrix.matrix_for(t)
    trm = matrix.row_mask(t, SPLIT_TRAIN)
    vam = matrix.row_mask(t, SPLIT_VAL)
    params = _train_params(config, seed)
    ensemble = fit_bootstrap_ensemble(X[trm], matrix.labels[t][trm], m["ensemble"],
                                      params, master_seed=seed,
                                      X_val=X[vam], y_val=matrix.labels[t][vam])
    run.lap("ensemble")
    baseline = batch_uncertainty(ensemble, X[trm])
    month_arr = np.array([mo for _, mo in matrix.keys])
    window = min(m["window"], len(matrix.months) - 1)
    batches = {mo: X[matrix.eligible[t] & (month_arr == mo)] for mo in matrix.months}
    drift = shap_drift(models[t], batches, matrix.type_schema(t).names,
                       window=window, k=m["k"])
    run.lap("drift")
    rdir = p["reports"]
    rdir.mkdir(exist_ok=True)
    path = rdir / "monitor.json"
    doc = {"monitored_type": t.value,
           "uncertainty": {"baseline_q99": float(np.quantile(baseline, 0.99)),
                           "baseline_mean": float(baseline.mean()),
                           "ensemble_size": len(ensemble)},
           "drift": drift.to_json()}
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    run.add(path)
    result = {"monitored_type": t.value, "drift_flags": len(drift.flags)}
    run.finish(result)
    return result


def _build_service_state(out_dir: Path, config: dict):
    from .learners import ModelRegistry
    from .service import ServiceConfig, ServiceState
    from .store import AuditStore

    p = _paths(out_dir)
    corpus = load_corpus(p["corpus"])
    store = AuditStore(p["audit_log"])
    registry = ModelRegistry(p["models"])
    seed = config["gen"]["seed"]
    svc_cfg = ServiceConfig(data_dir=out_dir, model_dir=p["models"],
                            threshold=config["evaluate"]["threshold"],
                            seed=seed, train_params=_train_params(config, seed))
    state = ServiceState(svc_cfg, corpus, store, registry)
    state.refresh()
    return state


def cmd_serve(args, config: dict) -> dict:
    import uvicorn

    from .service import build_app

    state = _build_service_state(args.out_dir, config)
    app = build_app(state)
    port = args.port or config["serve"]["port"]
    uvicorn.run(app, host="127.0.0.1", port=port, log_level="info")
    return {"port": port}


def cmd_loop_demo(args, config: dict) -> dict:
    from .loop import run_loop_demo

    run = Run("loop-demo", args.out_dir, config, config["gen"]["seed"])
    result = run_loop_demo(args.out_dir, config)
    p = _paths(args.out_dir)
    run.add(p["reports"] / "loop_report.json")
    run.finish(result)
    return result


# --- entry point ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dqx",
        description="Exception detection, ranking and review-feedback pipeline.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser.add_argument("--config", help="TOML config file (defaults built in)")
    parser.add_argument("--out-dir", type=Path, default=Path("dqx_out"),
                        help="artifact directory")
    parser.add_argument("--seed", type=int, default=None,
                        help="override [gen].seed")
    parser.add_argument("--signal-strength", type=float, default=None,
                        help="override [gen].signal_strength")
    parser.add_argument("--threshold", type=float, default=None,
                        help="override [evaluate].threshold")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", help="generate the synthetic corpus + audit log")
    sub.add_parser("featurize", help="build the feature matrix and splits")
    sub.add_parser("train", help="train per-type models + meta classifier")
    sub.add_parser("evaluate", help="detection and NDCG reports")
    sub.add_parser("rank", help="materialize the ranked queue CSV")
    pe = sub.add_parser("explain", help="global importance (+ local attribution)")
    pe.add_argument("--instrument")
    pe.add_argument("--month")
    pe.add_argument("--type")
    sub.add_parser("copy", help="simple-model copies + fidelity report")
    sub.add_parser("monitor", help="bootstrap uncertainty + attribution drift")
    ps = sub.add_parser("serve", help="run the review HTTP service")
    ps.add_argument("--port", type=int, default=None)
    sub.add_parser("loop-demo", help="end-to-end feedback-loop demonstration")
    return parser


COMMANDS = {
    "gen": cmd_gen, "featurize": cmd_featurize, "train": cmd_train,
    "evaluate": cmd_evaluate, "rank": cmd_rank, "explain": cmd_explain,
    "copy": cmd_copy, "monitor": cmd_monitor, "serve": cmd_serve,
    "loop-demo": cmd_loop_demo,
}


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config["gen"]["seed"] = args.seed
        if args.signal_strength is not None:
            config["gen"]["signal_strength"] = args.signal_strength
        if args.threshold is not None:
            config["evaluate"]["threshold"] = args.threshold
        result = COMMANDS[args.command](args, config)
        print(json.dumps({"command": args.command, "ok": True, "result": result},
                         sort_keys=True, default=str))
        return 0
    except CliError as exc:
        print(json.dumps({"command": args.command, "ok": False,
                          "error": str(exc), "kind": "config"}), file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - failure path contract
        print(json.dumps({"command": args.command, "ok": False,
                          "error": str(exc), "kind": type(exc).__name__}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
