"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s`. The synthetic benchmark
(criterion 1) is shared with the attribution, counterfactual and copy
criteria through a session fixture; the UI criterion (11) lives in the
frontend package's own test suite and is reported here as a pointer.
"""

import hashlib
import json
import time
from pathlib import Path

import numpy as np
import pytest

from dqx.cli import main as cli_main
from dqx.datagen import GenConfig, generate_universe, inject_exceptions
from dqx.explain import build_policy, copy_model, find_counterfactuals, shap_values
from dqx.features import SPLIT_TEST, SPLIT_TRAIN, SPLIT_VAL, featurize, load_matrix
from dqx.learners import ModelRegistry, TrainParams, glm_loss_grad, train_gbm
from dqx.metrics import auc_score
from dqx.monitor import (
    batch_uncertainty,
    fit_bootstrap_ensemble,
    shap_drift,
    uncertainty_alarm_threshold,
)
from dqx.rank import ndcg
from dqx.store import assemble_training
from dqx.types import ExceptionType

from test_explain import brute_force_shap, make_fixture_model
from test_rank import oracle_ndcg

BENCH_SEED = 20240501


def _run_cli(out_dir: Path, cmd: str, *extra) -> float:
    t0 = time.time()
    code = cli_main(["--out-dir", str(out_dir), "--seed", str(BENCH_SEED),
                     *extra, cmd])
    assert code == 0, f"dqx {cmd} failed"
    return time.time() - t0


@pytest.fixture(scope="session")
def benchmark(tmp_path_factory):
    """Default-scale pipeline (~52k rows, signal_strength=1.0) via the CLI."""
    out = tmp_path_factory.mktemp("bench")
    timings = {cmd: _run_cli(out, cmd)
               for cmd in ("gen", "featurize", "train", "evaluate")}
    matrix = load_matrix(out / "matrix.csv", out / "matrix_schema.json")
    registry = ModelRegistry(out / "models")
    models = {t: registry.load(t, registry.current_version(t))
              if registry.current_version(t) else None for t in ExceptionType}
    report = json.loads((out / "reports" / "evaluation.json").read_text())
    return {"out": out, "timings": timings, "matrix": matrix, "models": models,
            "report": report}


def test_acceptance_01_benchmark_detection(benchmark):
    elapsed = sum(benchmark["timings"].values())
    rows = {(r["exception_type"], r["pool"]): r for r in benchmark["report"]["rows"]}
    worst_p, worst_r = 1.0, 1.0
    for t in ExceptionType:
        r = rows[(t.value, "full")]
        assert r["precision"] is not None and r["precision"] >= 0.7, (t, r)
        assert r["recall"] is not None and r["recall"] >= 0.7, (t, r)
        worst_p = min(worst_p, r["precision"])
        worst_r = min(worst_r, r["recall"])
    assert elapsed < 300.0, f"pipeline took {elapsed:.0f}s"
    print(f"\nACCEPTANCE 1: PASS  min precision {worst_p:.3f}, min recall "
          f"{worst_r:.3f} over 7 types at threshold 0.5; gen->evaluate "
          f"{elapsed:.0f}s < 300s")


def test_acceptance_02_null_experiment_auc_half():
    cfg = GenConfig(n_instruments=3000, n_months=14, error_rate=0.15,
                    signal_strength=0.0, seed=2024)
    corpus = generate_universe(cfg)
    corrupted, _, audits = inject_exceptions(corpus, cfg)
    labels = assemble_training(corrupted, audits, cutoff_month=corrupted.months[-1])
    matrix = featurize(corrupted, labels, seed=cfg.seed)
    aucs = {}
    for t in ExceptionType:
        X = matrix.matrix_for(t)
        y = matrix.labels[t]
        trm = matrix.row_mask(t, SPLIT_TRAIN)
        vam = matrix.row_mask(t, SPLIT_VAL)
        tem = matrix.row_mask(t, SPLIT_TEST)
        model = train_gbm(X[trm], y[trm], X[vam], y[vam], TrainParams(seed=1))
        aucs[t.value] = auc_score(model.predict_proba(X[tem]), y[tem])
    for name, auc in aucs.items():
        assert 0.45 <= auc <= 0.55, f"{name}: AUC {auc:.4f} outside null band"
    spread = ", ".join(f"{k}={v:.3f}" for k, v in aucs.items())
    print(f"\nACCEPTANCE 2: PASS  signal_strength=0 test AUC in [0.45,0.55] "
          f"for every type ({spread})")


def test_acceptance_03_shapley_correctness(benchmark):
    matrix = benchmark["matrix"]
    rng = np.random.default_rng(7)
    worst = 0.0
    for t, model in benchmark["models"].items():
        assert model is not None, t
        X = matrix.matrix_for(t)
        idx = rng.choice(len(X), size=1000, replace=False)
        phi, base = shap_values(model, X[idx])
        err = np.abs(base + phi.sum(axis=1) - model.predict_margin(X[idx])).max()
        assert err <= 1e-6, (t, err)
        worst = max(worst, err)
    brute_worst = 0.0
    for seed in range(3):
        model, Xf = make_fixture_model(seed, n_features=8, depth=3, rounds=3)
        phi, _ = shap_values(model, Xf[:5])
        for i in range(5):
            diff = np.abs(phi[i] - brute_force_shap(model, Xf[i])).max()
            assert diff <= 1e-9, (seed, i, diff)
            brute_worst = max(brute_worst, diff)
    print(f"\nACCEPTANCE 3: PASS  additivity max |base+sum(phi)-margin| "
          f"{worst:.2e} <= 1e-6 on 1000 rows x 7 models; brute-force max diff "
          f"{brute_worst:.2e} <= 1e-9 on fixture trees")


def test_acceptance_04_ndcg_oracle_equivalence():
    rng = np.random.default_rng(404)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 80))
        rels = rng.integers(0, 2, n).tolist()
        p = int(rng.integers(1, 90))
        diff = abs(ndcg(rels, p) - oracle_ndcg(rels, p))
        assert diff <= 1e-12
        worst = max(worst, diff)
    assert ndcg([1, 1, 1, 0, 0], 5) == 1.0
    assert ndcg([0] * 20, 10) == 0.0
    print(f"\nACCEPTANCE 4: PASS  NDCG matches the independent oracle within "
          f"1e-12 on 1000 cases (max diff {worst:.2e}); ideal=1, empty-pool=0")


def test_acceptance_05_glm_gradient_finite_differences():
    rng = np.random.default_rng(505)
    X = rng.normal(size=(60, 6))
    y = (rng.random(60) < 0.35).astype(float)
    h = 1e-5
    worst = 0.0
    for _ in range(100):
        theta = rng.normal(scale=1.0, size=7)
        _, grad = glm_loss_grad(theta, X, y, alpha=0.2)
        fd = np.empty_like(theta)
        for j in range(len(theta)):
            up, dn = theta.copy(), theta.copy()
            up[j] += h
            dn[j] -= h
            fd[j] = (glm_loss_grad(up, X, y, 0.2)[0]
                     - glm_loss_grad(dn, X, y, 0.2)[0]) / (2 * h)
        rel = (np.abs(grad - fd) / np.maximum(np.abs(fd), 1e-8)).max()
        assert rel <= 1e-5
        worst = max(worst, rel)
    print(f"\nACCEPTANCE 5: PASS  GLM analytic vs central finite-difference "
          f"gradient, max relative error {worst:.2e} <= 1e-5 on 100 points")


def test_acceptance_06_counterfactual_suite(benchmark):
    import itertools

    matrix = benchmark["matrix"]
    t = ExceptionType.SECURITY_STATUS
    model = benchmark["models"][t]
    schema = matrix.type_schema(t)
    X = matrix.matrix_for(t)
    train_rows = X[matrix.row_mask(t, SPLIT_TRAIN)]
    immutable = frozenset(
        n for n in schema.names
        if n.startswith(("enc__country", "enc__currency"))
        or n.endswith(("__missing", "__chg", "__prev_zero", "__medpct_missing",
                       "__pct_missing")))
    from dqx.explain import Candidate

    cands = {}
    for spec in schema.specs:
        if spec.kind == "encoded-categorical" and spec.name not in immutable:
            enc = matrix.encoders[f"{t.value}/{spec.source}"]
            cands[spec.name] = [Candidate(value=enc.encode(c), label=c)
                                for c in sorted(enc.counts)]
    policy = build_policy(schema.names, [s.kind for s in schema.specs],
                          train_rows, immutable=immutable, cat_candidates=cands)
    flagged = np.flatnonzero(matrix.row_mask(t, SPLIT_TEST)
                             & (matrix.labels[t] == 1))[:15]
    emitted = flips = 0
    for i in flagged:
        res = find_counterfactuals(model, X[i], policy, threshold=0.5, n=3, seed=2)
        for cf in res.counterfactuals:
            emitted += 1
            pt = X[i].copy()
            for j, v in cf.new_values.items():
                pt[j] = v
            before = model.predict_proba(X[i][None, :])[0] >= 0.5
            after = model.predict_proba(pt[None, :])[0] >= 0.5
            flips += before != after
            assert not any(f in immutable for f, _, _ in cf.changes)
    assert emitted > 0
    assert flips == emitted, "every emitted counterfactual must flip"

    # exhaustive minimum equality on a small searchable instance
    rng = np.random.default_rng(6)
    Xs = rng.uniform(-2, 2, size=(400, 3))
    ys = ((Xs[:, 0] + Xs[:, 1] > 0.4) | (Xs[:, 2] > 1.1)).astype(float)
    small = train_gbm(Xs, ys, None, None, TrainParams(n_rounds=20, max_depth=3, seed=0))
    pol = build_policy(["a", "b", "c"], ["numeric"] * 3, Xs)
    for mv in pol.moves:
        mv.candidates = mv.candidates[:5]
    matched = 0
    for i in range(25):
        row = Xs[i]
        orig = int(small.predict_proba(row[None, :])[0] >= 0.5)
        best = None
        for combo in itertools.product(*[[None] + [c.value for c in mv.candidates]
                                         for mv in pol.moves]):
            pt = row.copy()
            cost = 0.0
            changed = False
            for mv, v in zip(pol.moves, combo):
                if v is not None and v != row[mv.index]:
                    pt[mv.index] = v
                    cost += abs(v - row[mv.index]) / mv.scale
                    changed = True
            if changed and int(small.predict_proba(pt[None, :])[0] >= 0.5) != orig:
                best = cost if best is None else min(best, cost)
        res = find_counterfactuals(small, row, pol, threshold=0.5, n=3, seed=0)
        if best is None:
            assert not res.counterfactuals
        else:
            assert res.counterfactuals
            assert res.counterfactuals[0].cost == pytest.approx(best, rel=1e-9)
            matched += 1
    assert matched >= 8
    print(f"\nACCEPTANCE 6: PASS  {flips}/{emitted} emitted counterfactuals "
          f"flip the decision; immutables untouched; minimum cost equals "
          f"brute force on {matched} exhaustively searchable instances")


def test_acceptance_07_copy_report_ordering(benchmark):
    matrix = benchmark["matrix"]
    models = benchmark["models"]
    t = max((t for t in ExceptionType if models[t] is not None),
            key=lambda t: int(matrix.eligible[t].sum()))
    model = models[t]
    mask = matrix.row_mask(t, SPLIT_TRAIN)
    pool = matrix.matrix_for(t)[mask]
    y = matrix.labels[t][mask]
    _, tree_rep = copy_model(model, pool, "tree", true_labels=y, seed=3)
    _, glm_rep = copy_model(model, pool, "glm", true_labels=y, seed=3)
    auc_orig = tree_rep.metrics_original["auc"]
    assert auc_orig >= tree_rep.metrics_copy["auc"]
    assert auc_orig >= glm_rep.metrics_copy["auc"]
    assert tree_rep.fidelity >= 0.9
    print(f"\nACCEPTANCE 7: PASS  {t.value}: AUC original {auc_orig:.3f} >= "
          f"tree copy {tree_rep.metrics_copy['auc']:.3f} and >= GLM copy "
          f"{glm_rep.metrics_copy['auc']:.3f}; tree fidelity "
          f"{tree_rep.fidelity:.3f} >= 0.9")


@pytest.fixture(scope="session")
def monitor_setup():
    cfg = GenConfig(n_instruments=900, n_months=12, error_rate=0.06,
                    signal_strength=1.0, seed=314)
    corpus = generate_universe(cfg)
    corrupted, _, audits = inject_exceptions(corpus, cfg)
    labels = assemble_training(corrupted, audits, cutoff_month=corrupted.months[-1])
    matrix = featurize(corrupted, labels, seed=cfg.seed)
    t = ExceptionType.AMOUNT_OUTSTANDING
    X = matrix.matrix_for(t)
    y = matrix.labels[t]
    trm = matrix.row_mask(t, SPLIT_TRAIN)
    vam = matrix.row_mask(t, SPLIT_VAL)
    ensemble = fit_bootstrap_ensemble(X[trm], y[trm], 10,
                                      TrainParams(n_rounds=60, seed=9),
                                      master_seed=9, X_val=X[vam], y_val=y[vam])
    return {"matrix": matrix, "type": t, "X": X, "trm": trm,
            "ensemble": ensemble,
            "model": train_gbm(X[trm], y[trm], X[vam], y[vam],
                               TrainParams(n_rounds=60, seed=9))}


def test_acceptance_08_monitoring(monitor_setup):
    matrix = monitor_setup["matrix"]
    t = monitor_setup["type"]
    X = monitor_setup["X"]
    ensemble = monitor_setup["ensemble"]
    test_X = X[matrix.row_mask(t, SPLIT_TEST)]
    # the stationary stream is clean rows; months containing random planted
    # anomalies differ in distribution by construction
    clean_X = X[matrix.row_mask(t, SPLIT_TEST) & (matrix.labels[t] == 0)]
    fj = matrix.type_schema(t).index("amount_outstanding__medpct")
    sigma = float(X[monitor_setup["trm"]][:, fj].std())

    threshold = uncertainty_alarm_threshold(ensemble, test_X, batch_size=200,
                                            n_batches=200, seed=0)
    wins = 0
    for seed in range(20):
        rng = np.random.default_rng(8000 + seed)
        batch = test_X[rng.integers(0, len(test_X), 200)].copy()
        batch[:, fj] += 5.0 * sigma
        wins += float(batch_uncertainty(ensemble, batch).mean()) > threshold
    assert wins >= 18, f"uncertainty alarm fired in only {wins}/20 runs"

    # drift: stationary streams stay silent, the shifted feature gets flagged
    model = monitor_setup["model"]
    names = matrix.type_schema(t).names
    n_months, window = 10, 6

    def stream(seed, shift_from=None):
        rng = np.random.default_rng(seed)
        months = {}
        for mi in range(n_months):
            batch = clean_X[rng.integers(0, len(clean_X), 1000)].copy()
            if shift_from is not None and mi >= shift_from:
                batch[:, fj] += 5.0 * sigma
            months[f"2030-{mi + 1:02d}"] = batch
        return months

    silent = sum(1 for seed in range(20)
                 if len(shap_drift(model, stream(9000 + seed), names,
                                   window=window).flags) == 0)
    assert silent >= 19, f"stationary streams flagged in {20 - silent}/20 runs"
    shifted_ok = 0
    for seed in range(5):
        report = shap_drift(model, stream(9500 + seed, shift_from=7), names,
                            window=window)
        shifted_ok += names[fj] in report.flagged_features("2030-08")
    assert shifted_ok == 5, "shifted feature not flagged at the shift month"
    print(f"\nACCEPTANCE 8: PASS  +5sigma batch exceeded the calibrated 0.99 "
          f"alarm in {wins}/20 runs; {silent}/20 stationary streams flag-free; "
          f"shifted feature flagged at the shift month in 5/5 runs")


def test_acceptance_09_feedback_loop(tmp_path):
    t0 = time.time()
    code = cli_main(["--out-dir", str(tmp_path / "loop"), "--seed", "77",
                     "loop-demo"])
    elapsed = time.time() - t0
    assert code == 0
    report = json.loads(
        (tmp_path / "loop" / "reports" / "loop_report.json").read_text())
    assert report["n_corrections"] == 200
    assert report["recall_delta"] >= 0.2, report
    assert elapsed < 600.0, f"loop took {elapsed:.0f}s"
    print(f"\nACCEPTANCE 9: PASS  200 scripted corrections lifted "
          f"{report['pattern_type']} recall {report['recall_before']:.3f} -> "
          f"{report['recall_after']:.3f} (delta {report['recall_delta']:.3f} "
          f">= 0.2) in {elapsed:.0f}s < 600s")


def _artifact_hashes(out_dir: Path) -> dict[str, str]:
    out = {}
    for p in sorted(out_dir.rglob("*")):
        if p.is_file() and "manifests" not in p.parts:
            out[str(p.relative_to(out_dir))] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


def test_acceptance_10_cli_determinism(tmp_path):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text("""
[gen]
n_instruments = 250
n_months = 9
error_rate = 0.07
seed = 99

[train]
n_rounds = 25

[monitor]
ensemble = 3
window = 3

[loop_demo]
n_instruments = 500
n_months = 10
pattern_rate = 0.12
n_corrections = 40
""")
    commands = ("gen", "featurize", "train", "evaluate", "rank", "explain",
                "copy", "monitor", "loop-demo")
    dirs = (tmp_path / "a", tmp_path / "b")
    for d in dirs:
        for cmd in commands:
            out = d / ("loop" if cmd == "loop-demo" else "pipe")
            code = cli_main(["--config", str(cfg), "--out-dir", str(out), cmd])
            assert code == 0, (d, cmd)
    ha, hb = _artifact_hashes(dirs[0]), _artifact_hashes(dirs[1])
    assert ha == hb
    assert len(ha) > 15
    print(f"\nACCEPTANCE 10: PASS  {len(ha)} artifacts bit-identical across "
          f"two runs of all {len(commands)} subcommands")


def test_acceptance_11_ui_pointer():
    # [SECONDARY] The review UI's contract tests (server-order rendering,
    # exact POST bodies, additivity check line, double-submit suppression)
    # live in frontend/ and run with `npm test` there; this suite runs with
    # no UI built, which is itself part of the criterion.
    frontend = Path(__file__).resolve().parents[1] / "frontend"
    print("\nACCEPTANCE 11: see frontend/ vitest suite "
          f"({'present' if frontend.exists() else 'not built yet'}); "
          "primary suite runs without it")
