"""Explanations: exact tree attributions, weighted counterfactuals, nearest
exemplars and simple-model copies.

Attributions use the path-dependent (cover-weighted) polynomial-time tree
algorithm, so no background dataset ships with a model. On trees that only
use one of two duplicated columns this assigns all credit to the used
column, where an interventional formulation would split it; the test suite
pins that behavior down on a fixture.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .learners.gbm import GbmModel, Tree

# --- path-dependent tree attribution ----------------------------------------
# The hot path works on one preallocated set of path arrays per tree, with
# each recursion level owning a slice further into them.

_F8 = "float64"
_SIG_EXTEND = f"void(int32[:], {_F8}[:], {_F8}[:], {_F8}[:], int64, {_F8}, {_F8}, int64)"
_SIG_UNWIND = f"void(int32[:], {_F8}[:], {_F8}[:], {_F8}[:], int64, int64)"
_SIG_UNWOUND = f"{_F8}(int32[:], {_F8}[:], {_F8}[:], {_F8}[:], int64, int64)"


@njit(_SIG_EXTEND, cache=True)
def _extend(fi, zf, of, pw, unique_depth, zero_fraction, one_fraction, feature_index):
    fi[unique_depth] = feature_index
    zf[unique_depth] = zero_fraction
    of[unique_depth] = one_fraction
    pw[unique_depth] = 1.0 if unique_depth == 0 else 0.0
    for i in range(unique_depth - 1, -1, -1):
        pw[i + 1] += one_fraction * pw[i] * (i + 1) / (unique_depth + 1)
        pw[i] = zero_fraction * pw[i] * (unique_depth - i) / (unique_depth + 1)


@njit(_SIG_UNWIND, cache=True)
def _unwind(fi, zf, of, pw, unique_depth, path_index):
    one_fraction = of[path_index]
    zero_fraction = zf[path_index]
    next_one = pw[unique_depth]
    for i in range(unique_depth - 1, -1, -1):
        if one_fraction != 0.0:
            tmp = pw[i]
            pw[i] = next_one * (unique_depth + 1) / ((i + 1) * one_fraction)
            next_one = tmp - pw[i] * zero_fraction * (unique_depth - i) / (unique_depth + 1)
        else:
            pw[i] = pw[i] * (unique_depth + 1) / (zero_fraction * (unique_depth - i))
    for i in range(path_index, unique_depth):
        fi[i] = fi[i + 1]
        zf[i] = zf[i + 1]
        of[i] = of[i + 1]


@njit(_SIG_UNWOUND, cache=True)
def _unwound_sum(fi, zf, of, pw, unique_depth, path_index):
    one_fraction = of[path_index]
    zero_fraction = zf[path_index]
    next_one = pw[unique_depth]
    total = 0.0
    for i in range(unique_depth - 1, -1, -1):
        if one_fraction != 0.0:
            tmp = next_one * (unique_depth + 1) / ((i + 1) * one_fraction)
            total += tmp
            next_one = pw[i] - tmp * zero_fraction * (unique_depth - i) / (unique_depth + 1)
        else:
            total += pw[i] / zero_fraction / ((unique_depth - i) / (unique_depth + 1))
    return total


_SIG_BATCH = (f"void(int32[:], int32[:], int32[:], {_F8}[:], {_F8}[:], {_F8}[:], "
              f"{_F8}[:, :], {_F8}[:, :], int64, int64)")


@njit(_SIG_BATCH, cache=True)
def _shap_batch(left, right, feat, thr, val, cov, X, phi, path_size, max_depth):
    """Depth-first walk of the recursion with an explicit frame stack.

    Each frame owns a forward slice of the shared path arrays; a frame's
    slice stays valid while its subtree is processed, exactly mirroring the
    recursive formulation.
    """
    fi = np.zeros(path_size, dtype=np.int32)
    zf = np.zeros(path_size)
    of = np.zeros(path_size)
    pw = np.zeros(path_size)
    cap = 2 * (max_depth + 3)
    s_node = np.zeros(cap, dtype=np.int64)
    s_ud = np.zeros(cap, dtype=np.int64)
    s_poff = np.zeros(cap, dtype=np.int64)
    s_pzf = np.zeros(cap)
    s_pof = np.zeros(cap)
    s_pfi = np.zeros(cap, dtype=np.int64)

    for r in range(X.shape[0]):
        x = X[r]
        out = phi[r]
        top = 0
        s_node[0] = 0
        s_ud[0] = 0
        s_poff[0] = 0
        s_pzf[0] = 1.0
        s_pof[0] = 1.0
        s_pfi[0] = -1
        top = 1
        while top > 0:
            top -= 1
            node = s_node[top]
            ud = s_ud[top]
            poff = s_poff[top]
            pzf = s_pzf[top]
            pof = s_pof[top]
            pfi = s_pfi[top]
            off = poff + ud + 1
            for i in range(ud + 1):
                fi[off + i] = fi[poff + i]
                zf[off + i] = zf[poff + i]
                of[off + i] = of[poff + i]
                pw[off + i] = pw[poff + i]
            _extend(fi[off:], zf[off:], of[off:], pw[off:], ud, pzf, pof, pfi)

            if left[node] < 0:  # leaf
                for i in range(1, ud + 1):
                    w = _unwound_sum(fi[off:], zf[off:], of[off:], pw[off:], ud, i)
                    out[fi[off + i]] += w * (of[off + i] - zf[off + i]) * val[node]
                continue

            split = feat[node]
            hot = left[node] if x[split] < thr[node] else right[node]
            cold = right[node] if hot == left[node] else left[node]
            hot_zf = cov[hot] / cov[node]
            cold_zf = cov[cold] / cov[node]
            incoming_zf = 1.0
            incoming_of = 1.0
            path_index = 0
            while path_index <= ud:
                if fi[off + path_index] == split:
                    break
                path_index += 1
            if path_index != ud + 1:
                incoming_zf = zf[off + path_index]
                incoming_of = of[off + path_index]
                _unwind(fi[off:], zf[off:], of[off:], pw[off:], ud, path_index)
                ud -= 1

            s_node[top] = cold
            s_ud[top] = ud + 1
            s_poff[top] = off
            s_pzf[top] = cold_zf * incoming_zf
            s_pof[top] = 0.0
            s_pfi[top] = split
            top += 1
            s_node[top] = hot
            s_ud[top] = ud + 1
            s_poff[top] = off
            s_pzf[top] = hot_zf * incoming_zf
            s_pof[top] = incoming_of
            s_pfi[top] = split
            top += 1


def _tree_depth(tree: Tree) -> int:
    depth = np.zeros(tree.n_nodes, dtype=np.int64)
    out = 0
    for i in range(tree.n_nodes):
        if tree.feature[i] >= 0:
            depth[tree.left[i]] = depth[i] + 1
            depth[tree.right[i]] = depth[i] + 1
        else:
            out = max(out, int(depth[i]))
    return out


@dataclass
class Attribution:
    """Per-feature log-odds contributions; base + sum equals the margin."""

    base: float
    contributions: np.ndarray
    row_id: str = ""
    model_id: str = ""

    @property
    def margin(self) -> float:
        return self.base + float(self.contributions.sum())


def shap_values(model: GbmModel, X: np.ndarray) -> tuple[np.ndarray, float]:
    """Attribution matrix (n, d) plus the shared base value.

    base is the model base score plus every tree's cover-weighted root
    expectation, i.e. the margin of an average training path.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    n, d = X.shape
    phi = np.zeros((n, d), dtype=np.float64)
    base = model.base_score
    for tree in model.trees:
        if np.any(tree.cover <= 0):
            raise ValueError("tree is missing cover counts")
        base += float(tree.value[0])
        maxd = _tree_depth(tree) + 3
        s = (maxd * (maxd + 1)) // 2
        _shap_batch(tree.left, tree.right, tree.feature, tree.threshold,
                    tree.value, tree.cover, X, phi, s, maxd)
    return phi, base


def shap_local(model: GbmModel, row: np.ndarray, row_id: str = "",
               model_id: str = "") -> Attribution:
    phi, base = shap_values(model, np.asarray(row)[None, :])
    return Attribution(base=base, contributions=phi[0], row_id=row_id, model_id=model_id)


def shap_global(model: GbmModel, X: np.ndarray) -> np.ndarray:
    """Mean absolute attribution per feature over the given rows."""
    if len(X) == 0:
        raise ValueError("need at least one row")
    phi, _ = shap_values(model, X)
    return np.abs(phi).mean(axis=0)


def ranked_global(global_values: np.ndarray, names: Sequence[str]) -> list[tuple[str, float]]:
    order = np.argsort(-global_values, kind="stable")
    return [(names[i], float(global_values[i])) for i in order]


# --- counterfactuals ---------------------------------------------------------

@dataclass(frozen=True)
class Candidate:
    value: float
    label: str


@dataclass
class FeatureMoves:
    name: str
    index: int
    kind: str  # numeric | boolean | encoded-categorical
    weight: float
    scale: float  # MAD for numerics; 1.0 otherwise
    candidates: list[Candidate]


@dataclass
class MutabilityPolicy:
    """Which features may move, at what cost, onto which candidate values."""

    moves: list[FeatureMoves]
    immutable: frozenset[str]

    def __post_init__(self):
        if not self.moves:
            raise ValueError("policy must leave at least one mutable feature")


def build_policy(
    schema_names: Sequence[str],
    kinds: Sequence[str],
    X_train: np.ndarray,
    immutable: frozenset[str] = frozenset(),
    weights: Optional[dict[str, float]] = None,
    cat_candidates: Optional[dict[str, list[Candidate]]] = None,
) -> MutabilityPolicy:
    """Candidate grids from training data: deciles for numeric features,
    observed values for booleans, supplied category maps for encoded columns."""
    weights = weights or {}
    cat_candidates = cat_candidates or {}
    moves = []
    for j, (name, kind) in enumerate(zip(schema_names, kinds)):
        if name in immutable:
            continue
        w = float(weights.get(name, 1.0))
        if w < 0:
            raise ValueError(f"negative weight for {name}")
        col = X_train[:, j]
        if kind == "numeric":
            qs = np.unique(np.quantile(col, np.linspace(0.1, 0.9, 9)))
            med = float(np.median(col))
            mad = float(np.median(np.abs(col - med)))
            if mad == 0.0:
                mad = float(col.std()) or 1.0
            cands = [Candidate(float(v), repr(float(v))) for v in qs]
        elif kind == "boolean":
            cands = [Candidate(0.0, "false"), Candidate(1.0, "true")]
            mad = 1.0
        else:
            cands = list(cat_candidates.get(name, []))
            mad = 1.0
        if cands:
            moves.append(FeatureMoves(name=name, index=j, kind=kind, weight=w,
                                      scale=mad, candidates=cands))
    return MutabilityPolicy(moves=moves, immutable=frozenset(immutable))


@dataclass
class Counterfactual:
    changes: list[tuple[str, str, str]]  # (feature, from-label, to-label)
    new_values: dict[int, float]
    original_class: int
    new_class: int
    cost: float


@dataclass
class CounterfactualResult:
    counterfactuals: list[Counterfactual]
    budget_exhausted: bool
    n_evals: int


def _move_cost(mv: FeatureMoves, old: float, new: float) -> float:
    if mv.kind == "numeric":
        return mv.weight * abs(new - old) / mv.scale
    return mv.weight * 1.0


def _label_for(mv: FeatureMoves, value: float) -> str:
    for c in mv.candidates:
        if c.value == value:
            return c.label
    return repr(float(value))


def find_counterfactuals(
    model,
    row: np.ndarray,
    policy: MutabilityPolicy,
    threshold: float = 0.5,
    n: int = 3,
    max_pair_moves: int = 600,
    n_restarts: int = 10,
    max_changes: int = 4,
    seed: int = 0,
) -> CounterfactualResult:
    """Lowest-cost feature changes that flip the thresholded decision.

    Search: every single-feature move, then every pair (capped by taking the
    strongest singles when the grid is large), then greedy best-first walks
    from seeded random starting moves. Results are re-verified against the
    model, deduplicated by changed-feature set and sorted by cost.
    """
    row = np.asarray(row, dtype=np.float64)
    orig_class = int(model.predict_proba(row[None, :])[0] >= threshold)
    want = 1 - orig_class
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xCF00D]))
    n_evals = 0

    moves: list[tuple[int, float, float]] = []  # (move-list idx, value, cost)
    for mi, mv in enumerate(policy.moves):
        old = row[mv.index]
        for cand in mv.candidates:
            if cand.value != old:
                moves.append((mi, cand.value, _move_cost(mv, old, cand.value)))

    def batch_eval(points: np.ndarray) -> np.ndarray:
        nonlocal n_evals
        n_evals += len(points)
        return model.predict_proba(points)

    def make_cf(changed: dict[int, float]) -> Optional[Counterfactual]:
        pt = row.copy()
        for mi, v in changed.items():
            pt[policy.moves[mi].index] = v
        # re-verify at emission: never emit an unflipped candidate
        if int(model.predict_proba(pt[None, :])[0] >= threshold) != want:
            return None
        cost = sum(_move_cost(policy.moves[mi], row[policy.moves[mi].index], v)
                   for mi, v in changed.items())
        chg = [(policy.moves[mi].name,
                _label_for(policy.moves[mi], row[policy.moves[mi].index]),
                _label_for(policy.moves[mi], v))
               for mi, v in sorted(changed.items())]
        return Counterfactual(changes=chg,
                              new_values={policy.moves[mi].index: v
                                          for mi, v in changed.items()},
                              original_class=orig_class, new_class=want, cost=cost)

    found: dict[frozenset[int], Counterfactual] = {}

    def consider(changed: dict[int, float]) -> None:
        key = frozenset(changed)
        cf = make_cf(changed)
        if cf is not None and (key not in found or cf.cost < found[key].cost):
            found[key] = cf

    # stage 1: singles
    if moves:
        pts = np.tile(row, (len(moves), 1))
        for i, (mi, v, _) in enumerate(moves):
            pts[i, policy.moves[mi].index] = v
        probs = batch_eval(pts)
        flipped = (probs >= threshold).astype(int) == want
        for i, (mi, v, _) in enumerate(moves):
            if flipped[i]:
                consider({mi: v})
        # margin pull toward the flip, used to prioritize pair/greedy moves
        pull = probs - threshold if want == 1 else threshold - probs
        move_order = sorted(range(len(moves)),
                            key=lambda i: (-pull[i], moves[i][2], i))
    else:
        move_order = []

    # stage 2: pairs over the strongest moves
    top = move_order[:max_pair_moves]
    pair_list = [(a, b) for ai, a in enumerate(top) for b in top[ai + 1:]
                 if moves[a][0] != moves[b][0]]
    if pair_list:
        pts = np.tile(row, (len(pair_list), 1))
        for i, (a, b) in enumerate(pair_list):
            pts[i, policy.moves[moves[a][0]].index] = moves[a][1]
            pts[i, policy.moves[moves[b][0]].index] = moves[b][1]
        probs = batch_eval(pts)
        flipped = (probs >= threshold).astype(int) == want
        for i, (a, b) in enumerate(pair_list):
            if flipped[i]:
                consider({moves[a][0]: moves[a][1], moves[b][0]: moves[b][1]})

    # stage 2b: grids small enough to sweep completely get the exact optimum
    grid_size = 1
    for mv in policy.moves:
        grid_size *= len(mv.candidates) + 1
        if grid_size > 4096:
            break
    if 1 < grid_size <= 4096:
        import itertools as _it

        combos = []
        for combo in _it.product(*[[None] + [c.value for c in mv.candidates]
                                   for mv in policy.moves]):
            changed = {mi: v for mi, v in enumerate(combo)
                       if v is not None and v != row[policy.moves[mi].index]}
            if 0 < len(changed):
                combos.append(changed)
        if combos:
            pts = np.tile(row, (len(combos), 1))
            for i, changed in enumerate(combos):
                for mi, v in changed.items():
                    pts[i, policy.moves[mi].index] = v
            probs = batch_eval(pts)
            flipped = (probs >= threshold).astype(int) == want
            for i, changed in enumerate(combos):
                if flipped[i]:
                    consider(changed)

    # stage 3: greedy best-first walks from seeded random first moves
    if moves:
        starts = rng.choice(len(moves), size=min(n_restarts, len(moves)), replace=False)
        for start in starts:
            changed = {moves[int(start)][0]: moves[int(start)][1]}
            for _ in range(max_changes - 1):
                if frozenset(changed) in found:
                    break
                base_pt = row.copy()
                for mi, v in changed.items():
                    base_pt[policy.moves[mi].index] = v
                cand_moves = [(mi, v) for mi, v, _ in moves if mi not in changed]
                if not cand_moves:
                    break
                pts = np.tile(base_pt, (len(cand_moves), 1))
                for i, (mi, v) in enumerate(cand_moves):
                    pts[i, policy.moves[mi].index] = v
                probs = batch_eval(pts)
                pull = probs - threshold if want == 1 else threshold - probs
                best = int(np.argmax(pull))
                changed[cand_moves[best][0]] = cand_moves[best][1]
                if pull[best] >= 0:
                    consider(changed)
                    break

    result = sorted(found.values(), key=lambda c: (c.cost, c.changes))
    return CounterfactualResult(counterfactuals=result[:n],
                                budget_exhausted=len(result) == 0,
                                n_evals=n_evals)


# --- nearest exemplars --------------------------------------------------------

def nearest_exemplars(
    row: np.ndarray,
    X_train: np.ndarray,
    kinds: Sequence[str],
    k: int,
    labels: Optional[np.ndarray] = None,
    row_ids: Optional[Sequence[str]] = None,
) -> list[dict]:
    """k nearest training rows by Gower distance, ties broken by row id.

    Numeric features contribute |delta| / train range; boolean and encoded
    categorical features contribute a 0/1 mismatch.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    row = np.asarray(row, dtype=np.float64)
    X = np.asarray(X_train, dtype=np.float64)
    numeric = np.array([kd == "numeric" for kd in kinds])
    rng_ = X.max(axis=0) - X.min(axis=0)
    rng_[rng_ == 0.0] = 1.0
    diff = np.abs(X - row)
    per_feat = np.where(numeric, diff / rng_, (diff != 0.0).astype(np.float64))
    dist = per_feat.mean(axis=1)
    ids = list(row_ids) if row_ids is not None else [str(i) for i in range(len(X))]
    order = sorted(range(len(X)), key=lambda i: (dist[i], ids[i]))[:min(k, len(X))]
    return [{"row_id": ids[i], "distance": float(dist[i]),
             "label": None if labels is None else int(labels[i]),
             "index": i} for i in order]


# --- model copies -------------------------------------------------------------

@dataclass
class CopyReport:
    kind: str
    fidelity: float
    metrics_original: dict[str, float] = field(default_factory=dict)
    metrics_copy: dict[str, float] = field(default_factory=dict)

    def table_rows(self) -> list[tuple[str, float, float]]:
        return [(name, self.metrics_original.get(name, float("nan")),
                 self.metrics_copy.get(name, float("nan")))
                for name in ("auc", "precision", "recall")]


def copy_model(
    original: GbmModel,
    pool_X: np.ndarray,
    kind: str,
    params=None,
    true_labels: Optional[np.ndarray] = None,
    threshold: float = 0.5,
    holdout_fraction: float = 0.3,
    seed: int = 0,
):
    """Train a simple model on the original's hard labels over an unlabeled pool.

    Fidelity is agreement with the original on a held-out slice of the pool.
    When true labels are supplied the report carries Table-style metrics of
    both models against them on that same slice.
    """
    from .learners.simple import SimpleParams, train_simple
    from .metrics import auc_score, confusion, precision, recall

    pool_X = np.asarray(pool_X, dtype=np.float64)
    if len(pool_X) < 100:
        raise ValueError("pool too small to copy from (need >= 100 rows)")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0B1]))
    perm = rng.permutation(len(pool_X))
    n_hold = max(1, int(len(pool_X) * holdout_fraction))
    hold_idx, fit_idx = perm[:n_hold], perm[n_hold:]

    orig_probs = original.predict_proba(pool_X)
    hard = (orig_probs >= threshold).astype(np.float64)
    params = params or SimpleParams(seed=seed)
    copy = train_simple(kind, pool_X[fit_idx], hard[fit_idx], params,
                        schema_hash=original.schema_hash)

    copy_probs = copy.predict_proba(pool_X[hold_idx])
    agree = (copy_probs >= threshold) == (orig_probs[hold_idx] >= threshold)
    report = CopyReport(kind=kind, fidelity=float(agree.mean()))
    if true_labels is not None:
        y = np.asarray(true_labels)[hold_idx]
        for name, probs in (("original", orig_probs[hold_idx]), ("copy", copy_probs)):
            cm = confusion(y, probs, threshold)
            metrics = {"auc": auc_score(probs, y),
                       "precision": precision(cm), "recall": recall(cm)}
            if name == "original":
                report.metrics_original = metrics
            else:
                report.metrics_copy = metrics
    return copy, report
