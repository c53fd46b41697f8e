"""Newton-boosted binary classifier over exact greedy regression trees.

Per round a depth-limited tree is fitted to the first/second-order gradients
of the binary log loss; leaf weights are -G/(H + l2). Split search is exact:
one pass over a presorted feature order per node level evaluates every
distinct-value boundary. Training is deterministic: no subsampling, stable
sorts, first-best tie handling with ascending feature index.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

try:  # numba only accelerates; the pure-python scan is the reference
    from numba import njit
except ImportError:  # pragma: no cover
    njit = None

_NEG_INF = -np.inf


def _scan_splits_impl(order, slot, x, g, h, node_g, node_h, node_cnt,
                      l2, min_child,
                      run_g, run_h, run_cnt, last_val,
                      best_gain, best_thr, best_gl, best_hl, best_cl):
    n = order.shape[0]
    for k in range(n):
        r = order[k]
        s = slot[r]
        if s < 0:
            continue
        v = x[r]
        if run_cnt[s] > 0 and v != last_val[s]:
            cl = run_cnt[s]
            cr = node_cnt[s] - cl
            if cl >= min_child and cr >= min_child:
                gl = run_g[s]
                hl = run_h[s]
                gr = node_g[s] - gl
                hr = node_h[s] - hl
                gain = 0.5 * (gl * gl / (hl + l2) + gr * gr / (hr + l2)
                              - node_g[s] * node_g[s] / (node_h[s] + l2))
                if gain > best_gain[s]:
                    best_gain[s] = gain
                    best_thr[s] = 0.5 * (last_val[s] + v)
                    best_gl[s] = gl
                    best_hl[s] = hl
                    best_cl[s] = cl
        run_g[s] += g[r]
        run_h[s] += h[r]
        run_cnt[s] += 1
        last_val[s] = v


if njit is not None:
    _scan_splits = njit(cache=True)(_scan_splits_impl)
else:  # pragma: no cover
    _scan_splits = _scan_splits_impl


@dataclass(frozen=True)
class TrainParams:
    n_rounds: int = 200
    max_depth: int = 4
    learning_rate: float = 0.1
    min_child_cover: int = 10
    l2_leaf_reg: float = 1.0
    early_stopping_patience: int = 20
    seed: int = 0

    def validate(self) -> None:
        for name in ("n_rounds", "max_depth", "learning_rate", "min_child_cover",
                     "l2_leaf_reg", "early_stopping_patience"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class Tree:
    """Array-of-nodes regression tree. feature == -1 marks a leaf.

    ``value`` holds the learning-rate-scaled leaf weight at leaves and the
    cover-weighted expectation of the subtree at internal nodes (which the
    attribution code relies on); ``cover`` is the training row count.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int32)
        while True:
            feat = self.feature[node]
            active = np.flatnonzero(feat >= 0)
            if len(active) == 0:
                break
            f = feat[active]
            cur = node[active]
            go_left = X[active, f] < self.threshold[cur]
            node[active] = np.where(go_left, self.left[cur], self.right[cur])
        return self.value[node]

    def fill_expectations(self) -> None:
        """Set internal node values to the cover-weighted leaf expectation."""
        for i in range(self.n_nodes - 1, -1, -1):  # children are created after parents
            if self.feature[i] >= 0:
                l, r = self.left[i], self.right[i]
                self.value[i] = (self.cover[l] * self.value[l]
                                 + self.cover[r] * self.value[r]) / self.cover[i]


@dataclass
class GbmModel:
    trees: list[Tree]
    base_score: float
    learning_rate: float
    params: TrainParams
    schema_hash: str = ""
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)

    @property
    def n_rounds(self) -> int:
        return len(self.trees)

    def predict_margin(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        margin = np.full(len(X), self.base_score, dtype=np.float64)
        for tree in self.trees:
            margin += tree.predict(X)
        return margin

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return sigmoid(self.predict_margin(X))


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(x, -500, 500)))


def log_loss(y: np.ndarray, p: np.ndarray) -> float:
    p = np.clip(p, 1e-12, 1 - 1e-12)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


class _TreeBuilder:
    def __init__(self):
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []
        self.cover: list[float] = []

    def add(self, cover: float) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        self.cover.append(cover)
        return len(self.feature) - 1

    def build(self) -> Tree:
        return Tree(feature=np.array(self.feature, dtype=np.int32),
                    threshold=np.array(self.threshold, dtype=np.float64),
                    left=np.array(self.left, dtype=np.int32),
                    right=np.array(self.right, dtype=np.int32),
                    value=np.array(self.value, dtype=np.float64),
                    cover=np.array(self.cover, dtype=np.float64))


def _fit_tree(X: np.ndarray, g: np.ndarray, h: np.ndarray,
              presort: np.ndarray, params: TrainParams) -> tuple[Tree, np.ndarray]:
    """One Newton tree; returns (tree, per-row leaf value) for margin updates."""
    n, n_feat = X.shape
    lr = params.learning_rate
    l2 = params.l2_leaf_reg
    tb = _TreeBuilder()
    root = tb.add(float(n))
    # active frontier: (node_id, row_indices)
    frontier: list[tuple[int, np.ndarray]] = [(root, np.arange(n, dtype=np.int64))]
    contrib = np.zeros(n, dtype=np.float64)

    for depth in range(params.max_depth + 1):
        if not frontier:
            break
        a = len(frontier)
        finalize = depth == params.max_depth
        if not finalize:
            slot = np.full(n, -1, dtype=np.int32)
            node_g = np.zeros(a)
            node_h = np.zeros(a)
            node_cnt = np.zeros(a, dtype=np.int64)
            for s, (_, rows) in enumerate(frontier):
                slot[rows] = s
                node_g[s] = g[rows].sum()
                node_h[s] = h[rows].sum()
                node_cnt[s] = len(rows)
            cur_gain = np.full(a, _NEG_INF)
            cur_feat = np.full(a, -1, dtype=np.int64)
            cur_thr = np.zeros(a)
            for f in range(n_feat):
                best_gain = np.full(a, _NEG_INF)
                best_thr = np.zeros(a)
                best_gl = np.zeros(a)
                best_hl = np.zeros(a)
                best_cl = np.zeros(a, dtype=np.int64)
                _scan_splits(presort[:, f], slot, X[:, f], g, h,
                             node_g, node_h, node_cnt, l2,
                             params.min_child_cover,
                             np.zeros(a), np.zeros(a), np.zeros(a, dtype=np.int64),
                             np.zeros(a), best_gain, best_thr, best_gl, best_hl, best_cl)
                for s in range(a):
                    if best_gain[s] > cur_gain[s]:
                        cur_gain[s] = best_gain[s]
                        cur_feat[s] = f
                        cur_thr[s] = best_thr[s]
        next_frontier: list[tuple[int, np.ndarray]] = []
        for s, (node, rows) in enumerate(frontier):
            if finalize or cur_feat[s] < 0 or cur_gain[s] <= 1e-12:
                w = -lr * g[rows].sum() / (h[rows].sum() + l2)
                tb.value[node] = w
                contrib[rows] = w
                continue
            f, thr = int(cur_feat[s]), float(cur_thr[s])
            go_left = X[rows, f] < thr
            lrows, rrows = rows[go_left], rows[~go_left]
            lnode = tb.add(float(len(lrows)))
            rnode = tb.add(float(len(rrows)))
            tb.feature[node] = f
            tb.threshold[node] = thr
            tb.left[node] = lnode
            tb.right[node] = rnode
            next_frontier.append((lnode, lrows))
            next_frontier.append((rnode, rrows))
        frontier = next_frontier

    tree = tb.build()
    tree.fill_expectations()
    return tree, contrib


def train_gbm(
    X_train: np.ndarray,
    y_train: np.ndarray,
    X_val: Optional[np.ndarray],
    y_val: Optional[np.ndarray],
    params: TrainParams,
    schema_hash: str = "",
) -> GbmModel:
    """Newton boosting on binary log loss with validation-based early stopping."""
    params.validate()
    X = np.ascontiguousarray(X_train, dtype=np.float64)
    y = np.asarray(y_train, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X_train/y_train shape mismatch")
    n_pos = int((y == 1).sum())
    if n_pos == 0 or n_pos == len(y):
        raise ValueError("training set must contain both classes")

    presort = np.argsort(X, axis=0, kind="stable").astype(np.int64)
    p_bar = y.mean()
    base = float(np.log(p_bar / (1.0 - p_bar)))
    margin = np.full(len(y), base)
    has_val = X_val is not None and y_val is not None and len(X_val) > 0
    if has_val:
        X_val = np.ascontiguousarray(X_val, dtype=np.float64)
        y_val = np.asarray(y_val, dtype=np.float64)
        val_margin = np.full(len(y_val), base)

    model = GbmModel(trees=[], base_score=base, learning_rate=params.learning_rate,
                     params=params, schema_hash=schema_hash)
    best_val = np.inf
    best_round = 0
    stale = 0
    for _ in range(params.n_rounds):
        p = sigmoid(margin)
        g = p - y
        h = p * (1.0 - p)
        tree, contrib = _fit_tree(X, g, h, presort, params)
        model.trees.append(tree)
        margin += contrib
        model.train_loss.append(log_loss(y, sigmoid(margin)))
        if has_val:
            val_margin += tree.predict(X_val)
            vloss = log_loss(y_val, sigmoid(val_margin))
            model.val_loss.append(vloss)
            if vloss < best_val - 1e-9:
                best_val = vloss
                best_round = len(model.trees)
                stale = 0
            else:
                stale += 1
                if stale >= params.early_stopping_patience:
                    break
    if has_val and best_round > 0:
        model.trees = model.trees[:best_round]
        model.train_loss = model.train_loss[:best_round]
        model.val_loss = model.val_loss[:best_round]
    return model
