"""Interpretable models: a CART-style decision tree and an L2 logistic GLM.

Both serve as copy targets for the boosted model and as standalone
baselines. The tree reuses the boosted trees' node-array structure; for
binary 0/1 targets its variance criterion picks the same splits a Gini
criterion would. The GLM is fitted by full-batch gradient descent with a
backtracking line search, so the loss sequence is non-increasing and the
result is independent of row order up to float rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .gbm import Tree, _TreeBuilder, sigmoid


@dataclass(frozen=True)
class SimpleParams:
    max_depth: int = 6
    min_leaf: int = 5
    l2: float = 1e-2
    max_iter: int = 500
    tol: float = 1e-6
    seed: int = 0


@dataclass
class DecisionTreeModel:
    tree: Tree
    schema_hash: str = ""

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        return np.clip(self.tree.predict(X), 0.0, 1.0)


@dataclass
class GlmModel:
    weights: np.ndarray
    intercept: float
    schema_hash: str = ""
    converged: bool = True
    n_iter: int = 0
    loss_history: list[float] = field(default_factory=list)

    def predict_margin(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        return X @ self.weights + self.intercept

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return sigmoid(self.predict_margin(X))


SimpleModel = Union[DecisionTreeModel, GlmModel]


# --- decision tree ----------------------------------------------------------

def _best_split(x: np.ndarray, y: np.ndarray, min_leaf: int) -> tuple[float, float]:
    """Max SSE reduction over all distinct-value boundaries; (-inf, 0) if none."""
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    n = len(ys)
    csum = np.cumsum(ys)
    total = csum[-1]
    idx = np.arange(1, n)
    valid = xs[1:] != xs[:-1]
    valid &= (idx >= min_leaf) & (n - idx >= min_leaf)
    if not valid.any():
        return -np.inf, 0.0
    left_n = idx[valid].astype(np.float64)
    left_sum = csum[:-1][valid]
    # SSE reduction = sum_l^2/n_l + sum_r^2/n_r - total^2/n
    gain = (left_sum ** 2 / left_n + (total - left_sum) ** 2 / (n - left_n)
            - total ** 2 / n)
    best = int(np.argmax(gain))
    pos = idx[valid][best]
    return float(gain[best]), float(0.5 * (xs[pos - 1] + xs[pos]))


def _grow(tb: _TreeBuilder, node: int, X: np.ndarray, y: np.ndarray,
          rows: np.ndarray, depth: int, params: SimpleParams) -> None:
    tb.value[node] = float(y[rows].mean())
    if depth >= params.max_depth or len(rows) < 2 * params.min_leaf:
        return
    yr = y[rows]
    if yr.max() == yr.min():
        return
    best_gain, best_f, best_thr = 1e-12, -1, 0.0
    for f in range(X.shape[1]):
        gain, thr = _best_split(X[rows, f], yr, params.min_leaf)
        if gain > best_gain:
            best_gain, best_f, best_thr = gain, f, thr
    if best_f < 0:
        return
    go_left = X[rows, best_f] < best_thr
    lrows, rrows = rows[go_left], rows[~go_left]
    lnode = tb.add(float(len(lrows)))
    rnode = tb.add(float(len(rrows)))
    tb.feature[node] = best_f
    tb.threshold[node] = best_thr
    tb.left[node] = lnode
    tb.right[node] = rnode
    _grow(tb, lnode, X, y, lrows, depth + 1, params)
    _grow(tb, rnode, X, y, rrows, depth + 1, params)


def train_tree(X: np.ndarray, y: np.ndarray, params: SimpleParams,
               schema_hash: str = "") -> DecisionTreeModel:
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y.max() == y.min():
        raise ValueError("targets are constant; nothing to fit")
    tb = _TreeBuilder()
    root = tb.add(float(len(y)))
    _grow(tb, root, X, y, np.arange(len(y), dtype=np.int64), 0, params)
    tree = tb.build()
    tree.fill_expectations()
    return DecisionTreeModel(tree=tree, schema_hash=schema_hash)


# --- GLM --------------------------------------------------------------------

def glm_loss_grad(theta: np.ndarray, X: np.ndarray, y: np.ndarray,
                  alpha: float) -> tuple[float, np.ndarray]:
    """Mean cross-entropy + 0.5*alpha*||w||^2; theta = [w_0..w_{d-1}, intercept]."""
    w, b = theta[:-1], theta[-1]
    z = X @ w + b
    p = sigmoid(z)
    pc = np.clip(p, 1e-12, 1 - 1e-12)
    loss = float(-np.mean(y * np.log(pc) + (1 - y) * np.log(1 - pc))
                 + 0.5 * alpha * float(w @ w))
    resid = (p - y) / len(y)
    grad = np.concatenate([X.T @ resid + alpha * w, [resid.sum()]])
    return loss, grad


def _descend(loss_grad, theta: np.ndarray, max_iter: int, tol: float):
    """Gradient descent with fresh backtracking each iteration.

    The loss sequence never increases, and the step schedule is a pure
    function of the current iterate, so row order cannot leak into the
    trajectory beyond float rounding.
    """
    history = []
    loss, grad = loss_grad(theta)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        history.append(loss)
        gnorm = float(np.max(np.abs(grad)))
        if gnorm < tol:
            converged = True
            break
        g2 = float(grad @ grad)
        step = 4.0
        while step > 1e-18:
            cand = theta - step * grad
            closs, cgrad = loss_grad(cand)
            if closs <= loss - 1e-4 * step * g2:
                theta, loss, grad = cand, closs, cgrad
                break
            step *= 0.5
        else:
            break  # no descent step found: at numerical optimum
    return theta, history, converged, it


def train_glm(X: np.ndarray, y: np.ndarray, params: SimpleParams,
              schema_hash: str = "") -> GlmModel:
    """L2-penalized logistic regression on internally standardized features.

    Weights are mapped back to raw feature space before returning. A run
    that hits max_iter is reported via converged=False but still returned.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y.max() == y.min():
        raise ValueError("targets are constant; nothing to fit")
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd == 0.0, 1.0, sd)
    Z = (X - mu) / sd
    theta0 = np.zeros(X.shape[1] + 1)
    theta, history, converged, n_iter = _descend(
        lambda th: glm_loss_grad(th, Z, y, params.l2), theta0,
        params.max_iter, params.tol)
    w_std, b_std = theta[:-1], float(theta[-1])
    weights = w_std / sd
    intercept = b_std - float((w_std * mu / sd).sum())
    return GlmModel(weights=weights, intercept=intercept, schema_hash=schema_hash,
                    converged=converged, n_iter=n_iter, loss_history=history)


def train_simple(kind: str, X: np.ndarray, y: np.ndarray,
                 params: Optional[SimpleParams] = None,
                 schema_hash: str = "") -> SimpleModel:
    params = params or SimpleParams()
    if kind == "tree":
        return train_tree(X, y, params, schema_hash)
    if kind == "glm":
        return train_glm(X, y, params, schema_hash)
    raise ValueError(f"unknown simple model kind {kind!r}")
