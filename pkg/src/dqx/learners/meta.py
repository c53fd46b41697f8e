"""Calibrating meta-classifier: multinomial logistic over per-type probabilities.

Input is the vector of the seven per-type model probabilities; output is a
distribution over eight classes (the seven exception types plus Nominal).
It replaces a hand-tuned probability threshold: the class weights learn
where the per-type scores actually separate errors from nominal records.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..types import EXCEPTION_TYPES
from .simple import _descend

NOMINAL = "Nominal"
META_CLASSES: tuple[str, ...] = tuple(t.value for t in EXCEPTION_TYPES) + (NOMINAL,)


@dataclass
class MetaModel:
    weights: np.ndarray  # (n_classes, n_inputs)
    intercepts: np.ndarray  # (n_classes,)
    classes: tuple[str, ...] = META_CLASSES
    converged: bool = True
    n_iter: int = 0
    loss_history: list[float] = field(default_factory=list)

    def predict_proba(self, P: np.ndarray) -> np.ndarray:
        P = np.asarray(P, dtype=np.float64)
        if P.ndim == 1:
            P = P[None, :]
        z = P @ self.weights.T + self.intercepts
        z -= z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict_class(self, P: np.ndarray) -> list[str]:
        probs = self.predict_proba(P)
        return [self.classes[i] for i in probs.argmax(axis=1)]


def softmax_loss_grad(theta: np.ndarray, X: np.ndarray, onehot: np.ndarray,
                      alpha: float) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of softmax regression with L2 on the weights.

    theta is the flattened (n_classes, n_inputs + 1) matrix, bias last.
    """
    n, d = X.shape
    k = onehot.shape[1]
    mat = theta.reshape(k, d + 1)
    W, b = mat[:, :d], mat[:, d]
    z = X @ W.T + b
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    loss = float(-np.mean(np.log(np.clip((p * onehot).sum(axis=1), 1e-12, None)))
                 + 0.5 * alpha * float((W * W).sum()))
    resid = (p - onehot) / n
    gw = resid.T @ X + alpha * W
    gb = resid.sum(axis=0)
    return loss, np.concatenate([gw, gb[:, None]], axis=1).ravel()


def train_meta(
    probs: np.ndarray,
    class_labels: list[str],
    alpha: float = 1e-3,
    max_iter: int = 2000,
    tol: float = 1e-6,
) -> MetaModel:
    """Fit the 8-class calibration layer on (n, 7) per-type probabilities."""
    P = np.ascontiguousarray(probs, dtype=np.float64)
    if P.ndim != 2 or P.shape[1] != len(EXCEPTION_TYPES):
        raise ValueError(f"expected (n, {len(EXCEPTION_TYPES)}) probability matrix")
    if P.min() < 0.0 or P.max() > 1.0:
        raise ValueError("probabilities must lie in [0, 1]")
    unknown = set(class_labels) - set(META_CLASSES)
    if unknown:
        raise ValueError(f"unknown classes {sorted(unknown)}")
    if len(set(class_labels)) < 2:
        raise ValueError("need at least 2 distinct classes")
    k = len(META_CLASSES)
    onehot = np.zeros((len(class_labels), k))
    for i, c in enumerate(class_labels):
        onehot[i, META_CLASSES.index(c)] = 1.0
    # canonical row order: the fit is literally invariant to input order,
    # down to float summation
    class_idx = onehot.argmax(axis=1)
    order = np.lexsort(tuple(P[:, j] for j in range(P.shape[1] - 1, -1, -1))
                       + (class_idx,))
    P = np.ascontiguousarray(P[order])
    onehot = np.ascontiguousarray(onehot[order])

    theta0 = np.zeros(k * (P.shape[1] + 1))
    theta, history, converged, n_iter = _descend(
        lambda th: softmax_loss_grad(th, P, onehot, alpha), theta0, max_iter, tol)
    mat = theta.reshape(k, P.shape[1] + 1)
    return MetaModel(weights=mat[:, :-1].copy(), intercepts=mat[:, -1].copy(),
                     converged=converged, n_iter=n_iter, loss_history=history)
