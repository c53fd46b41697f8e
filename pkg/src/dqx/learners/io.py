"""Versioned JSON model persistence and the on-disk model registry."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Union

import numpy as np

from ..types import ExceptionType
from .gbm import GbmModel, TrainParams, Tree
from .meta import MetaModel
from .simple import DecisionTreeModel, GlmModel

FORMAT = "dqx-model"
FORMAT_VERSION = 1

AnyModel = Union[GbmModel, DecisionTreeModel, GlmModel, MetaModel]


class ModelFormatError(ValueError):
    pass


def _tree_to_dict(tree: Tree) -> dict:
    return {k: getattr(tree, k).tolist()
            for k in ("feature", "threshold", "left", "right", "value", "cover")}


def _tree_from_dict(d: dict) -> Tree:
    return Tree(feature=np.array(d["feature"], dtype=np.int32),
                threshold=np.array(d["threshold"], dtype=np.float64),
                left=np.array(d["left"], dtype=np.int32),
                right=np.array(d["right"], dtype=np.int32),
                value=np.array(d["value"], dtype=np.float64),
                cover=np.array(d["cover"], dtype=np.float64))


def serialize(model: AnyModel) -> bytes:
    doc: dict = {"format": FORMAT, "format_version": FORMAT_VERSION}
    if isinstance(model, GbmModel):
        doc.update(kind="gbm", base_score=model.base_score,
                   learning_rate=model.learning_rate, params=asdict(model.params),
                   schema_hash=model.schema_hash, train_loss=model.train_loss,
                   val_loss=model.val_loss, trees=[_tree_to_dict(t) for t in model.trees])
    elif isinstance(model, DecisionTreeModel):
        doc.update(kind="tree", schema_hash=model.schema_hash,
                   tree=_tree_to_dict(model.tree))
    elif isinstance(model, GlmModel):
        doc.update(kind="glm", schema_hash=model.schema_hash,
                   weights=model.weights.tolist(), intercept=model.intercept,
                   converged=model.converged, n_iter=model.n_iter,
                   loss_history=model.loss_history)
    elif isinstance(model, MetaModel):
        doc.update(kind="meta", weights=model.weights.tolist(),
                   intercepts=model.intercepts.tolist(), classes=list(model.classes),
                   converged=model.converged, n_iter=model.n_iter,
                   loss_history=model.loss_history)
    else:
        raise ModelFormatError(f"cannot serialize {type(model).__name__}")
    return (json.dumps(doc, sort_keys=True) + "\n").encode("utf-8")


def deserialize(payload: bytes) -> AnyModel:
    try:
        doc = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"corrupt model payload: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise ModelFormatError("not a model payload")
    if doc.get("format_version") != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format_version {doc.get('format_version')}")
    kind = doc.get("kind")
    try:
        if kind == "gbm":
            return GbmModel(trees=[_tree_from_dict(t) for t in doc["trees"]],
                            base_score=doc["base_score"],
                            learning_rate=doc["learning_rate"],
                            params=TrainParams(**doc["params"]),
                            schema_hash=doc["schema_hash"],
                            train_loss=doc["train_loss"], val_loss=doc["val_loss"])
        if kind == "tree":
            return DecisionTreeModel(tree=_tree_from_dict(doc["tree"]),
                                     schema_hash=doc["schema_hash"])
        if kind == "glm":
            return GlmModel(weights=np.array(doc["weights"], dtype=np.float64),
                            intercept=doc["intercept"], schema_hash=doc["schema_hash"],
                            converged=doc["converged"], n_iter=doc["n_iter"],
                            loss_history=doc["loss_history"])
        if kind == "meta":
            return MetaModel(weights=np.array(doc["weights"], dtype=np.float64),
                             intercepts=np.array(doc["intercepts"], dtype=np.float64),
                             classes=tuple(doc["classes"]), converged=doc["converged"],
                             n_iter=doc["n_iter"], loss_history=doc["loss_history"])
    except KeyError as exc:
        raise ModelFormatError(f"missing field {exc}") from exc
    raise ModelFormatError(f"unknown model kind {kind!r}")


def save_model(model: AnyModel, path: Path) -> None:
    Path(path).write_bytes(serialize(model))


def load_model(path: Path) -> AnyModel:
    return deserialize(Path(path).read_bytes())


class ModelRegistry:
    """Directory of versioned model files keyed by (exception type, version).

    Versions are content hashes so a retrain on identical data republishes
    the identical version; the index maps each type to its version history
    and current pointer. publish() swaps the whole generation atomically via
    a temp-file rename.
    """

    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    @property
    def index_path(self) -> Path:
        return self.root / "index.json"

    def _read_index(self) -> dict:
        if self.index_path.exists():
            return json.loads(self.index_path.read_text())
        return {"current": {}, "history": {}}

    @staticmethod
    def _key(t) -> str:
        return t.value if isinstance(t, ExceptionType) else str(t)

    def publish(self, models: dict, run_label: str = "") -> dict[str, str]:
        """Write one model generation and atomically update the index.

        Keys are exception types or plain strings (e.g. "Meta"); keys absent
        from ``models`` keep their previous current version.
        """
        index = self._read_index()
        versions: dict[str, str] = {}
        for t, model in models.items():
            key = self._key(t)
            payload = serialize(model)
            version = hashlib.sha256(payload).hexdigest()[:12]
            tdir = self.root / key
            tdir.mkdir(exist_ok=True)
            (tdir / f"{version}.json").write_bytes(payload)
            versions[key] = version
            hist = index["history"].setdefault(key, [])
            if version not in hist:
                hist.append(version)
            index["current"][key] = version
        if run_label:
            index["run_label"] = run_label
        tmp = self.index_path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(index, sort_keys=True, indent=1) + "\n")
        os.replace(tmp, self.index_path)
        return versions

    def current_version(self, t) -> Optional[str]:
        return self._read_index()["current"].get(self._key(t))

    def versions(self, t) -> list[str]:
        return list(self._read_index()["history"].get(self._key(t), []))

    def load(self, t, version: Optional[str] = None) -> AnyModel:
        version = version or self.current_version(t)
        if version is None:
            raise FileNotFoundError(f"no published model for {self._key(t)}")
        return load_model(self.root / self._key(t) / f"{version}.json")
