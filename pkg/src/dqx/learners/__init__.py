"""Per-type classifiers, simple copy targets and the calibrating meta layer."""

from .gbm import GbmModel, TrainParams, Tree, log_loss, sigmoid, train_gbm
from .io import (
    AnyModel,
    ModelFormatError,
    ModelRegistry,
    deserialize,
    load_model,
    save_model,
    serialize,
)
from .meta import META_CLASSES, NOMINAL, MetaModel, softmax_loss_grad, train_meta
from .simple import (
    DecisionTreeModel,
    GlmModel,
    SimpleModel,
    SimpleParams,
    glm_loss_grad,
    train_glm,
    train_simple,
    train_tree,
)


def predict_proba(model, X, schema_hash: str = ""):
    """Probability of the positive class for any model kind.

    When both the model and the caller carry a schema hash they must match;
    that guards against scoring rows built under a different encoder fit.
    """
    model_hash = getattr(model, "schema_hash", "")
    if schema_hash and model_hash and schema_hash != model_hash:
        raise ValueError(f"schema hash mismatch: row {schema_hash} vs model {model_hash}")
    return model.predict_proba(X)


__all__ = [
    "AnyModel", "DecisionTreeModel", "GbmModel", "GlmModel", "META_CLASSES",
    "MetaModel", "ModelFormatError", "ModelRegistry", "NOMINAL", "SimpleModel",
    "SimpleParams", "TrainParams", "Tree", "deserialize", "glm_loss_grad",
    "load_model", "log_loss", "predict_proba", "save_model", "serialize",
    "sigmoid", "softmax_loss_grad", "train_gbm", "train_glm", "train_meta",
    "train_simple", "train_tree",
]
