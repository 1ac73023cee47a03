"""Model specifications, training and JSON persistence."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Mapping, Sequence

import numpy as np

from ..errors import ConfigError, NonFiniteInput, SchemaMismatch, SingleClass
from .models import ESTIMATOR_TYPES, fit_estimator

FORMAT_VERSION = "serboost-model/1"

_TREE = {"max_features": "sqrt", "min_samples_leaf": 1, "max_depth": None}
DEFAULTS: dict[str, dict[str, Any]] = {
    "ExtraTrees": {"n_trees": 300, **_TREE},
    "RandomForest": {"n_trees": 300, **_TREE},
    "DecisionTree": {**_TREE, "max_features": None},
    "KNearest": {"k": 5},
    "GaussianNaiveBayes": {"var_smoothing": 1e-9},
    "LogisticRegression": {"l2": 1e-4, "epochs": 500, "step": 0.1},
    "Dummy": {},
}
KINDS = tuple(DEFAULTS)


def _check_params(kind: str, params: Mapping[str, Any]) -> None:
    unknown = set(params) - set(DEFAULTS[kind])
    if unknown:
        raise ConfigError(f"{kind} has no hyperparameter(s) {sorted(unknown)}")
    p = {**DEFAULTS[kind], **params}
    if "n_trees" in p and int(p["n_trees"]) < 1:
        raise ConfigError("n_trees must be >= 1")
    if "min_samples_leaf" in p and int(p["min_samples_leaf"]) < 1:
        raise ConfigError("min_samples_leaf must be >= 1")
    if p.get("max_depth") is not None and int(p["max_depth"]) < 1:
        raise ConfigError("max_depth must be >= 1 or None")
    if "k" in p and int(p["k"]) < 1:
        raise ConfigError("k must be >= 1")
    if "step" in p and not float(p["step"]) > 0:
        raise ConfigError("step (learning rate) must be > 0")
    if "epochs" in p and int(p["epochs"]) < 1:
        raise ConfigError("epochs must be >= 1")
    for key in ("l2", "var_smoothing"):
        if key in p and float(p[key]) < 0:
            raise ConfigError(f"{key} must be >= 0")


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    hyperparameters: Mapping[str, Any] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in DEFAULTS:
            raise ConfigError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        _check_params(self.kind, self.hyperparameters)
        object.__setattr__(self, "hyperparameters", MappingProxyType(dict(sorted(self.hyperparameters.items()))))

    @property
    def params(self) -> dict[str, Any]:
        """Defaults overlaid with the explicit hyperparameters."""
        return {**DEFAULTS[self.kind], **self.hyperparameters}

    def with_params(self, **updates) -> "ModelSpec":
        return ModelSpec(self.kind, {**self.hyperparameters, **updates}, self.seed)

    def with_seed(self, seed: int) -> "ModelSpec":
        return ModelSpec(self.kind, dict(self.hyperparameters), seed)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "hyperparameters": dict(self.hyperparameters), "seed": int(self.seed)}

    @classmethod
    def from_dict(cls, obj: Mapping) -> "ModelSpec":
        return cls(obj["kind"], dict(obj.get("hyperparameters", {})), int(obj.get("seed", 0)))

    def label(self) -> str:
        if not self.hyperparameters:
            return self.kind
        inner = ",".join(f"{k}={v}" for k, v in self.hyperparameters.items())
        return f"{self.kind}({inner})"


def _as_matrix(x) -> np.ndarray:
    values = getattr(x, "values", x)
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise SchemaMismatch(f"expected a 2-D matrix, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class TrainedModel:
    spec: ModelSpec
    classes: tuple
    columns: tuple[str, ...]
    estimator: Any

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def _check(self, x, columns) -> np.ndarray:
        arr = _as_matrix(x)
        names = columns if columns is not None else getattr(x, "names", getattr(x, "columns", None))
        if names is not None and tuple(names) != self.columns:
            raise SchemaMismatch(f"columns {list(names)[:5]}... do not match training columns {list(self.columns)[:5]}...")
        if arr.shape[1] != len(self.columns):
            raise SchemaMismatch(f"expected {len(self.columns)} columns, got {arr.shape[1]}")
        return arr

    def predict_proba(self, x, columns: Sequence[str] | None = None) -> np.ndarray:
        return self.estimator.predict_proba(self._check(x, columns))

    def predict_index(self, x, columns: Sequence[str] | None = None) -> np.ndarray:
        # np.argmax returns the first maximum, i.e. the lowest class index on ties
        return np.argmax(self.predict_proba(x, columns), axis=1)

    def predict(self, x, columns: Sequence[str] | None = None) -> np.ndarray:
        return np.asarray(self.classes, dtype=object)[self.predict_index(x, columns)]

    def to_json(self) -> str:
        return json.dumps({
            "version": FORMAT_VERSION,
            "spec": self.spec.to_dict(),
            "classes": list(self.classes),
            "columns": list(self.columns),
            "estimator": self.estimator.to_dict(),
        })

    @classmethod
    def from_json(cls, text: str) -> "TrainedModel":
        obj = json.loads(text)
        if obj.get("version") != FORMAT_VERSION:
            raise SchemaMismatch(f"unsupported model format {obj.get('version')!r}")
        spec = ModelSpec.from_dict(obj["spec"])
        classes = tuple(obj["classes"])
        estimator = ESTIMATOR_TYPES[spec.kind].from_dict(obj["estimator"], len(classes))
        return cls(spec, classes, tuple(obj["columns"]), estimator)


def encode_labels(y) -> tuple[tuple, np.ndarray]:
    """Sorted class tuple and integer codes."""
    labels = np.asarray(y)
    classes, codes = np.unique(labels, return_inverse=True)
    return tuple(c.item() if hasattr(c, "item") else c for c in classes), codes.astype(np.int64)


def train(spec: ModelSpec, x, y, columns: Sequence[str] | None = None) -> TrainedModel:
    """Fit ``spec`` on ``(x, y)``; classes are the sorted distinct labels."""
    arr = _as_matrix(x)
    if columns is None:
        columns = getattr(x, "names", None) or getattr(x, "columns", None)
    columns = tuple(columns) if columns is not None else tuple(f"x{i}" for i in range(arr.shape[1]))
    if len(columns) != arr.shape[1]:
        raise SchemaMismatch("column names do not match matrix width")
    if len(arr) != len(y):
        raise SchemaMismatch(f"{len(arr)} rows but {len(y)} labels")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInput("training matrix contains NaN or infinity")
    classes, codes = encode_labels(y)
    if len(classes) < 2:
        raise SingleClass(f"training labels contain a single class {classes}")
    estimator = fit_estimator(spec.kind, spec.params, spec.seed, arr, codes, len(classes))
    return TrainedModel(spec, classes, columns, estimator)
