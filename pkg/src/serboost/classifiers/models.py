"""Non-tree estimators: neighbors, naive Bayes, logistic regression and a prior baseline.

Each estimator maps a float matrix to class probabilities over integer class
indices ``0..n_classes-1`` and can round-trip through plain JSON types.
"""
from __future__ import annotations

import numpy as np

from .trees import Forest, fit_forest


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class KNearest:
    def __init__(self, x, y, n_classes, k):
        self.x = np.asarray(x, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.int64)
        self.n_classes = n_classes
        self.k = int(min(k, len(self.x)))

    def predict_proba(self, x, chunk: int = 1024) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = np.empty((len(x), self.n_classes))
        for s in range(0, len(x), chunk):
            d = ((x[s : s + chunk, None, :] - self.x[None, :, :]) ** 2).sum(axis=2)
            near = np.argsort(d, axis=1, kind="stable")[:, : self.k]
            votes = self.y[near]
            for c in range(self.n_classes):
                out[s : s + chunk, c] = (votes == c).sum(axis=1)
        return out / self.k

    def to_dict(self) -> dict:
        return {"k": self.k, "x": self.x.tolist(), "y": self.y.tolist()}

    @classmethod
    def from_dict(cls, obj, n_classes):
        return cls(np.array(obj["x"], dtype=np.float64).reshape(len(obj["y"]), -1), obj["y"], n_classes, obj["k"])


class GaussianNaiveBayes:
    """Per-class independent Gaussians with variance smoothing relative to the largest variance."""

    def __init__(self, priors, means, variances):
        self.priors = np.asarray(priors, dtype=np.float64)
        self.means = np.asarray(means, dtype=np.float64)
        self.variances = np.asarray(variances, dtype=np.float64)

    @classmethod
    def fit(cls, x, y, n_classes, var_smoothing=1e-9):
        x = np.asarray(x, dtype=np.float64)
        counts = np.bincount(y, minlength=n_classes).astype(np.float64)
        means = np.vstack([x[y == c].mean(axis=0) for c in range(n_classes)])
        variances = np.vstack([x[y == c].var(axis=0) for c in range(n_classes)])
        eps = var_smoothing * max(float(x.var(axis=0).max()), 1e-300)
        return cls(counts / counts.sum(), means, variances + eps)

    def predict_proba(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        ll = -0.5 * (np.log(2 * np.pi * self.variances).sum(axis=1)[None, :]
                     + (((x[:, None, :] - self.means[None]) ** 2) / self.variances[None]).sum(axis=2))
        return _softmax(ll + np.log(self.priors)[None, :])

    def to_dict(self) -> dict:
        return {"priors": self.priors.tolist(), "means": self.means.tolist(), "variances": self.variances.tolist()}

    @classmethod
    def from_dict(cls, obj, n_classes):
        return cls(obj["priors"], obj["means"], obj["variances"])


class LogisticRegression:
    """Multinomial logistic regression on standardized inputs, full-batch gradient descent."""

    def __init__(self, weights, bias, center, scale):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        self.center = np.asarray(center, dtype=np.float64)
        self.scale = np.asarray(scale, dtype=np.float64)

    @classmethod
    def fit(cls, x, y, n_classes, l2=1e-4, epochs=500, step=0.1):
        x = np.asarray(x, dtype=np.float64)
        center = x.mean(axis=0)
        scale = x.std(axis=0)
        scale = np.where(scale < 1e-12, 1.0, scale)
        z = (x - center) / scale
        target = np.eye(n_classes)[y]
        w = np.zeros((x.shape[1], n_classes))
        b = np.zeros(n_classes)
        n = len(z)
        for _ in range(int(epochs)):
            resid = _softmax(z @ w + b) - target
            w -= step * (z.T @ resid / n + l2 * w)
            b -= step * resid.mean(axis=0)
        return cls(w, b, center, scale)

    def predict_proba(self, x) -> np.ndarray:
        z = (np.asarray(x, dtype=np.float64) - self.center) / self.scale
        return _softmax(z @ self.weights + self.bias)

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "bias": self.bias.tolist(),
                "center": self.center.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, obj, n_classes):
        return cls(np.array(obj["weights"]).reshape(-1, n_classes), obj["bias"], obj["center"], obj["scale"])


class Prior:
    """Predicts the training class frequencies; argmax is the majority class."""

    def __init__(self, priors):
        self.priors = np.asarray(priors, dtype=np.float64)

    @classmethod
    def fit(cls, y, n_classes):
        counts = np.bincount(y, minlength=n_classes).astype(np.float64)
        return cls(counts / counts.sum())

    def predict_proba(self, x) -> np.ndarray:
        return np.tile(self.priors, (len(x), 1))

    def to_dict(self) -> dict:
        return {"priors": self.priors.tolist()}

    @classmethod
    def from_dict(cls, obj, n_classes):
        return cls(obj["priors"])


def fit_estimator(kind: str, params: dict, seed: int, x, y, n_classes):
    if kind in ("ExtraTrees", "RandomForest", "DecisionTree"):
        return fit_forest(
            x, y, n_classes,
            n_trees=1 if kind == "DecisionTree" else params["n_trees"],
            seed=seed,
            max_features=params["max_features"],
            min_samples_leaf=params["min_samples_leaf"],
            max_depth=params["max_depth"],
            random_splits=kind == "ExtraTrees",
            bootstrap=kind == "RandomForest",
        )
    if kind == "KNearest":
        return KNearest(x, y, n_classes, params["k"])
    if kind == "GaussianNaiveBayes":
        return GaussianNaiveBayes.fit(x, y, n_classes, params["var_smoothing"])
    if kind == "LogisticRegression":
        return LogisticRegression.fit(x, y, n_classes, params["l2"], params["epochs"], params["step"])
    if kind == "Dummy":
        return Prior.fit(y, n_classes)
    raise ValueError(f"unknown model kind {kind!r}")


ESTIMATOR_TYPES = {
    "ExtraTrees": Forest, "RandomForest": Forest, "DecisionTree": Forest,
    "KNearest": KNearest, "GaussianNaiveBayes": GaussianNaiveBayes,
    "LogisticRegression": LogisticRegression, "Dummy": Prior,
}
