"""Shapley attributions over boosted columns and back-mapping to original features.

Coalition values use interventional masking: columns in the coalition take
the explained sample's values, the rest come from each background row, and the
model probabilities are averaged over the background.  All classes are
attributed in one pass; ``ValueFunction.target`` narrows to one class.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import MissingProvenance, SchemaMismatch, TooManyColumns

EXACT_LIMIT = 15
DEFAULT_PERMUTATIONS = 200
DEFAULT_BACKGROUND = 100


def select_background(x, y, size: int = DEFAULT_BACKGROUND, seed: int = 0) -> np.ndarray:
    """Row indices of a class-balanced seeded sample of at most ``size`` rows.

    Classes are shuffled independently and then dealt one row at a time in
    class order until ``size`` rows are taken.
    """
    labels = np.asarray(y)
    classes = np.unique(labels)
    pools = []
    for c, cls in enumerate(classes):
        members = np.flatnonzero(labels == cls)
        pools.append(members[np.random.default_rng([int(seed), c]).permutation(len(members))])
    picked: list[int] = []
    depth = 0
    while len(picked) < min(size, len(labels)):
        for pool in pools:
            if depth < len(pool) and len(picked) < size:
                picked.append(int(pool[depth]))
        depth += 1
    return np.sort(np.asarray(picked, dtype=np.int64))


@dataclass(frozen=True)
class ValueFunction:
    model: object
    background: np.ndarray
    target: int | None = None

    def __post_init__(self):
        bg = np.atleast_2d(np.asarray(self.background, dtype=np.float64))
        if len(bg) < 1:
            raise ValueError("background needs at least one row")
        if bg.shape[1] != len(self.model.columns):
            raise SchemaMismatch(f"background has {bg.shape[1]} columns; model expects {len(self.model.columns)}")
        object.__setattr__(self, "background", bg)

    @property
    def dim(self) -> int:
        return self.background.shape[1]

    def values(self, x, masks: np.ndarray) -> np.ndarray:
        """Coalition values for boolean ``masks`` (n_masks x d); shape (n_masks, n_classes)."""
        x = np.asarray(x, dtype=np.float64).ravel()
        if x.shape[0] != self.dim:
            raise SchemaMismatch(f"sample has {x.shape[0]} columns; expected {self.dim}")
        masks = np.asarray(masks, dtype=bool)
        b = len(self.background)
        hybrid = np.where(masks[:, None, :], x[None, None, :], self.background[None, :, :])
        proba = self.model.predict_proba(hybrid.reshape(-1, self.dim))
        return proba.reshape(len(masks), b, -1).mean(axis=1)

    def __call__(self, x, subset: Sequence[int]) -> float | np.ndarray:
        mask = np.zeros((1, self.dim), dtype=bool)
        subset = list(subset)
        if any(not 0 <= s < self.dim for s in subset):
            raise SchemaMismatch(f"subset {subset} outside 0..{self.dim - 1}")
        mask[0, subset] = True
        v = self.values(x, mask)[0]
        return float(v[self.target]) if self.target is not None else v


coalition_value = ValueFunction.__call__


@dataclass(frozen=True)
class ShapleyAttribution:
    sample_id: int
    phi: np.ndarray                 # (d, n_classes), or (d,) when targeted
    base: np.ndarray                # mean background prediction
    output: np.ndarray              # model output at the sample
    stderr: np.ndarray | None = None
    method: str = "exact"

    @property
    def gap(self) -> np.ndarray:
        """Efficiency residual: output - base - sum(phi)."""
        return self.output - self.base - self.phi.sum(axis=0)


def _narrow(vf: ValueFunction, arr):
    if arr is None or vf.target is None:
        return arr
    return arr[..., vf.target]


def shapley_exact(vf: ValueFunction, x, sample_id: int = 0) -> ShapleyAttribution:
    """Enumerate all 2^d coalitions with the classic Shapley weights."""
    d = vf.dim
    if d > EXACT_LIMIT:
        raise TooManyColumns(f"{d} columns exceeds the exact-enumeration cap of {EXACT_LIMIT}")
    codes = np.arange(1 << d)
    masks = ((codes[:, None] >> np.arange(d)[None, :]) & 1).astype(bool)
    v = vf.values(x, masks)
    sizes = masks.sum(axis=1)
    weight = np.array([math.factorial(s) * math.factorial(d - s - 1) / math.factorial(d) if s < d else 0.0
                       for s in range(d + 1)])
    phi = np.zeros((d, v.shape[1]))
    for k in range(d):
        without = codes[~masks[:, k]]
        phi[k] = (weight[sizes[without]][:, None] * (v[without | (1 << k)] - v[without])).sum(axis=0)
    return ShapleyAttribution(sample_id, _narrow(vf, phi), _narrow(vf, v[0]), _narrow(vf, v[-1]))


def shapley_permutation(vf: ValueFunction, x, n_permutations: int = DEFAULT_PERMUTATIONS, seed: int = 0,
                        sample_id: int = 0, batch: int = 64) -> ShapleyAttribution:
    """Monte-Carlo Shapley values from random column orderings.

    Ordering ``t`` is drawn from a generator seeded by ``(seed, sample_id, t)``,
    so results do not depend on batching.  Standard errors are the sample
    standard deviation of the marginal contributions over sqrt(n_permutations).
    """
    if n_permutations < 10:
        raise ValueError("n_permutations must be >= 10")
    d = vf.dim
    contrib = []
    for start in range(0, n_permutations, batch):
        perms = np.stack([np.random.default_rng([int(seed), int(sample_id), t]).permutation(d)
                          for t in range(start, min(start + batch, n_permutations))])
        masks = np.zeros((len(perms), d + 1, d), dtype=bool)
        for i in range(d):
            masks[np.arange(len(perms)), i + 1 :, perms[:, i]] = True
        v = vf.values(x, masks.reshape(-1, d)).reshape(len(perms), d + 1, -1)
        steps = v[:, 1:] - v[:, :-1]
        out = np.empty_like(steps)
        out[np.arange(len(perms))[:, None], perms] = steps
        contrib.append(out)
    c = np.concatenate(contrib)
    phi = c.mean(axis=0)
    stderr = c.std(axis=0, ddof=1) / math.sqrt(len(c))
    base = vf.values(x, np.zeros((1, d), dtype=bool))[0]
    output = vf.values(x, np.ones((1, d), dtype=bool))[0]
    return ShapleyAttribution(sample_id, _narrow(vf, phi), _narrow(vf, base), _narrow(vf, output),
                              _narrow(vf, stderr), "permutation")


def explain(vf: ValueFunction, x, method: str = "auto", n_permutations: int = DEFAULT_PERMUTATIONS,
            seed: int = 0, sample_id: int = 0) -> ShapleyAttribution:
    if method == "auto":
        method = "exact" if vf.dim <= min(EXACT_LIMIT, 8) else "permutation"
    if method == "exact":
        return shapley_exact(vf, x, sample_id)
    if method == "permutation":
        return shapley_permutation(vf, x, n_permutations, seed, sample_id)
    raise ValueError(f"unknown Shapley method {method!r}")


@dataclass(frozen=True)
class ImportanceReport:
    columns: tuple[str, ...]
    classes: tuple
    per_class: np.ndarray           # (n_classes, d) mean |phi|
    estimator: dict = field(default_factory=dict)
    backmapped: dict[str, float] | None = None

    @property
    def pooled(self) -> np.ndarray:
        return self.per_class.mean(axis=0)

    @property
    def total(self) -> float:
        return float(self.pooled.sum())

    def ranking(self) -> list[str]:
        """Columns by pooled importance, descending; ties keep column order."""
        order = np.argsort(-self.pooled, kind="stable")
        return [self.columns[i] for i in order]

    def with_backmap(self, backmapped: Mapping[str, float]) -> "ImportanceReport":
        return ImportanceReport(self.columns, self.classes, self.per_class, dict(self.estimator), dict(backmapped))

    def to_dict(self) -> dict:
        pooled = self.pooled
        order = np.argsort(-pooled, kind="stable")
        out = {
            "per_class": {
                str(c): [{"column": self.columns[i], "mean_abs_phi": float(self.per_class[k, i])}
                         for i in np.argsort(-self.per_class[k], kind="stable")]
                for k, c in enumerate(self.classes)
            },
            "pooled": [{"column": self.columns[i], "mean_abs_phi": float(pooled[i])} for i in order],
            "backmapped": [],
            "estimator": dict(self.estimator),
        }
        if self.backmapped is not None:
            items = sorted(self.backmapped.items(), key=lambda kv: -kv[1])
            out["backmapped"] = [{"feature": k, "importance": float(v)} for k, v in items]
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def importance_from_attributions(attributions: Sequence[ShapleyAttribution], columns, classes,
                                 estimator: dict | None = None) -> ImportanceReport:
    if not attributions:
        raise ValueError("need at least one attribution")
    stack = np.stack([np.abs(a.phi) for a in attributions])      # (n, d, C)
    if stack.ndim == 2:
        stack = stack[:, :, None]
    return ImportanceReport(tuple(columns), tuple(classes), stack.mean(axis=0).T, dict(estimator or {}))


def global_importance(model, background, samples, method: str = "auto",
                      n_permutations: int = DEFAULT_PERMUTATIONS, seed: int = 0) -> ImportanceReport:
    """Mean |phi| per class and column over ``samples``; pooled = mean over classes."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if len(samples) == 0:
        raise ValueError("need at least one sample to explain")
    vf = ValueFunction(model, background)
    atts = [explain(vf, s, method, n_permutations, seed, i) for i, s in enumerate(samples)]
    meta = {"method": atts[0].method, "permutations": int(n_permutations) if atts[0].method == "permutation" else 0,
            "seed": int(seed), "background_size": int(len(vf.background)), "samples": int(len(samples))}
    return importance_from_attributions(atts, model.columns, model.classes, meta)


def backmap(importance: Mapping[str, float] | ImportanceReport, provenance: Mapping, features: Sequence[str]
            ) -> dict[str, float]:
    """Distribute each PC column's importance over its combination by normalized |loading|.

    Features outside every retained combination receive 0.  A zero loading
    vector is split evenly so the total mass is always conserved.
    """
    if isinstance(importance, ImportanceReport):
        importance = dict(zip(importance.columns, importance.pooled.tolist()))
    out = {f: 0.0 for f in features}
    for column, value in importance.items():
        if column not in provenance:
            raise MissingProvenance(f"no provenance for column {column!r}")
        prov = provenance[column]
        weights = np.abs(np.asarray(prov.loadings, dtype=np.float64))
        total = weights.sum()
        weights = weights / total if total > 0 else np.full(len(weights), 1.0 / len(weights))
        for name, w in zip(prov.names, weights):
            if name not in out:
                raise MissingProvenance(f"provenance names unknown feature {name!r}")
            out[name] += float(value) * float(w)
    return out
