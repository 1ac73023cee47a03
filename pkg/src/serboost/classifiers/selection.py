"""Stratified cross-validation and grid search."""
from __future__ import annotations

import itertools
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np

from ..errors import SingleClass
from .core import ModelSpec, _as_matrix, encode_labels, train
from .metrics import MetricsReport, evaluate

METRIC_KEYS = ("accuracy", "macro_recall", "macro_precision", "macro_f1")


def stratified_folds(y, folds: int, seed: int) -> list[np.ndarray]:
    """Seeded stratified fold assignment; returns the sorted test indices of each fold.

    Members of each class are shuffled with a generator seeded by
    ``(seed, class index)`` and dealt round-robin, continuing the deal where the
    previous class stopped so fold sizes differ by at most one.
    """
    classes, codes = encode_labels(y)
    if len(classes) < 2:
        raise SingleClass("cross-validation needs at least two classes")
    smallest = int(np.bincount(codes).min())
    if folds > smallest:
        warnings.warn(f"{folds} folds requested but the smallest class has {smallest} members; "
                      f"using {max(smallest, 2)} folds", UserWarning, stacklevel=2)
        folds = max(smallest, 2)
    assign = np.empty(len(codes), dtype=np.int64)
    offset = 0
    for c in range(len(classes)):
        members = np.flatnonzero(codes == c)
        members = members[np.random.default_rng([int(seed), c]).permutation(len(members))]
        assign[members] = (offset + np.arange(len(members))) % folds
        offset += len(members)
    return [np.flatnonzero(assign == f) for f in range(folds)]


@dataclass(frozen=True)
class CVResult:
    spec: ModelSpec
    folds: tuple[MetricsReport, ...]

    def _values(self, key):
        return np.array([getattr(r, key) for r in self.folds])

    @property
    def mean(self) -> dict[str, float]:
        return {k: float(self._values(k).mean()) for k in METRIC_KEYS}

    @property
    def std(self) -> dict[str, float]:
        return {k: float(self._values(k).std(ddof=1)) if len(self.folds) > 1 else 0.0 for k in METRIC_KEYS}

    def to_dict(self) -> dict:
        return {"spec": self.spec.to_dict(), "mean": self.mean, "std": self.std,
                "folds": [r.to_dict() for r in self.folds]}


def cross_validate(spec: ModelSpec, x, y, folds: int = 10, seed: int = 0, threads: int = 1) -> CVResult:
    arr = _as_matrix(x)
    labels = np.asarray(y)
    test_sets = stratified_folds(labels, folds, seed)
    every = np.arange(len(labels))

    def run(test):
        train_idx = np.setdiff1d(every, test)
        model = train(spec, arr[train_idx], labels[train_idx])
        return evaluate(model, arr[test], labels[test])

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            reports = list(pool.map(run, test_sets))
    else:
        reports = [run(t) for t in test_sets]
    return CVResult(spec, tuple(reports))


@dataclass(frozen=True)
class GridResult:
    best: ModelSpec
    table: tuple[dict, ...]

    def to_dict(self) -> dict:
        return {"best": self.best.to_dict(), "table": list(self.table)}


def _complexity(spec: ModelSpec, params: Mapping[str, Any]) -> int:
    """Number of grid parameters set away from the kind's defaults."""
    defaults = ModelSpec(spec.kind).params
    return sum(1 for k, v in params.items() if defaults.get(k) != v)


def grid_search(template: ModelSpec, grid: Mapping[str, list], x, y, folds: int = 10, seed: int = 0,
                n_iter: int | None = None, threads: int = 1) -> GridResult:
    """Cartesian search scored by mean CV macro-F1.

    ``n_iter`` evaluates a seeded random subset of the grid instead of all of it.
    Ties go to the setting with fewer non-default values, then to the
    lexicographically smallest parameter listing.
    """
    keys = sorted(grid)
    if not keys or any(len(grid[k]) == 0 for k in keys):
        raise ValueError("grid must name at least one parameter with at least one value")
    combos = [dict(zip(keys, values)) for values in itertools.product(*(grid[k] for k in keys))]
    if n_iter is not None and n_iter < len(combos):
        pick = np.sort(np.random.default_rng(seed).choice(len(combos), size=n_iter, replace=False))
        combos = [combos[i] for i in pick]
    rows = []
    for params in combos:
        spec = template.with_params(**params)
        cv = cross_validate(spec, x, y, folds, seed, threads)
        rows.append({"params": params, "spec": spec.label(), "mean_macro_f1": cv.mean["macro_f1"],
                     "std_macro_f1": cv.std["macro_f1"], "mean_accuracy": cv.mean["accuracy"]})
    order = sorted(range(len(rows)), key=lambda i: (-rows[i]["mean_macro_f1"],
                                                    _complexity(template, combos[i]),
                                                    [(k, repr(v)) for k, v in combos[i].items()]))
    best = template.with_params(**combos[order[0]])
    return GridResult(best, tuple(rows))
