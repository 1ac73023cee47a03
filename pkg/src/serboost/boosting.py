"""Variance-ratio combination selection and per-combination PCA projection."""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    DegenerateClasses,
    DegenerateInput,
    EmptySelection,
    InfeasibleRequestWarning,
    MissingProvenance,
    NoImprovingCombination,
    ShapeMismatch,
)

DEFAULT_P = 10
DEFAULT_M = 500
DEFAULT_EPSILON = 0.0
EV_THRESHOLD = 95.0
JACOBI_TOL = 1e-12


def vrc(x, y) -> float:
    """Between-class over within-class scatter, each divided by its degrees of freedom.

    Returns ``inf`` when the classes have no within-class scatter but distinct
    centroids, and 0 when all centroids coincide.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    classes, inv = np.unique(np.asarray(y), return_inverse=True)
    n, e = x.shape[0], len(classes)
    if e < 2 or n <= e:
        raise DegenerateClasses(f"need at least 2 classes and more samples than classes (N={n}, E={e})")
    counts = np.bincount(inv, minlength=e).astype(np.float64)
    onehot = np.zeros((n, e))
    onehot[np.arange(n), inv] = 1.0
    centroids = (onehot.T @ x) / counts[:, None]
    overall = x.mean(axis=0)
    between = float(np.sum(counts * np.sum((centroids - overall) ** 2, axis=1)))
    within = float(np.sum((x - centroids[inv]) ** 2))
    if between == 0.0:
        return 0.0
    if within == 0.0:
        return math.inf
    return (between / (e - 1)) / (within / (n - e))


# --------------------------------------------------------------------------
# Combinations
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureCombination:
    indices: tuple[int, ...]
    names: tuple[str, ...] = ()

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if list(idx) != sorted(set(idx)):
            raise ValueError(f"combination indices must be sorted and unique: {idx}")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "names", tuple(self.names))

    def __len__(self):
        return len(self.indices)

    def named(self, names: Sequence[str]) -> "FeatureCombination":
        return FeatureCombination(self.indices, tuple(names[i] for i in self.indices))


def sample_combinations(n_features: int, p: int, m: int, seed: int, guided_weights=None,
                        exploration: float = 0.1) -> list[FeatureCombination]:
    """``m`` distinct sorted ``p``-subsets of ``range(n_features)``.

    Uniform seeded sampling by default. With ``guided_weights`` each draw is a
    weighted sample without replacement from a mixture of the normalized
    weights and a uniform share ``exploration``. When ``m`` reaches the number
    of possible subsets, every subset is returned in lexicographic order.
    """
    if not 1 <= p <= n_features:
        raise ValueError(f"p={p} must lie in [1, {n_features}]")
    if m < 1:
        raise ValueError("m must be at least 1")
    total = math.comb(n_features, p)
    if m >= total:
        if m > total:
            warnings.warn(
                f"requested {m} combinations but only {total} exist; enumerating all",
                InfeasibleRequestWarning,
                stacklevel=2,
            )
        return [FeatureCombination(c) for c in itertools.combinations(range(n_features), p)]

    rng = np.random.default_rng(seed)
    probs = None
    if guided_weights is not None:
        w = np.clip(np.asarray(guided_weights, dtype=np.float64), 0.0, None)
        if w.shape != (n_features,):
            raise ValueError("guided_weights must have one entry per feature")
        w = w / w.sum() if w.sum() > 0 else np.full(n_features, 1.0 / n_features)
        probs = (1.0 - exploration) * w + exploration / n_features
        probs /= probs.sum()

    seen: set[tuple[int, ...]] = set()
    out: list[FeatureCombination] = []
    attempts = 0
    while len(out) < m and attempts < 200 * m:
        attempts += 1
        draw = rng.choice(n_features, size=p, replace=False, p=probs)
        key = tuple(sorted(int(i) for i in draw))
        if key not in seen:
            seen.add(key)
            out.append(FeatureCombination(key))
    if len(out) < m:
        # dense request: finish from the explicit complement
        rest = [c for c in itertools.combinations(range(n_features), p) if c not in seen]
        for k in rng.choice(len(rest), size=m - len(out), replace=False):
            out.append(FeatureCombination(rest[int(k)]))
    return out


@dataclass(frozen=True)
class CombinationReport:
    combination: FeatureCombination
    vrc_combo: float
    vrc_all: float
    sigma: float
    retained: bool

    def as_row(self) -> dict:
        return {
            "indices": " ".join(map(str, self.combination.indices)),
            "names": " ".join(self.combination.names),
            "vrc_combo": self.vrc_combo,
            "vrc_all": self.vrc_all,
            "sigma": self.sigma,
            "retained": self.retained,
        }


def selection_threshold(sigmas, epsilon: float) -> float:
    """Mean of the non-negative improvements plus ``epsilon``; inf when there are none."""
    sig = np.asarray(sigmas, dtype=np.float64)
    positive = sig[sig >= 0]
    if positive.size == 0:
        return math.inf
    return float(positive.sum() / positive.size + epsilon)


def score_and_select(x, y, combos: Sequence[FeatureCombination], epsilon: float = DEFAULT_EPSILON,
                     names: Sequence[str] | None = None):
    """Score combinations by VRC improvement over the full matrix and threshold them.

    Returns ``(reports, alpha)`` with reports ranked by improvement, largest
    first (ties keep input order). Raises ``NoImprovingCombination`` when no
    combination reaches the full-set VRC; the scored reports ride along on
    the exception.
    """
    x = np.asarray(x, dtype=np.float64)
    vrc_all = vrc(x, y)
    if not math.isfinite(vrc_all):
        raise DegenerateClasses("full feature set has zero within-class scatter; VRC is unbounded")
    if names is not None:
        combos = [c.named(names) for c in combos]
    scores = np.array([vrc(x[:, list(c.indices)], y) for c in combos])
    sigmas = scores - vrc_all
    alpha = selection_threshold(sigmas, epsilon)
    order = sorted(range(len(combos)), key=lambda i: -sigmas[i])
    reports = [
        CombinationReport(combos[i], float(scores[i]), vrc_all, float(sigmas[i]), bool(sigmas[i] >= alpha))
        for i in order
    ]
    if not np.any(sigmas >= 0):
        raise NoImprovingCombination("no combination improves on the full-set VRC", reports)
    return reports, alpha


def retained(reports: Sequence[CombinationReport], limit: int | None = None) -> list[CombinationReport]:
    keep = [r for r in reports if r.retained]
    return keep[:limit] if limit else keep


# --------------------------------------------------------------------------
# PCA
# --------------------------------------------------------------------------

def jacobi_eigh(a, tol: float = JACOBI_TOL, max_sweeps: int = 100):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps until the off-diagonal Frobenius norm drops below
    ``tol * max(1, ||a||_F)``. Returns unsorted ``(eigenvalues, eigenvectors)``
    with eigenvectors in columns.
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("matrix must be square")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    limit = tol * max(1.0, float(np.linalg.norm(a)))
    offdiag = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        if math.sqrt(float(np.sum(a[offdiag] ** 2))) < limit:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, tau) / (abs(tau) + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                col_p, col_q = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p, row_q = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    return np.diag(a).copy(), v


@dataclass(frozen=True)
class PrincipalBasis:
    eigenvectors: np.ndarray   # p x p, components in columns
    eigenvalues: np.ndarray    # descending, clamped at 0
    explained: np.ndarray      # percent per component, sums to 100
    rank: int
    means: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.means)

    def loadings(self, component: int) -> np.ndarray:
        """Loading vector of the 0-based ``component``."""
        return self.eigenvectors[:, component]


def _orient(vectors: np.ndarray) -> np.ndarray:
    lead = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[lead, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def retained_rank(explained, threshold: float = EV_THRESHOLD, floor: int = 2) -> int:
    cum = np.cumsum(explained)
    r = int(np.argmax(cum >= threshold - 1e-9)) + 1 if np.any(cum >= threshold - 1e-9) else len(cum)
    return max(r, min(floor, len(cum)))


def pca_fit(x_sub, ev_threshold: float = EV_THRESHOLD, min_rank: int = 2) -> PrincipalBasis:
    x = np.asarray(x_sub, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DegenerateInput("PCA needs at least two rows")
    means = x.mean(axis=0)
    centered = x - means
    cov = centered.T @ centered / (x.shape[0] - 1)
    lam, vec = jacobi_eigh(cov)
    order = np.argsort(-lam, kind="stable")
    lam = np.clip(lam[order], 0.0, None)
    vec = _orient(vec[:, order])
    total = lam.sum()
    if total > 0:
        explained = lam / total * 100.0
    else:
        explained = np.zeros(len(lam))
        explained[0] = 100.0
    rank = retained_rank(explained, ev_threshold, min_rank)
    return PrincipalBasis(vec, lam, explained, rank, means)


def project(basis: PrincipalBasis, x_sub, rank: int | None = None) -> np.ndarray:
    x = np.asarray(x_sub, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != basis.dim:
        raise ShapeMismatch(f"expected {basis.dim} columns, got shape {x.shape}")
    r = basis.rank if rank is None else rank
    return (x - basis.means) @ basis.eigenvectors[:, :r]


# --------------------------------------------------------------------------
# Boosted dataset
# --------------------------------------------------------------------------

def column_name(combo_rank: int, component: int) -> str:
    """``PC_{i}{j}`` with 1-based indices; an underscore separates them past 9."""
    if combo_rank < 10 and component < 10:
        return f"PC_{combo_rank}{component}"
    return f"PC_{combo_rank}_{component}"


@dataclass(frozen=True)
class Provenance:
    column: str
    combo_rank: int            # 1-based rank among retained combinations
    component: int             # 1-based component index
    indices: tuple[int, ...]
    names: tuple[str, ...]
    loadings: np.ndarray
    eigenvalue: float
    explained: float

    def to_dict(self) -> dict:
        return {
            "combination": {"rank": self.combo_rank, "indices": list(self.indices), "names": list(self.names)},
            "component": self.component,
            "eigenvector": [float(v) for v in self.loadings],
            "eigenvalue": float(self.eigenvalue),
            "explained_variance": float(self.explained),
        }

    @classmethod
    def from_dict(cls, column: str, obj: dict) -> "Provenance":
        combo = obj["combination"]
        return cls(column, int(combo["rank"]), int(obj["component"]), tuple(combo["indices"]),
                   tuple(combo["names"]), np.asarray(obj["eigenvector"], dtype=np.float64),
                   float(obj["eigenvalue"]), float(obj["explained_variance"]))


@dataclass(frozen=True)
class Booster:
    """Fitted combinations and bases; maps raw active-feature rows to PC columns."""

    combinations: tuple[FeatureCombination, ...]
    bases: tuple[PrincipalBasis, ...]

    @property
    def columns(self) -> tuple[str, ...]:
        return tuple(
            column_name(i + 1, j + 1) for i, b in enumerate(self.bases) for j in range(b.rank)
        )

    def transform(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        blocks = [project(b, x[:, list(c.indices)]) for c, b in zip(self.combinations, self.bases)]
        return np.hstack(blocks) if blocks else np.zeros((len(x), 0))

    def provenance(self) -> dict[str, Provenance]:
        out = {}
        for i, (combo, basis) in enumerate(zip(self.combinations, self.bases)):
            for j in range(basis.rank):
                name = column_name(i + 1, j + 1)
                out[name] = Provenance(name, i + 1, j + 1, combo.indices, combo.names,
                                       basis.loadings(j).copy(), float(basis.eigenvalues[j]),
                                       float(basis.explained[j]))
        return out


@dataclass(frozen=True)
class BoostedDataset:
    values: np.ndarray
    labels: tuple
    columns: tuple[str, ...]
    provenance: dict[str, Provenance]
    booster: Booster = field(repr=False)

    def provenance_json(self) -> str:
        return json.dumps({c: self.provenance[c].to_dict() for c in self.columns}, indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO(newline="")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(list(self.columns) + ["label"])
        for row, label in zip(self.values, self.labels):
            writer.writerow([format(float(v), ".17g") for v in row] + [label])
        return buf.getvalue()


def load_provenance(text: str) -> dict[str, Provenance]:
    obj = json.loads(text)
    return {col: Provenance.from_dict(col, entry) for col, entry in obj.items()}


def build_boosted(x, y, reports: Sequence[CombinationReport], bases: Sequence[PrincipalBasis] | None = None,
                  ev_threshold: float = EV_THRESHOLD) -> BoostedDataset:
    """Assemble PC columns for the retained combinations, in report order.

    ``x`` must be the training rows; bases are fitted on them when not given.
    """
    keep = [r for r in reports if r.retained]
    if not keep:
        raise EmptySelection("no retained combination to build a boosted dataset from")
    x = np.asarray(x, dtype=np.float64)
    if bases is None:
        bases = [pca_fit(x[:, list(r.combination.indices)], ev_threshold) for r in keep]
    if len(bases) != len(keep):
        raise ShapeMismatch("one basis per retained combination is required")
    booster = Booster(tuple(r.combination for r in keep), tuple(bases))
    prov = booster.provenance()
    if set(prov) != set(booster.columns):
        raise MissingProvenance("provenance map incomplete")
    return BoostedDataset(booster.transform(x), tuple(y), booster.columns, prov, booster)
