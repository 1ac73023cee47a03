"""Decision trees and forests grown breadth-first with vectorized split search.

Every tree draws from its own generator seeded by ``(seed, tree_index)`` and
consumes random numbers level by level in node-creation order, so the grown
structure does not depend on the order of training rows.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Tree:
    feature: np.ndarray     # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray      # per-node class weights

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def used_features(self) -> set[int]:
        return {int(f) for f in self.feature if f >= 0}

    def to_dict(self, node: int = 0) -> dict:
        if self.feature[node] < 0:
            return {"leaf": [float(c) for c in self.counts[node]]}
        return {
            "feature": int(self.feature[node]),
            "threshold": float(self.threshold[node]),
            "left": self.to_dict(int(self.left[node])),
            "right": self.to_dict(int(self.right[node])),
        }

    @classmethod
    def from_dict(cls, obj: dict, n_classes: int) -> "Tree":
        feature, threshold, left, right, counts = [], [], [], [], []

        def visit(rec):
            nid = len(feature)
            feature.append(-1)
            threshold.append(0.0)
            left.append(nid)
            right.append(nid)
            counts.append(None)
            if "leaf" in rec:
                counts[nid] = np.asarray(rec["leaf"], dtype=np.float64)
                return nid, counts[nid]
            feature[nid] = int(rec["feature"])
            threshold[nid] = float(rec["threshold"])
            lid, lc = visit(rec["left"])
            rid, rc = visit(rec["right"])
            left[nid], right[nid] = lid, rid
            counts[nid] = lc + rc
            return nid, counts[nid]

        visit(obj)
        return cls(np.array(feature, dtype=np.int64), np.array(threshold), np.array(left, dtype=np.int64),
                   np.array(right, dtype=np.int64), np.vstack(counts).reshape(-1, n_classes))


def resolve_max_features(value, n_features: int) -> int:
    if value in (None, "all"):
        return n_features
    if value == "sqrt":
        return max(1, math.ceil(math.sqrt(n_features)))
    if value == "log2":
        return max(1, math.ceil(math.log2(n_features))) if n_features > 1 else 1
    if isinstance(value, float):
        return max(1, min(n_features, math.ceil(value * n_features)))
    return max(1, min(n_features, int(value)))


def _segment_starts(sorted_keys: np.ndarray, n_segments: int) -> np.ndarray:
    return np.searchsorted(sorted_keys, np.arange(n_segments))


def _candidate_features(keys: np.ndarray, nonconst: np.ndarray, k: int):
    """First ``k`` non-constant features in the random order given by ``keys``, per node."""
    order = np.argsort(keys, axis=1)
    ok = np.take_along_axis(nonconst, order, axis=1)
    mask = ok & (np.cumsum(ok, axis=1) <= k)
    front = np.argsort(~mask, axis=1, kind="stable")[:, :k]
    cand = np.take_along_axis(order, front, axis=1)
    valid = np.take_along_axis(mask, front, axis=1)
    return np.where(valid, cand, -1)


def _gini_gain(left_w, node_w):
    """Sum of squared class weights over size, for both children (higher is better)."""
    right_w = node_w - left_w
    nl = left_w.sum(axis=-1)
    nr = right_w.sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        score = (left_w ** 2).sum(axis=-1) / nl + (right_w ** 2).sum(axis=-1) / nr
    return score


def _random_splits(u, xs, y, w, pos, node_w, cand, mins, maxs, n_classes, min_leaf):
    f, k = cand.shape
    safe = np.where(cand >= 0, cand, 0)
    lo = np.take_along_axis(mins, safe, axis=1)
    hi = np.take_along_axis(maxs, safe, axis=1)
    thr = lo + u * (hi - lo)
    thr = np.where(thr >= hi, lo, thr)
    vals = xs[np.arange(len(pos))[:, None], safe[pos]]
    go_left = vals <= thr[pos]
    slot = pos[:, None] * k + np.arange(k)[None, :]
    key = slot * n_classes + y[:, None]
    left_w = np.bincount(key[go_left], weights=np.broadcast_to(w[:, None], go_left.shape)[go_left],
                         minlength=f * k * n_classes).reshape(f, k, n_classes)
    n_left = np.bincount(slot[go_left], minlength=f * k).reshape(f, k)
    n_node = np.bincount(pos, minlength=f)[:, None]
    score = _gini_gain(left_w, node_w[:, None, :])
    ok = (cand >= 0) & (n_left >= min_leaf) & (n_node - n_left >= min_leaf)
    score = np.where(ok, score, -np.inf)
    best = np.argmax(score, axis=1)
    rows = np.arange(f)
    return cand[rows, best], thr[rows, best], score[rows, best] > -np.inf


def _best_splits(xs, y, w, pos, node_w, cand, n_classes, min_leaf):
    f, k = cand.shape
    n = len(pos)
    best_feat = np.full(f, -1)
    best_thr = np.zeros(f)
    best_score = np.full(f, -np.inf)
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y] = w
    idx = np.arange(n)
    for j in range(k):
        feat = cand[pos, j]
        v = xs[idx, np.where(feat >= 0, feat, 0)]
        order = np.lexsort((v, pos))
        vs, ps = v[order], pos[order]
        cum = np.cumsum(onehot[order], axis=0)
        starts = _segment_starts(ps, f)
        base = np.vstack([np.zeros((1, n_classes)), cum])[starts]
        left_w = cum - base[ps]
        n_left = idx - starts[ps] + 1
        n_node = np.bincount(ps, minlength=f)
        nxt_same = np.append(ps[1:] == ps[:-1], False)
        nxt_v = np.append(vs[1:], np.inf)
        ok = nxt_same & (nxt_v > vs) & (n_left >= min_leaf) & (n_node[ps] - n_left >= min_leaf)
        ok &= cand[ps, j] >= 0
        score = np.where(ok, _gini_gain(left_w, node_w[ps]), -np.inf)
        pick = np.lexsort((idx, -score, ps))
        first = pick[_segment_starts(ps[pick], f)[np.bincount(ps, minlength=f) > 0]]
        nodes = ps[first]
        better = score[first] > best_score[nodes]
        nodes, first = nodes[better], first[better]
        mid = 0.5 * (vs[first] + nxt_v[first])
        mid = np.where(mid >= nxt_v[first], vs[first], mid)
        best_score[nodes] = score[first]
        best_feat[nodes] = cand[nodes, j]
        best_thr[nodes] = mid
    return best_feat, best_thr, best_score > -np.inf


def grow_trees(x, y, n_classes, rngs, *, max_features=None, min_samples_leaf=1, max_depth=None,
               random_splits=True, sample_weights=None) -> list[Tree]:
    """Grow one classification tree per generator, breadth-first and in lockstep.

    All trees share one frontier so each level is a single vectorized pass.
    Every tree consumes its own generator in node-creation order (candidate
    feature keys, then cut points, per level), so a tree is identical whether
    grown alone or alongside others.  ``random_splits`` draws one uniform cut
    per candidate feature (extremely randomized trees); otherwise the best Gini
    cut is searched.
    """
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    k = resolve_max_features(max_features, d)
    n_trees = len(rngs)
    if sample_weights is None:
        sample_weights = [None] * n_trees
    rows, weights, owner = [], [], []
    for t, sw in enumerate(sample_weights):
        r = np.arange(n) if sw is None else np.flatnonzero(sw > 0)
        rows.append(r)
        weights.append(np.ones(len(r)) if sw is None else np.asarray(sw, dtype=np.float64)[r])
        owner.append(np.full(len(r), t))
    rows = np.concatenate(rows)
    w = np.concatenate(weights)
    ys = y[rows]

    nodes = [dict(feature=[], threshold=[], left=[], right=[], counts=[]) for _ in range(n_trees)]

    def add(t, c):
        rec = nodes[t]
        nid = len(rec["feature"])
        rec["feature"].append(-1)
        rec["threshold"].append(0.0)
        rec["left"].append(nid)
        rec["right"].append(nid)
        rec["counts"].append(c)
        return nid

    frontier = [(t, add(t, np.bincount(ys[o == t], weights=w[o == t], minlength=n_classes)))
                for t, o in enumerate([np.concatenate(owner)] * n_trees)]
    pos = np.concatenate(owner)
    alive = np.arange(len(rows))
    depth = 0
    while frontier and (max_depth is None or depth < max_depth):
        node_w = np.vstack([nodes[t]["counts"][i] for t, i in frontier])
        n_node = np.bincount(pos, minlength=len(frontier))
        splittable = (n_node >= 2 * min_samples_leaf) & ((node_w > 0).sum(axis=1) > 1)
        if not splittable.any():
            break
        remap = np.cumsum(splittable) - 1
        keep = splittable[pos]
        alive, pos = alive[keep], remap[pos[keep]]
        frontier = [fr for fr, sp in zip(frontier, splittable) if sp]
        node_w = node_w[splittable]
        f = len(frontier)

        order = np.argsort(pos, kind="stable")
        alive, pos = alive[order], pos[order]
        xs = x[rows[alive]]
        starts = _segment_starts(pos, f)
        mins = np.minimum.reduceat(xs, starts, axis=0)
        maxs = np.maximum.reduceat(xs, starts, axis=0)

        tree_of = np.array([t for t, _ in frontier])
        bounds = np.flatnonzero(np.diff(tree_of)) + 1
        segments = np.split(np.arange(f), bounds)
        keys = np.empty((f, d))
        u = np.empty((f, k))
        for seg in segments:
            rng = rngs[tree_of[seg[0]]]
            keys[seg] = rng.random((len(seg), d))
            if random_splits:
                u[seg] = rng.random((len(seg), k))
        cand = _candidate_features(keys, maxs > mins, k)
        if random_splits:
            feat, thr, ok = _random_splits(u, xs, ys[alive], w[alive], pos, node_w, cand, mins, maxs,
                                           n_classes, min_samples_leaf)
        else:
            feat, thr, ok = _best_splits(xs, ys[alive], w[alive], pos, node_w, cand, n_classes,
                                         min_samples_leaf)
        if not ok.any():
            break
        go_left = xs[np.arange(len(pos)), np.where(feat[pos] >= 0, feat[pos], 0)] <= thr[pos]
        left_w = np.bincount(pos[go_left] * n_classes + ys[alive[go_left]], weights=w[alive[go_left]],
                             minlength=f * n_classes).reshape(f, n_classes)
        child_pos = np.full(f, -1)
        new_frontier = []
        for i in np.flatnonzero(ok):
            t, nid = frontier[i]
            rec = nodes[t]
            rec["feature"][nid] = int(feat[i])
            rec["threshold"][nid] = float(thr[i])
            rec["left"][nid] = add(t, left_w[i])
            rec["right"][nid] = add(t, rec["counts"][nid] - left_w[i])
            child_pos[i] = len(new_frontier)
            new_frontier += [(t, rec["left"][nid]), (t, rec["right"][nid])]
        keep = ok[pos]
        alive, pos, go_left = alive[keep], pos[keep], go_left[keep]
        pos = child_pos[pos] + np.where(go_left, 0, 1)
        frontier = new_frontier
        depth += 1

    return [Tree(np.array(r["feature"], dtype=np.int64), np.array(r["threshold"]),
                 np.array(r["left"], dtype=np.int64), np.array(r["right"], dtype=np.int64),
                 np.vstack(r["counts"])) for r in nodes]


def grow_tree(x, y, n_classes, rng, **kwargs) -> Tree:
    weight = kwargs.pop("sample_weight", None)
    return grow_trees(x, y, n_classes, [rng], sample_weights=[weight], **kwargs)[0]


class Forest:
    """Tree ensemble whose probability is the mean of per-tree leaf distributions."""

    def __init__(self, trees: list[Tree], n_classes: int):
        self.trees = list(trees)
        self.n_classes = n_classes
        offsets = np.cumsum([0] + [t.n_nodes for t in self.trees])
        self._roots = offsets[:-1]
        self._feature = np.concatenate([np.where(t.feature >= 0, t.feature, 0) for t in self.trees])
        self._threshold = np.concatenate([t.threshold for t in self.trees])
        self._left = np.concatenate([t.left + o for t, o in zip(self.trees, offsets)])
        self._right = np.concatenate([t.right + o for t, o in zip(self.trees, offsets)])
        counts = np.concatenate([t.counts for t in self.trees])
        self._value = counts / counts.sum(axis=1, keepdims=True)
        self._depth = max(t.depth for t in self.trees)

    def used_features(self) -> set[int]:
        out: set[int] = set()
        for t in self.trees:
            out |= t.used_features()
        return out

    def predict_proba(self, x, chunk: int = 4096) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        n = len(x)
        out = np.empty((n, self.n_classes))
        n_trees = len(self.trees)
        for s in range(0, n, chunk):
            xb = x[s : s + chunk]
            rows = np.repeat(np.arange(len(xb)), n_trees)
            node = np.tile(self._roots, len(xb))
            for _ in range(self._depth):
                go_left = xb[rows, self._feature[node]] <= self._threshold[node]
                node = np.where(go_left, self._left[node], self._right[node])
            out[s : s + chunk] = self._value[node].reshape(len(xb), n_trees, self.n_classes).mean(axis=1)
        return out

    def to_dict(self) -> dict:
        return {"trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, obj: dict, n_classes: int) -> "Forest":
        return cls([Tree.from_dict(t, n_classes) for t in obj["trees"]], n_classes)


def fit_forest(x, y, n_classes, *, n_trees, seed, max_features, min_samples_leaf=1, max_depth=None,
               random_splits=True, bootstrap=False, budget: int = 4_000_000) -> Forest:
    """Grow ``n_trees`` trees; tree ``t`` uses a generator seeded by ``(seed, t)``."""
    n, d = np.shape(x)
    group = max(1, budget // max(1, n * d))
    trees = []
    for g in range(0, n_trees, group):
        rngs = [np.random.default_rng([int(seed), t]) for t in range(g, min(g + group, n_trees))]
        weights = None
        if bootstrap:
            # draws are by row position; bagging is inherently tied to row order
            weights = [np.bincount(r.integers(0, n, n), minlength=n).astype(np.float64) for r in rngs]
        trees += grow_trees(x, y, n_classes, rngs, max_features=max_features,
                            min_samples_leaf=min_samples_leaf, max_depth=max_depth,
                            random_splits=random_splits, sample_weights=weights)
    return Forest(trees, n_classes)
