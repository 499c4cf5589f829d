"""From-scratch probabilistic random forest.

CART classification trees with exact midpoint thresholds and Gini
impurity, bagged over bootstrap samples, each node searching a uniformly
sampled feature subset. Leaves store the positive fraction of their
training samples; the forest prediction is the mean leaf value across
trees. Everything is deterministic given (X, y, seed): per-tree seeds
derive from the config seed by a counter scheme and drive a splitmix64
stream inside the compiled kernels, so results do not depend on thread
count or platform RNG state.

Trees live in flattened arrays (feature, threshold, left, right, value,
count) concatenated across the forest with per-tree root offsets; this
is what the compiled predict kernel walks and what gets serialized.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit, prange

from mobscreen import seeds
from mobscreen._serialize import read_container, write_container

_GOLD = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


@dataclass
class ForestConfig:
    n_trees: int = 100
    max_depth: int = 30
    min_leaf: int = 5
    features_per_split: int = 6  # ceil(sqrt(28)) for the canonical width
    seed: int = 0

    def validate(self, n_features: int) -> None:
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        if not 1 <= self.features_per_split <= n_features:
            raise ValueError(
                f"features_per_split={self.features_per_split} must be in [1, {n_features}]"
            )

    def to_dict(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "max_depth": self.max_depth,
            "min_leaf": self.min_leaf,
            "features_per_split": self.features_per_split,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForestConfig":
        return cls(**d)


@dataclass
class Forest:
    """Fitted ensemble in flattened-array form."""

    config: ForestConfig
    feature_names: tuple[str, ...]
    node_feature: np.ndarray  # int32, -1 marks a leaf
    node_threshold: np.ndarray  # float64
    node_left: np.ndarray  # int32, global node index
    node_right: np.ndarray  # int32
    node_value: np.ndarray  # float64, positive fraction at the node
    node_count: np.ndarray  # int32, samples at the node
    tree_offsets: np.ndarray  # int64, length n_trees + 1

    @property
    def n_trees(self) -> int:
        return len(self.tree_offsets) - 1

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Mean leaf positive fraction across trees, per row of X."""
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(
                f"feature width {X.shape[-1] if X.ndim else 0} does not match "
                f"training width {self.n_features}"
            )
        return _predict_kernel(
            X,
            self.node_feature,
            self.node_threshold,
            self.node_left,
            self.node_right,
            self.node_value,
            self.tree_offsets,
        )


def fit_forest(
    X: np.ndarray,
    y: np.ndarray,
    cfg: ForestConfig,
    feature_names: tuple[str, ...] | None = None,
) -> Forest:
    """Fit a bagged CART forest on binary labels.

    Each tree trains on n draws with replacement from the given rows
    (row order is part of the determinism contract), splitting by the
    best Gini gain over ``features_per_split`` sampled candidate
    features; candidate thresholds are midpoints between consecutive
    distinct sorted values, ties broken toward the lowest feature index
    and threshold. Growth stops at max_depth, min_leaf, or a pure node.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2:
        raise ValueError("X must be a 2-D matrix")
    n, d = X.shape
    if y.shape != (n,):
        raise ValueError("y length does not match X")
    bad = ~np.isfinite(X)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise ValueError(f"non-finite feature value at row {i}, column {j}")
    y01 = np.ascontiguousarray((y != 0).astype(np.int8))
    if y01.min() == y01.max():
        raise ValueError("single-class input: both classes must be present")
    if n < 2 * cfg.min_leaf:
        raise ValueError(f"need at least {2 * cfg.min_leaf} rows, got {n}")
    cfg.validate(d)

    if feature_names is None:
        feature_names = tuple(f"f{j}" for j in range(d))
    elif len(feature_names) != d:
        raise ValueError("feature_names length does not match X width")

    tree_seeds = np.array(
        [seeds.derive(cfg.seed, "tree", t) for t in range(cfg.n_trees)],
        dtype=np.uint64,
    )
    feat, thr, left, right, value, count, offsets = _fit_kernel(
        X, y01, tree_seeds, cfg.max_depth, cfg.min_leaf, cfg.features_per_split
    )
    return Forest(
        config=cfg,
        feature_names=tuple(feature_names),
        node_feature=feat,
        node_threshold=thr,
        node_left=left,
        node_right=right,
        node_value=value,
        node_count=count,
        tree_offsets=offsets,
    )


def predict_proba(forest: Forest, x: np.ndarray) -> float | np.ndarray:
    """Positive-class probability for one feature vector or a matrix."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return float(forest.predict(x[None, :])[0])
    return forest.predict(x)


# ---------------------------------------------------------------------------
# Compiled kernels
# ---------------------------------------------------------------------------


@njit(cache=True, inline="always")
def _next_u64(state):
    # splitmix64: wrapping uint64 arithmetic, one output per step
    state = state + _GOLD
    z = state
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    z = z ^ (z >> np.uint64(31))
    return state, z


@njit(cache=True)
def _fit_kernel(X, y, tree_seeds, max_depth, min_leaf, n_feat_split):
    n, d = X.shape
    n_trees = tree_seeds.shape[0]
    max_nodes_tree = 2 * (n // min_leaf) + 3

    cap = n_trees * max_nodes_tree
    feat = np.full(cap, -1, np.int32)
    thr = np.zeros(cap, np.float64)
    left = np.full(cap, -1, np.int32)
    right = np.full(cap, -1, np.int32)
    value = np.zeros(cap, np.float64)
    count = np.zeros(cap, np.int32)
    offsets = np.zeros(n_trees + 1, np.int64)

    idx = np.empty(n, np.int64)
    buf_l = np.empty(n, np.int64)
    buf_r = np.empty(n, np.int64)
    vals = np.empty(n, np.float64)
    cand = np.empty(d, np.int64)
    stack_node = np.empty(max_nodes_tree, np.int64)
    stack_lo = np.empty(max_nodes_tree, np.int64)
    stack_hi = np.empty(max_nodes_tree, np.int64)
    stack_depth = np.empty(max_nodes_tree, np.int64)

    total = np.int64(0)
    for t in range(n_trees):
        state = tree_seeds[t]
        for i in range(n):
            state, z = _next_u64(state)
            idx[i] = np.int64(z % np.uint64(n))

        base = total
        n_nodes = np.int64(1)
        stack_node[0] = 0
        stack_lo[0] = 0
        stack_hi[0] = n
        stack_depth[0] = 0
        sp = 1
        while sp > 0:
            sp -= 1
            node = stack_node[sp]
            lo = stack_lo[sp]
            hi = stack_hi[sp]
            depth = stack_depth[sp]
            m = hi - lo

            pos = 0
            for i in range(lo, hi):
                pos += y[idx[i]]
            g = base + node
            count[g] = np.int32(m)
            value[g] = pos / m
            feat[g] = -1

            if depth >= max_depth or m < 2 * min_leaf or pos == 0 or pos == m:
                continue

            # candidate features: partial Fisher-Yates, then ascending order
            for j in range(d):
                cand[j] = j
            k = n_feat_split
            for j in range(k):
                state, z = _next_u64(state)
                r = j + np.int64(z % np.uint64(d - j))
                tmp = cand[j]
                cand[j] = cand[r]
                cand[r] = tmp
            for a in range(1, k):
                key = cand[a]
                b = a - 1
                while b >= 0 and cand[b] > key:
                    cand[b + 1] = cand[b]
                    b -= 1
                cand[b + 1] = key

            q = pos / m
            parent_gini = 2.0 * q * (1.0 - q)
            best_gain = 0.0
            best_f = -1
            best_thr = 0.0
            for c in range(k):
                f = cand[c]
                for i in range(m):
                    vals[i] = X[idx[lo + i], f]
                order = np.argsort(vals[:m])
                pos_left = 0
                for i in range(m - 1):
                    oi = order[i]
                    pos_left += y[idx[lo + oi]]
                    nl = i + 1
                    nr = m - nl
                    if nl < min_leaf:
                        continue
                    if nr < min_leaf:
                        break
                    v_here = vals[oi]
                    v_next = vals[order[i + 1]]
                    if v_here == v_next:
                        continue
                    ql = pos_left / nl
                    qr = (pos - pos_left) / nr
                    child = (
                        nl * 2.0 * ql * (1.0 - ql) + nr * 2.0 * qr * (1.0 - qr)
                    ) / m
                    gain = parent_gini - child
                    if gain > best_gain:
                        best_gain = gain
                        best_f = f
                        best_thr = 0.5 * (v_here + v_next)

            if best_f < 0:
                continue

            cl = 0
            cr = 0
            for i in range(lo, hi):
                xi = idx[i]
                if X[xi, best_f] <= best_thr:
                    buf_l[cl] = xi
                    cl += 1
                else:
                    buf_r[cr] = xi
                    cr += 1
            for i in range(cl):
                idx[lo + i] = buf_l[i]
            for i in range(cr):
                idx[lo + cl + i] = buf_r[i]

            lnode = n_nodes
            rnode = n_nodes + 1
            n_nodes += 2
            feat[g] = np.int32(best_f)
            thr[g] = best_thr
            left[g] = np.int32(base + lnode)
            right[g] = np.int32(base + rnode)

            stack_node[sp] = lnode
            stack_lo[sp] = lo
            stack_hi[sp] = lo + cl
            stack_depth[sp] = depth + 1
            sp += 1
            stack_node[sp] = rnode
            stack_lo[sp] = lo + cl
            stack_hi[sp] = hi
            stack_depth[sp] = depth + 1
            sp += 1

        total += n_nodes
        offsets[t + 1] = total

    return (
        feat[:total].copy(),
        thr[:total].copy(),
        left[:total].copy(),
        right[:total].copy(),
        value[:total].copy(),
        count[:total].copy(),
        offsets,
    )


@njit(cache=True, parallel=True)
def _predict_kernel(X, feat, thr, left, right, value, offsets):
    nq = X.shape[0]
    n_trees = offsets.shape[0] - 1
    out = np.empty(nq, np.float64)
    for i in prange(nq):
        acc = 0.0
        for t in range(n_trees):
            node = offsets[t]
            while feat[node] >= 0:
                if X[i, feat[node]] <= thr[node]:
                    node = left[node]
                else:
                    node = right[node]
            acc += value[node]
        out[i] = acc / n_trees
    return out


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

_FOREST_KIND = "mobscreen-forest"
_FOREST_VERSION = 1


def forest_arrays(forest: Forest) -> dict[str, np.ndarray]:
    return {
        "node_feature": forest.node_feature,
        "node_threshold": forest.node_threshold,
        "node_left": forest.node_left,
        "node_right": forest.node_right,
        "node_value": forest.node_value,
        "node_count": forest.node_count,
        "tree_offsets": forest.tree_offsets,
    }


def forest_from_arrays(
    config: ForestConfig, feature_names: tuple[str, ...], arrays: dict[str, np.ndarray]
) -> Forest:
    return Forest(
        config=config,
        feature_names=feature_names,
        node_feature=arrays["node_feature"],
        node_threshold=arrays["node_threshold"],
        node_left=arrays["node_left"],
        node_right=arrays["node_right"],
        node_value=arrays["node_value"],
        node_count=arrays["node_count"],
        tree_offsets=arrays["tree_offsets"],
    )


def save_forest(forest: Forest, path: str | Path) -> None:
    meta = {
        "config": forest.config.to_dict(),
        "feature_names": list(forest.feature_names),
    }
    write_container(path, _FOREST_KIND, _FOREST_VERSION, meta, forest_arrays(forest))


def load_forest(path: str | Path) -> Forest:
    meta, arrays = read_container(path, _FOREST_KIND, _FOREST_VERSION)
    return forest_from_arrays(
        ForestConfig.from_dict(meta["config"]),
        tuple(meta["feature_names"]),
        arrays,
    )
