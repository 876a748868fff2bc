"""Random forest of Gini-split binary decision trees."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array, check_X_y

from ..seeding import make_rng

LEAF = -1


class DecisionTree:
    """Flat-array binary tree; samples with ``x[feature] <= threshold`` go left.

    ``value[node]`` holds the (weighted) class counts that reached the node.
    """

    def __init__(self, feature, threshold, left, right, value):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=np.float32)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=np.float64)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        active = np.flatnonzero(self.feature[node] != LEAF)
        while active.size:
            nd = node[active]
            go_left = X[active, self.feature[nd]] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = active[self.feature[node[active]] != LEAF]
        return node

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        counts = self.value[self.apply(X)]
        return counts / counts.sum(axis=1, keepdims=True)

    @property
    def max_depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] != LEAF:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())


def _best_split(Xn: np.ndarray, yn: np.ndarray, features: np.ndarray):
    """Lowest weighted Gini split of ``Xn`` over ``features``, or None."""
    cols = Xn[:, features]
    order = np.argsort(cols, axis=0, kind="stable")
    xs = np.take_along_axis(cols, order, axis=0)
    ys = yn[order]
    m = len(yn)
    pos_left = np.cumsum(ys, axis=0)[:-1]
    n_left = np.arange(1, m, dtype=np.float64)[:, None]
    n_right = m - n_left
    pos_right = ys.sum(axis=0) - pos_left
    # n * gini = 2 * pos * (n - pos) / n
    impurity = 2 * pos_left * (n_left - pos_left) / n_left + 2 * pos_right * (n_right - pos_right) / n_right
    valid = xs[:-1] < xs[1:]
    if not valid.any():
        return None
    impurity = np.where(valid, impurity, np.inf)
    flat = int(np.argmin(impurity))
    i, j = divmod(flat, len(features))
    lo, hi = xs[i, j], xs[i + 1, j]
    thr = np.float32((np.float64(lo) + np.float64(hi)) / 2)
    if not lo <= thr < hi:
        thr = np.float32(lo)
    return int(features[j]), thr


def build_tree(X: np.ndarray, y: np.ndarray, rng: np.random.Generator, max_features: int,
               min_samples_leaf: int = 1, max_depth: int | None = None) -> DecisionTree:
    n_features = X.shape[1]
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx):
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        pos = float(y[idx].sum())
        value.append((len(idx) - pos, pos))
        return len(feature) - 1

    stack = [(new_node(np.arange(len(y))), np.arange(len(y)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        pos = value[node][1]
        if pos == 0 or pos == len(idx) or len(idx) < 2 * min_samples_leaf:
            continue
        if max_depth is not None and depth >= max_depth:
            continue
        Xn, yn = X[idx], y[idx]
        perm = rng.permutation(n_features)
        split = _best_split(Xn, yn, perm[:max_features])
        if split is None and max_features < n_features:
            split = _best_split(Xn, yn, perm[max_features:])
        if split is None:
            continue
        f, thr = split
        mask = Xn[:, f] <= thr
        li, ri = idx[mask], idx[~mask]
        if len(li) < min_samples_leaf or len(ri) < min_samples_leaf:
            continue
        feature[node], threshold[node] = f, thr
        left[node] = new_node(li)
        right[node] = new_node(ri)
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return DecisionTree(feature, threshold, left, right, value)


class GiniForest(ClassifierMixin, BaseEstimator):
    """Bootstrap-aggregated Gini trees for binary labels.

    Class probabilities are the mean of the per-tree leaf class distributions.
    Each tree draws its bootstrap sample and feature subsets from its own
    seeded stream, so tree ``i`` does not depend on the other trees.
    """

    def __init__(self, n_trees=100, max_features="sqrt", min_samples_leaf=1, max_depth=None,
                 bootstrap=True, max_samples=None, random_state=0):
        self.n_trees = n_trees
        self.max_features = max_features
        self.min_samples_leaf = min_samples_leaf
        self.max_depth = max_depth
        self.bootstrap = bootstrap
        self.max_samples = max_samples
        self.random_state = random_state

    def _n_split_features(self, n_features: int) -> int:
        mf = self.max_features
        if mf == "sqrt":
            return max(1, int(np.sqrt(n_features)))
        if mf is None:
            return n_features
        if isinstance(mf, float):
            return max(1, int(mf * n_features))
        return min(int(mf), n_features)

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float32)
        if y.dtype == bool:
            y = y.astype(np.int64)
        self.classes_, y_enc = np.unique(y, return_inverse=True)
        if len(self.classes_) != 2:
            raise ValueError(f"need exactly two classes, got {len(self.classes_)}")
        self.n_features_in_ = X.shape[1]
        k = self._n_split_features(X.shape[1])
        n = len(y_enc)
        n_draw = n if self.max_samples is None else min(n, int(self.max_samples))
        self.trees_ = []
        for t in range(self.n_trees):
            rng = make_rng(self.random_state, "tree", t)
            idx = rng.integers(0, n, size=n_draw) if self.bootstrap else (
                np.arange(n) if n_draw == n else rng.choice(n, n_draw, replace=False))
            self.trees_.append(build_tree(X[idx], y_enc[idx].astype(np.float64), rng, k,
                                          self.min_samples_leaf, self.max_depth))
        return self

    def _check_fitted(self):
        if not hasattr(self, "trees_"):
            raise NotFittedError("GiniForest is not fitted yet")

    def predict_proba(self, X):
        self._check_fitted()
        X = check_array(X, dtype=np.float32)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return np.mean([tree.predict_proba(X) for tree in self.trees_], axis=0)

    def predict(self, X):
        return self.classes_[(self.predict_proba(X)[:, 1] >= 0.5).astype(int)]

    def score_samples(self, X):
        """Probability of the positive (attack) class."""
        return self.predict_proba(X)[:, 1]

    # checkpoint hooks -----------------------------------------------------
    def get_tensors(self) -> dict[str, np.ndarray]:
        self._check_fitted()
        out = {"classes": self.classes_.astype(np.float32)}
        for i, t in enumerate(self.trees_):
            out[f"tree{i:04d}.feature"] = t.feature.astype(np.float32)
            out[f"tree{i:04d}.threshold"] = t.threshold
            out[f"tree{i:04d}.left"] = t.left.astype(np.float32)
            out[f"tree{i:04d}.right"] = t.right.astype(np.float32)
            out[f"tree{i:04d}.value"] = t.value.astype(np.float32)
        return out

    def fitted_state(self) -> dict:
        return {"n_features_in": self.n_features_in_, "n_trees_fitted": len(self.trees_)}

    def restore_fitted(self, tensors, state):
        self.n_features_in_ = state["n_features_in"]
        self.classes_ = tensors["classes"].astype(np.int64)
        self.trees_ = []
        for i in range(state["n_trees_fitted"]):
            g = lambda k: tensors[f"tree{i:04d}.{k}"]
            self.trees_.append(DecisionTree(g("feature"), g("threshold"), g("left"), g("right"), g("value")))
