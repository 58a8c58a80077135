"""CART decision trees and bagged random forests, from scratch.

Splits are axis-aligned thresholds at midpoints between distinct sorted
values, scored by weighted gini or entropy decrease. Prediction returns leaf
class frequencies; forests average them over trees. Deterministic given the
seed: ties in split quality go to the first candidate feature and the lowest
threshold.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def class_weight_vector(y: np.ndarray, n_classes: int, mode: str | None) -> np.ndarray:
    """Per-sample weights; "balanced" reweights by inverse class frequency."""
    if mode is None:
        return np.ones(len(y))
    if mode != "balanced":
        raise ValueError(f"unknown class_weight {mode!r}")
    counts = np.bincount(y, minlength=n_classes)
    present = counts > 0
    w = np.zeros(n_classes)
    w[present] = len(y) / (present.sum() * counts[present])
    return w[y]


def _impurity(weighted_counts: np.ndarray, criterion: str) -> float:
    total = weighted_counts.sum()
    if total <= 0:
        return 0.0
    p = weighted_counts / total
    if criterion == "gini":
        return float(1.0 - (p * p).sum())
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


@dataclass
class _Node:
    feature: int = -1
    threshold: float = 0.0
    left: int = -1
    right: int = -1
    value: np.ndarray | None = None  # leaf class distribution

    @property
    def is_leaf(self) -> bool:
        return self.value is not None


class DecisionTree:
    """CART classifier supporting gini/entropy, depth limits and class weights.

    ``max_features`` (used by the forest) samples that many candidate features
    per split without replacement.
    """

    def __init__(
        self,
        criterion: str = "gini",
        max_depth: int | None = None,
        class_weight: str | None = None,
        max_features: int | None = None,
        seed: int = 0,
    ) -> None:
        if criterion not in ("gini", "entropy"):
            raise ValueError(f"criterion must be gini or entropy, got {criterion!r}")
        self.criterion = criterion
        self.max_depth = max_depth
        self.class_weight = class_weight
        self.max_features = max_features
        self.seed = seed
        self.nodes: list[_Node] = []
        self.n_classes = 0

    def fit(self, X: np.ndarray, y: np.ndarray, n_classes: int | None = None) -> "DecisionTree":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        self.n_classes = int(n_classes if n_classes is not None else y.max() + 1)
        weights = class_weight_vector(y, self.n_classes, self.class_weight)
        self.nodes = []
        rng = np.random.default_rng(self.seed)
        self._grow(X, y, weights, depth=0, rng=rng)
        return self

    def _leaf(self, y: np.ndarray, weights: np.ndarray) -> int:
        counts = np.bincount(y, weights=weights, minlength=self.n_classes)
        total = counts.sum()
        value = counts / total if total > 0 else np.full(self.n_classes, 1.0 / self.n_classes)
        self.nodes.append(_Node(value=value))
        return len(self.nodes) - 1

    def _grow(
        self, X: np.ndarray, y: np.ndarray, weights: np.ndarray, depth: int, rng: np.random.Generator
    ) -> int:
        n = len(y)
        if (
            n < 2
            or (self.max_depth is not None and depth >= self.max_depth)
            or len(np.unique(y)) == 1
        ):
            return self._leaf(y, weights)
        split = self._best_split(X, y, weights, rng)
        if split is None:
            return self._leaf(y, weights)
        feature, threshold = split
        mask = X[:, feature] <= threshold
        node_index = len(self.nodes)
        self.nodes.append(_Node(feature=feature, threshold=threshold))
        left = self._grow(X[mask], y[mask], weights[mask], depth + 1, rng)
        right = self._grow(X[~mask], y[~mask], weights[~mask], depth + 1, rng)
        self.nodes[node_index].left = left
        self.nodes[node_index].right = right
        return node_index

    def _best_split(
        self, X: np.ndarray, y: np.ndarray, weights: np.ndarray, rng: np.random.Generator
    ) -> tuple[int, float] | None:
        n, d = X.shape
        if self.max_features is not None and self.max_features < d:
            candidates = np.sort(rng.choice(d, size=self.max_features, replace=False))
        else:
            candidates = np.arange(d)
        total_counts = np.bincount(y, weights=weights, minlength=self.n_classes)
        total_weight = total_counts.sum()
        parent = _impurity(total_counts, self.criterion)
        best_gain = 0.0
        best: tuple[int, float] | None = None
        for feature in candidates:
            order = np.argsort(X[:, feature], kind="stable")
            xs = X[order, feature]
            ys = y[order]
            ws = weights[order]
            # cumulative weighted class counts along the sorted order
            cum = np.zeros((n, self.n_classes))
            cum[np.arange(n), ys] = ws
            cum = np.cumsum(cum, axis=0)
            cuts = np.flatnonzero(xs[1:] > xs[:-1])  # split between i and i+1
            for i in cuts:
                left_counts = cum[i]
                right_counts = total_counts - left_counts
                wl, wr = left_counts.sum(), right_counts.sum()
                child = (
                    wl * _impurity(left_counts, self.criterion)
                    + wr * _impurity(right_counts, self.criterion)
                ) / total_weight
                gain = parent - child
                if gain > best_gain + 1e-12:
                    best_gain = gain
                    best = (int(feature), float((xs[i] + xs[i + 1]) / 2.0))
        return best

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        out = np.empty((len(X), self.n_classes))
        for i, row in enumerate(X):
            node = self.nodes[0]
            while not node.is_leaf:
                node = self.nodes[node.left if row[node.feature] <= node.threshold else node.right]
            out[i] = node.value
        return out

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.predict_proba(X).argmax(axis=1)

    def get_state(self) -> dict:
        return {
            "criterion": self.criterion,
            "max_depth": self.max_depth,
            "class_weight": self.class_weight,
            "max_features": self.max_features,
            "seed": self.seed,
            "n_classes": self.n_classes,
            "nodes": [
                {
                    "feature": nd.feature,
                    "threshold": nd.threshold,
                    "left": nd.left,
                    "right": nd.right,
                    "value": None if nd.value is None else nd.value.tolist(),
                }
                for nd in self.nodes
            ],
        }

    @classmethod
    def from_state(cls, state: dict) -> "DecisionTree":
        tree = cls(
            criterion=state["criterion"],
            max_depth=state["max_depth"],
            class_weight=state["class_weight"],
            max_features=state["max_features"],
            seed=state["seed"],
        )
        tree.n_classes = state["n_classes"]
        tree.nodes = [
            _Node(
                feature=nd["feature"],
                threshold=nd["threshold"],
                left=nd["left"],
                right=nd["right"],
                value=None if nd["value"] is None else np.asarray(nd["value"]),
            )
            for nd in state["nodes"]
        ]
        return tree


class RandomForest:
    """Bagged CART ensemble with sqrt(d) feature subsampling per split."""

    def __init__(
        self,
        n_estimators: int = 128,
        criterion: str = "gini",
        max_depth: int | None = None,
        class_weight: str | None = None,
        seed: int = 0,
    ) -> None:
        self.n_estimators = n_estimators
        self.criterion = criterion
        self.max_depth = max_depth
        self.class_weight = class_weight
        self.seed = seed
        self.trees: list[DecisionTree] = []
        self.n_classes = 0

    def fit(self, X: np.ndarray, y: np.ndarray, n_classes: int | None = None) -> "RandomForest":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        self.n_classes = int(n_classes if n_classes is not None else y.max() + 1)
        max_features = max(1, int(np.sqrt(X.shape[1])))
        seeds = np.random.SeedSequence(self.seed).spawn(self.n_estimators)
        rng = np.random.default_rng(self.seed)
        self.trees = []
        for i in range(self.n_estimators):
            idx = rng.integers(0, len(y), size=len(y))
            tree = DecisionTree(
                criterion=self.criterion,
                max_depth=self.max_depth,
                class_weight=self.class_weight,
                max_features=max_features,
                seed=int(seeds[i].generate_state(1)[0]),
            )
            tree.fit(X[idx], y[idx], self.n_classes)
            self.trees.append(tree)
        return self

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return np.mean([t.predict_proba(X) for t in self.trees], axis=0)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.predict_proba(X).argmax(axis=1)

    def get_state(self) -> dict:
        return {
            "n_estimators": self.n_estimators,
            "criterion": self.criterion,
            "max_depth": self.max_depth,
            "class_weight": self.class_weight,
            "seed": self.seed,
            "n_classes": self.n_classes,
            "trees": [t.get_state() for t in self.trees],
        }

    @classmethod
    def from_state(cls, state: dict) -> "RandomForest":
        forest = cls(
            n_estimators=state["n_estimators"],
            criterion=state["criterion"],
            max_depth=state["max_depth"],
            class_weight=state["class_weight"],
            seed=state["seed"],
        )
        forest.n_classes = state["n_classes"]
        forest.trees = [DecisionTree.from_state(t) for t in state["trees"]]
        return forest
