"""Classifier heads for shape classification and part segmentation.

Two heads are provided: a ridge-regularized linear least-squares
classifier regressing one-hot targets, and a bootstrap random forest of
Gini CART trees. Part segmentation trains one forest per object class and
dispatches the points of a shape to the forest of its (predicted) class.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from sklearn.tree import DecisionTreeClassifier


class LearnerError(ValueError):
    pass


class ValidationError(LearnerError):
    pass


class DispatchError(LearnerError):
    pass


@dataclass
class Standardizer:
    """Per-feature z-score from training statistics; constant features get unit scale."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, features: np.ndarray) -> "Standardizer":
        mean = features.mean(axis=0)
        scale = features.std(axis=0)
        scale[scale <= 1e-12 * np.maximum(1.0, np.abs(mean))] = 1.0
        return cls(mean, scale)

    def __call__(self, features: np.ndarray) -> np.ndarray:
        return (features - self.mean) / self.scale


def _as_features(features, dim: int | None = None) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise LearnerError(f"features must be a matrix, got shape {x.shape}")
    if dim is not None and x.shape[1] != dim:
        raise LearnerError(f"expected {dim} features, got {x.shape[1]}")
    return x


def _as_labels(labels, n: int, n_classes: int | None = None) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64).ravel()
    if len(y) != n:
        raise LearnerError(f"{len(y)} labels for {n} samples")
    if len(y) and y.min() < 0:
        raise LearnerError("labels must be non-negative")
    if n_classes is not None and len(y) and y.max() >= n_classes:
        raise LearnerError(f"label {y.max()} out of range for {n_classes} classes")
    return y


# --------------------------------------------------------------------------
# linear least squares


@dataclass
class LeastSquaresClassifier:
    """One-hot least-squares regressor; ``weights`` has the bias as last row."""

    weights: np.ndarray
    standardizer: Standardizer

    @property
    def num_classes(self) -> int:
        return self.weights.shape[1]

    def scores(self, features) -> np.ndarray:
        x = self.standardizer(_as_features(features, len(self.standardizer.mean)))
        return x @ self.weights[:-1] + self.weights[-1]

    def predict(self, features) -> np.ndarray:
        return np.argmax(self.scores(features), axis=1)


def lsq_fit(features, labels, num_classes: int | None = None, ridge: float = 1e-6) -> LeastSquaresClassifier:
    """Solve ``(X'X/n + ridge I) W = X'Y/n`` on standardized features.

    The bias column is not penalized. Scaling by ``n`` makes the solution
    invariant to duplicating the training set.
    """
    x = _as_features(features)
    n, d = x.shape
    y = _as_labels(labels, n, num_classes)
    c = int(num_classes if num_classes is not None else y.max() + 1)
    if ridge < 0:
        raise LearnerError("ridge must be non-negative")
    if n < c:
        raise LearnerError(f"need at least {c} samples for {c} classes, got {n}")

    std = Standardizer.fit(x)
    design = np.hstack([std(x), np.ones((n, 1))])
    targets = np.zeros((n, c))
    targets[np.arange(n), y] = 1.0
    gram = design.T @ design / n
    penalty = np.full(d + 1, ridge)
    penalty[-1] = 0.0
    gram[np.diag_indices(d + 1)] += penalty
    if ridge == 0 and np.linalg.cond(gram) > 1.0 / np.finfo(float).eps:
        raise np.linalg.LinAlgError("normal equations are singular; use ridge > 0")
    weights = np.linalg.solve(gram, design.T @ targets / n)
    return LeastSquaresClassifier(weights, std)


def lsq_predict(clf: LeastSquaresClassifier, features) -> np.ndarray:
    return clf.predict(features)


# --------------------------------------------------------------------------
# random forest


@dataclass
class Tree:
    """Array-encoded binary tree. Leaves have ``feature == -1``.

    A sample goes left when ``x[feature] <= threshold`` after rounding the
    sample to float32, the precision the splits were searched at.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray  # (n_nodes, n_classes) training histogram per node

    def leaves(self, x: np.ndarray) -> np.ndarray:
        x = x.astype(np.float32)
        node = np.zeros(len(x), dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while len(active):
            cur = node[active]
            go_left = x[active, self.feature[cur]] <= self.threshold[cur]
            node[active] = np.where(go_left, self.left[cur], self.right[cur])
            active = active[self.feature[node[active]] >= 0]
        return node

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.counts[self.leaves(x)], axis=1)


@dataclass
class ForestParams:
    n_trees: int = 100
    max_features: int | None = None  # None: ceil(sqrt(D))
    min_leaf: int = 1
    bootstrap: bool = True


@dataclass
class RandomForest:
    trees: list[Tree]
    num_classes: int
    params: ForestParams
    seed: int
    standardizer: Standardizer

    def votes(self, features) -> np.ndarray:
        x = self.standardizer(_as_features(features, len(self.standardizer.mean)))
        votes = np.zeros((len(x), self.num_classes), dtype=np.int64)
        rows = np.arange(len(x))
        for tree in self.trees:
            np.add.at(votes, (rows, tree.predict(x)), 1)
        return votes

    def predict_proba(self, features) -> np.ndarray:
        return self.votes(features) / len(self.trees)

    def predict(self, features) -> np.ndarray:
        return np.argmax(self.votes(features), axis=1)


def _grow_tree(x, y, num_classes, params: ForestParams, seq: np.random.SeedSequence) -> Tree:
    rng = np.random.default_rng(seq)
    if params.bootstrap:
        idx = rng.integers(0, len(x), size=len(x))
        x, y = x[idx], y[idx]
    max_features = params.max_features or math.ceil(math.sqrt(x.shape[1]))
    clf = DecisionTreeClassifier(
        criterion="gini",
        max_features=min(max_features, x.shape[1]),
        min_samples_leaf=params.min_leaf,
        random_state=int(rng.integers(0, 2**31 - 1)),
    )
    clf.fit(x, y)
    t = clf.tree_
    frac = t.value[:, 0, :]
    counts = np.zeros((t.node_count, num_classes), dtype=np.int64)
    counts[:, clf.classes_.astype(np.int64)] = np.rint(frac * t.n_node_samples[:, None])
    leaf = t.children_left < 0
    return Tree(
        feature=np.where(leaf, -1, t.feature).astype(np.int64),
        threshold=np.where(leaf, 0.0, t.threshold).astype(np.float64),
        left=np.where(leaf, -1, t.children_left).astype(np.int64),
        right=np.where(leaf, -1, t.children_right).astype(np.int64),
        counts=counts,
    )


def rf_fit(
    features,
    labels,
    num_classes: int | None = None,
    params: ForestParams | None = None,
    seed: int = 0,
    workers: int = 1,
) -> RandomForest:
    """Fit a random forest; tree ``i`` uses the ``i``-th child seed of ``seed``."""
    params = params or ForestParams()
    x = _as_features(features)
    if len(x) < 1:
        raise LearnerError("need at least one training sample")
    y = _as_labels(labels, len(x), num_classes)
    c = int(num_classes if num_classes is not None else y.max() + 1)
    std = Standardizer.fit(x)
    xs = std(x)
    seqs = np.random.SeedSequence(seed).spawn(params.n_trees)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trees = list(pool.map(lambda s: _grow_tree(xs, y, c, params, s), seqs))
    else:
        trees = [_grow_tree(xs, y, c, params, s) for s in seqs]
    return RandomForest(trees, c, params, seed, std)


def rf_predict(forest: RandomForest, features) -> tuple[np.ndarray, np.ndarray]:
    """Majority-vote class ids and vote distributions."""
    votes = forest.votes(features)
    return np.argmax(votes, axis=1), votes / len(forest.trees)


# --------------------------------------------------------------------------
# object-label-guided part segmentation


@dataclass
class SegmentationHead:
    object_class: int
    vocabulary: np.ndarray  # sorted part ids valid for this object class
    forest: RandomForest

    def predict(self, point_features) -> np.ndarray:
        return self.vocabulary[self.forest.predict(point_features)]


def fit_segmentation_heads(
    point_features: Mapping[int, Sequence[np.ndarray]],
    part_labels: Mapping[int, Sequence[np.ndarray]],
    vocabularies: Mapping[int, Sequence[int]] | None = None,
    params: ForestParams | None = None,
    seed: int = 0,
    workers: int = 1,
) -> dict[int, SegmentationHead]:
    """Train one part classifier per object class.

    Parameters
    ----------
    point_features : mapping object class -> list of (N_i, D) feature maps
    part_labels : mapping object class -> list of (N_i,) part id arrays
    vocabularies : mapping object class -> valid part ids, optional
        Defaults to the part ids seen in training for each class.
    """
    heads = {}
    for cls in sorted(point_features):
        maps = list(point_features[cls])
        labels = list(part_labels.get(cls, []))
        if not maps:
            raise ValidationError(f"object class {cls} has no training shapes")
        if len(labels) != len(maps):
            raise ValidationError(f"object class {cls}: {len(maps)} feature maps, {len(labels)} label arrays")
        x = np.vstack(maps)
        y = np.concatenate([np.asarray(l, dtype=np.int64).ravel() for l in labels])
        if len(y) != len(x):
            raise ValidationError(f"object class {cls}: label count does not match point count")
        if vocabularies is not None and cls in vocabularies:
            vocab = np.unique(np.asarray(vocabularies[cls], dtype=np.int64))
            unknown = np.setdiff1d(np.unique(y), vocab)
            if len(unknown):
                raise ValidationError(f"object class {cls}: unknown part ids {unknown.tolist()}")
        else:
            vocab = np.unique(y)
        local = np.searchsorted(vocab, y)
        forest = rf_fit(x, local, len(vocab), params, seed=_class_seed(seed, cls), workers=workers)
        heads[cls] = SegmentationHead(cls, vocab, forest)
    return heads


def _class_seed(seed: int, cls: int) -> int:
    return int(np.random.SeedSequence([seed, cls]).generate_state(1)[0])


def segment(
    shape_feature,
    point_feature_map,
    shape_classifier,
    heads: Mapping[int, SegmentationHead],
    label: int | None = None,
) -> np.ndarray:
    """Per-point part ids of one shape.

    The object class is predicted from ``shape_feature`` unless ``label``
    is given (ground-truth mode), then every point is classified by that
    class's head.
    """
    if label is None:
        label = int(shape_classifier.predict(np.asarray(shape_feature)[None, :])[0])
    head = heads.get(int(label))
    if head is None:
        raise DispatchError(f"no segmentation head for object class {label}")
    return head.predict(point_feature_map)
