from __future__ import annotations

import dataclasses
import json
import logging
import math
from enum import StrEnum
from functools import cached_property
from pathlib import Path
from typing import Any, Union

import numpy as np
from joblib import Parallel, delayed

from .const import DEFAULT_MAX_DEPTH, DEFAULT_SEED, DEFAULT_TREES, STREAM_FOREST
from .exceptions import DimensionMismatch, EmptyDataset, InvalidConfig
from .numerics import RandomStream, as_matrix, as_vector

_LOGGER = logging.getLogger(__name__)

# Impurities closer than this are ties; ties go to the lower feature/threshold.
_TIE_TOLERANCE = 1e-12

_FORMAT = "uq_toolkit.forest"
_FORMAT_VERSION = 1


class VoteMode(StrEnum):
    HARD = "hard"
    SOFT = "soft"


@dataclasses.dataclass(frozen=True)
class TreeLeaf:
    class_counts: tuple[int, ...]

    @cached_property
    def probabilities(self) -> np.ndarray:
        counts = np.asarray(self.class_counts, dtype=np.float64)
        return counts / counts.sum()


@dataclasses.dataclass(frozen=True)
class TreeSplit:
    """Internal node: rows with x[feature_index] <= threshold go left."""

    feature_index: int
    threshold: float
    left: TreeNode
    right: TreeNode


TreeNode = Union[TreeLeaf, TreeSplit]


@dataclasses.dataclass(frozen=True)
class ForestConfig:
    """
    Random-forest hyperparameters.

    Attributes:
        trees_count: number of trees
        max_depth: maximum tree depth (root has depth 0); None grows until pure
        features_per_split: features considered per node; None means ceil(sqrt(k))
        master_seed: seed from which every per-tree stream is derived
        bootstrap: draw a size-n with-replacement sample per tree
        n_jobs: joblib workers for tree training (results do not depend on it)
    """

    trees_count: int = DEFAULT_TREES
    max_depth: int | None = DEFAULT_MAX_DEPTH
    features_per_split: int | None = None
    master_seed: int = DEFAULT_SEED
    bootstrap: bool = True
    n_jobs: int = 1

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ForestConfig:
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise InvalidConfig(f"unknown forest config keys: {sorted(unknown)}")
        return cls(**data)


@dataclasses.dataclass(frozen=True, eq=False)
class RandomForest:
    trees: tuple[TreeNode, ...]
    n_classes: int
    max_depth: int | None
    trees_count: int
    features_per_split: int
    master_seed: int
    bootstrap: bool = True


def _gini(counts: np.ndarray) -> float:
    n = counts.sum()
    return 1.0 - float(np.sum((counts / n) ** 2))


def _best_split(
    x: np.ndarray, y: np.ndarray, n_classes: int, features: np.ndarray
) -> tuple[int, float, float] | None:
    """
    Exhaustive midpoint search minimizing the weighted Gini impurity.

    Returns:
        (feature, threshold, weighted impurity) or None when no feature has
        two distinct values.
    """
    n = y.shape[0]
    onehot = np.eye(n_classes)[y]
    total = onehot.sum(axis=0)
    best: tuple[int, float, float] | None = None
    for f in features:
        order = np.argsort(x[:, f], kind="stable")
        xs = x[order, f]
        distinct = np.nonzero(xs[:-1] < xs[1:])[0]
        if distinct.size == 0:
            continue
        left = np.cumsum(onehot[order], axis=0)[distinct]
        right = total - left
        n_left = (distinct + 1).astype(np.float64)
        n_right = n - n_left
        weighted = (
            n_left - np.sum(left**2, axis=1) / n_left + n_right - np.sum(right**2, axis=1) / n_right
        ) / n
        lowest = float(weighted.min())
        pos = int(np.argmax(weighted <= lowest + _TIE_TOLERANCE))
        i = distinct[pos]
        threshold = 0.5 * (xs[i] + xs[i + 1])
        if threshold >= xs[i + 1]:
            threshold = float(xs[i])
        if best is None or float(weighted[pos]) < best[2] - _TIE_TOLERANCE:
            best = (int(f), float(threshold), float(weighted[pos]))
    return best


def _grow(
    x: np.ndarray,
    y: np.ndarray,
    n_classes: int,
    depth: int,
    max_depth: int | None,
    features_per_split: int,
    rng: np.random.Generator,
) -> TreeNode:
    counts = np.bincount(y, minlength=n_classes)
    leaf = TreeLeaf(tuple(int(c) for c in counts))
    if np.count_nonzero(counts) <= 1 or (max_depth is not None and depth >= max_depth):
        return leaf

    k = x.shape[1]
    features = np.sort(rng.choice(k, size=features_per_split, replace=False))
    split = _best_split(x, y, n_classes, features)
    if split is None or split[2] >= _gini(counts) - _TIE_TOLERANCE:
        return leaf

    feature, threshold, _ = split
    mask = x[:, feature] <= threshold
    return TreeSplit(
        feature_index=feature,
        threshold=threshold,
        left=_grow(x[mask], y[mask], n_classes, depth + 1, max_depth, features_per_split, rng),
        right=_grow(x[~mask], y[~mask], n_classes, depth + 1, max_depth, features_per_split, rng),
    )


def _train_tree(
    tree_index: int,
    x: np.ndarray,
    y: np.ndarray,
    n_classes: int,
    config: ForestConfig,
    features_per_split: int,
) -> TreeNode:
    rng = RandomStream(config.master_seed, STREAM_FOREST).child(tree_index).generator()
    n = x.shape[0]
    rows = rng.integers(0, n, size=n) if config.bootstrap else np.arange(n)
    tree = _grow(x[rows], y[rows], n_classes, 0, config.max_depth, features_per_split, rng)
    _LOGGER.debug("Tree %d trained (depth %d)", tree_index, tree_depth(tree))
    return tree


def _class_codes(y, n_classes: int | None) -> tuple[np.ndarray, int]:
    y_arr = np.asarray(y)
    if y_arr.ndim != 1:
        raise DimensionMismatch(f"y must be 1-D, got shape {y_arr.shape}")
    codes = y_arr.astype(np.int64)
    if not np.array_equal(codes, y_arr):
        raise InvalidConfig("class labels must be integers")
    if codes.size and codes.min() < 0:
        raise InvalidConfig("class labels must be non-negative")
    inferred = int(codes.max()) + 1 if codes.size else 0
    if n_classes is None:
        n_classes = inferred
    elif inferred > n_classes:
        raise InvalidConfig(f"label {inferred - 1} outside [0, {n_classes})")
    return codes, n_classes


def train_forest(x, y, config: ForestConfig | None = None, n_classes: int | None = None) -> RandomForest:
    """
    Train a random forest of Gini classification trees.

    Each tree sees its own bootstrap sample and draws a fresh feature subset at
    every node, both from the stream derived from the tree index, so the forest
    is bit-reproducible for a given seed and row order whatever ``n_jobs`` is.

    Args:
        x: n×k feature matrix
        y: class indices in [0, n_classes)
        config: hyperparameters (defaults: 100 trees, depth 2, sqrt features)
        n_classes: number of classes; inferred from y when omitted

    Raises:
        EmptyDataset: fewer than two observations
        InvalidConfig: zero trees, bad features_per_split or depth, bad labels
    """
    config = config or ForestConfig()
    x = as_matrix(x, "x")
    codes, n_classes = _class_codes(y, n_classes)
    n, k = x.shape
    if n < 2:
        raise EmptyDataset(f"need at least 2 observations, got {n}")
    if codes.shape[0] != n:
        raise DimensionMismatch(f"x has {n} rows but y has {codes.shape[0]} entries")
    if config.trees_count < 1:
        raise InvalidConfig("trees_count must be at least 1")
    if config.max_depth is not None and config.max_depth < 0:
        raise InvalidConfig("max_depth must be non-negative")
    features_per_split = math.ceil(math.sqrt(k)) if config.features_per_split is None else config.features_per_split
    if not 1 <= features_per_split <= k:
        raise InvalidConfig(f"features_per_split must lie in [1, {k}], got {features_per_split}")

    _LOGGER.info(
        "Training forest: %d trees, max_depth=%s, features_per_split=%d, n=%d, k=%d, classes=%d",
        config.trees_count, config.max_depth, features_per_split, n, k, n_classes,
    )
    trees = Parallel(n_jobs=config.n_jobs, prefer="threads")(
        delayed(_train_tree)(t, x, codes, n_classes, config, features_per_split)
        for t in range(config.trees_count)
    )
    return RandomForest(
        trees=tuple(trees),
        n_classes=n_classes,
        max_depth=config.max_depth,
        trees_count=config.trees_count,
        features_per_split=features_per_split,
        master_seed=config.master_seed,
        bootstrap=config.bootstrap,
    )


def tree_depth(node: TreeNode) -> int:
    if isinstance(node, TreeLeaf):
        return 0
    return 1 + max(tree_depth(node.left), tree_depth(node.right))


def _route(node: TreeNode, x_h: np.ndarray) -> TreeLeaf:
    while isinstance(node, TreeSplit):
        node = node.left if x_h[node.feature_index] <= node.threshold else node.right
    return node


def tree_predict_proba(tree: TreeNode, x_h) -> np.ndarray:
    """Route x_h to a leaf and return its normalized class counts."""
    return _route(tree, as_vector(x_h, "x_h")).probabilities


def forest_predict_proba(forest: RandomForest, x_h) -> list[np.ndarray]:
    """One probability vector per tree, in tree order."""
    x_h = as_vector(x_h, "x_h")
    return [_route(tree, x_h).probabilities for tree in forest.trees]


def _leaf_assignments(node: TreeNode, x: np.ndarray, rows: np.ndarray, out: list) -> None:
    if isinstance(node, TreeLeaf):
        out.append((node, rows))
        return
    mask = x[rows, node.feature_index] <= node.threshold
    _leaf_assignments(node.left, x, rows[mask], out)
    _leaf_assignments(node.right, x, rows[~mask], out)


def forest_predict_proba_batch(forest: RandomForest, x) -> np.ndarray:
    """
    Per-tree class probabilities for every row of x.

    Returns:
        np.ndarray: shape (trees_count, n, n_classes)
    """
    x = as_matrix(x, "x")
    out = np.empty((forest.trees_count, x.shape[0], forest.n_classes))
    rows = np.arange(x.shape[0])
    for t, tree in enumerate(forest.trees):
        assignments: list[tuple[TreeLeaf, np.ndarray]] = []
        _leaf_assignments(tree, x, rows, assignments)
        for leaf, idx in assignments:
            out[t, idx] = leaf.probabilities
    return out


def _vote(per_tree: np.ndarray, mode: VoteMode, n_classes: int) -> np.ndarray:
    # per_tree: (trees, n, classes); np.argmax resolves ties to the lowest index
    if VoteMode(mode) is VoteMode.SOFT:
        return np.argmax(per_tree.mean(axis=0), axis=-1)
    votes = np.argmax(per_tree, axis=-1)
    tallies = np.apply_along_axis(np.bincount, 0, votes, minlength=n_classes)
    return np.argmax(tallies, axis=0)


def forest_predict(forest: RandomForest, x_h, mode: VoteMode | str = VoteMode.HARD) -> int:
    """
    Forest class prediction by hard (majority) or soft (mean probability) vote.

    Ties resolve to the lowest class index.
    """
    per_tree = np.asarray(forest_predict_proba(forest, x_h))[:, None, :]
    return int(_vote(per_tree, VoteMode(mode), forest.n_classes)[0])


def forest_predict_batch(forest: RandomForest, x, mode: VoteMode | str = VoteMode.HARD) -> np.ndarray:
    return _vote(forest_predict_proba_batch(forest, x), VoteMode(mode), forest.n_classes)


def repopulate_leaves(forest: RandomForest, x, y) -> RandomForest:
    """
    Refill every leaf's class counts from the full training set.

    Trees keep their structure; leaves reached by no row keep their bootstrap
    counts so the counts never sum to zero.
    """
    x = as_matrix(x, "x")
    codes, _ = _class_codes(y, forest.n_classes)
    rows = np.arange(x.shape[0])

    def rebuild(node: TreeNode, idx: np.ndarray) -> TreeNode:
        if isinstance(node, TreeLeaf):
            if idx.size == 0:
                return node
            counts = np.bincount(codes[idx], minlength=forest.n_classes)
            return TreeLeaf(tuple(int(c) for c in counts))
        mask = x[idx, node.feature_index] <= node.threshold
        return TreeSplit(
            node.feature_index, node.threshold, rebuild(node.left, idx[mask]), rebuild(node.right, idx[~mask])
        )

    return dataclasses.replace(forest, trees=tuple(rebuild(tree, rows) for tree in forest.trees))


def _node_to_record(node: TreeNode) -> dict[str, Any]:
    if isinstance(node, TreeLeaf):
        return {"class_counts": list(node.class_counts)}
    return {
        "feature_index": node.feature_index,
        "threshold": node.threshold,
        "left": _node_to_record(node.left),
        "right": _node_to_record(node.right),
    }


def _node_from_record(record: dict[str, Any]) -> TreeNode:
    if "class_counts" in record:
        return TreeLeaf(tuple(int(c) for c in record["class_counts"]))
    return TreeSplit(
        feature_index=int(record["feature_index"]),
        threshold=float(record["threshold"]),
        left=_node_from_record(record["left"]),
        right=_node_from_record(record["right"]),
    )


def forest_to_dict(forest: RandomForest) -> dict[str, Any]:
    return {
        "format": _FORMAT,
        "version": _FORMAT_VERSION,
        "config": {
            "trees_count": forest.trees_count,
            "max_depth": forest.max_depth,
            "features_per_split": forest.features_per_split,
            "master_seed": forest.master_seed,
            "bootstrap": forest.bootstrap,
        },
        "n_classes": forest.n_classes,
        "trees": [_node_to_record(tree) for tree in forest.trees],
    }


def forest_from_dict(data: dict[str, Any]) -> RandomForest:
    if data.get("format") != _FORMAT:
        raise InvalidConfig(f"not a serialized forest: format={data.get('format')!r}")
    config = data["config"]
    trees = tuple(_node_from_record(r) for r in data["trees"])
    if len(trees) != config["trees_count"]:
        raise InvalidConfig("trees_count does not match the number of serialized trees")
    return RandomForest(
        trees=trees,
        n_classes=int(data["n_classes"]),
        max_depth=config["max_depth"],
        trees_count=int(config["trees_count"]),
        features_per_split=int(config["features_per_split"]),
        master_seed=int(config["master_seed"]),
        bootstrap=bool(config.get("bootstrap", True)),
    )


def save_forest(forest: RandomForest, path: str | Path) -> None:
    Path(path).write_text(json.dumps(forest_to_dict(forest), indent=1), encoding="utf-8")


def load_forest(path: str | Path) -> RandomForest:
    return forest_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
