# Copyright © 2026 kobt contributors
# SPDX-License-Identifier: Apache 2.0

"""Per-feature importance of a boosted ensemble.

Structural statistics (gain, cover, frequency) are read off the split nodes.
Attribution statistics (Tree SHAP, Saabas) explain each sample's margin using
cover-weighted conditional expectations, and are reduced to one value per
feature by the mean absolute attribution.
"""

from dataclasses import dataclass
from itertools import combinations
from math import factorial
from typing import List, Literal, Optional, Sequence, Tuple, Union
import logging

import numpy as np
import pandas as pd

from kobt.boosted_tree import BoostedModel, RegressionTree
from kobt.core_data import DataMatrix
from kobt.errors import DataError

logger = logging.getLogger(__name__)

STATISTICS = ("gain", "cover", "frequency", "shap", "saabas")
MAX_ORACLE_FEATURES = 15

Statistic = Literal["gain", "cover", "frequency", "shap", "saabas"]


@dataclass(frozen=True, eq=False)
class ImportanceVector:
    values: np.ndarray
    kind: str
    feature_names: Optional[Tuple[str, ...]] = None

    def __len__(self):
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class AttributionMatrix:
    """Per-sample attributions; ``base_value + values.sum(1)`` is the margin."""

    values: np.ndarray
    base_value: float
    kind: str
    feature_names: Optional[Tuple[str, ...]] = None

    def to_csv(self, path: str) -> None:
        names = self.feature_names or [f"f{j}" for j in range(self.values.shape[1])]
        frame = pd.DataFrame(self.values, columns=list(names))
        with open(path, "w", encoding="utf-8", newline="") as fp:
            fp.write(f"# kind={self.kind} base_value={self.base_value!r}\n")
            frame.to_csv(fp, index=False, float_format="%.17g")


def _matrix(model: BoostedModel, x: Union[DataMatrix, np.ndarray]) -> np.ndarray:
    values = x.values if isinstance(x, DataMatrix) else np.atleast_2d(np.asarray(x, dtype=np.float64))
    if values.shape[1] != model.num_features:
        raise DataError(f"model expects {model.num_features} columns, got {values.shape[1]}")
    return values


def _names(x) -> Optional[Tuple[str, ...]]:
    return x.column_names if isinstance(x, DataMatrix) else None


def active_trees(model: BoostedModel) -> List[Tuple[RegressionTree, float]]:
    """Trees and weights that make up the model's prediction, up to ``best_iteration``."""
    count = model.best_iteration
    return list(zip(model.trees[:count], model.tree_weights[:count]))


def child_fractions(tree: RegressionTree) -> Tuple[np.ndarray, np.ndarray]:
    """Share of each internal node's cover sent to its left and right child."""
    left = np.zeros(len(tree.nodes))
    right = np.zeros(len(tree.nodes))
    for i, node in enumerate(tree.nodes):
        if node.is_leaf:
            continue
        if node.cover > 0:
            left[i] = tree.covers[node.left] / node.cover
            right[i] = tree.covers[node.right] / node.cover
        else:
            left[i] = right[i] = 0.5
    return left, right


def node_expectations(tree: RegressionTree) -> np.ndarray:
    """Cover-weighted mean leaf value below every node."""
    left, right = child_fractions(tree)
    expectation = tree.values.copy()
    # pre-order storage: children always follow their parent
    for i in range(len(tree.nodes) - 1, -1, -1):
        node = tree.nodes[i]
        if not node.is_leaf:
            expectation[i] = left[i] * expectation[node.left] + right[i] * expectation[node.right]
    return expectation


def structural_importance(model: BoostedModel, kind: str) -> ImportanceVector:
    if kind not in ("gain", "cover", "frequency"):
        raise DataError(f"unknown structural statistic '{kind}'")
    out = np.zeros(model.num_features)
    for tree, _ in active_trees(model):
        internal = tree.features >= 0
        if kind == "gain":
            amount = tree.gains[internal]
        elif kind == "cover":
            amount = tree.covers[internal]
        else:
            amount = np.ones(int(internal.sum()))
        np.add.at(out, tree.features[internal], amount)
    return ImportanceVector(out, kind)


def saabas_values(model: BoostedModel, x: Union[DataMatrix, np.ndarray]) -> AttributionMatrix:
    values = _matrix(model, x)
    n = values.shape[0]
    rows = np.arange(n)
    out = np.zeros((n, model.num_features))
    base = model.base_margin
    for tree, weight in active_trees(model):
        expectation = node_expectations(tree)
        base += weight * expectation[0]
        index = np.zeros(n, dtype=np.int64)
        for _ in range(tree.depth):
            feature = tree.features[index]
            internal = feature >= 0
            if not internal.any():
                break
            safe = np.where(internal, feature, 0)
            go_left = values[rows, safe] < tree.thresholds[index]
            child = np.where(go_left, tree.lefts[index], tree.rights[index])
            delta = weight * (expectation[child] - expectation[index])
            np.add.at(out, (rows[internal], feature[internal]), delta[internal])
            index = np.where(internal, child, index)
    return AttributionMatrix(out, float(base), "saabas", _names(x))


# Path elements are [feature, zero_fraction, one_fraction, pweight].

def _extend_path(path: List[list], zero_fraction: float, one_fraction: float, feature: int) -> None:
    depth = len(path)
    path.append([feature, zero_fraction, one_fraction, 1.0 if depth == 0 else 0.0])
    for i in range(depth - 1, -1, -1):
        path[i + 1][3] += one_fraction * path[i][3] * (i + 1) / (depth + 1)
        path[i][3] = zero_fraction * path[i][3] * (depth - i) / (depth + 1)


def _unwind_path(path: List[list], index: int) -> None:
    depth = len(path) - 1
    _, zero_fraction, one_fraction, _ = path[index]
    next_one = path[depth][3]
    for i in range(depth - 1, -1, -1):
        if one_fraction != 0:
            saved = path[i][3]
            path[i][3] = next_one * (depth + 1) / ((i + 1) * one_fraction)
            next_one = saved - path[i][3] * zero_fraction * (depth - i) / (depth + 1)
        else:
            path[i][3] = path[i][3] * (depth + 1) / (zero_fraction * (depth - i))
    # pweights stay in place; only the feature/fraction columns shift left
    for i in range(index, depth):
        path[i][:3] = path[i + 1][:3]
    path.pop()


def _unwound_path_sum(path: List[list], index: int) -> float:
    depth = len(path) - 1
    _, zero_fraction, one_fraction, _ = path[index]
    next_one = path[depth][3]
    total = 0.0
    for i in range(depth - 1, -1, -1):
        if one_fraction != 0:
            tmp = next_one * (depth + 1) / ((i + 1) * one_fraction)
            total += tmp
            next_one = path[i][3] - tmp * zero_fraction * (depth - i) / (depth + 1)
        else:
            total += path[i][3] / zero_fraction / ((depth - i) / (depth + 1))
    return total


def _tree_shap_row(tree, fractions, row, phi, scale):
    left_fraction, right_fraction = fractions

    def recurse(node_id, parent_path, zero_fraction, one_fraction, feature):
        path = [element[:] for element in parent_path]
        _extend_path(path, zero_fraction, one_fraction, feature)
        node = tree.nodes[node_id]
        if node.is_leaf:
            for i in range(1, len(path)):
                weight = _unwound_path_sum(path, i)
                phi[path[i][0]] += weight * (path[i][2] - path[i][1]) * node.weight * scale
            return

        if row[node.feature] < node.threshold:
            hot, cold = node.left, node.right
            hot_fraction, cold_fraction = left_fraction[node_id], right_fraction[node_id]
        else:
            hot, cold = node.right, node.left
            hot_fraction, cold_fraction = right_fraction[node_id], left_fraction[node_id]

        incoming_zero, incoming_one = 1.0, 1.0
        for k in range(1, len(path)):
            if path[k][0] == node.feature:
                incoming_zero, incoming_one = path[k][1], path[k][2]
                _unwind_path(path, k)
                break

        recurse(hot, path, hot_fraction * incoming_zero, incoming_one, node.feature)
        recurse(cold, path, cold_fraction * incoming_zero, 0.0, node.feature)

    recurse(0, [], 1.0, 1.0, -1)


def _routing_signature(tree: RegressionTree, values: np.ndarray) -> np.ndarray:
    internal = np.flatnonzero(tree.features >= 0)
    if internal.size == 0:
        return np.zeros((values.shape[0], 1), dtype=bool)
    return values[:, tree.features[internal]] < tree.thresholds[internal]


def tree_shap_values(model: BoostedModel, x: Union[DataMatrix, np.ndarray]) -> AttributionMatrix:
    """Exact path-dependent Tree SHAP attributions on the margin scale.

    Rows that take the same direction at every split of a tree share their
    attributions for that tree, so each tree is explained once per distinct
    routing pattern.
    """
    values = _matrix(model, x)
    n = values.shape[0]
    out = np.zeros((n, model.num_features))
    base = model.base_margin
    for tree, weight in active_trees(model):
        base += weight * node_expectations(tree)[0]
        if tree.root.is_leaf:
            continue
        fractions = child_fractions(tree)
        _, first, inverse = np.unique(
            _routing_signature(tree, values), axis=0, return_index=True, return_inverse=True
        )
        patterns = np.zeros((first.size, model.num_features))
        for k, row_index in enumerate(first):
            _tree_shap_row(tree, fractions, values[row_index], patterns[k], weight)
        out += patterns[np.ravel(inverse)]
    return AttributionMatrix(out, float(base), "shap", _names(x))


def _conditional_expectation(tree: RegressionTree, fractions, row, known) -> float:
    left_fraction, right_fraction = fractions

    def descend(node_id):
        node = tree.nodes[node_id]
        if node.is_leaf:
            return node.weight
        if known[node.feature]:
            return descend(node.left if row[node.feature] < node.threshold else node.right)
        return left_fraction[node_id] * descend(node.left) + right_fraction[node_id] * descend(node.right)

    return descend(0)


def exact_shapley_oracle(model: BoostedModel, x_row: Sequence[float]) -> np.ndarray:
    """Shapley values by enumerating every coalition of features.

    The value of a coalition is the cover-weighted expectation of the margin
    with the coalition's features fixed to ``x_row``.
    """
    row = np.asarray(x_row, dtype=np.float64).ravel()
    p = model.num_features
    if row.size != p:
        raise DataError(f"model expects {p} features, got {row.size}")
    if p > MAX_ORACLE_FEATURES:
        raise DataError(f"exact enumeration supports at most {MAX_ORACLE_FEATURES} features, got {p}")

    active = active_trees(model)
    fractions = [child_fractions(tree) for tree, _ in active]
    cache = {}

    def value(coalition):
        if coalition not in cache:
            known = np.zeros(p, dtype=bool)
            known[list(coalition)] = True
            cache[coalition] = model.base_margin + sum(
                weight * _conditional_expectation(tree, frac, row, known)
                for (tree, weight), frac in zip(active, fractions)
            )
        return cache[coalition]

    phi = np.zeros(p)
    for j in range(p):
        others = [i for i in range(p) if i != j]
        for size in range(p):
            weight = factorial(size) * factorial(p - size - 1) / factorial(p)
            for subset in combinations(others, size):
                with_j = tuple(sorted(subset + (j,)))
                phi[j] += weight * (value(with_j) - value(subset))
    return phi


def mean_abs_aggregate(attr: AttributionMatrix) -> ImportanceVector:
    return ImportanceVector(np.mean(np.abs(attr.values), axis=0), f"{attr.kind}_mean_abs", attr.feature_names)


def compute_importance(model: BoostedModel, x: Union[DataMatrix, np.ndarray], statistic: str) -> ImportanceVector:
    """One importance value per model column for the named statistic."""
    if statistic not in STATISTICS:
        raise DataError(f"unknown statistic '{statistic}', expected one of {STATISTICS}")
    if statistic == "shap":
        return mean_abs_aggregate(tree_shap_values(model, x))
    if statistic == "saabas":
        return mean_abs_aggregate(saabas_values(model, x))
    result = structural_importance(model, statistic)
    return ImportanceVector(result.values, result.kind, _names(x))
