# Copyright © 2026 kobt contributors
# SPDX-License-Identifier: Apache 2.0

"""Regularized second-order gradient-boosted trees (GBRT and DART).

Trees are grown by exact greedy search over midpoints of consecutive distinct
feature values. A split routes ``x[feature] < threshold`` to the left child.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Union
import json
import logging

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import expit, logit

from kobt.core_data import DataMatrix, Dataset, RngStream
from kobt.errors import DataError, FitError

logger = logging.getLogger(__name__)

# stream labels, kept clear of tree indices
_DROPOUT_STREAM = 1 << 40
_FOLD_SPLIT_STREAM = (1 << 40) + 1
_FOLD_FIT_STREAM = (1 << 40) + 2

_PROBABILITY_CLIP = 1e-6


class BoostParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)

    eta: float = Field(0.01, gt=0, le=1)
    gamma: float = Field(0.0, ge=0)
    reg_lambda: float = Field(1.0, ge=0, alias="lambda")
    reg_alpha: float = Field(0.0, ge=0, alias="alpha")
    max_depth: int = Field(2, ge=1)
    min_child_weight: float = Field(10.0, ge=0)
    subsample_rows: float = Field(1.0, gt=0, le=1)
    subsample_cols: float = Field(1.0, gt=0, le=1)
    booster: Literal["gbrt", "dart"] = "gbrt"
    dart_dropout: float = Field(0.1, ge=0, lt=1)
    max_trees: int = Field(1000, ge=1)
    early_stopping_rounds: int = Field(5, ge=1)
    objective: Literal["squared_error", "logistic"] = "squared_error"

    def with_penalties(self, gamma: float, reg_lambda: float, reg_alpha: float) -> "BoostParams":
        return self.model_copy(update={"gamma": gamma, "reg_lambda": reg_lambda, "reg_alpha": reg_alpha})

    def to_json_dict(self) -> Dict[str, Any]:
        return self.model_dump(mode="json", by_alias=True)


@dataclass(frozen=True)
class TreeNode:
    """A node of a regression tree; children are indices into the owning tree.

    Leaves have ``feature == -1`` and carry ``weight``; internal nodes carry
    ``feature``, ``threshold``, ``left``/``right`` and ``split_gain``.
    """

    cover: float
    weight: float = 0.0
    feature: int = -1
    threshold: float = 0.0
    left: int = -1
    right: int = -1
    split_gain: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0


@dataclass(frozen=True)
class SplitCandidate:
    feature: int
    threshold: float
    gain: float


def soft_threshold(g, alpha: float):
    return np.sign(g) * np.maximum(np.abs(g) - alpha, 0.0)


def _structure_score(g, h, params: BoostParams):
    numerator = soft_threshold(g, params.reg_alpha) ** 2
    denominator = np.asarray(h + params.reg_lambda, dtype=np.float64)
    return np.divide(numerator, denominator, out=np.zeros(np.broadcast(numerator, denominator).shape),
                     where=denominator > 0)


def leaf_weight(g_sum: float, h_sum: float, params: BoostParams) -> float:
    denominator = h_sum + params.reg_lambda
    if denominator <= 0:
        return 0.0
    return float(-soft_threshold(g_sum, params.reg_alpha) / denominator)


class RegressionTree:
    """An immutable binary regression tree stored as a pre-order node list."""

    def __init__(self, nodes: Sequence[TreeNode]):
        if not nodes:
            raise FitError("a tree needs at least one node")
        self.nodes: Tuple[TreeNode, ...] = tuple(nodes)
        self.features = np.array([node.feature for node in self.nodes], dtype=np.int64)
        self.thresholds = np.array([node.threshold for node in self.nodes])
        self.lefts = np.array([node.left for node in self.nodes], dtype=np.int64)
        self.rights = np.array([node.right for node in self.nodes], dtype=np.int64)
        self.values = np.array([node.weight for node in self.nodes])
        self.covers = np.array([node.cover for node in self.nodes])
        self.gains = np.array([node.split_gain for node in self.nodes])
        for array in (self.features, self.thresholds, self.lefts, self.rights, self.values, self.covers, self.gains):
            array.setflags(write=False)
        self.depth = self._node_depths().max()

    def _node_depths(self) -> np.ndarray:
        depths = np.zeros(len(self.nodes), dtype=np.int64)
        for i, node in enumerate(self.nodes):
            if not node.is_leaf:
                depths[node.left] = depths[i] + 1
                depths[node.right] = depths[i] + 1
        return depths

    @property
    def root(self) -> TreeNode:
        return self.nodes[0]

    @property
    def num_leaves(self) -> int:
        return int(np.sum(self.features < 0))

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Index of the leaf each row of ``x`` lands in."""
        x = np.asarray(x, dtype=np.float64)
        rows = np.arange(x.shape[0])
        index = np.zeros(x.shape[0], dtype=np.int64)
        for _ in range(self.depth):
            feature = self.features[index]
            internal = feature >= 0
            go_left = x[rows, np.where(internal, feature, 0)] < self.thresholds[index]
            index = np.where(internal, np.where(go_left, self.lefts[index], self.rights[index]), index)
        return index

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.values[self.apply(x)]

    def to_dict(self, index: int = 0) -> Dict[str, Any]:
        node = self.nodes[index]
        if node.is_leaf:
            return {"weight": node.weight, "cover": node.cover}
        return {
            "feature": node.feature,
            "threshold": node.threshold,
            "gain": node.split_gain,
            "cover": node.cover,
            "left": self.to_dict(node.left),
            "right": self.to_dict(node.right),
        }

    @classmethod
    def from_dict(cls, record: Dict[str, Any]) -> "RegressionTree":
        nodes: List[Optional[TreeNode]] = []

        def visit(rec):
            index = len(nodes)
            nodes.append(None)
            if "feature" not in rec:
                nodes[index] = TreeNode(cover=float(rec["cover"]), weight=float(rec["weight"]))
                return index
            left = visit(rec["left"])
            right = visit(rec["right"])
            nodes[index] = TreeNode(
                cover=float(rec["cover"]),
                feature=int(rec["feature"]),
                threshold=float(rec["threshold"]),
                left=left,
                right=right,
                split_gain=float(rec["gain"]),
            )
            return index

        visit(record)
        return cls(nodes)


@dataclass(frozen=True, eq=False)
class BoostedModel:
    trees: Tuple[RegressionTree, ...]
    tree_weights: Tuple[float, ...]
    base_score: float
    params: BoostParams
    best_iteration: int
    num_features: int
    validation_loss: Tuple[float, ...] = field(default=(), repr=False)

    def __post_init__(self):
        object.__setattr__(self, "trees", tuple(self.trees))
        object.__setattr__(self, "tree_weights", tuple(float(w) for w in self.tree_weights))
        if len(self.trees) != len(self.tree_weights):
            raise FitError(f"{len(self.trees)} trees but {len(self.tree_weights)} weights")
        if len(self.trees) > self.params.max_trees:
            raise FitError(f"{len(self.trees)} trees exceed max_trees={self.params.max_trees}")
        if not 0 <= self.best_iteration <= len(self.trees):
            raise FitError(f"best_iteration {self.best_iteration} outside [0, {len(self.trees)}]")

    @property
    def base_margin(self) -> float:
        return _base_margin(self.base_score, self.params.objective)

    def margin(self, x: Union[DataMatrix, np.ndarray], num_trees: Optional[int] = None) -> np.ndarray:
        """Raw ensemble output (log-odds for the logistic objective)."""
        values = x.values if isinstance(x, DataMatrix) else np.asarray(x, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != self.num_features:
            raise DataError(f"model expects {self.num_features} columns, got shape {values.shape}")
        num_trees = self.best_iteration if num_trees is None else num_trees
        if not 0 <= num_trees <= len(self.trees):
            raise DataError(f"num_trees must lie in [0, {len(self.trees)}], got {num_trees}")
        out = np.full(values.shape[0], self.base_margin)
        for tree, weight in zip(self.trees[:num_trees], self.tree_weights):
            out += weight * tree.predict(values)
        return out

    def to_dict(self) -> Dict[str, Any]:
        return {
            "params": self.params.to_json_dict(),
            "base_score": self.base_score,
            "best_iteration": self.best_iteration,
            "num_features": self.num_features,
            "tree_weights": list(self.tree_weights),
            "trees": [tree.to_dict() for tree in self.trees],
            "validation_loss": list(self.validation_loss),
        }

    @classmethod
    def from_dict(cls, record: Dict[str, Any]) -> "BoostedModel":
        return cls(
            trees=[RegressionTree.from_dict(tree) for tree in record["trees"]],
            tree_weights=record["tree_weights"],
            base_score=float(record["base_score"]),
            params=BoostParams.model_validate(record["params"]),
            best_iteration=int(record["best_iteration"]),
            num_features=int(record["num_features"]),
            validation_loss=tuple(record.get("validation_loss", ())),
        )

    def save_json(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fp:
            json.dump(self.to_dict(), fp, indent=1)

    @classmethod
    def load_json(cls, path: str) -> "BoostedModel":
        with open(path, "r", encoding="utf-8") as fp:
            return cls.from_dict(json.load(fp))


def _base_margin(base_score: float, objective: str) -> float:
    if objective == "logistic":
        return float(logit(np.clip(base_score, _PROBABILITY_CLIP, 1 - _PROBABILITY_CLIP)))
    return float(base_score)


def _gradients(objective: str, y: np.ndarray, margin: np.ndarray):
    if objective == "logistic":
        prob = expit(margin)
        return prob - y, prob * (1.0 - prob)
    return margin - y, np.ones_like(y)


def objective_loss(objective: str, y: np.ndarray, margin: np.ndarray) -> float:
    """Mean squared error, or mean log loss computed on the margin scale."""
    if objective == "logistic":
        return float(np.mean(np.logaddexp(0.0, margin) - y * margin))
    return float(np.mean((margin - y) ** 2))


def find_best_split(
    x: np.ndarray,
    grad: np.ndarray,
    hess: np.ndarray,
    params: BoostParams,
    features: Optional[Sequence[int]] = None,
) -> Optional[SplitCandidate]:
    """Exact greedy split search over the rows of one node.

    Every midpoint between consecutive distinct values of every candidate
    feature is scored; equal gains resolve to the lowest feature index and then
    the lowest threshold. Returns None when no split has positive gain with
    both children meeting ``min_child_weight``.
    """
    x = np.asarray(x, dtype=np.float64)
    m = x.shape[0]
    if m < 2:
        return None
    columns = np.arange(x.shape[1]) if features is None else np.sort(np.asarray(features, dtype=np.int64))
    if columns.size == 0:
        return None

    sub = x[:, columns]
    order = np.argsort(sub, axis=0, kind="stable")
    sorted_x = np.take_along_axis(sub, order, axis=0)
    g_left = np.cumsum(grad[order], axis=0)[:-1]
    h_left = np.cumsum(hess[order], axis=0)[:-1]
    g_total, h_total = float(np.sum(grad)), float(np.sum(hess))
    g_right = g_total - g_left
    h_right = h_total - h_left

    valid = (
        (sorted_x[1:] > sorted_x[:-1])
        & (h_left >= params.min_child_weight)
        & (h_right >= params.min_child_weight)
    )
    if not valid.any():
        return None
    gain = 0.5 * (
        _structure_score(g_left, h_left, params)
        + _structure_score(g_right, h_right, params)
        - _structure_score(g_total, h_total, params)
    ) - params.gamma
    gain = np.where(valid, gain, -np.inf)

    # feature-major flattening gives the lowest-feature, lowest-threshold tie-break
    flat = gain.T.ravel()
    best = int(np.argmax(flat))
    if not flat[best] > 0:
        return None
    column, position = divmod(best, m - 1)
    threshold = 0.5 * (sorted_x[position, column] + sorted_x[position + 1, column])
    if threshold >= sorted_x[position + 1, column]:
        threshold = sorted_x[position + 1, column]
    return SplitCandidate(int(columns[column]), float(threshold), float(flat[best]))


def fit_tree(
    x: np.ndarray,
    grad: np.ndarray,
    hess: np.ndarray,
    params: BoostParams,
    rng: RngStream,
) -> RegressionTree:
    """Grow one tree depth-first on the gradient statistics.

    Row and column subsamples are drawn from ``rng`` before growth; nothing is
    drawn when both ratios are 1.
    """
    x = np.asarray(x, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    hess = np.asarray(hess, dtype=np.float64)
    n, p = x.shape
    if n < 1:
        raise FitError("cannot fit a tree on zero rows")

    gen = rng.generator()
    rows = np.arange(n)
    columns = np.arange(p)
    if params.subsample_rows < 1:
        size = max(1, int(round(params.subsample_rows * n)))
        rows = np.sort(gen.choice(n, size=size, replace=False))
    if params.subsample_cols < 1:
        size = max(1, int(round(params.subsample_cols * p)))
        columns = np.sort(gen.choice(p, size=size, replace=False))

    nodes: List[Optional[TreeNode]] = []

    def grow(index: np.ndarray, depth: int) -> int:
        node_id = len(nodes)
        nodes.append(None)
        g, h = grad[index], hess[index]
        g_sum, h_sum = float(np.sum(g)), float(np.sum(h))
        split = None
        if depth < params.max_depth:
            split = find_best_split(x[index], g, h, params, columns)
        if split is None:
            nodes[node_id] = TreeNode(cover=h_sum, weight=leaf_weight(g_sum, h_sum, params))
            return node_id
        go_left = x[index, split.feature] < split.threshold
        left = grow(index[go_left], depth + 1)
        right = grow(index[~go_left], depth + 1)
        nodes[node_id] = TreeNode(
            cover=h_sum,
            feature=split.feature,
            threshold=split.threshold,
            left=left,
            right=right,
            split_gain=split.gain,
        )
        return node_id

    grow(rows, 0)
    return RegressionTree(nodes)


def fit_boosted(
    dataset: Dataset,
    params: BoostParams,
    rng: RngStream,
    validation: Optional[Dataset] = None,
    num_trees: Optional[int] = None,
) -> BoostedModel:
    """Forward stagewise boosting.

    ``num_trees`` caps the ensemble below ``params.max_trees``. With a
    validation set, training stops once the validation loss has not improved
    for ``early_stopping_rounds`` consecutive rounds.
    """
    y = dataset.y
    if params.objective == "logistic" and not np.all(np.isin(y, (0.0, 1.0))):
        raise FitError("the logistic objective requires a response in {0, 1}")
    limit = params.max_trees if num_trees is None else num_trees
    if not 0 <= limit <= params.max_trees:
        raise FitError(f"num_trees must lie in [0, {params.max_trees}], got {num_trees}")
    if validation is not None and validation.p != dataset.p:
        raise DataError(f"validation has {validation.p} columns, training has {dataset.p}")

    x = dataset.x.values
    base_score = float(np.mean(y))
    base = _base_margin(base_score, params.objective)
    dart = params.booster == "dart" and params.dart_dropout > 0
    dropout_gen = rng.derive(_DROPOUT_STREAM).generator() if dart else None

    trees: List[RegressionTree] = []
    weights: List[float] = []
    train_out: List[np.ndarray] = []
    val_out: List[np.ndarray] = []
    margin = np.full(dataset.n, base)

    val_margin = None
    curve: List[float] = []
    best_iteration, best_loss, stale = 0, np.inf, 0
    if validation is not None:
        val_margin = np.full(validation.n, base)
        best_loss = objective_loss(params.objective, validation.y, val_margin)
        curve.append(best_loss)

    for b in range(limit):
        dropped = np.empty(0, dtype=np.int64)
        if dart and trees:
            dropped = np.flatnonzero(dropout_gen.random(len(trees)) < params.dart_dropout)
        reduced = margin
        if dropped.size:
            reduced = margin - sum(weights[d] * train_out[d] for d in dropped)

        grad, hess = _gradients(params.objective, y, reduced)
        tree = fit_tree(x, grad, hess, params, rng.derive(b))
        out = tree.predict(x)
        k = dropped.size
        new_weight = params.eta / (k + 1) if params.booster == "dart" else params.eta
        for d in dropped:
            weights[d] *= k / (k + 1)
        trees.append(tree)
        weights.append(new_weight)
        train_out.append(out)

        if k:
            margin = base + np.asarray(weights) @ np.vstack(train_out)
        else:
            margin = margin + new_weight * out

        if validation is not None:
            val_out.append(tree.predict(validation.x.values))
            if k:
                val_margin = base + np.asarray(weights) @ np.vstack(val_out)
            else:
                val_margin = val_margin + new_weight * val_out[-1]
            loss = objective_loss(params.objective, validation.y, val_margin)
            curve.append(loss)
            logger.debug("round %d: dropped=%d, validation loss=%.6g", b + 1, k, loss)
            if loss < best_loss:
                best_iteration, best_loss, stale = b + 1, loss, 0
            else:
                stale += 1
                if stale >= params.early_stopping_rounds:
                    logger.debug("early stop after %d rounds, best iteration %d", b + 1, best_iteration)
                    break

    if validation is None:
        best_iteration = len(trees)
    return BoostedModel(
        trees=tuple(trees),
        tree_weights=tuple(weights),
        base_score=base_score,
        params=params,
        best_iteration=best_iteration,
        num_features=dataset.p,
        validation_loss=tuple(curve),
    )


def predict(model: BoostedModel, x: Union[DataMatrix, np.ndarray], num_trees: Optional[int] = None) -> np.ndarray:
    """Ensemble prediction; probabilities for the logistic objective."""
    margin = model.margin(x, num_trees)
    if model.params.objective == "logistic":
        return expit(margin)
    return margin


@dataclass(frozen=True, eq=False)
class CVResult:
    cvte: float
    best_num_trees: int
    fold_scores: np.ndarray
    fold_best_iterations: Tuple[int, ...]
    # mean validation loss per boosting round, truncated to the shortest fold
    curve: np.ndarray


def _fold_score(model: BoostedModel, fold: Dataset) -> float:
    prediction = predict(model, fold.x)
    if model.params.objective == "logistic":
        return float(np.mean((prediction >= 0.5) != (fold.y == 1.0)))
    return float(np.mean((prediction - fold.y) ** 2))


def _fit_fold(dataset: Dataset, params: BoostParams, train_rows, test_rows, rng: RngStream):
    model = fit_boosted(dataset.subset_rows(train_rows), params, rng, validation=dataset.subset_rows(test_rows))
    return _fold_score(model, dataset.subset_rows(test_rows)), model.best_iteration, np.asarray(model.validation_loss)


def fold_assignment(n: int, k: int, rng: RngStream) -> List[np.ndarray]:
    order = rng.derive(_FOLD_SPLIT_STREAM).generator().permutation(n)
    return [np.sort(fold) for fold in np.array_split(order, k)]


def cross_validate(
    dataset: Dataset,
    params: BoostParams,
    k: int,
    rng: RngStream,
    n_jobs: int = 1,
) -> CVResult:
    """k-fold cross-validation error with per-fold early stopping.

    The reported error is the mean over folds of the held-out MSE (squared
    error) or misclassification rate (logistic) at each fold's best iteration.
    """
    if k < 2:
        raise FitError(f"cross-validation needs k >= 2 folds, got {k}")
    if dataset.n < 2 * k:
        raise FitError(f"cross-validation with k={k} needs n >= {2 * k}, got {dataset.n}")
    folds = fold_assignment(dataset.n, k, rng)
    all_rows = np.arange(dataset.n)
    results = Parallel(n_jobs=n_jobs)(
        delayed(_fit_fold)(
            dataset, params, np.setdiff1d(all_rows, fold), fold, rng.derive(_FOLD_FIT_STREAM, f)
        )
        for f, fold in enumerate(folds)
    )
    scores = np.array([score for score, _, _ in results])
    best = tuple(int(it) for _, it, _ in results)
    shortest = min(len(curve) for _, _, curve in results)
    curve = np.mean([curve[:shortest] for _, _, curve in results], axis=0)
    best_num_trees = int(np.floor(np.mean(best) + 0.5))
    logger.info("%d-fold CV error %.6g, best number of trees %d", k, scores.mean(), best_num_trees)
    return CVResult(float(scores.mean()), best_num_trees, scores, best, curve)
