# Copyright © 2026 kobt contributors
# SPDX-License-Identifier: Apache 2.0

from kobt.boosted_tree import (
    BoostedModel,
    BoostParams,
    cross_validate,
    find_best_split,
    fit_boosted,
    fit_tree,
    objective_loss,
    predict,
    soft_threshold,
)
from kobt.core_data import DataMatrix, Dataset, RngStream
from kobt.errors import DataError, FitError
from pydantic import ValidationError
import numpy as np
import pytest


def make_dataset(n, p, seed=0, noise=0.5, task="regression"):
    gen = np.random.default_rng(seed)
    x = gen.standard_normal((n, p))
    signal = 2.0 * x[:, 0] - x[:, 1] * (p > 1)
    if task == "binary_classification":
        y = (signal + noise * gen.standard_normal(n) > 0).astype(float)
    else:
        y = signal + noise * gen.standard_normal(n)
    return Dataset(DataMatrix(x, [f"x{j}" for j in range(p)]), y, task=task)


def oracle_split(x, grad, hess, params):
    def score(g, h):
        denominator = h + params.reg_lambda
        return soft_threshold(g, params.reg_alpha) ** 2 / denominator if denominator > 0 else 0.0

    g_total, h_total = grad.sum(), hess.sum()
    best = None
    for feature in range(x.shape[1]):
        values = np.unique(x[:, feature])
        for lower, upper in zip(values[:-1], values[1:]):
            threshold = 0.5 * (lower + upper)
            left = x[:, feature] < threshold
            h_left, h_right = hess[left].sum(), hess[~left].sum()
            if h_left < params.min_child_weight or h_right < params.min_child_weight:
                continue
            gain = 0.5 * (score(grad[left].sum(), h_left) + score(grad[~left].sum(), h_right)
                          - score(g_total, h_total)) - params.gamma
            if gain > 0 and (best is None or gain > best[2]):
                best = (feature, threshold, gain)
    return best


@pytest.mark.parametrize("field, value", [("eta", 0.0), ("eta", 1.5), ("lambda", -1.0), ("max_depth", 0),
                                          ("dart_dropout", 1.0), ("booster", "forest")])
def test_boost_params_ranges(field, value):
    with pytest.raises(ValidationError):
        BoostParams.model_validate({field: value})


def test_boost_params_aliases():
    params = BoostParams.model_validate({"lambda": 3.0, "alpha": 1.0})
    assert params.reg_lambda == 3.0 and params.reg_alpha == 1.0
    assert params.to_json_dict()["lambda"] == 3.0


def test_split_on_separable_data():
    params = BoostParams(reg_lambda=0.0, reg_alpha=0.0, gamma=0.0, min_child_weight=0.0)
    x = np.array([[1.0], [2.0], [3.0], [4.0]])
    y = np.array([0.0, 0.0, 10.0, 10.0])
    split = find_best_split(x, -y, np.ones(4), params)
    assert split.feature == 0
    assert split.threshold == 2.5
    assert split.gain == pytest.approx(50.0)
    assert find_best_split(x, -y, np.ones(4), params.model_copy(update={"gamma": 1e6})) is None


def test_split_needs_two_rows_and_distinct_values():
    params = BoostParams(min_child_weight=0.0)
    assert find_best_split(np.array([[1.0]]), np.array([1.0]), np.array([1.0]), params) is None
    assert find_best_split(np.ones((5, 2)), np.arange(5.0), np.ones(5), params) is None


@pytest.mark.parametrize("seed", [s if s < 40 else pytest.param(s, marks=pytest.mark.slow) for s in range(500)])
def test_split_matches_exhaustive_oracle(seed):
    gen = np.random.default_rng(seed)
    n = int(gen.integers(2, 51))
    p = int(gen.integers(1, 9))
    x = np.round(gen.standard_normal((n, p)), 1)
    grad = gen.standard_normal(n)
    hess = gen.uniform(0.2, 1.0, n)
    params = BoostParams(reg_lambda=float(gen.uniform(0, 2)), reg_alpha=float(gen.uniform(0, 1)),
                         gamma=float(gen.uniform(0, 0.2)), min_child_weight=1.0)
    split = find_best_split(x, grad, hess, params)
    expected = oracle_split(x, grad, hess, params)
    if expected is None:
        assert split is None
        return
    assert split.gain == pytest.approx(expected[2], abs=1e-10)
    # features inducing the same partition may tie up to rounding
    chosen = x[:, split.feature] < split.threshold
    assert np.array_equal(chosen, x[:, expected[0]] < expected[1])
    if split.feature == expected[0]:
        assert split.threshold == pytest.approx(expected[1], abs=1e-12)


@pytest.mark.parametrize(
    "reg_lambda, reg_alpha, expected",
    [(0.0, 0.0, 2.0), (3.0, 0.0, 1.0), (0.0, 6.0, 0.0)],
)
def test_single_leaf_weight(reg_lambda, reg_alpha, expected):
    params = BoostParams(reg_lambda=reg_lambda, reg_alpha=reg_alpha, min_child_weight=100.0)
    y = np.array([1.0, 2.0, 3.0])
    tree = fit_tree(np.array([[0.0], [1.0], [2.0]]), -y, np.ones(3), params, RngStream(0))
    assert tree.root.is_leaf
    assert tree.root.weight == pytest.approx(expected)
    assert tree.root.cover == 3.0


@pytest.mark.parametrize("max_depth", [1, 2, 3, 5])
def test_tree_structure_invariants(max_depth):
    dataset = make_dataset(120, 4, seed=max_depth)
    params = BoostParams(max_depth=max_depth, min_child_weight=2.0, reg_lambda=1.5, reg_alpha=0.3)
    grad = 0.0 - dataset.y
    hess = np.ones(dataset.n)
    tree = fit_tree(dataset.x.values, grad, hess, params, RngStream(1))
    assert tree.depth <= max_depth
    assert tree.num_leaves <= 2**max_depth
    assert tree.root.cover == pytest.approx(dataset.n)
    for node in tree.nodes:
        if not node.is_leaf:
            assert node.cover == pytest.approx(tree.nodes[node.left].cover + tree.nodes[node.right].cover)
    leaves = tree.apply(dataset.x.values)
    for leaf in np.unique(leaves):
        rows = leaves == leaf
        g, h = grad[rows].sum(), hess[rows].sum()
        expected = -soft_threshold(g, params.reg_alpha) / (h + params.reg_lambda)
        assert tree.nodes[leaf].weight == pytest.approx(expected, abs=1e-10)


def test_column_subsampling_restricts_features():
    dataset = make_dataset(100, 6, seed=3)
    params = BoostParams(subsample_cols=0.5, max_depth=3, min_child_weight=1.0)
    tree = fit_tree(dataset.x.values, -dataset.y, np.ones(100), params, RngStream(4))
    used = set(tree.features[tree.features >= 0].tolist())
    assert len(used) <= 3


def test_full_step_stump_reproduces_separable_response():
    x = DataMatrix(np.array([[1.0], [2.0], [3.0], [4.0]]), ["a"])
    dataset = Dataset(x, [0.0, 0.0, 10.0, 10.0])
    params = BoostParams(eta=1.0, reg_lambda=0.0, min_child_weight=0.0, max_depth=1)
    model = fit_boosted(dataset, params, RngStream(0), num_trees=1)
    assert np.allclose(predict(model, x), [0.0, 0.0, 10.0, 10.0])


def test_gbrt_training_loss_is_monotone():
    dataset = make_dataset(150, 5, seed=9)
    params = BoostParams(eta=0.3, gamma=0.5, min_child_weight=1.0, max_depth=3)
    model = fit_boosted(dataset, params, RngStream(2), num_trees=25)
    losses = [objective_loss("squared_error", dataset.y, model.margin(dataset.x, b)) for b in range(26)]
    assert all(later <= earlier + 1e-12 for earlier, later in zip(losses, losses[1:]))


def test_dart_without_dropout_equals_gbrt():
    dataset = make_dataset(80, 4, seed=5)
    gbrt = fit_boosted(dataset, BoostParams(eta=0.2, min_child_weight=1.0), RngStream(6), num_trees=15)
    dart = fit_boosted(dataset, BoostParams(eta=0.2, min_child_weight=1.0, booster="dart", dart_dropout=0.0),
                       RngStream(6), num_trees=15)
    assert gbrt.tree_weights == dart.tree_weights
    assert np.array_equal(predict(gbrt, dataset.x), predict(dart, dataset.x))


def test_dart_rescales_dropped_trees():
    dataset = make_dataset(80, 4, seed=5)
    params = BoostParams(eta=0.2, min_child_weight=1.0, booster="dart", dart_dropout=0.5)
    model = fit_boosted(dataset, params, RngStream(6), num_trees=15)
    assert len(model.trees) == 15
    assert all(0 < w <= params.eta for w in model.tree_weights)
    assert any(w < params.eta for w in model.tree_weights)


def test_predict_accumulates_trees():
    dataset = make_dataset(60, 3, seed=1)
    model = fit_boosted(dataset, BoostParams(eta=0.1, min_child_weight=1.0), RngStream(0), num_trees=10)
    manual = np.full(dataset.n, model.base_score)
    for tree, weight in zip(model.trees, model.tree_weights):
        manual += weight * tree.predict(dataset.x.values)
    assert np.allclose(predict(model, dataset.x), manual, atol=1e-10)
    assert np.allclose(predict(model, dataset.x, num_trees=0), model.base_score)
    with pytest.raises(DataError):
        predict(model, np.zeros((3, 4)))
    with pytest.raises(DataError):
        predict(model, dataset.x, num_trees=11)


def test_logistic_objective():
    dataset = make_dataset(100, 3, seed=2, task="binary_classification")
    params = BoostParams(eta=0.3, objective="logistic", min_child_weight=0.5)
    model = fit_boosted(dataset, params, RngStream(0), num_trees=10)
    prob = predict(model, dataset.x)
    assert np.all((prob > 0) & (prob < 1))
    assert model.base_score == pytest.approx(dataset.y.mean())
    with pytest.raises(FitError):
        fit_boosted(make_dataset(20, 2), params, RngStream(0), num_trees=2)


def test_early_stopping_records_best_iteration():
    train = make_dataset(100, 3, seed=7)
    valid = make_dataset(50, 3, seed=8)
    params = BoostParams(eta=0.3, min_child_weight=1.0, max_trees=300, early_stopping_rounds=5)
    model = fit_boosted(train, params, RngStream(0), validation=valid)
    assert 0 < model.best_iteration <= len(model.trees)
    assert len(model.trees) <= model.best_iteration + params.early_stopping_rounds
    assert len(model.validation_loss) == len(model.trees) + 1
    assert min(model.validation_loss) == model.validation_loss[model.best_iteration]


def test_cross_validate_constant_response():
    x = DataMatrix(np.random.default_rng(0).standard_normal((40, 3)), ["a", "b", "c"])
    dataset = Dataset(x, np.full(40, 3.5))
    result = cross_validate(dataset, BoostParams(min_child_weight=1.0), 4, RngStream(0))
    assert result.cvte == pytest.approx(0.0, abs=1e-20)
    assert result.best_num_trees == 0


def test_cross_validate_is_deterministic():
    dataset = make_dataset(60, 3, seed=4)
    params = BoostParams(eta=0.3, min_child_weight=1.0, max_trees=100)
    first = cross_validate(dataset, params, 3, RngStream(11))
    second = cross_validate(dataset, params, 3, RngStream(11))
    assert first.cvte == second.cvte
    assert np.array_equal(first.fold_scores, second.fold_scores)
    assert first.fold_best_iterations == second.fold_best_iterations
    assert np.array_equal(first.curve, second.curve)
    assert first.cvte == pytest.approx(first.fold_scores.mean())


def test_cross_validate_pure_noise_error_is_near_variance():
    gen = np.random.default_rng(13)
    dataset = Dataset(DataMatrix(gen.standard_normal((200, 5)), list("abcde")), gen.standard_normal(200))
    result = cross_validate(dataset, BoostParams(max_trees=200), 5, RngStream(3))
    assert 0.7 <= result.cvte <= 1.4


def test_cross_validate_classification_error():
    dataset = make_dataset(80, 3, seed=6, task="binary_classification")
    params = BoostParams(eta=0.3, objective="logistic", min_child_weight=0.5, max_trees=50)
    result = cross_validate(dataset, params, 4, RngStream(0))
    assert 0.0 <= result.cvte <= 0.5


@pytest.mark.parametrize("k, n", [(1, 20), (5, 9)])
def test_cross_validate_rejects(k, n):
    with pytest.raises(FitError):
        cross_validate(make_dataset(n, 2), BoostParams(), k, RngStream(0))


def test_model_json_round_trip(tmp_path):
    dataset = make_dataset(70, 4, seed=3)
    params = BoostParams(eta=0.2, min_child_weight=1.0, max_depth=3, booster="dart", dart_dropout=0.3)
    model = fit_boosted(dataset, params, RngStream(1), num_trees=12)
    path = str(tmp_path / "model.json")
    model.save_json(path)
    loaded = BoostedModel.load_json(path)
    assert loaded.params == model.params
    assert np.array_equal(predict(loaded, dataset.x), predict(model, dataset.x))
    assert BoostedModel.from_dict(model.to_dict()).to_dict() == model.to_dict()
