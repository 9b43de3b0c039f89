# Copyright © 2026 kobt contributors
# SPDX-License-Identifier: Apache 2.0

from kobt.boosted_tree import BoostParams
from kobt.core_data import DataMatrix, RngStream
from kobt.errors import DataError
from kobt.importance import ImportanceVector
from kobt.knockoff_gen import KnockoffConfig
from kobt.sim_harness import (
    ExperimentSpec,
    SimDesign,
    evaluate_power_fdr,
    gen_block_cov,
    gen_design,
    gen_response,
    ranking_ratio,
    run_experiment,
    signal_percentage,
    simulate,
    summarize,
    transform_design,
)
from pydantic import ValidationError
import numpy as np
import pytest

SMALL_DESIGN = SimDesign(n=40, p=10, pi=0.2, rho=0.1)
SMALL_BOOST = BoostParams(eta=0.3, min_child_weight=1.0, max_trees=20, early_stopping_rounds=3)


def test_block_cov():
    assert np.array_equal(gen_block_cov(6, 0.5, 0.0), np.eye(6))
    two = gen_block_cov(4, 0.5, 0.1)
    assert np.allclose(two, [[1, 0.1, 0, 0], [0.1, 1, 0, 0], [0, 0, 1, 0.1], [0, 0, 0.1, 1]])
    sigma = gen_block_cov(500, 0.01, 0.1)
    assert sigma.shape == (500, 500)
    assert sigma[0, 4] == pytest.approx(1e-4)
    assert sigma[0, 5] == 0.0
    assert sigma[5, 9] == pytest.approx(1e-4)
    assert np.linalg.eigvalsh(sigma).min() > 0


def test_block_cov_rejects():
    with pytest.raises(DataError):
        gen_block_cov(10, 0.25, 0.1)
    with pytest.raises(DataError):
        gen_block_cov(10, 0.2, 1.0)


def test_block_cov_shorter_trailing_block():
    sigma = gen_block_cov(7, 3 / 7, 0.5)
    assert sigma[6, 6] == 1.0
    assert sigma[5, 6] == 0.0
    assert sigma[3, 5] == pytest.approx(0.25)


@pytest.mark.parametrize(
    "fields",
    [
        {"p": 10, "pi": 0.05},
        {"p": 10, "pi": 0.15},
        {"p": 10, "pi": 0.1, "structure": "interaction"},
        {"p": 10, "pi": 0.2, "rho": 1.0},
        {"p": 10, "pi": 0.2, "strength": -1.0},
    ],
)
def test_sim_design_rejects(fields):
    with pytest.raises(ValidationError):
        SimDesign(**fields)


def test_sim_design_signal_count():
    assert SimDesign().signal_count == 10
    assert SimDesign(p=200, pi=0.04).signal_count == 8


def test_gen_design_is_reproducible_and_uncorrelated():
    design = SimDesign(n=500, p=10, pi=0.1, rho=0.0)
    x = gen_design(design, RngStream(1))
    assert np.array_equal(x.values, gen_design(design, RngStream(1)).values)
    corr = np.corrcoef(x.values, rowvar=False)
    assert np.all(np.abs(corr[~np.eye(10, dtype=bool)]) < 0.2)
    assert x.column_names[0] == "x1"


def test_gen_design_poisson_marginals():
    design = SimDesign(n=1000, p=10, pi=0.2, rho=0.1, family="poisson")
    x = gen_design(design, RngStream(2)).values
    assert np.all(x >= 0)
    assert np.array_equal(x, np.round(x))
    assert np.all(np.abs(x.mean(axis=0) - 5.0) < 0.3)
    assert np.all(np.abs(x.var(axis=0, ddof=1) - 5.0) < 1.0)


def test_transform_design():
    x0 = DataMatrix(np.array([[-1.0, 0.0, 3.0, 4.0], [2.0, 5.0, 6.0, 7.0]]), ["a", "b", "c", "d"])
    assert np.array_equal(transform_design(x0, "main", 2).values, x0.values)
    assert np.array_equal(transform_design(x0, "quadratic", 1).values[:, 0], [1.0, 4.0])
    assert np.array_equal(transform_design(x0, "exponential", 2).values[0, :2], [np.exp(-1.0), 1.0])
    interaction = transform_design(x0, "interaction", 4).values
    assert np.array_equal(interaction[:, 0], [0.0, 10.0])
    assert np.array_equal(interaction[:, 1], [12.0, 42.0])
    assert np.array_equal(interaction[:, 2:], x0.values[:, 2:])
    with pytest.raises(DataError):
        transform_design(x0, "interaction", 3)
    with pytest.raises(DataError):
        transform_design(x0, "cubic", 2)


@pytest.mark.parametrize("structure", ["main", "interaction", "exponential", "quadratic"])
def test_transform_leaves_noise_columns(structure):
    x0 = gen_design(SMALL_DESIGN, RngStream(3))
    out = transform_design(x0, structure, 2)
    assert np.array_equal(out.values[:, 2:], x0.values[:, 2:])


def test_gen_response():
    ones = DataMatrix(np.ones((5, 3)), ["a", "b", "c"])
    assert np.array_equal(gen_response(ones, 1, 2.0, RngStream(0), noise_sd=0.0), np.full(5, 2.0))
    gen = np.random.default_rng(0)
    x = DataMatrix(gen.standard_normal((1000, 3)), ["a", "b", "c"])
    noise = gen_response(x, 2, 0.0, RngStream(4))
    assert noise.var() == pytest.approx(1.0, abs=0.15)


def test_signal_dominates_noise_correlation():
    design = SimDesign(n=500, p=20, pi=0.1, rho=0.1)
    wins = 0
    for seed in range(100):
        truth = simulate(design, RngStream(seed))
        corr = np.abs([np.corrcoef(truth.y, truth.x_raw.values[:, j])[0, 1] for j in range(design.p)])
        # columns 2.. lie outside the signal block
        wins += corr[0] > corr[2:].max()
    assert wins >= 95


def test_simulate_interaction_uses_raw_design():
    design = SimDesign(n=40, p=10, pi=0.2, structure="interaction", noise_sd=0.0)
    truth = simulate(design, RngStream(5))
    x = truth.x_raw.values
    assert truth.signal_indices == (0, 1)
    assert np.allclose(truth.y, 1.5 * x[:, 0] * x[:, 1])


@pytest.mark.parametrize(
    "values, signals, expected",
    [
        ([3.0, 2.0, 1.0, 0.5], [0, 2], 0.5),
        ([3.0, 2.0, 0.5, 0.1], [0, 1], 0.0),
        ([0.1, 2.0, 3.0, 0.0], [0], 1.0),
        ([1.0, 0.0, 0.0], [0], None),
        ([0.0, 1.0, 2.0], [0], None),
        ([1.0, 1.0, 1.0], [1], 0.5),
    ],
)
def test_ranking_ratio(values, signals, expected):
    assert ranking_ratio(ImportanceVector(np.array(values), "gain"), signals) == expected


def test_signal_percentage():
    assert signal_percentage(np.array([1.0, 0.0, 2.0, 0.0]), [0, 1]) == 0.5
    assert signal_percentage(np.array([1.0]), []) == 0.0


@pytest.mark.parametrize(
    "selected, signals, power, fdp",
    [
        ([1, 4], [1, 4], 1.0, 0.0),
        ([], [1, 4], 0.0, 0.0),
        ([1, 2, 3], [1, 4], 0.5, 2 / 3),
    ],
)
def test_evaluate_power_fdr(selected, signals, power, fdp):
    result = evaluate_power_fdr(selected, signals)
    assert result.power == pytest.approx(power)
    assert result.fdp == pytest.approx(fdp)


def test_summarize():
    mean, se, count = summarize([1.0, None, 3.0])
    assert (mean, count) == (2.0, 2)
    assert se == pytest.approx(1.0)
    assert summarize([2.0]) == (2.0, 0.0, 1)
    assert np.isnan(summarize([None])[0])


def test_unknown_protocol():
    with pytest.raises(ValidationError):
        ExperimentSpec(protocol="table10")


def test_cv_error_experiment():
    spec = ExperimentSpec(protocol="cv_error", design=SMALL_DESIGN, reps=2, boost=SMALL_BOOST, cv_folds=2,
                          boosters=["gbrt", "dart"], traces=True)
    result = run_experiment(spec)
    assert [row.cell for row in result.rows] == ["main/gbrt/depth=2", "main/dart/depth=2"]
    assert all(row.metric == "cvte" and row.reps == 2 and row.mean > 0 for row in result.rows)
    assert result.long_rows[0]["iteration"] == 0
    again = run_experiment(spec)
    assert [row.mean for row in again.rows] == [row.mean for row in result.rows]


def test_ranking_experiment():
    spec = ExperimentSpec(protocol="ranking", design=SMALL_DESIGN, reps=2, boost=SMALL_BOOST, num_trees=10,
                          structures=["main", "quadratic"], statistics=["gain", "shap"])
    result = run_experiment(spec)
    assert len(result.rows) == 2 * 2 * 2
    assert {row.metric for row in result.rows} == {"rr", "signal_pct"}
    for row in result.rows:
        assert row.reps <= 2
        if row.reps:
            assert 0.0 <= row.mean <= 1.0


def test_power_fdr_experiment():
    spec = ExperimentSpec(protocol="power_fdr", design=SMALL_DESIGN, reps=2, boost=SMALL_BOOST, num_trees=10, q=2,
                          statistics=["shap", "gain"], knockoffs=[KnockoffConfig(kind="pc_permute", num_pcs=2)])
    result = run_experiment(spec)
    assert [row.cell for row in result.rows][::2] == ["main/pc_permute(K=2)/shap", "main/pc_permute(K=2)/gain"]
    assert all(0.0 <= row.mean <= 1.0 and row.reps == 2 for row in result.rows)


def test_knockoff_quality_experiment():
    spec = ExperimentSpec(protocol="knockoff_quality", design=SimDesign(n=30, p=6, pi=0.5), reps=2,
                          knockoffs=[KnockoffConfig(), KnockoffConfig(kind="pc_permute", num_pcs=2)],
                          knockoff_draws=2, kmmd_permutations=100)
    result = run_experiment(spec)
    assert [(row.cell, row.metric) for row in result.rows] == [
        ("shrunk_gaussian", "maac"), ("shrunk_gaussian", "kmmd"),
        ("pc_permute(K=2)", "maac"), ("pc_permute(K=2)", "kmmd"),
    ]
    assert len(result.long_rows) == 2 * 2 * 2 * 2
    maac_rows = [row for row in result.rows if row.metric == "maac"]
    assert all(0.0 <= row.mean <= np.pi / 2 for row in maac_rows)


@pytest.mark.slow
def test_cv_error_orders_structures_and_depths():
    design = SimDesign(n=200, p=300, pi=0.02)
    spec = ExperimentSpec(protocol="cv_error", design=design, reps=10,
                          structures=["main", "interaction", "exponential", "quadratic"], depths=[2, 6])
    means = {row.cell: row.mean for row in run_experiment(spec).rows}
    ordered = [means[f"{structure}/gbrt/depth=2"] for structure in ("main", "interaction", "exponential", "quadratic")]
    assert ordered == sorted(ordered)
    assert means["main/gbrt/depth=2"] < means["main/gbrt/depth=6"]


@pytest.mark.slow
def test_knockoff_constructions_order_by_quality():
    spec = ExperimentSpec(protocol="knockoff_quality", design=SimDesign(n=100, p=200, pi=0.04), reps=20,
                          knockoff_draws=50)
    rows = run_experiment(spec).rows
    order = ["sparse_gaussian", "pc_permute(K=30)", "pc_permute(K=10)", "shrunk_gaussian"]
    for metric in ("maac", "kmmd"):
        means = {row.cell: row.mean for row in rows if row.metric == metric}
        assert [means[label] for label in order] == sorted(means[label] for label in order)


@pytest.mark.slow
def test_power_orders_knockoff_constructions():
    spec = ExperimentSpec(protocol="power_fdr", design=SimDesign(n=100, p=200, pi=0.04), reps=20,
                          statistics=["shap"], q=100, delta=0.1)
    rows = {row.cell: row for row in run_experiment(spec).rows if row.metric == "power"}
    order = ["shrunk_gaussian", "pc_permute(K=10)", "pc_permute(K=30)", "sparse_gaussian"]
    cells = [rows[f"main/{label}/shap"] for label in order]
    for stronger, weaker in zip(cells, cells[1:]):
        assert stronger.mean - weaker.mean >= np.hypot(stronger.se, weaker.se)
