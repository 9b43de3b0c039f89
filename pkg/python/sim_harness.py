# Copyright © 2026 kobt contributors
# SPDX-License-Identifier: Apache 2.0

"""Simulation designs and the experiment protocols that score the pipeline.

Designs are Gaussian (or Gaussian-copula Poisson) with a block
autoregressive covariance. The response is built from transformed signal
columns while the fitter only sees the untransformed design.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Union
import logging

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import linalg, stats

from kobt.boosted_tree import BoostParams, cross_validate, fit_boosted
from kobt.core_data import DataMatrix, Dataset, RngStream, standardize_columns
from kobt.errors import DataError
from kobt.importance import STATISTICS, ImportanceVector, Statistic, compute_importance
from kobt.knockoff_filter import FilterConfig, accumulate_statistics_multi, select
from kobt.knockoff_gen import KnockoffConfig, generate_knockoffs, kmmd_test, maac

logger = logging.getLogger(__name__)

Structure = Literal["main", "interaction", "exponential", "quadratic"]

_DESIGN_STREAM = 0
_RESPONSE_STREAM = 1
_FIT_STREAM = 2
_FILTER_SEED_STREAM = 3


def _is_integer(value: float) -> bool:
    return abs(value - round(value)) < 1e-9


class SimDesign(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    n: int = Field(500, ge=4)
    p: int = Field(1000, ge=1)
    pi: float = Field(0.01, gt=0, lt=1)
    rho: float = Field(0.1, ge=0, lt=1)
    # 0 gives a pure-noise response for null studies
    strength: float = Field(1.5, ge=0)
    family: Literal["normal", "poisson"] = "normal"
    poisson_mean: float = Field(5.0, gt=0)
    structure: Structure = "main"
    noise_sd: float = Field(1.0, ge=0)

    @model_validator(mode="after")
    def _signal_count(self):
        count = self.pi * self.p
        if count < 1 - 1e-9:
            raise ValueError(f"pi * p must be at least 1, got {count:g}")
        if not _is_integer(count):
            raise ValueError(f"pi * p must be an integer, got {count:g}")
        if self.structure == "interaction" and round(count) % 2:
            raise ValueError("the interaction structure needs an even number of signals")
        return self

    @property
    def signal_count(self) -> int:
        return int(round(self.pi * self.p))


@dataclass(frozen=True, eq=False)
class SimTruth:
    signal_indices: Tuple[int, ...]
    x_raw: DataMatrix
    y: np.ndarray

    def dataset(self) -> Dataset:
        return Dataset(self.x_raw, self.y)


def gen_block_cov(p: int, pi: float, rho: float) -> np.ndarray:
    """Block-diagonal covariance with entries rho^|j-k| inside blocks of size pi*p.

    A trailing block is shorter when the block size does not divide p.
    """
    size = pi * p
    if not _is_integer(size) or round(size) < 1:
        raise DataError(f"block size pi * p must be a positive integer, got {size:g}")
    if not 0 <= rho < 1:
        raise DataError(f"rho must lie in [0, 1), got {rho}")
    size = int(round(size))
    blocks = []
    for start in range(0, p, size):
        width = min(size, p - start)
        blocks.append(linalg.toeplitz(rho ** np.arange(width)))
    return linalg.block_diag(*blocks)


def gen_design(design: SimDesign, rng: RngStream) -> DataMatrix:
    """Draw X0; Poisson columns come from a Gaussian copula on the same covariance."""
    sigma = gen_block_cov(design.p, design.pi, design.rho)
    try:
        factor = linalg.cholesky(sigma, lower=True)
    except linalg.LinAlgError as err:
        raise DataError(f"design covariance is not positive definite: {err}") from err
    latent = rng.generator().standard_normal((design.n, design.p)) @ factor.T
    if design.family == "poisson":
        uniform = np.clip(stats.norm.cdf(latent), 0.0, np.nextafter(1.0, 0.0))
        latent = stats.poisson.ppf(uniform, design.poisson_mean)
    return DataMatrix(latent, [f"x{j + 1}" for j in range(design.p)])


def transform_design(x0: DataMatrix, structure: str, signal_count: int) -> DataMatrix:
    if signal_count > x0.p:
        raise DataError(f"{signal_count} signals for {x0.p} columns")
    values = np.array(x0.values)
    source = x0.values
    if structure == "interaction":
        if signal_count % 2:
            raise DataError(f"the interaction structure needs an even signal count, got {signal_count}")
        for i in range(signal_count // 2):
            values[:, i] = source[:, 2 * i] * source[:, 2 * i + 1]
    elif structure == "exponential":
        values[:, :signal_count] = np.exp(source[:, :signal_count])
    elif structure == "quadratic":
        values[:, :signal_count] = source[:, :signal_count] ** 2
    elif structure != "main":
        raise DataError(f"unknown structure '{structure}'")
    return x0.with_values(values)


def response_terms(structure: str, signal_count: int) -> int:
    """Number of transformed columns entering the response."""
    return signal_count // 2 if structure == "interaction" else signal_count


def gen_response(x_transformed: DataMatrix, signal_count: int, strength: float, rng: RngStream,
                 noise_sd: float = 1.0) -> np.ndarray:
    if signal_count > x_transformed.p:
        raise DataError(f"{signal_count} signals for {x_transformed.p} columns")
    signal = strength * np.sum(x_transformed.values[:, :signal_count], axis=1)
    return signal + noise_sd * rng.generator().standard_normal(x_transformed.n)


def simulate(design: SimDesign, rng: RngStream) -> SimTruth:
    x0 = gen_design(design, rng.derive(_DESIGN_STREAM))
    transformed = transform_design(x0, design.structure, design.signal_count)
    terms = response_terms(design.structure, design.signal_count)
    y = gen_response(transformed, terms, design.strength, rng.derive(_RESPONSE_STREAM), design.noise_sd)
    return SimTruth(tuple(range(design.signal_count)), x0, y)


def _importance_values(importance: Union[ImportanceVector, np.ndarray]) -> np.ndarray:
    if isinstance(importance, ImportanceVector):
        return importance.values
    return np.asarray(importance, dtype=np.float64)


def ranking_ratio(importance: Union[ImportanceVector, np.ndarray], signal_indices: Sequence[int]) -> Optional[float]:
    """Share of used noise features ranked above the worst-ranked used signal.

    Returns None when the model used no signal or no noise feature.
    """
    values = _importance_values(importance)
    signals = set(int(j) for j in signal_indices)
    used = [int(j) for j in np.flatnonzero(values > 0)]
    used_signals = [j for j in used if j in signals]
    used_noise = [j for j in used if j not in signals]
    if not used_signals or not used_noise:
        return None
    rank = {j: r for r, j in enumerate(sorted(used, key=lambda j: (-values[j], j)))}
    worst = max(rank[j] for j in used_signals)
    return sum(rank[j] < worst for j in used_noise) / len(used_noise)


def signal_percentage(importance: Union[ImportanceVector, np.ndarray], signal_indices: Sequence[int]) -> float:
    values = _importance_values(importance)
    signals = list(signal_indices)
    if not signals:
        return 0.0
    return float(np.mean(values[signals] > 0))


@dataclass(frozen=True)
class PowerFdr:
    power: float
    fdp: float


def evaluate_power_fdr(selected: Sequence[int], signal_indices: Sequence[int]) -> PowerFdr:
    chosen, signals = set(selected), set(signal_indices)
    power = len(chosen & signals) / max(len(signals), 1)
    fdp = len(chosen - signals) / max(len(chosen), 1)
    return PowerFdr(power, fdp)


def _default_knockoffs() -> List[KnockoffConfig]:
    return [
        KnockoffConfig(kind="shrunk_gaussian"),
        KnockoffConfig(kind="sparse_gaussian"),
        KnockoffConfig(kind="pc_permute", num_pcs=10),
        KnockoffConfig(kind="pc_permute", num_pcs=30),
    ]


class ExperimentSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    protocol: Literal["cv_error", "ranking", "power_fdr", "knockoff_quality"]
    design: SimDesign = SimDesign()
    reps: int = Field(100, ge=1)
    master_seed: int = Field(0, ge=0, lt=2**64)
    boost: BoostParams = BoostParams()
    structures: Optional[List[Structure]] = None
    boosters: List[Literal["gbrt", "dart"]] = ["gbrt"]
    depths: List[int] = [2]
    cv_folds: int = Field(10, ge=2)
    statistics: List[Statistic] = list(STATISTICS)
    knockoffs: List[KnockoffConfig] = Field(default_factory=_default_knockoffs)
    q: int = Field(100, ge=1)
    delta: float = Field(0.1, gt=0, lt=1)
    # fixed ensemble size for ranking and power_fdr; cross-validated otherwise
    num_trees: Optional[int] = Field(None, ge=0)
    knockoff_draws: int = Field(50, ge=1)
    kmmd_permutations: int = Field(200, ge=100)
    traces: bool = False

    @model_validator(mode="after")
    def _depths(self):
        if any(depth < 1 for depth in self.depths):
            raise ValueError("depths must be >= 1")
        return self

    def structure_list(self) -> List[str]:
        return list(self.structures) if self.structures else [self.design.structure]

    def design_for(self, structure: str) -> SimDesign:
        return self.design.model_copy(update={"structure": structure})


@dataclass(frozen=True)
class TableRow:
    cell: str
    metric: str
    mean: float
    se: float
    reps: int


@dataclass(frozen=True, eq=False)
class ExperimentResult:
    spec: ExperimentSpec
    rows: Tuple[TableRow, ...]
    long_rows: Tuple[Dict[str, Any], ...] = ()
    provenance: Dict[str, Any] = field(default_factory=dict)


def summarize(values: Sequence[Optional[float]]) -> Tuple[float, float, int]:
    """Mean, standard error and count of the defined values."""
    defined = np.array([v for v in values if v is not None], dtype=np.float64)
    if defined.size == 0:
        return float("nan"), float("nan"), 0
    se = float(defined.std(ddof=1) / np.sqrt(defined.size)) if defined.size > 1 else 0.0
    return float(defined.mean()), se, int(defined.size)


def _rep_stream(spec: ExperimentSpec, rep: int) -> RngStream:
    return RngStream(spec.master_seed, rep)


def _boost(spec: ExperimentSpec, booster: str, depth: int) -> BoostParams:
    return spec.boost.model_copy(update={"booster": booster, "max_depth": depth})


def _cv_error_rep(spec: ExperimentSpec, rep: int):
    stream = _rep_stream(spec, rep)
    out = {}
    for structure in spec.structure_list():
        truth = simulate(spec.design_for(structure), stream)
        for booster in spec.boosters:
            for depth in spec.depths:
                cell = f"{structure}/{booster}/depth={depth}"
                result = cross_validate(truth.dataset(), _boost(spec, booster, depth), spec.cv_folds,
                                        stream.derive(_FIT_STREAM))
                out[cell] = (result.cvte, result.curve)
    return out


def _ranking_rep(spec: ExperimentSpec, rep: int):
    stream = _rep_stream(spec, rep)
    out = {}
    for structure in spec.structure_list():
        truth = simulate(spec.design_for(structure), stream)
        dataset = truth.dataset()
        for booster in spec.boosters:
            for depth in spec.depths:
                params = _boost(spec, booster, depth)
                num_trees = spec.num_trees
                if num_trees is None:
                    num_trees = cross_validate(dataset, params, spec.cv_folds, stream.derive(_FIT_STREAM)).best_num_trees
                model = fit_boosted(dataset, params, stream.derive(_FIT_STREAM, 1), num_trees=min(num_trees, params.max_trees))
                for statistic in spec.statistics:
                    importance = compute_importance(model, dataset.x, statistic)
                    cell = f"{structure}/{booster}/depth={depth}/{statistic}"
                    out[cell] = (ranking_ratio(importance, truth.signal_indices),
                                 signal_percentage(importance, truth.signal_indices))
    return out


def _power_fdr_rep(spec: ExperimentSpec, rep: int):
    stream = _rep_stream(spec, rep)
    seed = int(stream.derive(_FILTER_SEED_STREAM).generator().integers(2**63))
    out = {}
    for structure in spec.structure_list():
        truth = simulate(spec.design_for(structure), stream)
        for knockoff in spec.knockoffs:
            config = FilterConfig(
                q=spec.q, delta=spec.delta, statistic=spec.statistics[0], knockoff=knockoff,
                boost=spec.boost, cv_folds=spec.cv_folds, num_trees=spec.num_trees, master_seed=seed,
            )
            all_stats = accumulate_statistics_multi(truth.dataset(), config, spec.statistics)
            for statistic, knockoff_stats in all_stats.items():
                result = select(knockoff_stats, spec.delta)
                out[f"{structure}/{knockoff.label}/{statistic}"] = evaluate_power_fdr(
                    result.selected, truth.signal_indices
                )
    return out


def _quality_rep(spec: ExperimentSpec, rep: int):
    stream = _rep_stream(spec, rep)
    x, _, _ = standardize_columns(gen_design(spec.design, stream.derive(_DESIGN_STREAM)))
    long_rows = []
    for k, knockoff in enumerate(spec.knockoffs):
        for draw in range(spec.knockoff_draws):
            draw_stream = stream.derive(_FIT_STREAM, k, draw)
            z = generate_knockoffs(x, knockoff, draw_stream).z
            test = kmmd_test(x, z, spec.kmmd_permutations, rng=draw_stream.derive(1))
            for metric, value in (("maac", maac(x, z)), ("kmmd", test.statistic)):
                long_rows.append({"design_draw": rep, "knockoff": knockoff.label, "draw": draw,
                                  "metric": metric, "value": value})
    return long_rows


def _cv_error_table(spec, per_rep):
    rows, long_rows = [], []
    for cell in per_rep[0]:
        mean, se, count = summarize([rep[cell][0] for rep in per_rep])
        rows.append(TableRow(cell, "cvte", mean, se, count))
        if spec.traces:
            curves = [rep[cell][1] for rep in per_rep]
            shortest = min(len(curve) for curve in curves)
            trace = np.mean([curve[:shortest] for curve in curves], axis=0)
            long_rows.extend({"cell": cell, "iteration": i, "mean_cv_loss": float(v)} for i, v in enumerate(trace))
    return rows, long_rows


def _ranking_table(per_rep):
    rows = []
    for cell in per_rep[0]:
        for position, metric in ((0, "rr"), (1, "signal_pct")):
            mean, se, count = summarize([rep[cell][position] for rep in per_rep])
            rows.append(TableRow(cell, metric, mean, se, count))
    return rows


def _power_fdr_table(per_rep):
    rows = []
    for cell in per_rep[0]:
        for metric in ("power", "fdr"):
            attribute = "power" if metric == "power" else "fdp"
            mean, se, count = summarize([getattr(rep[cell], attribute) for rep in per_rep])
            rows.append(TableRow(cell, metric, mean, se, count))
    return rows


def _quality_table(spec, long_rows):
    rows = []
    for knockoff in spec.knockoffs:
        for metric in ("maac", "kmmd"):
            per_design = []
            for rep in range(spec.reps):
                values = [r["value"] for r in long_rows
                          if r["design_draw"] == rep and r["knockoff"] == knockoff.label and r["metric"] == metric]
                per_design.append(float(np.mean(values)))
            mean, se, count = summarize(per_design)
            rows.append(TableRow(knockoff.label, metric, mean, se, count))
    return rows


_PROTOCOLS = {
    "cv_error": _cv_error_rep,
    "ranking": _ranking_rep,
    "power_fdr": _power_fdr_rep,
    "knockoff_quality": _quality_rep,
}


def run_experiment(spec: ExperimentSpec, n_jobs: int = 1) -> ExperimentResult:
    """Run a protocol over ``spec.reps`` replicates and tabulate mean and SE per cell.

    Replicate r draws from ``RngStream(master_seed, r)``, so tables do not
    depend on ``n_jobs``.
    """
    if spec.protocol not in _PROTOCOLS:
        raise DataError(f"unknown protocol '{spec.protocol}'")
    logger.info("running %s with %d replicate(s)", spec.protocol, spec.reps)
    per_rep = Parallel(n_jobs=n_jobs)(delayed(_PROTOCOLS[spec.protocol])(spec, rep) for rep in range(spec.reps))

    long_rows: List[Dict[str, Any]] = []
    if spec.protocol == "cv_error":
        rows, long_rows = _cv_error_table(spec, per_rep)
    elif spec.protocol == "ranking":
        rows = _ranking_table(per_rep)
    elif spec.protocol == "power_fdr":
        rows = _power_fdr_table(per_rep)
    else:
        long_rows = [row for rep_rows in per_rep for row in rep_rows]
        rows = _quality_table(spec, long_rows)
    provenance = {"protocol": spec.protocol, "master_seed": spec.master_seed, "reps": spec.reps}
    return ExperimentResult(spec, tuple(rows), tuple(long_rows), provenance)
