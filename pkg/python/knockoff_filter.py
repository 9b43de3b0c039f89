# Copyright © 2026 kobt contributors
# SPDX-License-Identifier: Apache 2.0

"""The knockoff boosted-tree selection pipeline.

For each of q replicates a fresh knockoff matrix is drawn, a boosted model is
fitted on the original columns next to their knockoffs, and per-column
importances are accumulated. The averaged difference between an original and
its knockoff is thresholded with the knockoff+ rule at the target FDR.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple
import hashlib
import json
import logging

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field

from kobt.bayes_opt import tune
from kobt.boosted_tree import BoostParams, cross_validate, fit_boosted
from kobt.core_data import DataMatrix, Dataset, RngStream
from kobt.errors import DataError
from kobt.importance import STATISTICS, Statistic, active_trees, compute_importance
from kobt.knockoff_gen import KnockoffConfig, generate_knockoffs

logger = logging.getLogger(__name__)

_KNOCKOFF_STREAM = 0
_FIT_STREAM = 1


class FilterConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    q: int = Field(100, ge=1)
    delta: float = Field(0.1, gt=0, lt=1)
    statistic: Statistic = "shap"
    knockoff: KnockoffConfig = KnockoffConfig()
    boost: BoostParams = BoostParams()
    tune_penalties: bool = False
    tune_init: int = Field(10, ge=2)
    tune_iter: int = Field(20, ge=0)
    cv_folds: int = Field(10, ge=2)
    # fixed ensemble size; otherwise chosen by tuning or cross-validation
    num_trees: Optional[int] = Field(None, ge=0)
    master_seed: int = Field(0, ge=0, lt=2**64)

    def config_hash(self) -> str:
        canonical = json.dumps(self.model_dump(mode="json", by_alias=True), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass(frozen=True, eq=False)
class KnockoffStats:
    """Replicate-averaged importances; ``t = mean_abs_orig - mean_abs_knock``."""

    mean_abs_orig: np.ndarray
    mean_abs_knock: np.ndarray
    replicates_used: int
    feature_names: Tuple[str, ...] = ()
    fit_info: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        orig = np.asarray(self.mean_abs_orig, dtype=np.float64)
        knock = np.asarray(self.mean_abs_knock, dtype=np.float64)
        if orig.shape != knock.shape:
            raise DataError(f"{orig.size} original but {knock.size} knockoff statistics")
        object.__setattr__(self, "mean_abs_orig", orig)
        object.__setattr__(self, "mean_abs_knock", knock)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def t(self) -> np.ndarray:
        return self.mean_abs_orig - self.mean_abs_knock

    @property
    def p(self) -> int:
        return self.mean_abs_orig.size

    def swapped(self) -> "KnockoffStats":
        return KnockoffStats(self.mean_abs_knock, self.mean_abs_orig, self.replicates_used, self.feature_names,
                             self.fit_info)


@dataclass(frozen=True, eq=False)
class SelectionResult:
    tau: float
    selected: Tuple[int, ...]
    fdp_path: Tuple[Tuple[float, float], ...]
    stats: KnockoffStats
    delta: float
    provenance: Dict[str, Any] = field(default_factory=dict)

    @property
    def selected_names(self) -> List[str]:
        if not self.stats.feature_names:
            return [str(j) for j in self.selected]
        return [self.stats.feature_names[j] for j in self.selected]


def residualize_covariates(y0: np.ndarray, w: DataMatrix) -> np.ndarray:
    """Residuals of y0 after least squares on the covariates plus an intercept.

    Constant covariate columns are absorbed by the intercept.
    """
    y0 = np.asarray(y0, dtype=np.float64)
    if w.n != y0.size:
        raise DataError(f"covariates have {w.n} rows for {y0.size} responses")
    varying = np.ptp(w.values, axis=0) > 0
    design = np.column_stack([np.ones(w.n), w.values[:, varying]])
    if np.linalg.matrix_rank(design) < design.shape[1]:
        raise DataError("covariate matrix is rank deficient")
    coef, *_ = np.linalg.lstsq(design, y0, rcond=None)
    return y0 - design @ coef


def _boost_for_task(dataset: Dataset, boost: BoostParams) -> BoostParams:
    if dataset.task == "binary_classification" and boost.objective != "logistic":
        logger.info("binary response: switching the boosting objective to logistic")
        return boost.model_copy(update={"objective": "logistic"})
    return boost


def _replicate(dataset: Dataset, knockoff: KnockoffConfig, boost: BoostParams, num_trees: int,
               statistics: Sequence[str], stream: RngStream) -> Tuple[Dict[str, np.ndarray], int]:
    ko = generate_knockoffs(dataset.x, knockoff, stream.derive(_KNOCKOFF_STREAM))
    clipped = len(ko.metadata.get("clipped", ()))
    augmented = dataset.with_x(dataset.x.concat(ko.z))
    if num_trees == 0:
        return {statistic: np.zeros(augmented.p) for statistic in statistics}, clipped
    model = fit_boosted(augmented, boost, stream.derive(_FIT_STREAM), num_trees=num_trees)
    if all(tree.root.is_leaf for tree, _ in active_trees(model)):
        logger.warning("replicate %d grew no splits; it contributes zero importance", stream.stream_id)
    importances = {statistic: compute_importance(model, augmented.x, statistic).values for statistic in statistics}
    return importances, clipped


def accumulate_statistics_multi(
    dataset: Dataset,
    config: FilterConfig,
    statistics: Sequence[str],
    n_jobs: int = 1,
) -> Dict[str, KnockoffStats]:
    """Run the q knockoff replicates once and score them under several statistics."""
    for statistic in statistics:
        if statistic not in STATISTICS:
            raise DataError(f"unknown statistic '{statistic}', expected one of {STATISTICS}")
    boost = _boost_for_task(dataset, config.boost)
    num_trees = config.num_trees
    setup_stream = RngStream(config.master_seed, 0)
    if config.tune_penalties:
        tuned = tune(dataset, boost, config.tune_init, config.tune_iter, config.cv_folds, setup_stream, n_jobs)
        boost = boost.with_penalties(tuned.best.gamma, tuned.best.reg_lambda, tuned.best.reg_alpha)
        if num_trees is None:
            num_trees = tuned.best_num_trees
    elif num_trees is None:
        num_trees = cross_validate(dataset, boost, config.cv_folds, setup_stream, n_jobs).best_num_trees
    num_trees = min(num_trees, boost.max_trees)
    logger.info("running %d knockoff replicates with %d trees each", config.q, num_trees)

    per_replicate = Parallel(n_jobs=n_jobs)(
        delayed(_replicate)(dataset, config.knockoff, boost, num_trees, statistics,
                            RngStream(config.master_seed, m))
        for m in range(1, config.q + 1)
    )

    p = dataset.p
    fit_info = {
        "num_trees": int(num_trees),
        "gamma": boost.gamma,
        "lambda": boost.reg_lambda,
        "alpha": boost.reg_alpha,
        "objective": boost.objective,
        # principal-component count clipped below num_pcs, summed over replicates
        "pcc_clipped_columns": int(sum(clipped for _, clipped in per_replicate)),
        "pcc_clipped_replicates": int(sum(clipped > 0 for _, clipped in per_replicate)),
    }
    out = {}
    for statistic in statistics:
        total = np.zeros(2 * p)
        for values, _ in per_replicate:
            total += values[statistic]
        mean = total / config.q
        out[statistic] = KnockoffStats(mean[:p], mean[p:], config.q, dataset.x.column_names, fit_info)
    return out


def accumulate_statistics(dataset: Dataset, config: FilterConfig, n_jobs: int = 1) -> KnockoffStats:
    return accumulate_statistics_multi(dataset, config, [config.statistic], n_jobs)[config.statistic]


def fdp_hat(t_values: np.ndarray, t: float) -> float:
    """Estimated false discovery proportion at cutoff t, capped at 1."""
    if not t > 0:
        raise DataError(f"the cutoff must be positive, got {t}")
    t_values = np.asarray(t_values, dtype=np.float64)
    negatives = np.sum(t_values <= -t)
    positives = np.sum(t_values >= t)
    return float(min(negatives / max(positives, 1), 1.0))


def knockoff_threshold(t_values: np.ndarray, delta: float) -> float:
    """Smallest positive |T_j| whose knockoff+ estimate is at most delta, else inf."""
    if not 0 < delta < 1:
        raise DataError(f"delta must lie in (0, 1), got {delta}")
    t_values = np.asarray(t_values, dtype=np.float64)
    candidates = np.unique(np.abs(t_values))
    candidates = candidates[candidates > 0]
    if candidates.size == 0:
        return float("inf")
    negatives = np.sum(t_values[None, :] <= -candidates[:, None], axis=1)
    positives = np.sum(t_values[None, :] >= candidates[:, None], axis=1)
    ok = (negatives + 1) / np.maximum(positives, 1) <= delta
    if not ok.any():
        return float("inf")
    return float(candidates[np.argmax(ok)])


def select(stats: KnockoffStats, delta: float, provenance: Optional[Dict[str, Any]] = None) -> SelectionResult:
    t_values = stats.t
    tau = knockoff_threshold(t_values, delta)
    candidates = np.unique(np.abs(t_values))
    fdp_path = tuple((float(t), fdp_hat(t_values, t)) for t in candidates[candidates > 0])
    selected = tuple(int(j) for j in np.flatnonzero(t_values >= tau)) if np.isfinite(tau) else ()
    return SelectionResult(tau, selected, fdp_path, stats, float(delta), dict(provenance or {}))


def run_kobt(dataset: Dataset, config: FilterConfig, n_jobs: int = 1) -> SelectionResult:
    """Residualize on covariates if present, accumulate statistics and select."""
    covariates_used = False
    if dataset.w is not None:
        if dataset.task == "regression":
            dataset = Dataset(dataset.x, residualize_covariates(dataset.y, dataset.w), None, dataset.task)
            covariates_used = True
        else:
            logger.warning("covariate adjustment is skipped for binary classification")
            dataset = Dataset(dataset.x, dataset.y, None, dataset.task)

    stats = accumulate_statistics(dataset, config, n_jobs)
    provenance = {
        "config_hash": config.config_hash(),
        "master_seed": config.master_seed,
        "replicate_streams": [1, config.q],
        "covariates_residualized": covariates_used,
        **stats.fit_info,
    }
    result = select(stats, config.delta, provenance)
    logger.info("selected %d of %d features (tau=%s)", len(result.selected), dataset.p, result.tau)
    return result
