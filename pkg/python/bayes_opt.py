# Copyright © 2026 kobt contributors
# SPDX-License-Identifier: Apache 2.0

"""Gaussian-process Bayesian optimization of the boosting penalties.

The surrogate is a zero-mean GP with a Matern-5/2 kernel on inputs scaled to
the unit cube and standardized outputs. Its length scale is picked from a
small grid by marginal likelihood. Proposals maximize Expected Improvement
over Sobol candidates plus local perturbations of the incumbent.
"""

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union
import logging

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field
from scipy import linalg
from scipy.stats import norm, qmc
from sklearn.gaussian_process import GaussianProcessRegressor
from sklearn.gaussian_process.kernels import ConstantKernel, Matern

from kobt.boosted_tree import BoostParams, cross_validate
from kobt.core_data import Dataset, RngStream
from kobt.errors import OptimizationError

logger = logging.getLogger(__name__)

PENALTY_BOUNDS = (0.0, 20.0)
LENGTH_SCALES = (0.1, 0.3, 1.0)
JITTER = 1e-6
XI = 0.01
NUM_CANDIDATES = 1024
NUM_LOCAL = 64
LOCAL_SD = 0.05

_INIT_STREAM = 0
_TUNE_CV_STREAM = 1 << 41


class HyperPoint(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)

    gamma: float = Field(ge=PENALTY_BOUNDS[0], le=PENALTY_BOUNDS[1])
    reg_lambda: float = Field(ge=PENALTY_BOUNDS[0], le=PENALTY_BOUNDS[1], alias="lambda")
    reg_alpha: float = Field(ge=PENALTY_BOUNDS[0], le=PENALTY_BOUNDS[1], alias="alpha")

    def as_array(self) -> np.ndarray:
        return np.array([self.gamma, self.reg_lambda, self.reg_alpha])

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "HyperPoint":
        lo, hi = PENALTY_BOUNDS
        gamma, reg_lambda, reg_alpha = (float(np.clip(v, lo, hi)) for v in values)
        return cls(gamma=gamma, reg_lambda=reg_lambda, reg_alpha=reg_alpha)


@dataclass(frozen=True, eq=False)
class Surrogate:
    """Fitted GP posterior over the unit cube."""

    points: np.ndarray
    observations: np.ndarray
    gp: GaussianProcessRegressor
    length_scale: float
    log_marginal_likelihood: float
    y_mean: float
    y_scale: float
    bounds: Tuple[float, float] = PENALTY_BOUNDS

    def normalize(self, raw: np.ndarray) -> np.ndarray:
        lo, hi = self.bounds
        return (np.asarray(raw, dtype=np.float64) - lo) / (hi - lo)

    def denormalize(self, unit: np.ndarray) -> np.ndarray:
        lo, hi = self.bounds
        return lo + np.asarray(unit) * (hi - lo)

    def predict(self, raw: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Posterior mean and standard deviation on the observation scale."""
        mean, std = self.gp.predict(self.normalize(np.atleast_2d(raw)), return_std=True)
        return self.y_mean + self.y_scale * mean, self.y_scale * std


def _as_raw(point: Union[HyperPoint, Sequence[float]]) -> np.ndarray:
    return point.as_array() if isinstance(point, HyperPoint) else np.asarray(point, dtype=np.float64)


def fit_surrogate(
    observations: Sequence[Tuple[Union[HyperPoint, Sequence[float]], float]],
    bounds: Tuple[float, float] = PENALTY_BOUNDS,
) -> Surrogate:
    if len(observations) < 2:
        raise OptimizationError(f"a surrogate needs at least 2 observations, got {len(observations)}")
    lo, hi = bounds
    raw = np.vstack([_as_raw(point) for point, _ in observations])
    y = np.array([value for _, value in observations], dtype=np.float64)
    if not np.all(np.isfinite(y)):
        raise OptimizationError("non-finite objective value in observations")
    if np.unique(raw, axis=0).shape[0] < 2:
        raise OptimizationError("observations contain fewer than 2 distinct points")

    unit = (raw - lo) / (hi - lo)
    y_mean = float(y.mean())
    y_scale = float(y.std())
    if y_scale == 0:
        y_scale = 1.0
    standardized = (y - y_mean) / y_scale

    best = None
    for length_scale in LENGTH_SCALES:
        kernel = ConstantKernel(1.0, constant_value_bounds="fixed") * Matern(
            length_scale=length_scale, length_scale_bounds="fixed", nu=2.5
        )
        gp = GaussianProcessRegressor(kernel=kernel, alpha=JITTER, optimizer=None)
        try:
            gp.fit(unit, standardized)
        except (linalg.LinAlgError, ValueError) as err:
            logger.debug("length scale %g rejected: %s", length_scale, err)
            continue
        lml = float(gp.log_marginal_likelihood_value_)
        if best is None or lml > best[2]:
            best = (gp, length_scale, lml)
    if best is None:
        raise OptimizationError("no kernel length scale gave a positive definite covariance")
    gp, length_scale, lml = best
    return Surrogate(unit, y, gp, length_scale, lml, y_mean, y_scale, bounds)


def expected_improvement(mean: np.ndarray, std: np.ndarray, best: float, xi: float = XI) -> np.ndarray:
    """EI for minimization; zero wherever the posterior sd is zero."""
    improvement = best - mean - xi
    ei = np.zeros_like(mean)
    positive = std > 0
    z = improvement[positive] / std[positive]
    ei[positive] = improvement[positive] * norm.cdf(z) + std[positive] * norm.pdf(z)
    return ei


def _shifted_sequence(engine: qmc.QMCEngine, count: int, gen: np.random.Generator) -> np.ndarray:
    # random rotation of a fixed low-discrepancy sequence
    return (engine.random(count) + gen.random(engine.d)) % 1.0


def _propose_unit(surrogate: Surrogate, rng: RngStream) -> np.ndarray:
    gen = rng.generator()
    dim = surrogate.points.shape[1]
    candidates = _shifted_sequence(qmc.Sobol(d=dim, scramble=False), NUM_CANDIDATES, gen)
    incumbent = surrogate.points[int(np.argmin(surrogate.observations))]
    local = np.clip(incumbent + gen.normal(0.0, LOCAL_SD, size=(NUM_LOCAL, dim)), 0.0, 1.0)
    pool = np.vstack([candidates, local])

    mean, std = surrogate.gp.predict(pool, return_std=True)
    best = float(np.min((surrogate.observations - surrogate.y_mean) / surrogate.y_scale))
    ei = expected_improvement(mean, std, best)
    return pool[int(np.argmax(ei))]


def propose_next(surrogate: Surrogate, rng: RngStream) -> HyperPoint:
    """Maximize Expected Improvement; ties go to the earliest candidate."""
    return HyperPoint.from_array(surrogate.denormalize(_propose_unit(surrogate, rng)))


@dataclass(frozen=True)
class HistoryEntry:
    step: int
    stage: str
    point: Tuple[float, ...]
    value: float
    info: Dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class OptimizationResult:
    best_point: np.ndarray
    best_value: float
    history: Tuple[HistoryEntry, ...]

    def running_minimum(self) -> np.ndarray:
        return np.minimum.accumulate([entry.value for entry in self.history])


def _split_result(result) -> Tuple[float, Dict[str, Any]]:
    if isinstance(result, tuple):
        value, info = result
    else:
        value, info = result, {}
    value = float(value)
    if not np.isfinite(value):
        raise OptimizationError(f"objective returned a non-finite value {value}")
    return value, dict(info)


def minimize(
    objective: Callable[[np.ndarray], Any],
    n_init: int = 10,
    n_iter: int = 20,
    rng: Optional[RngStream] = None,
    bounds: Tuple[float, float] = PENALTY_BOUNDS,
    dim: int = 3,
    n_jobs: int = 1,
) -> OptimizationResult:
    """Minimize ``objective`` over the cube ``[lo, hi]^dim``.

    ``objective`` returns either a float or ``(value, info)``; ``info`` is
    kept in the history. Initial points are a randomly shifted Halton design
    and may be evaluated in parallel; the Bayesian rounds are sequential.
    """
    if n_init < 2:
        raise OptimizationError(f"n_init must be >= 2, got {n_init}")
    if n_iter < 0:
        raise OptimizationError(f"n_iter must be >= 0, got {n_iter}")
    rng = rng if rng is not None else RngStream(0)
    lo, hi = bounds

    init_unit = _shifted_sequence(
        qmc.Halton(d=dim, scramble=False), n_init, rng.derive(_INIT_STREAM).generator()
    )
    init_points = lo + init_unit * (hi - lo)
    results = Parallel(n_jobs=n_jobs)(delayed(objective)(point) for point in init_points)

    history: List[HistoryEntry] = []
    for step, (point, result) in enumerate(zip(init_points, results)):
        value, info = _split_result(result)
        history.append(HistoryEntry(step, "init", tuple(float(v) for v in point), value, info))

    for round_index in range(n_iter):
        surrogate = fit_surrogate([(entry.point, entry.value) for entry in history], bounds)
        point = surrogate.denormalize(_propose_unit(surrogate, rng.derive(round_index + 1)))
        point = np.clip(point, lo, hi)
        value, info = _split_result(objective(point))
        history.append(HistoryEntry(len(history), "bo", tuple(float(v) for v in point), value, info))
        logger.debug("round %d: value %.6g, length scale %g", round_index + 1, value, surrogate.length_scale)

    values = np.array([entry.value for entry in history])
    best = int(np.argmin(values))
    return OptimizationResult(np.array(history[best].point), float(values[best]), tuple(history))


@dataclass(frozen=True, eq=False)
class TuneResult:
    best: HyperPoint
    cvte: float
    best_num_trees: int
    history: Tuple[HistoryEntry, ...]

    def history_records(self) -> List[Dict[str, Any]]:
        records = []
        for entry in self.history:
            gamma, reg_lambda, reg_alpha = entry.point
            records.append({
                "step": entry.step,
                "stage": entry.stage,
                "gamma": gamma,
                "lambda": reg_lambda,
                "alpha": reg_alpha,
                "cvte": entry.value,
                **entry.info,
            })
        return records


def tune(
    dataset: Dataset,
    base: BoostParams,
    n_init: int = 10,
    n_iter: int = 20,
    k: int = 10,
    rng: Optional[RngStream] = None,
    n_jobs: int = 1,
) -> TuneResult:
    """Tune (gamma, lambda, alpha) over [0, 20]^3 against k-fold CV error.

    Every evaluation uses the same fold assignment, so differences in CV
    error come from the penalties alone.
    """
    rng = rng if rng is not None else RngStream(0)
    cv_stream = rng.derive(_TUNE_CV_STREAM)

    def objective(point):
        point = HyperPoint.from_array(point)
        params = base.with_penalties(point.gamma, point.reg_lambda, point.reg_alpha)
        result = cross_validate(dataset, params, k, cv_stream)
        return result.cvte, {"best_num_trees": result.best_num_trees}

    outcome = minimize(objective, n_init, n_iter, rng, PENALTY_BOUNDS, 3, n_jobs)
    best_entry = min(outcome.history, key=lambda entry: (entry.value, entry.step))
    best = HyperPoint.from_array(best_entry.point)
    logger.info(
        "tuned penalties gamma=%.4g lambda=%.4g alpha=%.4g, CV error %.6g",
        best.gamma, best.reg_lambda, best.reg_alpha, best_entry.value,
    )
    return TuneResult(best, best_entry.value, int(best_entry.info["best_num_trees"]), outcome.history)
