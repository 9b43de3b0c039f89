# Copyright © 2026 kobt contributors
# SPDX-License-Identifier: Apache 2.0

"""Model-X knockoff construction and knockoff quality scores.

Three constructions are provided: second-order Gaussian knockoffs over a
shrunk or a sparse covariance estimate, and sequential principal-component
knockoffs with permuted regression residuals. MAAC and a kernel MMD
permutation test score how close the knockoffs are to the originals.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, Literal, Optional, Union
import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import linalg
from scipy.spatial.distance import pdist, squareform
from sklearn.covariance import ledoit_wolf_shrinkage

from kobt.core_data import DataMatrix, RngStream, destandardize_columns, standardize_columns
from kobt.errors import DataError, KnockoffError

logger = logging.getLogger(__name__)

EIGEN_FLOOR = 1e-8
KNOCKOFF_SUFFIX = "_knockoff"

KnockoffKind = Literal["shrunk_gaussian", "sparse_gaussian", "pc_permute"]


class KnockoffConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: KnockoffKind = "shrunk_gaussian"
    num_pcs: Optional[int] = Field(default=None, ge=1)
    # None selects the universal threshold sqrt(log p / n)
    sparse_threshold: Optional[float] = Field(default=None, ge=0)

    @model_validator(mode="after")
    def _kind_fields(self):
        if self.kind == "pc_permute" and self.num_pcs is None:
            raise ValueError("num_pcs is required for kind 'pc_permute'")
        if self.kind != "pc_permute" and self.num_pcs is not None:
            raise ValueError(f"num_pcs is only valid for kind 'pc_permute', not '{self.kind}'")
        if self.kind != "sparse_gaussian" and self.sparse_threshold is not None:
            raise ValueError(f"sparse_threshold is only valid for kind 'sparse_gaussian', not '{self.kind}'")
        return self

    @property
    def label(self) -> str:
        if self.kind == "pc_permute":
            return f"pc_permute(K={self.num_pcs})"
        return self.kind


@dataclass(frozen=True, eq=False)
class CovarianceEstimate:
    sigma: np.ndarray
    method: str
    shrinkage_intensity: float
    min_eigenvalue: float
    # scale below which the data cannot resolve a direction; caps the knockoff s
    resolution: Optional[float] = None

    @property
    def p(self) -> int:
        return self.sigma.shape[0]


@dataclass(frozen=True, eq=False)
class KnockoffSet:
    """Knockoff matrix paired column-for-column with the original design."""

    z: DataMatrix
    config: KnockoffConfig
    stream: Optional[RngStream] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    def sidecar(self) -> Dict[str, Any]:
        stream = None
        if self.stream is not None:
            stream = {
                "master_seed": self.stream.master_seed,
                "stream_id": self.stream.stream_id,
                "labels": list(self.stream.labels),
            }
        return {
            "config": self.config.model_dump(mode="json"),
            "label": self.config.label,
            "stream": stream,
            "n": self.z.n,
            "p": self.z.p,
            "metadata": self.metadata,
        }


def _values(matrix: Union[DataMatrix, np.ndarray]) -> np.ndarray:
    return matrix.values if isinstance(matrix, DataMatrix) else np.asarray(matrix, dtype=np.float64)


def _knockoff_names(x: DataMatrix):
    return [f"{name}{KNOCKOFF_SUFFIX}" for name in x.column_names]


def _check_standardized(x: DataMatrix) -> None:
    if x.n < 3:
        raise DataError(f"covariance estimation needs n >= 3, got {x.n}")
    sds = x.values.std(axis=0, ddof=1)
    worst = float(np.max(np.abs(sds - 1.0)))
    if worst > 1e-6:
        raise DataError(f"input is not standardized (a column sd deviates from 1 by {worst:.3g})")


def _floor_eigenvalues(sigma: np.ndarray, floor: float = EIGEN_FLOOR):
    sigma = (sigma + sigma.T) / 2
    eigvals, eigvecs = linalg.eigh(sigma)
    if eigvals[0] < floor:
        sigma = (eigvecs * np.maximum(eigvals, floor)) @ eigvecs.T
        sigma = (sigma + sigma.T) / 2
        eigvals = linalg.eigvalsh(sigma)
    return sigma, float(eigvals[0])


def _sample_covariance(values: np.ndarray) -> np.ndarray:
    return np.atleast_2d(np.cov(values, rowvar=False))


def estimate_shrunk_covariance(x: DataMatrix) -> CovarianceEstimate:
    """Linear shrinkage of the sample covariance toward the identity.

    The intensity is the analytic Ledoit-Wolf value; the estimate is floored
    to be positive definite.
    """
    _check_standardized(x)
    intensity = float(np.clip(ledoit_wolf_shrinkage(x.values), 0.0, 1.0))
    sigma = (1.0 - intensity) * _sample_covariance(x.values) + intensity * np.eye(x.p)
    sigma, min_eig = _floor_eigenvalues(sigma)
    logger.debug("shrunk covariance: intensity=%.4f, min eigenvalue=%.3g", intensity, min_eig)
    return CovarianceEstimate(sigma, "shrunk", intensity, min_eig)


def universal_threshold(n: int, p: int) -> float:
    return float(np.sqrt(np.log(p) / n))


def soft_threshold_offdiag(s: np.ndarray, threshold: float) -> np.ndarray:
    out = np.sign(s) * np.maximum(np.abs(s) - threshold, 0.0)
    np.fill_diagonal(out, np.diag(s))
    return out


def estimate_sparse_covariance(x: DataMatrix, threshold: Optional[float] = None) -> CovarianceEstimate:
    """Soft-threshold the off-diagonal sample covariance, then repair to PD."""
    _check_standardized(x)
    if threshold is None:
        threshold = universal_threshold(x.n, x.p)
    if threshold < 0:
        raise DataError(f"threshold must be >= 0, got {threshold}")
    sample = _sample_covariance(x.values)
    sigma, min_eig = _floor_eigenvalues(soft_threshold_offdiag(sample, threshold))
    resolution = max(float(linalg.eigvalsh(sample)[0]), threshold)
    logger.debug("sparse covariance: threshold=%.4f, min eigenvalue=%.3g, resolution=%.4f",
                 threshold, min_eig, resolution)
    return CovarianceEstimate(sigma, "sparse", 0.0, min_eig, resolution)


def _equicorrelated_s(cov: CovarianceEstimate) -> float:
    """min(2 lambda_min, 1), further capped at twice the estimate's resolution.

    Any s in [0, 2 lambda_min] gives valid second-order knockoffs; a smaller s
    gives knockoffs closer to the originals. When p approaches n the sample
    covariance is singular and a thresholded estimate hides it, so the cap keeps
    s from exceeding what the data can resolve.
    """
    s = min(2.0 * float(linalg.eigvalsh(cov.sigma)[0]), 1.0)
    if cov.resolution is not None:
        s = min(s, 2.0 * cov.resolution)
    return max(s, EIGEN_FLOOR)


def sample_gaussian_knockoffs(x: DataMatrix, cov: CovarianceEstimate, rng: RngStream) -> KnockoffSet:
    """Second-order Gaussian knockoffs (equicorrelated) on the standardized scale.

    Row i is drawn from N(x_i - x_i Sigma^-1 D, 2D - D Sigma^-1 D), D = s I.
    """
    if cov.p != x.p:
        raise DataError(f"covariance is {cov.p}x{cov.p} for {x.p} columns")
    sigma = cov.sigma
    s = _equicorrelated_s(cov)
    d = np.full(x.p, s)
    try:
        factor = linalg.cho_factor(sigma)
        sigma_inv_d = linalg.cho_solve(factor, np.diag(d))
    except linalg.LinAlgError as err:
        raise KnockoffError(f"covariance solve failed (estimate is not positive definite): {err}") from err

    mean = x.values - x.values @ sigma_inv_d
    conditional = 2.0 * np.diag(d) - d[:, None] * sigma_inv_d
    conditional = (conditional + conditional.T) / 2
    eigvals, eigvecs = linalg.eigh(conditional)
    root = eigvecs * np.sqrt(np.maximum(eigvals, EIGEN_FLOOR))

    draws = rng.generator().standard_normal((x.n, x.p))
    z = mean + draws @ root.T
    config = KnockoffConfig(kind="sparse_gaussian" if cov.method == "sparse" else "shrunk_gaussian")
    metadata = {
        "s": s,
        "shrinkage_intensity": cov.shrinkage_intensity,
        "min_eigenvalue": cov.min_eigenvalue,
        "resolution": cov.resolution,
    }
    return KnockoffSet(DataMatrix(z, _knockoff_names(x)), config, rng, metadata)


def _leading_components(gram: np.ndarray, k: int) -> np.ndarray:
    """Orthonormal n x k basis spanning the top-k principal component scores."""
    n = gram.shape[0]
    _, vectors = linalg.eigh((gram + gram.T) / 2, subset_by_index=[n - k, n - 1])
    return vectors


def sample_pcc_knockoffs(x: DataMatrix, k: int, rng: RngStream) -> KnockoffSet:
    """Principal-component knockoffs built one column at a time.

    For column j, x_j is regressed (with intercept) on the top-k principal
    component scores of the other originals together with the knockoffs built
    so far; the knockoff is the fit plus a permutation of the residuals. When
    fewer than k components exist the count is clipped and recorded.
    """
    if k < 1:
        raise DataError(f"the number of principal components must be >= 1, got {k}")
    if x.n < 4:
        raise DataError(f"principal-component knockoffs need n >= 4, got {x.n}")
    if x.p < 2:
        raise DataError("principal-component knockoffs need at least 2 columns")

    values = x.values
    n, p = values.shape
    gen = rng.generator()
    z = np.empty_like(values)
    clipped = []
    centered = values - values.mean(axis=0)
    # Gram matrix of the centered block (X_{-j}, Z_{1:j-1}), updated column by column
    gram = centered @ centered.T
    for j in range(p):
        x_j = centered[:, j]
        gram -= np.outer(x_j, x_j)
        k_eff = min(k, n - 2, p - 1 + j)
        if k_eff < k:
            clipped.append({"column": j, "num_pcs": k_eff})
        basis = _leading_components(gram, k_eff)
        # the scores are centered, so the intercept fit is the column mean
        fitted = values[:, j].mean() + basis @ (basis.T @ x_j)
        residuals = values[:, j] - fitted
        z[:, j] = fitted + residuals[gen.permutation(n)]
        z_j = z[:, j] - z[:, j].mean()
        gram += np.outer(z_j, z_j)
    if clipped:
        logger.warning("principal components clipped below %d for %d column(s)", k, len(clipped))
    config = KnockoffConfig(kind="pc_permute", num_pcs=k)
    return KnockoffSet(DataMatrix(z, _knockoff_names(x)), config, rng, {"clipped": clipped})


def generate_knockoffs(x: DataMatrix, config: KnockoffConfig, rng: RngStream) -> KnockoffSet:
    """Standardize, build knockoffs with ``config`` and map them back to x's scale."""
    standardized, means, sds = standardize_columns(x)
    if config.kind == "pc_permute":
        if config.num_pcs > x.n - 1:
            raise DataError(f"num_pcs must lie in [1, n-1] = [1, {x.n - 1}], got {config.num_pcs}")
        result = sample_pcc_knockoffs(standardized, config.num_pcs, rng)
    else:
        if config.kind == "sparse_gaussian":
            cov = estimate_sparse_covariance(standardized, config.sparse_threshold)
        else:
            cov = estimate_shrunk_covariance(standardized)
        result = sample_gaussian_knockoffs(standardized, cov, rng)
    z = DataMatrix(destandardize_columns(result.z.values, means, sds), result.z.column_names)
    return KnockoffSet(z, config, rng, result.metadata)


def maac(a: Union[DataMatrix, np.ndarray], b: Union[DataMatrix, np.ndarray]) -> float:
    """Mean absolute angle (radians) between corresponding columns of a and b."""
    a, b = _values(a), _values(b)
    if a.shape != b.shape:
        raise DataError(f"shape mismatch: {a.shape} vs {b.shape}")
    norms = np.linalg.norm(a, axis=0) * np.linalg.norm(b, axis=0)
    if np.any(norms == 0):
        raise DataError("zero-norm column")
    cosines = np.clip(np.abs(np.sum(a * b, axis=0)) / norms, 0.0, 1.0)
    return float(np.mean(np.arccos(cosines)))


@dataclass(frozen=True)
class KmmdResult:
    statistic: float
    threshold: float
    reject: bool
    bandwidth: float
    p_value: float


def _mmd2_unbiased(kernel: np.ndarray, n: int) -> float:
    k_xx = kernel[:n, :n]
    k_zz = kernel[n:, n:]
    m = kernel.shape[0] - n
    term_xx = (k_xx.sum() - np.trace(k_xx)) / (n * (n - 1))
    term_zz = (k_zz.sum() - np.trace(k_zz)) / (m * (m - 1))
    return float(term_xx + term_zz - 2.0 * kernel[:n, n:].mean())


def kmmd_test(
    x: Union[DataMatrix, np.ndarray],
    z: Union[DataMatrix, np.ndarray],
    num_permutations: int = 200,
    alpha: float = 0.05,
    rng: Optional[RngStream] = None,
) -> KmmdResult:
    """Kernel MMD two-sample permutation test between the rows of x and z.

    Gaussian RBF kernel with the median pooled pairwise distance as bandwidth;
    the rejection threshold is the (1 - alpha) quantile of the statistic over
    random reassignments of the pooled rows into two groups.
    """
    x, z = _values(x), _values(z)
    if x.shape != z.shape:
        raise DataError(f"shape mismatch: {x.shape} vs {z.shape}")
    if num_permutations < 100:
        raise DataError(f"num_permutations must be >= 100, got {num_permutations}")
    if not 0 < alpha < 1:
        raise DataError(f"alpha must lie in (0, 1), got {alpha}")
    rng = rng if rng is not None else RngStream(0)

    pooled = np.vstack([x, z])
    distances = pdist(pooled)
    positive = distances[distances > 0]
    if positive.size == 0:
        raise KnockoffError("degenerate kernel bandwidth: all pooled rows are identical")
    bandwidth = float(np.median(distances))
    if bandwidth == 0:
        bandwidth = float(np.median(positive))
    kernel = np.exp(-squareform(distances) ** 2 / (2.0 * bandwidth**2))

    n = x.shape[0]
    statistic = _mmd2_unbiased(kernel, n)
    gen = rng.generator()
    null = np.empty(num_permutations)
    for b in range(num_permutations):
        order = gen.permutation(pooled.shape[0])
        null[b] = _mmd2_unbiased(kernel[np.ix_(order, order)], n)
    threshold = float(np.quantile(null, 1.0 - alpha))
    p_value = float((np.sum(null >= statistic) + 1) / (num_permutations + 1))
    return KmmdResult(statistic, threshold, bool(statistic > threshold), bandwidth, p_value)
