# Copyright © 2026 kobt contributors
# SPDX-License-Identifier: Apache 2.0


class KobtError(Exception):
    """Base class of every error raised by the kobt pipeline."""


class DataError(KobtError, ValueError):
    """Malformed input data or a violated data invariant."""


class ConfigError(KobtError, ValueError):
    """A job configuration that passed schema validation but is unusable."""


class KnockoffError(KobtError):
    """Covariance estimation or knockoff sampling failed."""


class FitError(KobtError):
    """Boosted-tree fitting or cross-validation failed."""


class OptimizationError(KobtError):
    """The Bayesian-optimization surrogate could not be fitted."""
