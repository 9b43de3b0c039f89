# Copyright © 2026 kobt contributors
# SPDX-License-Identifier: Apache 2.0

"""Data containers, CSV ingestion, column hygiene and reproducible random streams.

Every other module consumes :class:`Dataset`/:class:`DataMatrix` and draws its
randomness from an :class:`RngStream`, so a run is a pure function of its
inputs and its master seed.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union
import logging
import re

import numpy as np
import pandas as pd

from kobt.errors import DataError

logger = logging.getLogger(__name__)

TASKS = ("regression", "binary_classification")

# integer or decimal literal with optional exponent; nan/inf are rejected
_NUMBER = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")

_UINT64_LIMIT = 2**64


@dataclass(frozen=True, eq=False)
class DataMatrix:
    """An immutable n x p real matrix with unique column names."""

    values: np.ndarray
    column_names: Tuple[str, ...]
    check_finite: bool = field(default=True, repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 2:
            raise DataError(f"expected a 2-D matrix, got {values.ndim} dimension(s)")
        names = tuple(str(name) for name in self.column_names)
        n, p = values.shape
        if n < 2:
            raise DataError(f"a data matrix needs at least 2 rows, got {n}")
        if p < 1:
            raise DataError("a data matrix needs at least 1 column")
        if len(names) != p:
            raise DataError(f"{len(names)} column names for {p} columns")
        if len(set(names)) != p:
            raise DataError("column names must be unique")
        if self.check_finite and not np.all(np.isfinite(values)):
            row, col = np.argwhere(~np.isfinite(values))[0]
            raise DataError(f"non-finite value at row {row}, column '{names[col]}'")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "column_names", names)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def column_index(self, name: str) -> int:
        try:
            return self.column_names.index(name)
        except ValueError:
            raise DataError(f"no column named '{name}'") from None

    def select(self, indices: Sequence[int]) -> "DataMatrix":
        indices = list(indices)
        return DataMatrix(
            self.values[:, indices],
            [self.column_names[j] for j in indices],
            check_finite=self.check_finite,
        )

    def take_rows(self, rows: Sequence[int]) -> "DataMatrix":
        return DataMatrix(self.values[rows, :], self.column_names, self.check_finite)

    def with_values(self, values: np.ndarray) -> "DataMatrix":
        return DataMatrix(values, self.column_names)

    def concat(self, other: "DataMatrix") -> "DataMatrix":
        if other.n != self.n:
            raise DataError(f"row mismatch: {self.n} vs {other.n}")
        return DataMatrix(
            np.hstack([self.values, other.values]),
            self.column_names + other.column_names,
        )

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.values, columns=list(self.column_names))


@dataclass(frozen=True, eq=False)
class Dataset:
    """Design matrix, response and optional covariates of one analysis."""

    x: DataMatrix
    y: np.ndarray
    w: Optional[DataMatrix] = None
    task: str = "regression"

    def __post_init__(self):
        y = np.array(self.y, dtype=np.float64, copy=True).ravel()
        if self.task not in TASKS:
            raise DataError(f"unknown task '{self.task}', expected one of {TASKS}")
        if y.shape[0] != self.x.n:
            raise DataError(f"response has {y.shape[0]} entries for {self.x.n} rows")
        if not np.all(np.isfinite(y)):
            raise DataError(f"non-finite response at row {int(np.argmin(np.isfinite(y)))}")
        if self.w is not None and self.w.n != self.x.n:
            raise DataError(f"covariates have {self.w.n} rows for {self.x.n} rows")
        if self.task == "binary_classification" and not np.all(np.isin(y, (0.0, 1.0))):
            raise DataError("binary classification requires a response in {0, 1}")
        y.setflags(write=False)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.n

    @property
    def p(self) -> int:
        return self.x.p

    def with_response(self, y: np.ndarray) -> "Dataset":
        return Dataset(self.x, y, self.w, self.task)

    def with_x(self, x: DataMatrix) -> "Dataset":
        return Dataset(x, self.y, self.w, self.task)

    def subset_rows(self, rows: Sequence[int]) -> "Dataset":
        rows = np.asarray(rows)
        w = self.w.take_rows(rows) if self.w is not None else None
        return Dataset(self.x.take_rows(rows), self.y[rows], w, self.task)


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream keyed by ``(master_seed, stream_id)``.

    The key feeds a Philox generator, so two streams with the same key draw the
    same sequence whichever process or thread owns them. ``derive`` produces
    child streams for sub-tasks (one per tree, fold or replicate stage).
    """

    master_seed: int
    stream_id: int = 0
    labels: Tuple[int, ...] = ()

    def __post_init__(self):
        for value in (self.master_seed, self.stream_id) + tuple(self.labels):
            if not 0 <= int(value) < _UINT64_LIMIT:
                raise DataError(f"stream seeds must be 64-bit unsigned integers, got {value}")
        object.__setattr__(self, "labels", tuple(int(label) for label in self.labels))

    def key(self) -> np.ndarray:
        if not self.labels:
            return np.array([self.master_seed, self.stream_id], dtype=np.uint64)
        entropy = [self.master_seed, self.stream_id, *self.labels]
        return np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint64)

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=self.key()))

    def derive(self, *labels: int) -> "RngStream":
        return RngStream(self.master_seed, self.stream_id, self.labels + tuple(labels))


def _locate(column: str, names: List[str], has_header: bool) -> int:
    if isinstance(column, (int, np.integer)):
        index = int(column)
        if not -len(names) <= index < len(names):
            raise DataError(f"column index {index} out of range for {len(names)} columns")
        return index % len(names)
    if column not in names:
        hint = "" if has_header else " (file has no header; use a column index)"
        raise DataError(f"missing column '{column}'{hint}")
    return names.index(column)


def load_csv(
    path: str,
    has_header: bool = True,
    response_column: Union[str, int] = -1,
    covariate_columns: Optional[Sequence[Union[str, int]]] = None,
    task: str = "regression",
) -> Dataset:
    """Read a numeric CSV file into a :class:`Dataset`.

    Every data cell must be an integer or decimal literal (scientific notation
    allowed). The response column is extracted, covariate columns are split into
    ``w`` and the remaining columns form ``x``; row order is preserved.
    """
    try:
        # header=None keeps header cells verbatim; pandas would rename duplicates
        frame = pd.read_csv(
            path,
            header=None,
            dtype=str,
            keep_default_na=False,
            skipinitialspace=True,
            encoding="utf-8",
        )
    except pd.errors.ParserError as err:
        raise DataError(f"ragged rows in {path}: {err}") from err
    except pd.errors.EmptyDataError as err:
        raise DataError(f"no data in {path}") from err
    except UnicodeDecodeError as err:
        raise DataError(f"{path} is not valid UTF-8 (byte offset {err.start}: {err.reason})") from err

    if has_header:
        names = [str(name).strip() for name in frame.iloc[0]]
        frame = frame.iloc[1:].reset_index(drop=True)
        duplicates = sorted({name for name in names if names.count(name) > 1})
        if duplicates:
            raise DataError(f"{path}: duplicate column name(s) in header: {', '.join(duplicates)}")
    else:
        names = [f"col{j}" for j in range(frame.shape[1])]
    frame.columns = names
    header_rows = 1 if has_header else 0

    for j, name in enumerate(names):
        cells = frame[name]
        missing = cells.isna() | (cells.str.strip() == "")
        if missing.any():
            row = int(np.flatnonzero(missing.to_numpy())[0]) + header_rows + 1
            raise DataError(f"{path}: row {row}, column '{name}': missing value (ragged row or empty cell)")
        valid = cells.str.strip().str.fullmatch(_NUMBER)
        if not valid.all():
            bad = int(np.flatnonzero(~valid.to_numpy())[0])
            raise DataError(
                f"{path}: row {bad + header_rows + 1}, column '{name}': "
                f"cannot parse '{cells.iloc[bad]}' as a number"
            )
    values = frame.apply(lambda col: col.str.strip().astype(np.float64)).to_numpy()

    response = _locate(response_column, names, has_header)
    covariates = [_locate(c, names, has_header) for c in (covariate_columns or [])]
    if response in covariates:
        raise DataError(f"column '{names[response]}' is both response and covariate")
    features = [j for j in range(len(names)) if j != response and j not in covariates]
    if not features:
        raise DataError(f"{path}: no feature columns left after removing response/covariates")

    x = DataMatrix(values[:, features], [names[j] for j in features])
    w = DataMatrix(values[:, covariates], [names[j] for j in covariates]) if covariates else None
    logger.info("loaded %s: n=%d, p=%d, covariates=%d", path, x.n, x.p, len(covariates))
    return Dataset(x, values[:, response], w, task)


def write_csv(dataset: Dataset, path: str, response_name: str = "y") -> None:
    """Write a dataset so that :func:`load_csv` reads it back bit-identically."""
    frame = dataset.x.to_frame()
    if dataset.w is not None:
        frame = pd.concat([frame, dataset.w.to_frame()], axis=1)
    if response_name in frame.columns:
        raise DataError(f"response name '{response_name}' clashes with a column name")
    frame[response_name] = dataset.y
    frame.to_csv(path, index=False, float_format="%.17g", encoding="utf-8")


def clean_columns(x: DataMatrix) -> Tuple[DataMatrix, List[str]]:
    """Drop columns with non-finite entries or zero sample variance."""
    values = x.values
    finite = np.all(np.isfinite(values), axis=0)
    variance = np.zeros(x.p)
    if finite.any():
        variance[finite] = np.var(values[:, finite], axis=0, ddof=1)
    keep = finite & (variance > 0)
    dropped = [name for name, kept in zip(x.column_names, keep) if not kept]
    if not keep.any():
        raise DataError("every column has missing values or zero variance")
    if dropped:
        logger.warning("dropping %d degenerate column(s): %s", len(dropped), ", ".join(dropped[:10]))
    return DataMatrix(values[:, keep], [n for n, k in zip(x.column_names, keep) if k]), dropped


def standardize_columns(x: DataMatrix) -> Tuple[DataMatrix, np.ndarray, np.ndarray]:
    """Center each column and scale it to unit sample standard deviation."""
    means = x.values.mean(axis=0)
    sds = x.values.std(axis=0, ddof=1)
    if np.any(sds == 0):
        name = x.column_names[int(np.argmin(sds))]
        raise DataError(f"column '{name}' has zero variance; run clean_columns first")
    return x.with_values((x.values - means) / sds), means, sds


def destandardize_columns(values: np.ndarray, means: np.ndarray, sds: np.ndarray) -> np.ndarray:
    return np.asarray(values) * sds + means
