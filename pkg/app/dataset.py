"""
Series ingestion, sliding-window design, z-score normalisation and the chronological split.

Note:
- X is laid out n x S x Q with the oldest lag at t = 1 and the newest at t = Q
- The teacher signal y(tau), tau = 1..Q, of every row is stored next to X for the output-feedback architectures
"""

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view

from app.errors import (
    DatasetTooShortError,
    DegenerateSeriesError,
    DimensionError,
    IngestionError,
    InvalidSpecError,
)
from app.tensor import freeze
from application_sdk.observability.logger_adaptor import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True, eq=False)
class RawSeries:
    """Time-ordered values; 1-D for univariate series, T x S otherwise (target first)."""

    values: np.ndarray
    name: str = "series"
    columns: Tuple[str, ...] = ()

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim not in (1, 2):
            raise IngestionError(f"series '{self.name}' must be 1-D or 2-D")
        if values.shape[0] < 2:
            raise DatasetTooShortError(
                f"series '{self.name}' needs at least 2 values, got {values.shape[0]}"
            )
        if not np.all(np.isfinite(values)):
            raise IngestionError(f"series '{self.name}' contains non-finite values")
        object.__setattr__(self, "values", freeze(values))
        if not self.columns:
            count = 1 if values.ndim == 1 else values.shape[1]
            object.__setattr__(
                self, "columns", tuple(f"{self.name}_{s}" for s in range(count))
            )

    def __len__(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, item: slice) -> "RawSeries":
        return RawSeries(self.values[item], name=self.name, columns=self.columns)

    @property
    def n_features(self) -> int:
        return 1 if self.values.ndim == 1 else self.values.shape[1]

    def as_matrix(self) -> np.ndarray:
        return self.values.reshape(len(self), self.n_features)


@dataclass(frozen=True, eq=False)
class NormParams:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def denormalize_target(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(y) * self.std[0] + self.mean[0]


@dataclass(frozen=True, eq=False)
class TimeSeriesDataset:
    X: np.ndarray
    Y: np.ndarray
    teacher: np.ndarray
    Q: int
    S: int
    source: np.ndarray
    split_fraction: float = 1.0
    norm_params: Optional[NormParams] = None
    name: str = "series"

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def n_train(self) -> int:
        return math.floor(self.n * self.split_fraction)

    @property
    def n_test(self) -> int:
        return self.n - self.n_train

    @property
    def is_normalized(self) -> bool:
        return self.norm_params is not None

    def train_rows(self) -> np.ndarray:
        return np.arange(self.n_train)

    def test_rows(self) -> np.ndarray:
        return np.arange(self.n_train, self.n)

    def subset(self, rows: Union[Sequence[int], np.ndarray]) -> "TimeSeriesDataset":
        """Dataset restricted to `rows`; split and normalisation are carried over."""
        rows = np.asarray(rows, dtype=np.int64)
        if rows.size and (rows.min() < 0 or rows.max() >= self.n):
            raise IndexError(f"rows outside [0, {self.n})")
        return TimeSeriesDataset(
            X=freeze(np.ascontiguousarray(self.X[rows])),
            Y=freeze(np.ascontiguousarray(self.Y[rows])),
            teacher=freeze(np.ascontiguousarray(self.teacher[rows])),
            Q=self.Q,
            S=self.S,
            source=self.source,
            split_fraction=1.0,
            norm_params=self.norm_params,
            name=self.name,
        )

    def denormalize_target(self, y: np.ndarray) -> np.ndarray:
        if self.norm_params is None:
            return np.asarray(y, dtype=np.float64)
        return self.norm_params.denormalize_target(y)


def load_csv(path: Union[str, Path], column: Union[str, Sequence[str]]) -> RawSeries:
    """Read one or more numeric columns of a CSV file into a RawSeries.

    Args:
        path: UTF-8 CSV with a header row; row order is time order.
        column: Column name, or a list of names for a multivariate series
            whose first entry is the forecast target.

    Returns:
        RawSeries: Values in file order.

    Raises:
        IngestionError: Missing file, missing column, or a blank/non-numeric cell
            (the error names the 1-based data row and the column).
    """
    path = Path(path)
    columns = [column] if isinstance(column, str) else list(column)
    if not path.is_file():
        logger.error(f"CSV file not found: {path}")
        raise IngestionError(f"file not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        logger.error(f"cannot parse {path}: {exc}")
        raise IngestionError(f"cannot parse {path}: {exc}") from exc
    except OSError as exc:
        logger.error(f"cannot read {path}: {exc}")
        raise IngestionError(f"cannot read {path}: {exc}") from exc

    parsed = []
    for name in columns:
        if name not in frame.columns:
            logger.error(f"column '{name}' missing from {path}")
            raise IngestionError(f"column '{name}' not in {path}", column=name)
        numeric = pd.to_numeric(frame[name].str.strip(), errors="coerce")
        bad = ~np.isfinite(numeric.to_numpy(dtype=np.float64, na_value=np.nan))
        if bad.any():
            row = int(np.flatnonzero(bad)[0]) + 1
            raise IngestionError(
                f"row {row}, column '{name}': '{frame[name].iloc[row - 1]}' is not a finite number",
                row=row,
                column=name,
            )
        parsed.append(numeric.to_numpy(dtype=np.float64))

    values = parsed[0] if len(parsed) == 1 else np.column_stack(parsed)
    logger.info(f"loaded {len(values)} rows x {len(columns)} columns from {path}")
    return RawSeries(values, name=path.stem, columns=tuple(columns))


def _design(values: np.ndarray, Q: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = values.shape[0] - Q
    X = sliding_window_view(values[:-1], Q, axis=0)
    Y = values[Q:, 0]
    teacher = sliding_window_view(values[1:, 0], Q)[:n]
    return (
        freeze(np.ascontiguousarray(X, dtype=np.float64)),
        freeze(np.ascontiguousarray(Y, dtype=np.float64)),
        freeze(np.ascontiguousarray(teacher, dtype=np.float64)),
    )


def window(series: RawSeries, Q: int) -> TimeSeriesDataset:
    """Slide a Q-lag window over the series.

    X[i, s, t] = raw[i + t - 1, s] for t = 1..Q and Y[i] = raw[i + Q, target],
    so n = len(series) - Q.
    """
    if Q < 1:
        raise DatasetTooShortError(f"Q must be at least 1, got {Q}")
    if Q >= len(series):
        logger.error(f"series of length {len(series)} is too short for Q={Q}")
        raise DatasetTooShortError(
            f"series of length {len(series)} is too short for Q={Q}"
        )
    values = series.as_matrix()
    X, Y, teacher = _design(values, Q)
    return TimeSeriesDataset(
        X=X,
        Y=Y,
        teacher=teacher,
        Q=Q,
        S=values.shape[1],
        source=freeze(np.array(values)),
        name=series.name,
    )


def normalize_split(ds: TimeSeriesDataset, split_fraction: float) -> TimeSeriesDataset:
    """Z-score every feature with statistics of the training rows and record the split.

    The first floor(n * split_fraction) rows are train rows; they span raw indices
    0 .. n_train + Q - 1, which is where mean and (population) std come from.
    """
    if not 0.0 < split_fraction <= 1.0:
        raise InvalidSpecError(f"split_fraction must lie in (0, 1], got {split_fraction}")
    n_train = math.floor(ds.n * split_fraction)
    if n_train < 1:
        raise DatasetTooShortError(
            f"split {split_fraction} of {ds.n} rows leaves no training rows"
        )
    span = ds.source[: n_train + ds.Q]
    mean = span.mean(axis=0)
    std = span.std(axis=0)
    if np.any(std == 0.0):
        logger.error(f"training portion of '{ds.name}' has zero variance")
        raise DegenerateSeriesError(
            f"training portion of '{ds.name}' has zero variance; cannot normalise"
        )
    params = NormParams(mean=freeze(mean), std=freeze(std))
    logger.info(f"'{ds.name}': {n_train} train rows, {ds.n - n_train} test rows")
    return apply_normalization(ds, params, split_fraction)


def apply_normalization(
    ds: TimeSeriesDataset, params: NormParams, split_fraction: float = 1.0
) -> TimeSeriesDataset:
    """Re-window `ds` with fixed statistics, e.g. those stored with a trained model."""
    if params.mean.shape != (ds.S,):
        raise DimensionError(
            f"normalisation has {params.mean.shape[0]} features, dataset has {ds.S}"
        )
    X, Y, teacher = _design(params.apply(ds.source), ds.Q)
    return TimeSeriesDataset(
        X=X,
        Y=Y,
        teacher=teacher,
        Q=ds.Q,
        S=ds.S,
        source=ds.source,
        split_fraction=split_fraction,
        norm_params=params,
        name=ds.name,
    )
