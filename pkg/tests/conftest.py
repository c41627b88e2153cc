from pathlib import Path
from typing import Callable

import numpy as np
import pandas as pd
import pytest

from app.dataset import RawSeries, TimeSeriesDataset, normalize_split, window
from app.synthetic import synth_series


@pytest.fixture(autouse=True)
def _counting_profile(monkeypatch):
    monkeypatch.delenv("RELM_PROFILE", raising=False)
    monkeypatch.delenv("RELM_WORKERS", raising=False)


@pytest.fixture
def make_dataset() -> Callable[..., TimeSeriesDataset]:
    """Windowed dataset of n rows with S noisy sine features and Q lags."""

    def build(
        n: int = 20,
        Q: int = 3,
        S: int = 1,
        seed: int = 0,
        split: float = 0.8,
        normalized: bool = True,
    ) -> TimeSeriesDataset:
        length = n + Q
        columns = [
            synth_series("sine", length, noise=0.2, seed=seed + s).values for s in range(S)
        ]
        values = columns[0] if S == 1 else np.column_stack(columns)
        ds = window(RawSeries(values, name="fixture"), Q)
        return normalize_split(ds, split) if normalized else ds

    return build


@pytest.fixture
def ar2_csv(tmp_path: Path) -> Path:
    series = synth_series("ar2", 600, noise=0.1, seed=11)
    path = tmp_path / "ar2.csv"
    pd.DataFrame({"value": series.values}).to_csv(path, index=False)
    return path
