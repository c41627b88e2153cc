"""
Seeded synthetic series for desk-scale benchmarks.
"""

import math
from enum import Enum
from pathlib import Path
from typing import Union

import numpy as np
import pandas as pd

from app.dataset import RawSeries
from app.errors import SynthError
from app.tensor import SeededRng
from application_sdk.observability.logger_adaptor import get_logger

logger = get_logger(__name__)

SINE_PERIOD = 50
AR2_COEFFICIENTS = (0.6, -0.2)


class SynthKind(str, Enum):
    SINE = "sine"
    AR2 = "ar2"
    RANDOM_WALK = "random_walk"


def synth_series(
    kind: Union[SynthKind, str], length: int, noise: float = 0.0, seed: int = 0
) -> RawSeries:
    """Generate a deterministic series.

    Args:
        kind: sine (sin(2*pi*t/50) plus noise), ar2
            (y_t = 0.6 y_{t-1} - 0.2 y_{t-2} + noise * eps_t with y_0 = y_1 = 1) or
            random_walk (cumulative unit-normal steps plus noise * eps_t).
        length: Number of values, at least 3.
        noise: Standard deviation multiplier of the Gaussian noise, non-negative.
        seed: Seed of the noise stream.

    Returns:
        RawSeries: Named after the kind.

    Raises:
        SynthError: length < 3, negative noise or an unknown kind.
    """
    try:
        kind = SynthKind(kind)
    except ValueError as exc:
        raise SynthError(f"unknown synthetic kind '{kind}'") from exc
    if length < 3:
        logger.error(f"synthetic series needs length >= 3, got {length}")
        raise SynthError(f"length must be at least 3, got {length}")
    if noise < 0.0 or not math.isfinite(noise):
        raise SynthError(f"noise must be a finite non-negative number, got {noise}")

    rng = SeededRng(seed)
    eps = rng.normal(length)
    if kind is SynthKind.SINE:
        t = np.arange(length)
        values = np.sin(2.0 * np.pi * t / SINE_PERIOD) + noise * eps
    elif kind is SynthKind.AR2:
        a1, a2 = AR2_COEFFICIENTS
        values = np.empty(length)
        values[0] = values[1] = 1.0
        for t in range(2, length):
            values[t] = a1 * values[t - 1] + a2 * values[t - 2] + noise * eps[t]
    else:
        values = np.cumsum(rng.normal(length)) + noise * eps

    logger.debug(f"synthesised {kind.value} series of length {length} (seed {seed})")
    return RawSeries(values, name=kind.value, columns=("value",))


def write_series_csv(series: RawSeries, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(series.as_matrix(), columns=list(series.columns)).to_csv(path, index=False)
    logger.info(f"wrote {len(series)} values to {path}")
    return path
