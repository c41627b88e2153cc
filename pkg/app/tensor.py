"""
Dense numeric containers, the seeded generator and elementwise math.

Note:
- Dense tensors are plain C-ordered float64 numpy arrays with 1 to 3 axes
- Arrays handed to parallel consumers are frozen (read-only) first
"""

import math
from enum import Enum
from typing import Sequence, Tuple, Union

import numpy as np
from numba import njit

from app.constants import RNG_ID
from app.errors import DimensionError, InvalidSpecError, NumericError
from application_sdk.observability.logger_adaptor import get_logger

logger = get_logger(__name__)

SIGMOID_CODE = 0
TANH_CODE = 1

Dims = Union[int, Sequence[int]]


class Activation(str, Enum):
    SIGMOID = "sigmoid"
    TANH = "tanh"

    @property
    def code(self) -> int:
        return SIGMOID_CODE if self is Activation.SIGMOID else TANH_CODE


@njit(cache=True, nogil=True)
def activate(code, x):
    if code == SIGMOID_CODE:
        # split on sign so exp never overflows
        if x >= 0.0:
            return 1.0 / (1.0 + math.exp(-x))
        z = math.exp(x)
        return z / (1.0 + z)
    return math.tanh(x)


def activation(kind: Union[Activation, str], x: float) -> float:
    """Evaluate an activation function at a finite point.

    Args:
        kind: sigmoid or tanh.
        x: Finite input.

    Returns:
        float: sigmoid(x) in [0, 1] or tanh(x) in [-1, 1]; both saturate at the extremes.
    """
    if not math.isfinite(x):
        raise NumericError(f"activation input must be finite, got {x}")
    return float(activate(Activation(kind).code, float(x)))


def _normalize_dims(dims: Dims) -> Tuple[int, ...]:
    shape = (dims,) if isinstance(dims, int) else tuple(int(d) for d in dims)
    if not 1 <= len(shape) <= 3:
        raise DimensionError(f"dense tensors have 1 to 3 axes, got {len(shape)}")
    if any(d <= 0 for d in shape):
        raise DimensionError(f"every extent must be positive, got {shape}")
    return shape


def flat_index(dims: Sequence[int], index: Sequence[int]) -> int:
    """Row-major offset of `index` inside a tensor of extents `dims`."""
    if len(dims) != len(index):
        raise DimensionError(f"index {tuple(index)} does not match dims {tuple(dims)}")
    offset = 0
    for extent, i in zip(dims, index):
        if not 0 <= i < extent:
            raise DimensionError(f"index {tuple(index)} outside dims {tuple(dims)}")
        offset = offset * extent + i
    return offset


def check_dense(array: np.ndarray, name: str = "tensor") -> np.ndarray:
    """Validate that `array` is a finite float64 tensor and return it C-ordered."""
    array = np.ascontiguousarray(array, dtype=np.float64)
    if not 1 <= array.ndim <= 3:
        raise DimensionError(f"{name} must have 1 to 3 axes, got {array.ndim}")
    if not np.all(np.isfinite(array)):
        raise NumericError(f"{name} contains non-finite values")
    return array


def freeze(array: np.ndarray) -> np.ndarray:
    array.flags.writeable = False
    return array


class SeededRng:
    """Single-owner random stream.

    The stream is numpy's PCG64 bit generator seeded with a 64-bit unsigned
    integer, so equal seeds give bit-identical draws on every platform numpy
    supports. `position` counts the doubles drawn so far.
    """

    generator_id = RNG_ID

    def __init__(self, seed: int):
        if not 0 <= int(seed) < 2**64:
            raise InvalidSpecError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self.reset()

    def reset(self) -> None:
        self._generator = np.random.Generator(np.random.PCG64(self.seed))
        self.position = 0

    def uniform(self, dims: Dims, lo: float, hi: float) -> np.ndarray:
        shape = _normalize_dims(dims)
        values = self._generator.uniform(lo, hi, size=shape)
        self.position += values.size
        return np.ascontiguousarray(values)

    def normal(self, size: int) -> np.ndarray:
        values = self._generator.standard_normal(size)
        self.position += values.size
        return values

    def permutation(self, n: int) -> np.ndarray:
        return self._generator.permutation(n)


def uniform_fill(rng: SeededRng, dims: Dims, lo: float, hi: float) -> np.ndarray:
    """Draw a tensor with i.i.d. uniform[lo, hi) entries.

    Args:
        rng: The owning random stream; advanced by product(dims) draws.
        dims: One to three positive extents.
        lo: Lower bound (inclusive).
        hi: Upper bound (exclusive), strictly greater than lo.

    Returns:
        np.ndarray: float64 tensor of shape `dims`.
    """
    if not lo < hi:
        logger.error(f"uniform_fill needs lo < hi, got [{lo}, {hi})")
        raise DimensionError(f"empty range [{lo}, {hi})")
    return rng.uniform(dims, lo, hi)


@njit(cache=True, nogil=True)
def _activate_into(code, x, out):
    flat_x = x.ravel()
    flat_out = out.ravel()
    for k in range(flat_x.size):
        flat_out[k] = activate(code, flat_x[k])


def activation_array(kind: Union[Activation, str], x: np.ndarray) -> np.ndarray:
    """Elementwise activation with the same scalar routine the kernels use."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty_like(x)
    _activate_into(Activation(kind).code, x, out)
    return out
