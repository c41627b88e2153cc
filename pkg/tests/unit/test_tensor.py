import math

import numpy as np
import pytest

from app.errors import DimensionError, InvalidSpecError, NumericError
from app.tensor import (
    SeededRng,
    activation,
    activation_array,
    check_dense,
    flat_index,
    uniform_fill,
)


class TestUniformFill:
    def test_same_seed_gives_identical_tensors(self):
        first = uniform_fill(SeededRng(42), [2, 2], -1.0, 1.0)
        second = uniform_fill(SeededRng(42), [2, 2], -1.0, 1.0)
        assert np.array_equal(first, second)
        assert first.shape == (2, 2)
        assert np.all((first >= -1.0) & (first < 1.0))

    def test_different_seeds_differ(self):
        a = uniform_fill(SeededRng(42), [4], -1.0, 1.0)
        b = uniform_fill(SeededRng(43), [4], -1.0, 1.0)
        assert np.any(a != b)

    def test_empty_range_is_rejected(self):
        with pytest.raises(DimensionError):
            uniform_fill(SeededRng(0), [2], 0.0, 0.0)

    def test_zero_extent_is_rejected(self):
        with pytest.raises(DimensionError):
            uniform_fill(SeededRng(0), [3, 0], -1.0, 1.0)

    def test_too_many_axes_are_rejected(self):
        with pytest.raises(DimensionError):
            uniform_fill(SeededRng(0), [1, 1, 1, 1], -1.0, 1.0)

    def test_stream_position_advances_by_element_count(self):
        rng = SeededRng(5)
        uniform_fill(rng, [2, 3], -1.0, 1.0)
        uniform_fill(rng, 4, -1.0, 1.0)
        assert rng.position == 10

    def test_sequential_draws_continue_the_stream(self):
        rng = SeededRng(9)
        head = uniform_fill(rng, 3, -1.0, 1.0)
        tail = uniform_fill(rng, 3, -1.0, 1.0)
        together = uniform_fill(SeededRng(9), 6, -1.0, 1.0)
        assert np.array_equal(np.concatenate([head, tail]), together)


class TestSeededRng:
    def test_negative_seed_is_rejected(self):
        with pytest.raises(InvalidSpecError):
            SeededRng(-1)

    def test_seed_beyond_64_bits_is_rejected(self):
        with pytest.raises(InvalidSpecError):
            SeededRng(2**64)

    def test_reset_replays_the_stream(self):
        rng = SeededRng(3)
        first = rng.uniform(5, 0.0, 1.0)
        rng.reset()
        assert np.array_equal(first, rng.uniform(5, 0.0, 1.0))
        assert rng.position == 5


class TestActivation:
    def test_sigmoid_at_zero(self):
        assert activation("sigmoid", 0.0) == 0.5

    def test_tanh_at_zero(self):
        assert activation("tanh", 0.0) == 0.0

    def test_sigmoid_at_two(self):
        assert activation("sigmoid", 2.0) == pytest.approx(0.8807970779778823, abs=1e-15)

    def test_sigmoid_saturates_without_overflow(self):
        assert activation("sigmoid", -1000.0) == 0.0
        assert activation("sigmoid", 1000.0) == 1.0

    def test_tanh_saturates(self):
        assert activation("tanh", 50.0) == 1.0
        assert activation("tanh", -50.0) == -1.0

    def test_non_finite_input_is_rejected(self):
        with pytest.raises(NumericError):
            activation("sigmoid", math.nan)

    def test_array_form_matches_scalar_form(self):
        x = np.linspace(-6.0, 6.0, 25).reshape(5, 5)
        out = activation_array("tanh", x)
        expected = np.array([[activation("tanh", v) for v in row] for row in x])
        assert np.array_equal(out, expected)


class TestDenseHelpers:
    def test_flat_index_is_row_major(self):
        assert flat_index((2, 3, 4), (1, 2, 3)) == 23
        assert flat_index((5,), (0,)) == 0

    def test_flat_index_out_of_range(self):
        with pytest.raises(DimensionError):
            flat_index((2, 3), (2, 0))

    def test_check_dense_rejects_nan(self):
        with pytest.raises(NumericError):
            check_dense(np.array([1.0, np.nan]))

    def test_check_dense_rejects_four_axes(self):
        with pytest.raises(DimensionError):
            check_dense(np.zeros((1, 1, 1, 1)))

    def test_check_dense_returns_c_ordered_float64(self):
        out = check_dense(np.asfortranarray(np.ones((3, 2), dtype=np.int32)))
        assert out.dtype == np.float64
        assert out.flags.c_contiguous
