import numpy as np
import pytest

from app.architectures import (
    Activations,
    ArchitectureSpec,
    ArchKind,
    CellContext,
    WeightSet,
    expected_shapes,
    init_weights,
    step_elman,
    step_fully_connected,
    step_gru,
    step_jordan,
    step_lstm,
    step_narmax,
)
from app.errors import DimensionError, InvalidSpecError
from app.tensor import SeededRng

SIGMOID_HALF = 0.6224593312018546
SIGMOID_TWO = 0.8807970779778823


def simple_weights(M=1, Q=2, S=1, w=0.0, b=0.0, alpha=None):
    return WeightSet(
        W=np.full((S, M), w),
        b=np.full(M, b),
        alpha=np.zeros((M, Q)) if alpha is None else np.asarray(alpha, dtype=np.float64),
    )


def gated_weights(kind, M=1, S=1, bias=None):
    G = 4 if kind is ArchKind.LSTM else 3
    gate_b = np.zeros((G, M)) if bias is None else np.asarray(bias, dtype=np.float64)
    return WeightSet(gate_W=np.zeros((G, S, M)), gate_u=np.zeros((G, M)), gate_b=gate_b)


class TestElman:
    def test_first_step_has_no_history(self):
        spec = ArchitectureSpec(ArchKind.ELMAN, M=1, Q=2)
        ctx = CellContext(row=0, col=0, t=1, x=np.array([2.0]))
        h = step_elman(ctx, spec, simple_weights(w=1.0))
        assert h == pytest.approx(SIGMOID_TWO, abs=1e-12)

    def test_zero_weights_give_one_half(self):
        spec = ArchitectureSpec(ArchKind.ELMAN, M=1, Q=3)
        for t in (1, 2, 3):
            ctx = CellContext(row=0, col=0, t=t, x=np.array([0.7]), history=[0.5, 0.5])
            assert step_elman(ctx, spec, simple_weights(Q=3)) == 0.5

    def test_two_step_recursion(self):
        spec = ArchitectureSpec(ArchKind.ELMAN, M=1, Q=2)
        ctx = CellContext(row=0, col=0, t=2, x=np.array([0.0]), history=[0.5])
        h = step_elman(ctx, spec, simple_weights(alpha=[[1.0, 0.0]]))
        assert h == pytest.approx(SIGMOID_HALF, abs=1e-12)

    def test_wrong_input_width(self):
        spec = ArchitectureSpec(ArchKind.ELMAN, M=1, Q=2)
        ctx = CellContext(row=0, col=0, t=1, x=np.array([1.0, 2.0]))
        with pytest.raises(DimensionError):
            step_elman(ctx, spec, simple_weights())

    def test_step_for_another_kind(self):
        spec = ArchitectureSpec(ArchKind.JORDAN, M=1, Q=2)
        ctx = CellContext(row=0, col=0, t=1, x=np.array([1.0]))
        with pytest.raises(InvalidSpecError):
            step_elman(ctx, spec, simple_weights())


class TestJordan:
    def test_first_step_matches_elman(self):
        weights = simple_weights(w=0.3, b=-0.1, alpha=[[0.9, 0.4]])
        ctx = CellContext(row=0, col=0, t=1, x=np.array([1.5]), signal=[0.8])
        elman = step_elman(ctx, ArchitectureSpec(ArchKind.ELMAN, M=1, Q=2), weights)
        jordan = step_jordan(ctx, ArchitectureSpec(ArchKind.JORDAN, M=1, Q=2), weights)
        assert jordan == elman

    def test_zero_feedback_is_feedforward(self):
        spec = ArchitectureSpec(ArchKind.JORDAN, M=1, Q=3)
        weights = simple_weights(Q=3, w=0.5, b=0.2)
        expected = 1.0 / (1.0 + np.exp(-(0.5 * 1.2 + 0.2)))
        for t in (1, 2, 3):
            ctx = CellContext(row=0, col=0, t=t, x=np.array([1.2]), signal=[0.3, -0.4])
            assert step_jordan(ctx, spec, weights) == pytest.approx(expected, abs=1e-12)

    def test_teacher_forced_feedback(self):
        spec = ArchitectureSpec(ArchKind.JORDAN, M=1, Q=2)
        ctx = CellContext(row=0, col=0, t=2, x=np.array([0.0]), signal=[0.25])
        h = step_jordan(ctx, spec, simple_weights(alpha=[[2.0, 0.0]]))
        assert h == pytest.approx(SIGMOID_HALF, abs=1e-12)


class TestNarmax:
    def narmax_weights(self, F, R, w_out=None, w_err=None):
        return WeightSet(
            W=np.zeros((1, 1)),
            b=np.zeros(1),
            w_out=np.zeros((1, F)) if w_out is None else np.asarray(w_out, dtype=np.float64),
            w_err=np.zeros((1, R)) if w_err is None else np.asarray(w_err, dtype=np.float64),
        )

    def test_without_feedback_is_feedforward(self):
        spec = ArchitectureSpec(ArchKind.NARMAX, M=1, Q=3, F=0, R=0)
        weights = WeightSet(W=np.array([[1.0]]), b=np.zeros(1), w_out=np.zeros((1, 0)), w_err=np.zeros((1, 0)))
        ctx = CellContext(row=0, col=0, t=3, x=np.array([2.0]), signal=[5.0, 6.0])
        assert step_narmax(ctx, spec, weights) == pytest.approx(SIGMOID_TWO, abs=1e-12)

    def test_error_weights_are_inert_while_errors_are_zero(self):
        spec = ArchitectureSpec(ArchKind.NARMAX, M=1, Q=3, F=1, R=2)
        ctx = CellContext(row=0, col=0, t=3, x=np.array([0.0]), signal=[0.1, 0.2])
        quiet = step_narmax(ctx, spec, self.narmax_weights(1, 2, w_out=[[0.5]]))
        loud = step_narmax(ctx, spec, self.narmax_weights(1, 2, w_out=[[0.5]], w_err=[[9.0, -7.0]]))
        assert quiet == loud

    def test_output_feedback(self):
        spec = ArchitectureSpec(ArchKind.NARMAX, M=1, Q=2, F=1, R=0)
        ctx = CellContext(row=0, col=0, t=2, x=np.array([0.0]), signal=[0.3])
        h = step_narmax(ctx, spec, self.narmax_weights(1, 0, w_out=[[1.0]]))
        assert h == pytest.approx(0.574442516811659, abs=1e-12)


class TestFullyConnected:
    def test_single_neuron_collapses_to_elman(self):
        alpha3 = np.array([[[0.4, -0.3, 0.2]]])
        ctx = CellContext(row=0, col=0, t=3, x=np.array([0.6]), history=[0.2, 0.7])
        fc = step_fully_connected(
            ctx,
            ArchitectureSpec(ArchKind.FULLY_CONNECTED, M=1, Q=3),
            WeightSet(W=np.array([[0.5]]), b=np.array([0.1]), alpha=alpha3),
        )
        elman = step_elman(
            ctx,
            ArchitectureSpec(ArchKind.ELMAN, M=1, Q=3),
            WeightSet(W=np.array([[0.5]]), b=np.array([0.1]), alpha=alpha3[:, 0, :]),
        )
        assert fc == pytest.approx(elman, abs=1e-15)

    def test_zero_recurrence_is_feedforward(self):
        spec = ArchitectureSpec(ArchKind.FULLY_CONNECTED, M=2, Q=2)
        weights = WeightSet(W=np.zeros((1, 2)), b=np.zeros(2), alpha=np.zeros((2, 2, 2)))
        ctx = CellContext(row=0, col=1, t=2, x=np.array([3.0]), history=[0.9])
        assert step_fully_connected(ctx, spec, weights) == 0.5

    def test_two_neuron_recurrence(self):
        spec = ArchitectureSpec(ArchKind.FULLY_CONNECTED, M=2, Q=2)
        alpha = np.zeros((2, 2, 2))
        alpha[0, :, 0] = [0.5, 0.5]
        weights = WeightSet(W=np.zeros((1, 2)), b=np.zeros(2), alpha=alpha)
        ctx = CellContext(row=0, col=0, t=2, x=np.array([0.0]), history=[1.0])
        assert step_fully_connected(ctx, spec, weights) == pytest.approx(0.7310585786300049, abs=1e-12)


class TestLstm:
    def test_zero_network(self):
        spec = ArchitectureSpec(ArchKind.LSTM, M=1, Q=2)
        ctx = CellContext(row=0, col=0, t=1, x=np.array([0.0]))
        h, c = step_lstm(ctx, spec, gated_weights(ArchKind.LSTM))
        assert h == 0.0
        assert c == 0.0

    def test_saturated_forget_gate_carries_the_state(self):
        spec = ArchitectureSpec(ArchKind.LSTM, M=1, Q=3)
        # gates o, lambda, in, c
        weights = gated_weights(ArchKind.LSTM, bias=[[0.0], [50.0], [-50.0], [0.0]])
        ctx = CellContext(row=0, col=0, t=2, x=np.array([1.0]), history=[0.2], c_prev=0.7)
        _, c = step_lstm(ctx, spec, weights)
        assert c == pytest.approx(0.7, abs=1e-12)


class TestGru:
    def test_closed_update_gate_keeps_previous_state(self):
        spec = ArchitectureSpec(ArchKind.GRU, M=1, Q=3)
        # gates f, z, r
        weights = gated_weights(ArchKind.GRU, bias=[[0.4], [-50.0], [0.0]])
        for h_prev in (0.3, -0.6):
            ctx = CellContext(row=0, col=0, t=2, x=np.array([1.0]), history=[h_prev])
            assert step_gru(ctx, spec, weights) == pytest.approx(h_prev, abs=1e-12)

    def test_zero_network(self):
        spec = ArchitectureSpec(ArchKind.GRU, M=1, Q=2)
        ctx = CellContext(row=0, col=0, t=1, x=np.array([0.4]))
        assert step_gru(ctx, spec, gated_weights(ArchKind.GRU)) == 0.0


class TestSpecAndWeights:
    def test_non_positive_sizes_are_rejected(self):
        with pytest.raises(InvalidSpecError):
            ArchitectureSpec(ArchKind.ELMAN, M=0, Q=3)
        with pytest.raises(InvalidSpecError):
            ArchitectureSpec(ArchKind.NARMAX, M=2, Q=3, F=-1)

    def test_kind_accepts_its_name(self):
        assert ArchitectureSpec("gru", M=2, Q=3).kind is ArchKind.GRU

    @pytest.mark.parametrize("kind", list(ArchKind))
    def test_init_weights_has_expected_shapes(self, kind):
        spec = ArchitectureSpec(kind, M=3, Q=4, S=2, F=2, R=1)
        weights = init_weights(spec, SeededRng(1))
        shapes = {name: a.shape for name, a in weights.arrays().items()}
        assert shapes == expected_shapes(spec)
        weights.validate(spec)

    def test_init_weights_is_deterministic(self):
        spec = ArchitectureSpec(ArchKind.LSTM, M=3, Q=4, S=2)
        assert init_weights(spec, SeededRng(8)).equals(init_weights(spec, SeededRng(8)))
        assert not init_weights(spec, SeededRng(8)).equals(init_weights(spec, SeededRng(9)))

    def test_draws_lie_in_the_unit_interval(self):
        spec = ArchitectureSpec(ArchKind.FULLY_CONNECTED, M=4, Q=3, S=2)
        for array in init_weights(spec, SeededRng(0)).arrays().values():
            assert np.all((array >= -1.0) & (array < 1.0))

    def test_empty_narmax_feedback_draws_nothing(self):
        rng = SeededRng(0)
        init_weights(ArchitectureSpec(ArchKind.NARMAX, M=3, Q=2, S=1, F=0, R=0), rng)
        assert rng.position == 3 + 3

    def test_mismatched_weights_fail_validation(self):
        spec = ArchitectureSpec(ArchKind.ELMAN, M=2, Q=3)
        weights = init_weights(ArchitectureSpec(ArchKind.ELMAN, M=2, Q=4), SeededRng(0))
        with pytest.raises(DimensionError):
            weights.validate(spec)

    def test_fixed_weights_are_read_only(self):
        weights = init_weights(ArchitectureSpec(ArchKind.ELMAN, M=2, Q=3), SeededRng(0))
        with pytest.raises(ValueError):
            weights.W[0, 0] = 1.0

    def test_activation_choices_serialise(self):
        acts = Activations(g=Activations().g_c)
        assert Activations.from_dict(acts.to_dict()) == acts
