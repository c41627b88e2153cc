import math

import pandas as pd
import pytest

from app.architectures import ArchitectureSpec, ArchKind, init_weights
from app.cost_model import (
    NARMAX_NOTE,
    CostCounts,
    closed_form,
    measure_costs,
    predict_costs,
    write_cost_csv,
)
from app.errors import CountingModeError
from app.hidden import Backend, ExecConfig
from app.tensor import SeededRng

EXACT_KINDS = [
    ArchKind.ELMAN,
    ArchKind.JORDAN,
    ArchKind.FULLY_CONNECTED,
    ArchKind.LSTM,
    ArchKind.GRU,
]


def measured(make_dataset, spec, backend=Backend.BASIC_PARALLEL, tile=16):
    ds = make_dataset(n=2, Q=spec.Q, S=spec.S, split=1.0)
    weights = init_weights(spec, SeededRng(0))
    return measure_costs(ds, spec, weights, ExecConfig(backend, tile))


class TestClosedForm:
    def test_elman_scalar_input(self):
        assert closed_form(ArchitectureSpec(ArchKind.ELMAN, M=10, Q=10, S=1)) == CostCounts(140, 10, 140)

    def test_lstm_scalar_input(self):
        assert closed_form(ArchitectureSpec(ArchKind.LSTM, M=10, Q=10, S=1)) == CostCounts(180, 50, 260)

    def test_gru_scalar_input(self):
        assert closed_form(ArchitectureSpec(ArchKind.GRU, M=10, Q=10, S=1)) == CostCounts(120, 30, 200)

    def test_jordan_uses_exact_integers(self):
        counts = closed_form(ArchitectureSpec(ArchKind.JORDAN, M=3, Q=4, S=2))
        # Q(2S+1+(Q+1)(1/2+M)) and Q(2S+1+(Q+1)/2 (2SM+M)) at S=2, Q=4, M=3
        assert counts.reads == 4 * 5 + 10 * 7
        assert counts.flops == 4 * 5 + 10 * 15

    def test_fully_connected(self):
        counts = closed_form(ArchitectureSpec(ArchKind.FULLY_CONNECTED, M=10, Q=10, S=1))
        assert counts == CostCounts(10 * (3 + 200), 10, 10 * (12 + 200))

    def test_mem_to_flop(self):
        assert CostCounts(reads=140, writes=10, flops=140).mem_to_flop == pytest.approx(150 / 140)


class TestMeasure:
    @pytest.mark.parametrize("kind", EXACT_KINDS)
    def test_measured_plus_charges_equals_closed_form(self, make_dataset, kind):
        report = measured(make_dataset, ArchitectureSpec(kind, M=10, Q=10, S=1))
        assert report.measured + report.charged == report.predicted
        assert report.mismatches() == []

    @pytest.mark.parametrize("kind", EXACT_KINDS)
    def test_multivariate_input_reconciles(self, make_dataset, kind):
        report = measured(make_dataset, ArchitectureSpec(kind, M=3, Q=6, S=3))
        assert report.unexplained() == {"reads": 0, "writes": 0, "flops": 0}

    def test_elman_delta_is_the_zero_lag_charge(self, make_dataset):
        report = measured(make_dataset, ArchitectureSpec(ArchKind.ELMAN, M=10, Q=10, S=1))
        assert report.measured == CostCounts(120, 10, 120)
        assert report.deltas() == {"reads": -20, "writes": 0, "flops": -20}
        assert report.charges == {"zero_lag": CostCounts(20, 0, 20)}

    def test_lstm_writes_only_h(self, make_dataset):
        report = measured(make_dataset, ArchitectureSpec(ArchKind.LSTM, M=10, Q=10, S=1))
        assert report.measured.writes == 10
        assert report.charges["gate_stores"] == CostCounts(0, 40, 0)

    def test_narmax_deltas_are_reported_with_a_note(self, make_dataset):
        report = measured(make_dataset, ArchitectureSpec(ArchKind.NARMAX, M=10, Q=10, S=1, F=2, R=2))
        assert report.note == NARMAX_NOTE
        assert report.charges == {}
        assert report.mismatches() == ["reads", "flops"]
        assert report.measured.writes == report.predicted.writes

    def test_tiled_elman_reads(self, make_dataset):
        report = measured(
            make_dataset, ArchitectureSpec(ArchKind.ELMAN, M=10, Q=10, S=1), Backend.TILED_PARALLEL
        )
        assert report.measured.reads == report.staged_reads == 2
        assert report.measured.reads <= report.predicted.reads / 16
        assert report.charges == {}

    def test_tiling_divides_reads_when_lags_exceed_the_tile(self, make_dataset):
        spec = ArchitectureSpec(ArchKind.ELMAN, M=4, Q=32, S=1)
        basic = measured(make_dataset, spec)
        tiled = measured(make_dataset, spec, Backend.TILED_PARALLEL)
        assert basic.measured.reads / tiled.measured.reads >= 16 * 16 / 2

    def test_release_profile(self, make_dataset, monkeypatch):
        monkeypatch.setenv("RELM_PROFILE", "release")
        with pytest.raises(CountingModeError):
            measured(make_dataset, ArchitectureSpec(ArchKind.ELMAN, M=2, Q=3))


class TestReport:
    def test_prediction_only(self):
        report = predict_costs(ArchitectureSpec(ArchKind.LSTM, M=10, Q=10), ExecConfig())
        assert report.measured is None
        assert report.deltas() == {}
        assert report.staged_reads is None
        assert report.ratio_mem_to_flop == pytest.approx(230 / 260)

    def test_elman_carries_staged_ratio(self):
        report = predict_costs(ArchitectureSpec(ArchKind.ELMAN, M=10, Q=10), ExecConfig(block_size=16))
        assert report.staged_ratio_mem_to_flop == pytest.approx((2 + 10) / 140)

    def test_csv_row(self, tmp_path):
        reports = [
            predict_costs(ArchitectureSpec(ArchKind.LSTM, M=10, Q=10), ExecConfig()),
            predict_costs(ArchitectureSpec(ArchKind.ELMAN, M=10, Q=10), ExecConfig(block_size=32)),
        ]
        path = write_cost_csv(reports, tmp_path / "out" / "cost.csv")
        frame = pd.read_csv(path)
        assert list(frame["predicted_flops"]) == [260, 140]
        assert list(frame["TW"]) == [16, 32]
        assert math.isnan(frame["measured_reads"].iloc[0])

    def test_csv_row_carries_deltas_and_charges(self, make_dataset, tmp_path):
        report = measured(make_dataset, ArchitectureSpec(ArchKind.GRU, M=2, Q=4, S=1))
        frame = pd.read_csv(write_cost_csv([report], tmp_path / "cost.csv"))
        row = frame.iloc[0]
        assert row["charges"] == "fused_projection;gate_stores;squash_flops;state_loads"
        assert row["measured_flops"] + row["charged_flops"] == row["predicted_flops"]
        assert row["delta_writes"] == -8
