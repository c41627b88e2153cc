import numpy as np
import pandas as pd
import pytest

from app.dataset import (
    NormParams,
    RawSeries,
    apply_normalization,
    load_csv,
    normalize_split,
    window,
)
from app.errors import (
    DatasetTooShortError,
    DegenerateSeriesError,
    DimensionError,
    IngestionError,
    InvalidSpecError,
)


class TestLoadCsv:
    def test_reads_a_single_column(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("y\n1\n2\n3\n", encoding="utf-8")
        series = load_csv(path, "y")
        assert np.array_equal(series.values, [1.0, 2.0, 3.0])
        assert series.columns == ("y",)
        assert series.name == "d"

    def test_blank_cell_names_row_and_column(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("x,y\n1,1\n2,\n3,3\n", encoding="utf-8")
        with pytest.raises(IngestionError) as excinfo:
            load_csv(path, "y")
        assert excinfo.value.row == 2
        assert excinfo.value.column == "y"

    def test_non_numeric_cell_is_rejected(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("y\n1\nabc\n3\n", encoding="utf-8")
        with pytest.raises(IngestionError) as excinfo:
            load_csv(path, "y")
        assert excinfo.value.row == 2

    def test_missing_column(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("y\n1\n2\n", encoding="utf-8")
        with pytest.raises(IngestionError) as excinfo:
            load_csv(path, "births")
        assert excinfo.value.column == "births"

    def test_missing_file(self, tmp_path):
        with pytest.raises(IngestionError):
            load_csv(tmp_path / "absent.csv", "y")

    def test_unreadable_file(self, tmp_path, monkeypatch):
        path = tmp_path / "d.csv"
        path.write_text("y\n1\n2\n", encoding="utf-8")

        def denied(*args, **kwargs):
            raise PermissionError(13, "Permission denied", str(path))

        monkeypatch.setattr(pd, "read_csv", denied)
        with pytest.raises(IngestionError, match="cannot read"):
            load_csv(path, "y")

    def test_keeps_every_row(self, tmp_path):
        path = tmp_path / "births.csv"
        pd.DataFrame({"births": np.arange(5113) % 97 + 1.0}).to_csv(path, index=False)
        assert len(load_csv(path, "births")) == 5113

    def test_multivariate_columns_keep_target_first(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("a,b\n1,10\n2,20\n3,30\n", encoding="utf-8")
        series = load_csv(path, ["b", "a"])
        assert series.n_features == 2
        assert np.array_equal(series.values[:, 0], [10.0, 20.0, 30.0])


class TestRawSeries:
    def test_too_short(self):
        with pytest.raises(DatasetTooShortError):
            RawSeries(np.array([1.0]))

    def test_non_finite_values(self):
        with pytest.raises(IngestionError):
            RawSeries(np.array([1.0, np.inf, 2.0]))

    def test_values_are_read_only(self):
        series = RawSeries(np.array([1.0, 2.0, 3.0]))
        with pytest.raises(ValueError):
            series.values[0] = 5.0


class TestWindow:
    def test_forced_by_window_definition(self):
        ds = window(RawSeries(np.array([1.0, 2.0, 3.0, 4.0])), 2)
        assert np.array_equal(ds.X[:, 0, :], [[1.0, 2.0], [2.0, 3.0]])
        assert np.array_equal(ds.Y, [3.0, 4.0])
        assert np.array_equal(ds.teacher, [[2.0, 3.0], [3.0, 4.0]])

    def test_minimal_case(self):
        ds = window(RawSeries(np.array([5.0, 6.0])), 1)
        assert ds.X.shape == (1, 1, 1)
        assert ds.X[0, 0, 0] == 5.0
        assert np.array_equal(ds.Y, [6.0])

    def test_row_count(self):
        ds = window(RawSeries(np.linspace(0.0, 1.0, 2540)), 10)
        assert ds.n == 2530
        assert ds.X.shape == (2530, 1, 10)

    def test_lag_count_must_be_shorter_than_series(self):
        with pytest.raises(DatasetTooShortError):
            window(RawSeries(np.array([1.0, 2.0, 3.0])), 3)

    def test_multivariate_layout(self):
        values = np.column_stack([np.arange(6.0), 10.0 * np.arange(6.0)])
        ds = window(RawSeries(values), 3)
        assert ds.S == 2
        assert np.array_equal(ds.X[1, 1, :], [10.0, 20.0, 30.0])
        assert np.array_equal(ds.Y, [3.0, 4.0, 5.0])


class TestNormalizeSplit:
    def test_constant_series_is_degenerate(self):
        ds = window(RawSeries(np.full(12, 4.0)), 2)
        with pytest.raises(DegenerateSeriesError):
            normalize_split(ds, 0.8)

    def test_training_row_count(self):
        ds = normalize_split(window(RawSeries(np.sin(np.arange(2540.0))), 10), 0.8)
        assert ds.n_train == 2024
        assert ds.n_test == 506

    def test_statistics_come_from_training_span(self):
        values = np.array([1.0, 2.0, 3.0, 4.0, 100.0, 200.0])
        ds = normalize_split(window(RawSeries(values), 2), 0.5)
        # two training rows span raw indices 0..3
        assert ds.norm_params.mean[0] == pytest.approx(2.5)
        assert ds.norm_params.std[0] == pytest.approx(np.std([1.0, 2.0, 3.0, 4.0]))

    def test_denormalize_recovers_targets(self, make_dataset):
        raw = make_dataset(n=50, normalized=False)
        ds = normalize_split(raw, 0.8)
        assert np.allclose(ds.denormalize_target(ds.Y), raw.Y, rtol=0.0, atol=1e-12)

    def test_split_outside_unit_interval(self, make_dataset):
        with pytest.raises(InvalidSpecError):
            normalize_split(make_dataset(normalized=False), 0.0)

    def test_split_leaving_no_training_rows(self):
        ds = window(RawSeries(np.array([1.0, 2.0, 3.0])), 1)
        with pytest.raises(DatasetTooShortError):
            normalize_split(ds, 0.4)


class TestApplyNormalization:
    def test_reuses_stored_statistics(self):
        ds = window(RawSeries(np.array([1.0, 3.0, 5.0, 7.0])), 1)
        params = NormParams(mean=np.array([1.0]), std=np.array([2.0]))
        out = apply_normalization(ds, params)
        assert np.array_equal(out.X[:, 0, 0], [0.0, 1.0, 2.0])
        assert np.array_equal(out.Y, [1.0, 2.0, 3.0])
        assert out.n_train == out.n

    def test_feature_count_must_match(self):
        ds = window(RawSeries(np.array([1.0, 3.0, 5.0, 7.0])), 1)
        params = NormParams(mean=np.zeros(2), std=np.ones(2))
        with pytest.raises(DimensionError):
            apply_normalization(ds, params)


class TestSubset:
    def test_keeps_requested_rows(self, make_dataset):
        ds = make_dataset(n=10)
        part = ds.subset([2, 5])
        assert part.n == 2
        assert np.array_equal(part.Y, ds.Y[[2, 5]])
        assert part.norm_params is ds.norm_params

    def test_rejects_rows_out_of_range(self, make_dataset):
        with pytest.raises(IndexError):
            make_dataset(n=10).subset([10])
