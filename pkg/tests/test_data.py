import numpy as np
import pytest

from pcmiss.data import (
    CATEGORICAL,
    CONTINUOUS,
    ColumnSchema,
    DataError,
    Dataset,
    codes,
    listwise_subset,
    read_csv_text,
    response_indicator,
    schema_from_json,
    schema_to_json,
    single_impute_mean_mode,
    write_csv,
)
from pcmiss.data import testwise_subset as twd_subset


def small_dataset():
    schema = [
        ColumnSchema("X", CONTINUOUS),
        ColumnSchema("Y", CONTINUOUS),
        ColumnSchema("C", CATEGORICAL, ("a", "b")),
    ]
    values = np.array(
        [
            [0.5, 1.0, 0],
            [1.5, 2.0, 1],
            [2.5, 3.0, 0],
            [3.5, 4.0, 1],
        ]
    )
    missing = np.zeros_like(values, dtype=bool)
    missing[1, 0] = True  # X missing in row 1
    missing[3, 2] = True  # C missing in row 3
    return Dataset(schema, values, missing)


class TestSchema:
    def test_categorical_needs_levels(self):
        with pytest.raises(DataError):
            ColumnSchema("C", CATEGORICAL, ("only",))

    def test_continuous_rejects_levels(self):
        with pytest.raises(DataError):
            ColumnSchema("X", CONTINUOUS, ("a", "b"))

    def test_json_round_trip(self):
        schema = (
            ColumnSchema("X", CONTINUOUS),
            ColumnSchema("C", CATEGORICAL, ("lo", "hi")),
        )
        assert schema_from_json(schema_to_json(schema)) == schema


class TestDataset:
    def test_rejects_nonfinite_continuous(self):
        schema = [ColumnSchema("X", CONTINUOUS)]
        with pytest.raises(DataError):
            Dataset(schema, np.array([[np.inf]]))

    def test_rejects_unknown_level_code(self):
        schema = [ColumnSchema("C", CATEGORICAL, ("a", "b"))]
        with pytest.raises(DataError):
            Dataset(schema, np.array([[2.0]]))

    def test_values_read_only(self):
        ds = small_dataset()
        with pytest.raises(ValueError):
            ds.values[0, 0] = 9.0

    def test_duplicate_names_rejected(self):
        schema = [ColumnSchema("X", CONTINUOUS), ColumnSchema("X", CONTINUOUS)]
        with pytest.raises(DataError):
            Dataset(schema, np.zeros((1, 2)))


class TestResponseIndicator:
    def test_fully_observed_column(self):
        ds = small_dataset()
        assert response_indicator(ds, {"Y"}).flags.all()

    def test_empty_set_all_true(self):
        ds = small_dataset()
        assert response_indicator(ds, ()).flags.all()

    def test_mask_conjunction(self):
        schema = [ColumnSchema("X", CONTINUOUS), ColumnSchema("Y", CONTINUOUS)]
        values = np.zeros((10, 2))
        missing = np.zeros_like(values, dtype=bool)
        missing[[2, 5], 0] = True
        missing[5, 1] = True
        ds = Dataset(schema, values, missing)
        flags = response_indicator(ds, {"X", "Y"}).flags
        expect = np.ones(10, dtype=bool)
        expect[[2, 5]] = False
        assert np.array_equal(flags, expect)

    def test_union_is_elementwise_and(self):
        ds = small_dataset()
        a = response_indicator(ds, {"X"}).flags
        b = response_indicator(ds, {"C"}).flags
        both = response_indicator(ds, {"X", "C"}).flags
        assert np.array_equal(both, a & b)

    def test_unknown_variable(self):
        with pytest.raises(DataError):
            response_indicator(small_dataset(), {"Q"})


class TestSubsets:
    def test_testwise_no_missingness_is_projection(self):
        ds = small_dataset()
        sub = twd_subset(ds, {"Y"})
        assert sub.n == ds.n
        assert np.array_equal(sub.column("Y"), ds.column("Y"))

    def test_testwise_drops_rows(self):
        ds = small_dataset()
        sub = twd_subset(ds, {"X", "Y"})
        assert sub.n == 3
        assert sub.names == ("X", "Y")
        assert sub.is_complete()

    def test_testwise_all_columns_equals_listwise(self):
        ds = small_dataset()
        tw = twd_subset(ds, ds.names)
        lw = listwise_subset(ds)
        assert tw.n == lw.n == 2
        assert np.array_equal(tw.values, lw.values)

    def test_testwise_at_least_as_many_rows_as_listwise(self):
        rng = np.random.default_rng(0)
        schema = [ColumnSchema(f"V{i}", CONTINUOUS) for i in range(4)]
        values = rng.normal(size=(50, 4))
        missing = rng.random((50, 4)) < 0.3
        ds = Dataset(schema, values, missing)
        lw = listwise_subset(ds).n
        for k in range(1, 5):
            vars_ = [f"V{i}" for i in range(k)]
            assert twd_subset(ds, vars_).n >= lw

    def test_listwise_complete_identity(self):
        ds = small_dataset()
        complete = single_impute_mean_mode(ds)
        assert listwise_subset(complete) == complete

    def test_listwise_all_rows_incomplete(self):
        schema = [ColumnSchema("X", CONTINUOUS)]
        ds = Dataset(schema, np.zeros((3, 1)), np.ones((3, 1), dtype=bool))
        assert listwise_subset(ds).n == 0

    def test_cohort_like_complete_fraction(self):
        # synthetic mask shaped like a cohort where only 78 of 657 rows
        # (11.9%) are complete; listwise keeps exactly those rows
        rng = np.random.default_rng(42)
        n, k = 657, 8
        schema = [ColumnSchema(f"V{i}", CONTINUOUS) for i in range(k)]
        missing = np.zeros((n, k), dtype=bool)
        complete_rows = rng.choice(n, size=78, replace=False)
        for i in range(n):
            if i not in complete_rows:
                j = rng.integers(0, k)
                missing[i, j] = True
        ds = Dataset(schema, rng.normal(size=(n, k)), missing)
        lw = listwise_subset(ds)
        assert lw.n == 78
        assert set(np.flatnonzero(~missing.any(axis=1))) == set(sorted(complete_rows))


class TestSingleImpute:
    def test_complete_identity(self):
        ds = small_dataset()
        complete = listwise_subset(ds)
        assert single_impute_mean_mode(complete) == complete

    def test_mean_fill(self):
        schema = [ColumnSchema("X", CONTINUOUS)]
        values = np.array([[1.0], [0.0], [3.0]])
        missing = np.array([[False], [True], [False]])
        ds = Dataset(schema, values, missing)
        out = single_impute_mean_mode(ds)
        assert out.column("X")[1] == pytest.approx(2.0)

    def test_mode_fill_and_tie_break(self):
        schema = [ColumnSchema("C", CATEGORICAL, ("a", "b"))]
        values = np.array([[0.0], [0.0], [1.0], [0.0]])
        missing = np.array([[False], [False], [False], [True]])
        ds = Dataset(schema, values, missing)
        out = single_impute_mean_mode(ds)
        assert out.column("C")[3] == 0.0  # mode `a`
        # exact tie: first declared level wins
        values = np.array([[0.0], [1.0], [0.0]])
        missing = np.array([[False], [False], [True]])
        tie = single_impute_mean_mode(Dataset(schema, values, missing))
        assert tie.column("C")[2] == 0.0

    def test_only_missing_cells_change(self):
        ds = small_dataset()
        out = single_impute_mean_mode(ds)
        ok = ~ds.missing
        assert np.array_equal(out.values[ok], ds.values[ok])

    def test_all_missing_column_errors(self):
        schema = [ColumnSchema("X", CONTINUOUS)]
        ds = Dataset(schema, np.zeros((2, 1)), np.ones((2, 1), dtype=bool))
        with pytest.raises(DataError, match="X"):
            single_impute_mean_mode(ds)


class TestCsv:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(1)
        schema = [
            ColumnSchema("X", CONTINUOUS),
            ColumnSchema("C", CATEGORICAL, ("u", "v", "w")),
        ]
        values = np.column_stack(
            [rng.normal(size=20), rng.integers(0, 3, size=20).astype(float)]
        )
        missing = rng.random((20, 2)) < 0.25
        ds = Dataset(schema, values, missing)
        path = tmp_path / "d.csv"
        spath = tmp_path / "d.schema.json"
        write_csv(ds, path, spath)
        back = read_csv_text(path.read_text(), schema_from_json(spath.read_text()))
        assert back == ds
        ok = ~ds.missing
        assert np.array_equal(back.values[ok], ds.values[ok])

    def test_na_token(self):
        text = "X,Y\n1.0,NA\n,2.0\n"
        ds = read_csv_text(
            text, [ColumnSchema("X", CONTINUOUS), ColumnSchema("Y", CONTINUOUS)]
        )
        assert ds.column_missing("Y")[0] and ds.column_missing("X")[1]

    def test_schema_inference_logged(self, caplog):
        text = "X,C\n1.5,red\n2.5,blue\n"
        with caplog.at_level("WARNING", logger="pcmiss.data"):
            ds = read_csv_text(text)
        assert "inferred" in caplog.text
        assert ds.column_schema("X").is_continuous
        assert ds.column_schema("C").levels == ("red", "blue")

    def test_unknown_level_rejected(self):
        schema = [ColumnSchema("C", CATEGORICAL, ("a", "b"))]
        with pytest.raises(DataError):
            read_csv_text("C\nz\n", schema)

    def test_codes_helper(self):
        ds = small_dataset()
        c = codes(ds, "C")
        assert list(c) == [0, 1, 0, -1]
