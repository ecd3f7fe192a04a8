import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from raid.core import (BIN_LABELS, ColumnSpec, DataError, Dataset, ParseError, SchemaError,
                       discretize, load_dataset, make_dataset, standardize, unstandardize,
                       write_dataset)


def mixed_dataset(m=40, seed=0):
    rng = np.random.default_rng(seed)
    cols = (ColumnSpec.categorical("g", ["a", "b", "c"]), ColumnSpec.continuous("x"),
            ColumnSpec.continuous("w"))
    X = np.column_stack([rng.integers(0, 3, m), rng.normal(5, 2, m), rng.uniform(-1, 1, m)])
    return Dataset(cols, X, rng.normal(size=m))


def test_column_spec_roundtrip():
    c = ColumnSpec.categorical("sex", ["F", "M"])
    assert c.is_categorical and c.kind == "categorical"
    assert ColumnSpec.from_dict(c.to_dict()) == c
    assert ColumnSpec.from_dict(ColumnSpec.continuous("age").to_dict()).levels is None


def test_column_spec_rejects_duplicate_levels():
    with pytest.raises(SchemaError):
        ColumnSpec.categorical("g", ["a", "a"])


def test_dataset_validation():
    ds = mixed_dataset()
    assert (ds.m, ds.p) == (40, 3)
    assert ds.continuous_idx == [1, 2] and ds.categorical_idx == [0]
    with pytest.raises(SchemaError):
        Dataset(ds.columns, np.column_stack([np.full(40, 3.0), ds.X[:, 1:]]), ds.y)
    X = ds.X.copy()
    X[0, 1] = np.nan
    with pytest.raises(DataError):
        Dataset(ds.columns, X, ds.y)
    with pytest.raises(SchemaError):
        Dataset(ds.columns, ds.X, ds.y[:-1])


def test_dataset_arrays_are_read_only():
    ds = mixed_dataset()
    with pytest.raises(ValueError):
        ds.X[0, 0] = 1.0


def test_ordinal_response_range():
    X = np.zeros((3, 0))
    Dataset((), X, [0, 1, 4], "ordinal", 5)
    with pytest.raises(SchemaError):
        Dataset((), X, [0, 1, 5], "ordinal", 5)


def test_covariate_blocks():
    ds = mixed_dataset()
    Xc, Xq, nlev = ds.covariate_blocks()
    assert Xc.shape == (40, 2) and Xq.shape == (40, 1)
    assert Xq.dtype == np.int64 and list(nlev) == [3]


def test_load_write_roundtrip(tmp_path):
    ds = mixed_dataset()
    path = tmp_path / "d.csv"
    write_dataset(ds, path)
    back = load_dataset(path, ds.columns)
    np.testing.assert_array_equal(back.X, ds.X)
    np.testing.assert_array_equal(back.y, ds.y)


def test_load_reports_row_and_column(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("g,x,Y\na,1.0,0.5\nz,2.0,0.1\n")
    schema = [ColumnSpec.categorical("g", ["a", "b"]), ColumnSpec.continuous("x")]
    with pytest.raises(ParseError) as err:
        load_dataset(path, schema)
    assert err.value.row == 2 and err.value.column == "g"
    path.write_text("g,x,Y\na,oops,0.5\n")
    with pytest.raises(ParseError) as err:
        load_dataset(path, schema)
    assert err.value.column == "x"


def test_load_schema_mismatch(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("g,Y\na,1\n")
    with pytest.raises(SchemaError):
        load_dataset(path, [ColumnSpec.continuous("x")])


def test_standardize_and_inverse():
    ds = mixed_dataset()
    z = standardize(ds, response=True)
    for j in ds.continuous_idx:
        assert abs(z.X[:, j].mean()) < 1e-12
        assert abs(z.X[:, j].std(ddof=1) - 1) < 1e-12
    np.testing.assert_array_equal(z.X[:, 0], ds.X[:, 0])
    assert "__response__" in z.transforms
    back = unstandardize(z)
    np.testing.assert_allclose(back.X, ds.X)
    np.testing.assert_allclose(back.y, ds.y)
    with pytest.raises(DataError):
        standardize(z)


def test_standardize_zero_variance():
    ds = make_dataset(np.ones((5, 1)), np.arange(5.0))
    with pytest.raises(DataError):
        standardize(ds)


def test_standardize_never_touches_ordinal_response():
    ds = Dataset((ColumnSpec.continuous("x"),), np.arange(6.0)[:, None], [0, 1, 2, 0, 1, 2],
                 "ordinal", 3)
    z = standardize(ds, response=True)
    np.testing.assert_array_equal(z.y, ds.y)
    assert "__response__" not in z.transforms


def test_discretize_two_bins_ties_go_low():
    x = np.array([1.0, 2.0, 2.0, 2.0, 3.0, 4.0])
    ds = make_dataset(x[:, None], np.zeros(6))
    v = discretize(ds, 2)
    # type-7 median is 2.0; values equal to the cutpoint fall in the lower bin
    assert v.cutpoints["X1"] == pytest.approx([2.0])
    assert v.codes[:, 0].tolist() == [0, 0, 0, 0, 1, 1]
    assert v.levels[0] == BIN_LABELS[2]


def test_discretize_three_bins_and_representatives():
    x = np.arange(1.0, 10.0)
    ds = make_dataset(x[:, None], np.zeros(9))
    v = discretize(ds, 3)
    assert v.codes[:, 0].tolist() == [0, 0, 0, 1, 1, 1, 2, 2, 2]
    assert v.representatives["X1"] == pytest.approx([2.0, 5.0, 8.0])
    assert list(v.items(0)) == [("X1", "Low")]


def test_discretize_keeps_categorical_levels():
    ds = mixed_dataset()
    v = discretize(ds, 2)
    np.testing.assert_array_equal(v.codes[:, 0], ds.X[:, 0].astype(int))
    assert v.levels[0] == ("a", "b", "c")
    with pytest.raises(ValueError):
        discretize(ds, 4)


@settings(max_examples=40, deadline=None)
@given(st.integers(10, 300), st.sampled_from([2, 3]), st.integers(0, 2**31 - 1))
def test_discretize_balanced_for_continuous_data(m, bins, seed):
    x = np.random.default_rng(seed).normal(size=m)
    v = discretize(make_dataset(x[:, None], np.zeros(m)), bins)
    counts = np.bincount(v.codes[:, 0], minlength=bins)
    assert counts.sum() == m
    assert counts.max() - counts.min() <= 2
