import csv
import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rcgan_lab.data_io import (
    Column,
    DataFormatError,
    MinMaxScaler,
    TabularDataset,
    format_schema,
    load_csv,
    make_tabular_fixture,
    parse_schema,
    read_dataset_csv,
    read_grid_csv,
    read_pgm,
    split,
    write_dataset_csv,
    write_grid_csv,
    write_pgm,
)
from rcgan_lab.scoring_eval import ScoreReport, SingleClassError, auroc

FIXTURES = Path(__file__).parent / "fixtures"
SCHEMA = "size = continuous\ncolour = categorical(red, green, blue)\n"


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def small_table(tmp_path, rows):
    return load_csv(write_csv(tmp_path / "t.csv", ["size", "colour", "label"], rows), parse_schema(SCHEMA))


# -- schema and encoding ----------------------------------------------------------


def test_schema_round_trip():
    cols = parse_schema(SCHEMA + "# comment\n\n")
    assert cols == [Column("size", "continuous"), Column("colour", "categorical", ("red", "green", "blue"))]
    assert parse_schema(format_schema(cols)) == cols


@pytest.mark.parametrize("text", ["size continuous", "size = ordinal", "c = categorical(a, a)", "c = categorical()"])
def test_schema_errors(text):
    with pytest.raises(DataFormatError, match="line 1"):
        parse_schema(text)


def test_min_max_scaling(tmp_path):
    ds = small_table(tmp_path, [["2", "red", "0"], ["4", "green", "0"], ["6", "blue", "1"]])
    np.testing.assert_allclose(ds.features[:, 0], [0.0, 0.5, 1.0])
    np.testing.assert_array_equal(ds.features[:, 1:], np.eye(3))
    assert ds.feature_names == ["size", "colour=red", "colour=green", "colour=blue"]
    np.testing.assert_array_equal(ds.labels, [0, 0, 1])


def test_constant_column_maps_to_zero():
    s = MinMaxScaler.fit(np.full((4, 1), 3.0))
    np.testing.assert_array_equal(s.transform(np.full((4, 1), 3.0)), 0.0)


def test_unknown_category_reports_line_and_value(tmp_path):
    with pytest.raises(DataFormatError, match=r":3: unknown category 'purple' in column 'colour'"):
        small_table(tmp_path, [["2", "red", "0"], ["4", "purple", "0"]])


def test_bad_number_reports_line(tmp_path):
    with pytest.raises(DataFormatError, match=r":4: column 'size' value 'big'"):
        small_table(tmp_path, [["2", "red", "0"], ["4", "red", "0"], ["big", "red", "1"]])


def test_missing_value_and_short_row(tmp_path):
    with pytest.raises(DataFormatError, match="missing value"):
        small_table(tmp_path, [["", "red", "0"]])
    with pytest.raises(DataFormatError, match="expected 3 fields"):
        small_table(tmp_path, [["1", "red"]])


def test_missing_column_and_bad_label(tmp_path):
    path = write_csv(tmp_path / "t.csv", ["size", "label"], [["1", "0"]])
    with pytest.raises(DataFormatError, match="colour"):
        load_csv(path, parse_schema(SCHEMA))
    with pytest.raises(DataFormatError, match="not 0/1"):
        small_table(tmp_path, [["1", "red", "attack"]])


def test_named_normal_labels(tmp_path):
    path = write_csv(tmp_path / "t.csv", ["size", "colour", "label"],
                     [["1", "red", "normal."], ["2", "red", "smurf."], ["3", "red", "normal."]])
    ds = load_csv(path, parse_schema(SCHEMA), normal_values={"normal."})
    np.testing.assert_array_equal(ds.labels, [0, 1, 0])


def test_fixture_matches_manifest():
    manifest = json.loads((FIXTURES / "tabular_manifest.json").read_text())
    ds = load_csv(FIXTURES / "tabular.csv", FIXTURES / "tabular.schema")
    assert len(ds) == manifest["rows"]
    assert int(ds.labels.sum()) == manifest["anomalies"]
    assert ds.feature_names == manifest["feature_names"]
    np.testing.assert_allclose(ds.scaler.lo[:2], manifest["continuous_min"])
    np.testing.assert_allclose(ds.scaler.hi[:2], manifest["continuous_max"])
    counts = ds.raw[:, 2:].sum(axis=0)
    want = [*manifest["level_counts"]["protocol"].values(), *manifest["level_counts"]["flag"].values()]
    np.testing.assert_array_equal(counts, want)
    f = ds.features
    assert f.min() == 0.0 and f.max() == 1.0
    np.testing.assert_array_equal(f[:, 2:5].sum(1), 1.0)


def test_fixture_generator_is_reproducible():
    header, rows, _ = make_tabular_fixture()
    with open(FIXTURES / "tabular.csv", newline="") as fh:
        on_disk = list(csv.reader(fh))
    assert on_disk == [header, *rows]


# -- split ------------------------------------------------------------------------


def table(n, n_anom=10, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.r_[np.zeros(n - n_anom), np.ones(n_anom)].astype(int)
    return TabularDataset(rng.normal(size=(n, 2)), rng.permutation(labels), [Column("a", "continuous"),
                                                                             Column("b", "continuous")])


def test_split_sizes_and_normal_only_training():
    ds = table(100)
    train, test = split(ds, 0.8, seed=1)
    assert len(test) == 20
    assert np.all(train.labels == 0)
    assert len(train) == 80 - int((ds.labels == 1).sum() - test.labels.sum())


@given(st.integers(10, 200), st.floats(0.1, 0.9), st.integers(0, 1000))
@settings(max_examples=50, deadline=None)
def test_split_partitions_rows(n, frac, seed):
    ds = table(n, n_anom=n // 5)
    try:
        train, test = split(ds, frac, seed)
    except ValueError:
        assume(False)  # training draw held anomalies only; covered below
    rows = np.vstack((train.raw, test.raw))
    # every test row and every normal row appears exactly once
    normal = ds.raw[ds.labels == 0]
    got = {r.tobytes() for r in rows}
    assert len(got) == len(rows)
    assert {r.tobytes() for r in test.raw} <= {r.tobytes() for r in ds.raw}
    assert {r.tobytes() for r in normal} <= got
    assert len(test) == n - round(frac * n)


def test_split_deterministic_and_shares_scaler():
    ds = table(60)
    a_train, a_test = split(ds, 0.7, seed=4)
    b_train, b_test = split(ds, 0.7, seed=4)
    assert a_test.raw.tobytes() == b_test.raw.tobytes()
    assert a_test.scaler is a_train.scaler
    f = a_train.features
    assert f.min() == 0.0 and f.max() == 1.0


def test_all_normal_test_split_has_no_auroc():
    ds = table(50, n_anom=0)
    _, test = split(ds, 0.8)
    with pytest.raises(SingleClassError):
        auroc(ScoreReport(np.zeros(len(test)), test.labels))


def test_split_without_normal_training_rows():
    # seed 1 permutes four rows to (0, 1, 2, 3): both training rows are anomalies
    ds = TabularDataset(np.arange(4.0)[:, None], [1, 1, 0, 0], [Column("a", "continuous")])
    with pytest.raises(ValueError, match="empty"):
        split(ds, 0.5, seed=1)


def test_split_fraction_bounds():
    with pytest.raises(ValueError):
        split(table(20), 1.0)


@given(arrays(np.float64, (12, 3), elements=st.floats(-1e3, 1e3)))
@settings(max_examples=50, deadline=None)
def test_scaler_inverse_round_trip(x):
    s = MinMaxScaler.fit(x)
    np.testing.assert_allclose(s.inverse(s.transform(x)), x, atol=1e-12 * max(1.0, np.abs(x).max()))


# -- numeric csv and grids ----------------------------------------------------------


def test_dataset_csv_round_trip(tmp_path, rng):
    x = rng.normal(size=(9, 2))
    y = rng.integers(0, 2, size=9)
    write_dataset_csv(tmp_path / "d.csv", x, y)
    bx, by = read_dataset_csv(tmp_path / "d.csv")
    assert bx.tobytes() == x.tobytes()
    np.testing.assert_array_equal(by, y)


def test_dataset_csv_without_labels(tmp_path):
    write_csv(tmp_path / "d.csv", ["x0", "x1"], [["1", "2"], ["3", "4"]])
    x, y = read_dataset_csv(tmp_path / "d.csv")
    assert x.shape == (2, 2) and np.all(y == 0)
    write_csv(tmp_path / "e.csv", ["x0"], [["one"]])
    with pytest.raises(DataFormatError):
        read_dataset_csv(tmp_path / "e.csv")


def test_grid_csv_round_trip(tmp_path, rng):
    g = rng.uniform(size=(4, 7))
    write_grid_csv(tmp_path / "g.csv", g)
    assert read_grid_csv(tmp_path / "g.csv").tobytes() == g.tobytes()


def test_pgm_orientation_and_scale(tmp_path):
    g = np.array([[0.0, 0.5], [1.0, 0.25]])
    write_pgm(tmp_path / "g.pgm", g)
    pix = read_pgm(tmp_path / "g.pgm")
    # the last grid row (highest y) is printed first
    np.testing.assert_array_equal(pix, [[255, 64], [0, 128]])
    write_pgm(tmp_path / "z.pgm", np.zeros((2, 3)))
    assert read_pgm(tmp_path / "z.pgm").shape == (2, 3)
