import hashlib

import numpy as np
import pytest
from hypothesis import given, strategies as st

from springcast.data import (DataError, DegenerateColumnError, InsufficientDataError, NormalizationParams,
                             ParseError, SyntheticSpec, TimeSeriesTable, ValidationError, add_months,
                             denormalize, fit_normalizer, format_month, generate_synthetic, load_csv,
                             make_sequences, make_supervised, normalize, parse_month,
                             split_contiguous, training_rows)


def small_table(T=6, start=(2000, 11)):
    P = np.arange(T * 9, dtype=float).reshape(T, 9) + 1.0
    Q = np.linspace(3.0, 5.0, T)
    return TimeSeriesTable(start=start, precipitation=P, discharge=Q)


# -- months ---------------------------------------------------------------

def test_month_helpers():
    assert parse_month("1987-01") == (1987, 1)
    assert format_month(2013, 1) == "2013-01"
    assert add_months((2012, 12), 1) == (2013, 1)
    assert add_months((1987, 1), -1) == (1986, 12)
    assert add_months((1987, 1), 383) == (2018, 12)


@pytest.mark.parametrize("bad", ["1987-13", "1987-00", "87-01", "1987/01", ""])
def test_parse_month_rejects(bad):
    with pytest.raises(ParseError):
        parse_month(bad)


# -- table and csv ---------------------------------------------------------

def test_table_validation():
    P = np.ones((4, 9))
    with pytest.raises(ValidationError):
        TimeSeriesTable((2000, 1), P, np.ones(3))
    with pytest.raises(ValidationError):
        TimeSeriesTable((2000, 1), np.ones((4, 8)), np.ones(4))
    P[2, 3] = -1.0
    with pytest.raises(ValidationError, match="2000-03"):
        TimeSeriesTable((2000, 1), P, np.ones(4))
    with pytest.raises(ValidationError, match="non-positive"):
        TimeSeriesTable((2000, 1), np.ones((4, 9)), np.array([1.0, 0.0, 1.0, 1.0]))
    with pytest.raises(ValidationError, match="non-finite"):
        TimeSeriesTable((2000, 1), np.ones((4, 9)), np.array([1.0, np.nan, 1.0, 1.0]))


def test_table_is_immutable():
    t = small_table()
    with pytest.raises(ValueError):
        t.discharge[0] = 9.0


def test_csv_round_trip(tmp_path, table):
    p = tmp_path / "d.csv"
    table.to_csv(p)
    back = load_csv(p)
    assert back.start == table.start
    assert np.array_equal(back.precipitation, table.precipitation)
    assert np.array_equal(back.discharge, table.discharge)
    assert back.header == table.header


def _write(tmp_path, text):
    p = tmp_path / "x.csv"
    p.write_text(text)
    return p


HEADER = "date,P1,P2,P3,P4,P5,P6,P7,P8,P9,Q\n"


def test_load_csv_errors(tmp_path):
    row = lambda m: f"{m}," + ",".join(["1"] * 9) + ",3\n"
    with pytest.raises(ParseError, match="header"):
        load_csv(_write(tmp_path, "date,P1,Q\n2000-01,1,2\n2000-02,1,2\n"))
    with pytest.raises(ParseError, match="line 3.*contiguity"):
        load_csv(_write(tmp_path, HEADER + row("2000-01") + row("2000-03")))
    with pytest.raises(ParseError, match="line 2"):
        load_csv(_write(tmp_path, HEADER + row("2000-1x") + row("2000-02")))
    with pytest.raises(ParseError, match="non-numeric"):
        load_csv(_write(tmp_path, HEADER + row("2000-01") + "2000-02,a,1,1,1,1,1,1,1,1,3\n"))
    with pytest.raises(ParseError, match="empty"):
        load_csv(_write(tmp_path, ""))
    with pytest.raises(DataError):
        load_csv(_write(tmp_path, HEADER + row("2000-01") + "2000-02,1,1,1,1,1,1,1,1,1,-3\n"))


# -- synthetic generator --------------------------------------------------

def test_synthetic_frozen_values(tmp_path, table):
    # regression oracle for the default generator settings
    assert len(table) == 384
    assert table.months[0] == "1987-01" and table.months[-1] == "2018-12"
    np.testing.assert_allclose(table.discharge[:3], [5.570057148924392, 4.845811232536217, 4.117688865320018],
                               rtol=0, atol=1e-12)
    np.testing.assert_allclose(table.precipitation[0, :3],
                               [6.010720725520169, 3.752638053286908, 5.963649111918893], rtol=0, atol=1e-12)
    p = tmp_path / "d.csv"
    table.to_csv(p)
    assert hashlib.sha256(p.read_bytes()).hexdigest() == \
        "939d86cda83ff1a0c50870b962715a438d8f764f8ab6b4c0df6ee05e91e8fb73"


def test_synthetic_deterministic_and_seeded():
    a = generate_synthetic(SyntheticSpec(months=60, seed=3))
    b = generate_synthetic(SyntheticSpec(months=60, seed=3))
    c = generate_synthetic(SyntheticSpec(months=60, seed=4))
    assert np.array_equal(a.discharge, b.discharge) and np.array_equal(a.precipitation, b.precipitation)
    assert not np.array_equal(a.discharge, c.discharge)


def test_synthetic_physical_ranges(table):
    lo, hi = SyntheticSpec().discharge_range
    assert np.all(table.discharge > lo) and np.all(table.discharge < hi)
    assert np.all(table.precipitation >= 0)
    month = np.array([int(m[5:]) for m in table.months])
    means = [table.precipitation[month == k].mean() for k in range(1, 13)]
    assert int(np.argmax(means)) + 1 in (6, 7, 8, 9)
    assert int(np.argmin(means)) + 1 in (12, 1, 2)


def test_synthetic_constant_latent_gives_midpoint():
    t = generate_synthetic(SyntheticSpec(months=48, rainfall_response=0.0, discharge_noise=0.0))
    assert np.all(t.discharge == 0.5 * (2.54 + 6.89))


def test_synthetic_spec_validation_and_dict():
    with pytest.raises(ValidationError):
        SyntheticSpec(months=10)
    with pytest.raises(ValidationError):
        SyntheticSpec(autocorrelation=1.0)
    with pytest.raises(ValidationError):
        SyntheticSpec(discharge_range=(3.0, 2.0))
    with pytest.raises(ValidationError, match="unknown"):
        SyntheticSpec.from_dict({"bogus": 1})
    s = SyntheticSpec(months=100, seed=5)
    assert SyntheticSpec.from_dict(s.to_dict()) == s


# -- normalization --------------------------------------------------------

def test_normalize_hand_values():
    assert normalize(5.0, 0.0, 10.0) == 0.5
    assert denormalize(0.5, 0.0, 10.0) == 5.0
    assert normalize(12.0, 0.0, 10.0) == 1.2  # unclipped outside the training range


def test_training_extremes_map_to_bounds(table, splits):
    train, _ = splits
    block = table.columns[:312]
    scaled = train.norm.transform(block)
    assert np.all(scaled.min(axis=0) == 0.0) and np.all(scaled.max(axis=0) == 1.0)


def test_degenerate_column():
    with pytest.raises(DegenerateColumnError):
        NormalizationParams(np.zeros(10), np.r_[np.ones(9), 0.0])
    P = np.ones((5, 9))
    t = TimeSeriesTable((2000, 1), P, np.linspace(1, 2, 5))
    with pytest.raises(DegenerateColumnError):
        fit_normalizer(t)


def test_normalization_params_dict_round_trip():
    n = NormalizationParams(np.arange(10.0), np.arange(10.0) + 2.5)
    back = NormalizationParams.from_dict(n.to_dict())
    assert np.array_equal(back.mins, n.mins) and np.array_equal(back.maxs, n.maxs)


@given(st.floats(-1e6, 1e6), st.floats(1e-3, 1e6), st.floats(-1e3, 1e3))
def test_normalize_round_trip_property(lo, width, v):
    hi = lo + width
    back = denormalize(normalize(v, lo, hi), lo, hi)
    assert abs(back - v) <= 1e-9 * max(1.0, abs(v), abs(lo), abs(hi))


# -- windowing and splitting ----------------------------------------------

def test_make_supervised_layout():
    t = small_table(T=5)
    norm = fit_normalizer(t)
    ds = make_supervised(t, 1, 1, norm)
    scaled = norm.transform(t.columns)
    assert ds.inputs.shape == (4, 10) and ds.targets.shape == (4,)
    np.testing.assert_array_equal(ds.inputs[:, :9], scaled[:-1, :9])
    np.testing.assert_array_equal(ds.inputs[:, 9], scaled[:-1, 9])
    np.testing.assert_array_equal(ds.targets, scaled[1:, 9])
    assert ds.target_months == ("2000-12", "2001-01", "2001-02", "2001-03")
    assert ds.discharge_feature == 9


def test_make_supervised_longer_lags():
    t = small_table(T=8)
    ds = make_supervised(t, 2, 3, fit_normalizer(t))
    assert ds.inputs.shape == (5, 9 * 2 + 3)
    with pytest.raises(ValidationError):
        make_supervised(t, 0, 1)
    with pytest.raises(InsufficientDataError):
        make_supervised(small_table(T=2), 3, 3)


def test_pipeline_shape(table, splits):
    ds = make_supervised(table)
    assert len(ds) == 383
    train, test = splits
    assert (len(train), len(test)) == (311, 72)
    assert test.target_months[0] == "2013-01" and test.target_months[-1] == "2018-12"


def test_prepare_fits_scaler_on_training_rows_only(table, splits):
    train, test = splits
    rows = training_rows(311)
    assert rows == range(0, 312)
    expect = fit_normalizer(table, rows)
    assert np.array_equal(train.norm.mins, expect.mins) and np.array_equal(train.norm.maxs, expect.maxs)
    assert test.norm is train.norm
    assert train.targets.min() == 0.0 and train.targets.max() == 1.0


@pytest.mark.parametrize("n", [0, 383, 400, -1])
def test_split_rejects_bad_lengths(table, n):
    ds = make_supervised(table)
    with pytest.raises(ValidationError):
        split_contiguous(ds, n)


@given(st.integers(1, 382))
def test_split_partitions_in_order(n):
    t = generate_synthetic(SyntheticSpec())
    ds = make_supervised(t)
    tr, te = split_contiguous(ds, n)
    assert len(tr) + len(te) == len(ds)
    assert np.array_equal(np.vstack([tr.inputs, te.inputs]), ds.inputs)


def test_make_sequences():
    x = np.arange(12.0).reshape(6, 2)
    s = make_sequences(x, 3)
    assert s.shape == (4, 3, 2)
    np.testing.assert_array_equal(s[1], x[1:4])
    with pytest.raises(InsufficientDataError):
        make_sequences(x, 7)


def test_synthetic_spec_ini_round_trip(tmp_path):
    s = SyntheticSpec(months=100, seed=5, start="1990-03")
    s.to_ini(tmp_path / "s.ini")
    assert SyntheticSpec.from_ini(tmp_path / "s.ini") == s
    (tmp_path / "bad.ini").write_text("[other]\nx = 1\n")
    with pytest.raises(ParseError):
        SyntheticSpec.from_ini(tmp_path / "bad.ini")
