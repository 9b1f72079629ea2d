import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from helpers import make_series
from thermosurrogate.dataset import (InitialConditions, NormMode, Quantity, SplitSpec, fit_normalizer, load_csv,
                                     make_windows, save_csv, split)
from thermosurrogate.errors import DegenerateNode, MalformedCsv, NonMonotonicTime, TooShort

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def write(tmp_path, text, name="run.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_smallest_file(tmp_path):
    s = load_csv(write(tmp_path, "time,a,b\n0,1,2\n1,3,4\n2,5,6\n"))
    assert (s.n_steps, s.n_nodes) == (3, 2)
    assert s.node_ids == ("a", "b")
    assert s.values[2, 1] == 6.0


def test_repeated_timestamp_rejected(tmp_path):
    with pytest.raises(NonMonotonicTime):
        load_csv(write(tmp_path, "time,a,b\n0,1,2\n1,3,4\n1,5,6\n"))


def test_uneven_spacing_rejected(tmp_path):
    with pytest.raises(NonMonotonicTime):
        load_csv(write(tmp_path, "time,a\n0,1\n1,3\n3,5\n"))


def test_ragged_row_reports_line(tmp_path):
    with pytest.raises(MalformedCsv, match=r"run.csv:3"):
        load_csv(write(tmp_path, "time,a,b\n0,1,2\n1,3\n"))


def test_non_numeric_cell(tmp_path):
    with pytest.raises(MalformedCsv, match=r":2:"):
        load_csv(write(tmp_path, "time,a\n0,x\n1,2\n"))


def test_nan_cell_rejected(tmp_path):
    with pytest.raises(MalformedCsv):
        load_csv(write(tmp_path, "time,a\n0,nan\n1,2\n"))


@given(hnp.arrays(np.float64, st.tuples(st.integers(2, 15), st.integers(1, 5)), elements=finite))
def test_csv_round_trip_is_bit_exact(tmp_path_factory, values):
    s = make_series(values, dt=0.25)
    p = tmp_path_factory.mktemp("csv") / "r.csv"
    save_csv(s, p)
    back = load_csv(p)
    assert np.array_equal(back.values, s.values)
    assert np.array_equal(back.timestamps, s.timestamps)
    assert back.node_ids == s.node_ids


def test_series_is_read_only():
    s = make_series(np.zeros((4, 2)) + np.arange(4)[:, None])
    with pytest.raises(ValueError):
        s.values[0, 0] = 1.0


def test_initial_conditions_validation():
    with pytest.raises(ValueError):
        InitialConditions(0.0, 290.0, 290.0, (), 5.0)
    with pytest.raises(ValueError):
        InitialConditions(290.0, 290.0, 290.0, (), -1.0)
    ic = InitialConditions(290.0, 291.0, 292.0, (1.0, 2.0), 5.0)
    assert InitialConditions.from_dict(ic.to_dict()) == ic


@pytest.mark.parametrize("n,expected", [(100, (60, 20, 20)), (10, (6, 2, 2)), (101, (61, 20, 20))])
def test_split_lengths(n, expected):
    tr, va, te = split(make_series(np.arange(2 * n, dtype=float).reshape(n, 2)))
    assert (tr.n_steps, va.n_steps, te.n_steps) == expected


def test_split_too_short():
    with pytest.raises(TooShort):
        split(make_series(np.arange(8, dtype=float).reshape(4, 2)))


def test_split_spec_validation():
    with pytest.raises(ValueError):
        SplitSpec(0.5, 0.2, 0.2)
    with pytest.raises(ValueError):
        SplitSpec(1.0, 0.0, 0.0)


@given(st.integers(5, 300))
def test_split_segments_partition_in_order(n):
    s = make_series(np.arange(n, dtype=float)[:, None] * [1.0, -2.0])
    parts = split(s)
    assert np.array_equal(np.concatenate([p.values for p in parts]), s.values)
    assert np.array_equal(np.concatenate([p.timestamps for p in parts]), s.timestamps)
    assert parts[0].timestamps[-1] < parts[1].timestamps[0] < parts[2].timestamps[0]


def test_window_counts():
    x, y = make_windows(make_series(np.arange(24, dtype=float).reshape(12, 2)), 10)
    assert x.shape == (2, 10, 2) and y.shape == (2, 2)
    vals = np.arange(22, dtype=float).reshape(11, 2)
    x, y = make_windows(make_series(vals), 10)
    assert x.shape[0] == 1 and np.array_equal(y[0], vals[10])
    with pytest.raises(TooShort):
        make_windows(make_series(vals[:10]), 10)


@given(hnp.arrays(np.float64, st.tuples(st.integers(4, 40), st.integers(1, 4)), elements=finite),
       st.integers(1, 3))
def test_windows_match_source_slices(values, seq_len):
    x, y = make_windows(values, seq_len)
    assert len(x) == len(values) - seq_len
    for i in range(len(x)):
        assert np.array_equal(x[i], values[i:i + seq_len])
        assert np.array_equal(y[i], values[i + seq_len])
    assert np.array_equal(y, values[seq_len:])


def test_constant_node_is_degenerate():
    v = np.column_stack([np.full(5, 293.15), np.arange(5.0)])
    for mode in NormMode:
        with pytest.raises(DegenerateNode):
            fit_normalizer(v, mode)


def test_minmax_midpoint():
    norm = fit_normalizer(np.array([[280.0], [300.0]]))
    assert norm.apply(np.array([[290.0]]))[0, 0] == 0.5


@given(hnp.arrays(np.float64, st.tuples(st.integers(3, 30), st.integers(1, 4)),
                  elements=st.floats(-1e3, 1e3, allow_nan=False)),
       st.sampled_from(list(NormMode)))
def test_normalizer_round_trip(values, mode):
    values = values + np.arange(len(values))[:, None]  # keep every column non-constant
    norm = fit_normalizer(values, mode)
    z = norm.apply(values)
    back = norm.invert(z)
    assert np.allclose(back, values, rtol=1e-10, atol=1e-10 * np.abs(values).max())
    if mode is NormMode.MINMAX:
        assert z.min() >= -1e-12 and z.max() <= 1 + 1e-12


def test_normalizer_ignores_test_rows():
    rng = np.random.default_rng(0)
    v = rng.normal(size=(50, 3))
    tr, _, _ = split(make_series(v))
    w = v.copy()
    w[40:] += 1e3
    tr2, _, _ = split(make_series(w))
    a, b = fit_normalizer(tr), fit_normalizer(tr2)
    assert np.array_equal(a.offset, b.offset) and np.array_equal(a.scale, b.scale)


def test_quantity_round_trip():
    assert Quantity("heatflux") is Quantity.HEAT_FLUX
