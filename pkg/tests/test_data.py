import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from garom.data import (CsvFormatError, SnapshotSet, gaussian_solution, gen_gaussian_dataset,
                        load_csv, normalize, read_table, save_csv, split)


def test_gaussian_solution_examples():
    pts = np.array([[0.3, -0.2], [1.3, 0.8]])
    vals = gaussian_solution(pts, [0.3, -0.2])
    assert vals[0] == 1.0
    # squared distance 2 from the center
    assert vals[1] == pytest.approx(math.exp(-2.0), rel=1e-15)
    assert vals[1] == pytest.approx(0.13534, abs=5e-6)


def test_gaussian_dataset_properties():
    ds = gen_gaussian_dataset(50, 30, seed=4)
    assert (ds.n, ds.n_c, ds.n_u) == (50, 2, 30)
    assert np.all(ds.solutions > 0) and np.all(ds.solutions <= 1)
    pts = ds.metadata["points"]
    assert pts.shape == (30, 2) and np.all(np.abs(pts) <= 1)
    assert np.all(np.abs(ds.params) <= 1)
    # every row uses the same shared points
    np.testing.assert_allclose(ds.solutions[7], gaussian_solution(pts, ds.params[7]), rtol=1e-15)
    again = gen_gaussian_dataset(50, 30, seed=4)
    np.testing.assert_array_equal(ds.solutions, again.solutions)
    assert ds.provenance == "generated"
    with pytest.raises(ValueError):
        gen_gaussian_dataset(0, 5)


def test_snapshot_set_validation_and_immutability():
    with pytest.raises(ValueError, match="rows"):
        SnapshotSet(np.zeros((3, 2)), np.zeros((4, 5)))
    with pytest.raises(ValueError, match="NaN"):
        SnapshotSet(np.zeros((1, 2)), np.array([[np.nan]]))
    ds = SnapshotSet(np.zeros((2, 1)), np.ones((2, 3)))
    with pytest.raises(ValueError):
        ds.solutions[0, 0] = 5.0


def test_csv_round_trip_bit_exact(tmp_path):
    ds = gen_gaussian_dataset(12, 9, seed=2)
    path = tmp_path / "g.csv"
    save_csv(ds, path)
    back = load_csv(path)
    np.testing.assert_array_equal(back.params, ds.params)
    np.testing.assert_array_equal(back.solutions, ds.solutions)
    assert back.provenance == "ingested"
    header = path.read_text().splitlines()[0].split(",")
    assert header[:3] == ["c_0", "c_1", "u_0"] and len(header) == 11


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(-1e300, 1e300, allow_nan=False)))
def test_csv_round_trip_any_finite(tmp_path_factory, table):
    path = tmp_path_factory.mktemp("rt") / "t.csv"
    save_csv(SnapshotSet(table[:, :1], table[:, 1:]), path)
    c, u = read_table(path)
    np.testing.assert_array_equal(np.hstack([c, u]), table)


def _write(tmp_path, text):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    return p


def test_csv_errors_name_row_and_column(tmp_path):
    with pytest.raises(CsvFormatError, match="row 3: 2 columns"):
        load_csv(_write(tmp_path, "c_0,u_0,u_1\n1,2,3\n4,5\n"))
    with pytest.raises(CsvFormatError, match=r"row 2, column 2 \(u_0\)"):
        load_csv(_write(tmp_path, "c_0,u_0\n1,abc\n"))
    with pytest.raises(CsvFormatError, match="empty"):
        load_csv(_write(tmp_path, ""))
    with pytest.raises(CsvFormatError, match="expected u_1"):
        load_csv(_write(tmp_path, "c_0,u_0,u_2\n1,2,3\n"))
    with pytest.raises(CsvFormatError, match="no u_"):
        load_csv(_write(tmp_path, "c_0,c_1\n1,2\n"))
    with pytest.raises(CsvFormatError, match="non-finite"):
        load_csv(_write(tmp_path, "c_0,u_0\n1,nan\n"))
    with pytest.raises(CsvFormatError, match="no data rows"):
        load_csv(_write(tmp_path, "c_0,u_0\n"))


def test_read_table_params_only(tmp_path):
    c, u = read_table(_write(tmp_path, "c_0,c_1\n1,2\n3,4\n"))
    assert c.shape == (2, 2) and u.shape == (2, 0)


def test_split_400_rows_and_determinism():
    sp = split(400, 0.6, seed=0)
    assert len(sp.train) == 240 and len(sp.test) == 160
    assert np.array_equal(np.sort(np.concatenate([sp.train, sp.test])), np.arange(400))
    again = split(400, 0.6, seed=0)
    np.testing.assert_array_equal(sp.train, again.train)
    assert not np.array_equal(sp.train, split(400, 0.6, seed=1).train)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 500), st.floats(0.01, 0.99), st.integers(0, 2**31))
def test_split_disjoint_exhaustive(n, frac, seed):
    n_train = math.floor(frac * n)
    if n_train in (0, n):
        with pytest.raises(ValueError):
            split(n, frac, seed)
        return
    sp = split(n, frac, seed)
    assert len(sp.train) == n_train
    assert not set(sp.train) & set(sp.test)
    assert len(sp.train) + len(sp.test) == n


def test_split_rejects_bad_fraction():
    with pytest.raises(ValueError):
        split(10, 1.0, 0)
    with pytest.raises(ValueError):
        split(10, 0.0, 0)


def test_normalize_modes():
    ds = gen_gaussian_dataset(20, 6, seed=0)
    same, rec = normalize(ds, "none")
    assert same is ds
    scaled, rec = normalize(ds, "minmax_per_component")
    assert scaled.solutions.min() == 0.0 and scaled.solutions.max() == 1.0
    back = rec.invert(scaled)
    np.testing.assert_allclose(back.solutions, ds.solutions, atol=1e-12)
    np.testing.assert_allclose(back.params, ds.params, atol=1e-12)
    with pytest.raises(ValueError):
        normalize(ds, "zscore")


def test_normalize_constant_column_passthrough():
    u = np.array([[2.0, 1.0], [2.0, 3.0]])
    scaled, rec = normalize(SnapshotSet(np.array([[0.0], [1.0]]), u), "minmax_per_component")
    np.testing.assert_array_equal(scaled.solutions[:, 0], [2.0, 2.0])
    np.testing.assert_array_equal(scaled.solutions[:, 1], [0.0, 1.0])
