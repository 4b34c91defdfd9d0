import numpy as np
import pytest
import yaml
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from beltrami import export

finite = st.floats(allow_nan=False, allow_infinity=False)


@given(arrays(np.float64, st.tuples(st.integers(1, 20), st.just(3)), elements=finite))
def test_csv_round_trip_is_bitwise(tmp_path_factory, data):
    p = tmp_path_factory.mktemp("csv") / "t.csv"
    export.write_csv(p, ["a", "b", "c"], [data[:, 0], data[:, 1], data[:, 2]])
    header, back = export.read_csv(p)
    assert header == ["a", "b", "c"]
    np.testing.assert_array_equal(back, data)


def test_csv_format(tmp_path):
    p = export.write_csv(tmp_path / "f.csv", ["n", "x"], [np.array([0, 1]), np.array([0.1, 1e-300])])
    assert p.read_text() == "n,x\n0,0.10000000000000001\n1,1e-300\n"


def test_complex_columns_must_be_split(tmp_path):
    z = np.array([1 + 2j, 3 - 1j])
    with pytest.raises(TypeError):
        export.write_csv(tmp_path / "z.csv", ["z"], [z])
    names, cols = export.complex_columns("u", np.stack([z, z, z], axis=1))
    assert names == ["u_x_re", "u_x_im", "u_y_re", "u_y_im", "u_z_re", "u_z_im"]
    np.testing.assert_array_equal(cols[1], z.imag)


def test_mismatched_columns_rejected(tmp_path):
    with pytest.raises(ValueError):
        export.write_csv(tmp_path / "m.csv", ["a", "b"], [np.zeros(2), np.zeros(3)])
    with pytest.raises(ValueError):
        export.write_csv(tmp_path / "m.csv", ["a"], [np.zeros(2), np.zeros(2)])


@given(st.lists(arrays(np.float64, st.tuples(st.integers(1, 8), st.just(3)), elements=finite), min_size=1, max_size=5))
def test_polyline_round_trip(tmp_path_factory, lines):
    p = tmp_path_factory.mktemp("vtk") / "l.vtk"
    export.write_polylines(p, lines)
    back = export.read_polylines(p)
    assert len(back) == len(lines)
    for a, b in zip(back, lines):
        np.testing.assert_array_equal(a, b)


def test_polyline_layout(tmp_path):
    p = export.write_polylines(tmp_path / "l.vtk", [np.zeros((2, 3)), np.ones((3, 3))])
    text = p.read_text().splitlines()
    assert text[0].startswith("# vtk DataFile Version")
    assert text[2:5] == ["ASCII", "DATASET POLYDATA", "POINTS 5 double"]
    assert text[10:] == ["LINES 2 7", "2 0 1", "3 2 3 4"]


def test_grid_csv_columns(tmp_path, grid16):
    header, data = export.read_csv(export.write_grid_csv(grid16, tmp_path / "g.csv"))
    assert header == ["x", "y", "z", "nx", "ny", "nz", "w"]
    assert data.shape == (grid16.n, 7)
    assert data[:, 6].sum() == pytest.approx(4 * np.pi, rel=1e-13)


def test_report_is_plain_yaml(tmp_path):
    p = export.write_report(tmp_path / "r.yaml", {"b": np.float64(1.5), "a": np.arange(3), "c": 2 + 1j,
                                                 "d": (np.int64(4), np.bool_(True))})
    data = yaml.safe_load(p.read_text(encoding="utf-8"))
    assert list(data) == ["b", "a", "c", "d"]
    assert data == {"b": 1.5, "a": [0, 1, 2], "c": {"re": 2.0, "im": 1.0}, "d": [4, True]}
