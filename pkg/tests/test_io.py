import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from hjens.dipole import DipoleFieldSet
from hjens.errors import FormatError, VersionError
from hjens.grid import GridField, GridSpec
from hjens.io import (format_field_snapshot, format_trajectories, parse_field_snapshot, parse_trajectories,
                      read_dipole_fields, read_field_snapshot, read_layer_set, read_manifest, write_dipole_fields,
                      write_field_snapshot, write_layer_set, write_manifest, write_trajectories, read_trajectories)
from hjens.lagrangian import Trajectory
from hjens.models import DipoleParams
from hjens.multilayer import Layer, LayerSet


def line1d():
    g = GridSpec.uniform(0, 1, 3)
    return GridField(g, g.axes[0].copy(), 0.25, "S")


def test_one_dimensional_rows_and_header():
    text = format_field_snapshot(line1d())
    lines = text.splitlines()
    assert lines[0] == "# hjfield v1"
    assert lines[1] == "# axes=q dims=1 grid=3 t=0.25"
    assert lines[2] == "# bounds=0:1"
    assert lines[3] == "# fields=S"
    assert [tuple(map(float, ln.split(","))) for ln in lines[4:]] == [(0, 0), (0.5, 0.5), (1, 1)]


def test_row_major_node_order_and_vector_columns():
    g = GridSpec((0.0, -1.0), (1.0, 1.0), (3, 3))
    S = GridField.from_function(g, lambda x: x[:, 0] + 10 * x[:, 1], name="S")
    v = GridField.from_function(g, lambda x: np.stack([x[:, 0], -x[:, 1]], 1), name="v")
    text = format_field_snapshot([S, v])
    lines = text.splitlines()
    assert lines[3] == "# fields=S,v1,v2"
    rows = np.array([list(map(float, ln.split(","))) for ln in lines[4:]])
    np.testing.assert_array_equal(rows[:3, 0], 0.0)
    np.testing.assert_array_equal(rows[:3, 1], [-1, 0, 1])
    out = parse_field_snapshot(text)
    assert set(out) == {"S", "v"}
    np.testing.assert_array_equal(out["v"].values, v.values)


finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 3).flatmap(lambda d: st.tuples(st.just(d), st.lists(st.integers(3, 5), min_size=d, max_size=d))),
       st.data(), finite)
def test_round_trip_is_bitwise(dims_shape, data, t):
    d, shape = dims_shape
    lo = data.draw(st.lists(st.floats(-1e6, 1e6), min_size=d, max_size=d))
    width = data.draw(st.lists(st.floats(1e-3, 1e3), min_size=d, max_size=d))
    g = GridSpec(tuple(lo), tuple(a + w for a, w in zip(lo, width)), tuple(shape))
    vals = data.draw(arrays(np.float64, g.shape, elements=finite))
    f = GridField(g, vals, t, "phi")
    back = parse_field_snapshot(format_field_snapshot(f))["phi"]
    assert back.t == t
    assert back.spec.mins == g.mins and back.spec.maxs == g.maxs
    assert np.array_equal(back.values.view(np.int64), f.values.view(np.int64))


def test_file_round_trip_and_p_axes(tmp_path):
    g = GridSpec.uniform(-2, 2, 5, axes_kind="p")
    f = GridField(g, np.array([0.1, 1 / 3, np.pi, -1e-300, 7e300]), 1.5, "rho")
    path = write_field_snapshot(tmp_path / "a.hjfield", f)
    assert "axes=p" in path.read_text().splitlines()[1]
    back = read_field_snapshot(path)["rho"]
    assert back.spec.axes_kind == "p"
    np.testing.assert_array_equal(back.values, f.values)


def test_invalid_nodes_written_as_nan():
    g = GridSpec.uniform(0, 1, 4)
    f = GridField(g, np.arange(4.0), 0.0, "r", invalid=np.array([True, False, False, True]))
    back = parse_field_snapshot(format_field_snapshot(f))["r"]
    np.testing.assert_array_equal(back.invalid, f.invalid)


def test_version_error_on_line_one():
    text = format_field_snapshot(line1d()).replace("hjfield v1", "hjfield v2")
    with pytest.raises(VersionError) as exc:
        parse_field_snapshot(text)
    assert exc.value.line == 1 and "line 1" in str(exc.value)


@pytest.mark.parametrize("line, mutate", [
    (1, lambda L: L.__setitem__(0, "# hjtraj v1")),
    (2, lambda L: L.__setitem__(1, "# axes=q dims=2 grid=3 t=0.25")),
    (2, lambda L: L.__setitem__(1, "# axes=r dims=1 grid=3 t=0.25")),
    (2, lambda L: L.__setitem__(1, "# axes=q dims=1 grid=3")),
    (3, lambda L: L.__setitem__(2, "# bounds=0-1")),
    (4, lambda L: L.__setitem__(3, "# field=S")),
    (6, lambda L: L.__setitem__(5, "0.5,0.5,7")),
    (7, lambda L: L.__setitem__(6, "1,abc")),
    (6, lambda L: L.__setitem__(5, "0.6,0.5")),
    (6, lambda L: L.pop()),
])
def test_malformed_snapshot_reports_line(line, mutate):
    lines = format_field_snapshot(line1d()).splitlines()
    mutate(lines)
    with pytest.raises(FormatError) as exc:
        parse_field_snapshot("\n".join(lines))
    assert exc.value.line == line
    assert f"line {line}" in str(exc.value)


def test_read_error_names_file(tmp_path):
    p = tmp_path / "bad.hjfield"
    p.write_text("# hjfield v9\n")
    with pytest.raises(FormatError, match="bad.hjfield"):
        read_field_snapshot(p)


def test_trajectory_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    trs = [Trajectory(np.linspace(0, 1, 6), rng.normal(size=(6, 2)), rng.normal(size=(6, 2))) for _ in range(3)]
    text = format_trajectories(trs)
    lines = text.splitlines()
    assert lines[0] == "# hjtraj v1"
    assert lines[2] == "# columns=t,q1,q2,p1,p2"
    back = read_trajectories(write_trajectories(tmp_path / "x.hjtraj", trs))
    assert len(back) == 3
    for a, b in zip(trs, back):
        np.testing.assert_array_equal(a.t, b.t)
        np.testing.assert_array_equal(a.q, b.q)
        np.testing.assert_array_equal(a.p, b.p)


def test_trajectory_errors():
    tr = Trajectory(np.arange(3.0), np.zeros((3, 1)), np.ones((3, 1)))
    lines = format_trajectories([tr]).splitlines()
    with pytest.raises(VersionError):
        parse_trajectories("\n".join(["# hjtraj v3"] + lines[1:]))
    bad = lines.copy()
    bad[5] = "1,2"
    with pytest.raises(FormatError) as exc:
        parse_trajectories("\n".join(bad))
    assert exc.value.line == 6
    with pytest.raises(FormatError, match="members"):
        parse_trajectories("\n".join([lines[0], "# dims=1 members=2"] + lines[2:]))


def test_manifest_round_trip(tmp_path):
    p = write_manifest(tmp_path / "m.manifest", "demo", {"a": "1", "b": "x y"})
    assert read_manifest(p) == ("demo", {"a": "1", "b": "x y"})
    (tmp_path / "n.manifest").write_text("# hjmanifest v1\nno-equals\n")
    with pytest.raises(FormatError) as exc:
        read_manifest(tmp_path / "n.manifest")
    assert exc.value.line == 2


def test_layer_set_round_trip(tmp_path):
    g = GridSpec.uniform(-1, 1, 9)
    x = g.axes[0]
    layers = [Layer(1, GridField(g, np.exp(-x**2), 0.5, "rho"), v=GridField(g, np.sqrt(1.5 - x**2), 0.5, "v")),
              Layer(2, GridField(g, np.exp(-x**2), 0.5, "rho"), v=GridField(g, -np.sqrt(1.5 - x**2), 0.5, "v"))]
    ls = LayerSet(layers, [0.25, 0.75])
    back = read_layer_set(write_layer_set(tmp_path / "out", ls))
    np.testing.assert_array_equal(back.weights, ls.weights)
    for a, b in zip(ls.layers, back.layers):
        assert a.index == b.index
        np.testing.assert_array_equal(a.rho.values, b.rho.values)
        np.testing.assert_array_equal(a.v.values, b.v.values)


def test_dipole_fields_round_trip(tmp_path):
    g = GridSpec.uniform(0, 1, 5, dim=2)
    mk = lambda v, n: GridField(g, np.broadcast_to(v, g.shape).astype(float), 0.75, n)
    x = g.nodes[:, 0].reshape(g.shape)
    fs = DipoleFieldSet(mk(x**2, "S"), mk(0.1 * x, "xi"), mk(7.0 + x, "chi"), mk(1.0, "rho"))
    params = DipoleParams(m=2.0, e=-1.0, c=3.0, gamma=0.4, spin_mag=0.5)
    back, p2 = read_dipole_fields(write_dipole_fields(tmp_path, fs, params))
    assert p2 == params
    for key in ("S", "xi", "chi", "rho"):
        np.testing.assert_array_equal(getattr(back, key).values, getattr(fs, key).values)
    assert back.t == 0.75
