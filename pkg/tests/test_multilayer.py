import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import trapezoid

from hjens.errors import ConfigurationError, ContractError
from hjens.grid import GridField, GridSpec
from hjens.lagrangian import integrate_trajectory
from hjens.models import PhaseState, harmonic_oscillator
from hjens.multilayer import (Layer, LayerSet, build_oscillator_layers, check_flux_matching,
                              detect_turning_surface, mix_density, oscillator_density, split_into_layers,
                              total_flux)

G = GridSpec.uniform(-1.2, 1.2, 241)


def layer(index, rho, v, spec=G):
    return Layer(index, GridField(spec, rho, 0.0, "rho"), GridField(spec, v, 0.0, "v"))


def test_uniform_flow_has_no_turning_surface():
    assert detect_turning_surface(layer(0, np.ones(241), np.ones(241))).empty


def test_oscillator_branch_turning_points():
    x = G.axes[0]
    inside = np.abs(x) < 1
    v = np.where(inside, np.sqrt(np.clip(1 - x**2, 0, None)), np.nan)
    lay = Layer(0, GridField(G, np.where(inside, 1.0, np.nan), 0.0, invalid=~inside),
                GridField(G, v, 0.0, invalid=~inside))
    surf = detect_turning_surface(lay)
    assert len(surf) == 2
    np.testing.assert_allclose(np.sort(surf.location[:, 0]), [-1, 1], atol=G.h[0])
    np.testing.assert_array_equal(np.sort(surf.normal[:, 0]), [-1, 1])


def test_two_dimensional_plane_flags_first_component_only():
    g = GridSpec((-1, -1), (1, 1), (21, 21))
    x = g.nodes[:, 0]
    v = np.stack([x + 0.05, np.ones_like(x)])  # keep the zero off the nodes
    lay = Layer(0, GridField(g, np.ones(g.shape)), GridField(g, v.reshape((2,) + g.shape)))
    surf = detect_turning_surface(lay)
    assert len(surf) == 21
    assert set(surf.component) == {0}
    np.testing.assert_allclose(surf.location[:, 0], -0.05, atol=1e-12)


def test_flux_matching_controls():
    ls = build_oscillator_layers(0.5, 1.0, 1.0, GridSpec.uniform(-1.2, 1.2, 2401))
    surf = detect_turning_surface(ls.layers[0])
    rep = check_flux_matching(ls.layers[0], ls.layers[1], surf, 1e-3)
    assert rep.passed and rep.max_mismatch < 1e-3
    back = check_flux_matching(ls.layers[1], ls.layers[0], surf, 1e-3)
    assert back.passed == rep.passed and back.max_mismatch == pytest.approx(rep.max_mismatch, abs=1e-15)
    doubled = Layer(1, ls.layers[1].rho.replace(values=2 * ls.layers[1].rho.values), ls.layers[1].v)
    bad = check_flux_matching(ls.layers[0], doubled, surf, 1e-3)
    assert not bad.passed
    assert bad.asymmetry == pytest.approx(2.0, rel=1e-12)
    assert "MISMATCH" in str(bad)


def test_zero_fluxes_match_trivially():
    zeros = np.zeros(241)
    a, b = layer(0, np.ones(241), zeros), layer(1, np.ones(241), zeros)
    surf = detect_turning_surface(layer(0, np.ones(241), G.axes[0] + 0.005))
    assert check_flux_matching(a, b, surf).passed


def test_flux_matching_rejects_mismatched_grids():
    other = GridSpec.uniform(-1, 1, 11)
    with pytest.raises(ContractError):
        check_flux_matching(layer(0, np.ones(241), np.ones(241)), layer(1, np.ones(11), np.ones(11), other),
                            detect_turning_surface(layer(0, np.ones(241), np.ones(241))))


def test_mixing_examples():
    rho = np.exp(-G.axes[0] ** 2)
    one = layer(0, rho, np.ones(241))
    np.testing.assert_array_equal(mix_density([one], [1.0]).values[0], rho)
    fwd, bwd = layer(0, rho, np.full(241, 0.7)), layer(1, rho, np.full(241, -0.7))
    np.testing.assert_array_equal(total_flux([fwd, bwd], [0.5, 0.5]).values, 0.0)
    np.testing.assert_array_equal(mix_density([fwd, bwd], [0.5, 0.5]).values[0], rho)
    with pytest.raises(ContractError):
        mix_density([fwd, bwd], [0.5, 0.6])
    with pytest.raises(ContractError):
        LayerSet([fwd, bwd], [1.2, -0.2])


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 1), st.floats(0.1, 5), st.floats(0.1, 5))
def test_mixing_is_linear(w, a, b):
    rng = np.random.default_rng(1)
    r1, r2 = rng.uniform(0, 1, 241), rng.uniform(0, 1, 241)
    v = np.ones(241)
    mixed = mix_density([layer(0, a * r1, v), layer(1, b * r2, v)], [w, 1 - w]).values[0]
    np.testing.assert_allclose(mixed, w * a * r1 + (1 - w) * b * r2, rtol=1e-14, atol=1e-15)
    same = mix_density([layer(0, r1, v), layer(1, r1, v)], [w, 1 - w]).values[0]
    np.testing.assert_allclose(same, r1, rtol=1e-15)


def test_oscillator_layers_closed_forms():
    g = GridSpec.uniform(-1.2, 1.2, 2401)
    ls = build_oscillator_layers(0.5, 1.0, 1.0, g)
    mixed = mix_density(ls.layers, ls.weights)
    x = g.axes[0]
    assert abs(mixed.values[0][np.argmin(np.abs(x))] - 1 / np.pi) < 1e-12
    assert abs(mixed.values[0][np.argmin(np.abs(x - 0.6))] - 0.39789) < 1e-5
    assert abs(oscillator_density(0.6, 1.0) - 1 / (np.pi * 0.8)) < 1e-15
    inner = np.abs(x) < 0.95
    for lay in ls.layers:
        prod = lay.rho.values[0][inner] * np.abs(lay.v.values[0][inner])
        assert np.ptp(prod) < 1e-6
    # normalization of the mixture: integral of 1/(pi sqrt(1 - x^2)) over (-1, 1)
    ok = mixed.valid_mask()
    tail = 1 - 2 * np.arcsin(x[ok].max()) / np.pi
    assert abs(trapezoid(mixed.values[0][ok], x[ok]) + tail - 1) < 5e-3


def test_oscillator_layers_need_coverage():
    with pytest.raises(ConfigurationError):
        build_oscillator_layers(0.5, 1.0, 1.0, GridSpec.uniform(-0.9, 0.9, 101))


def test_long_orbit_histogram_matches_mixture():
    g = GridSpec.uniform(-1.2, 1.2, 2401)
    mixed = mix_density(*(lambda ls: (ls.layers, ls.weights))(build_oscillator_layers(0.5, 1.0, 1.0, g)))
    T = 2 * np.pi
    tr = integrate_trajectory(harmonic_oscillator(), PhaseState(0.0, [0.0], [1.0]), T / 4000, 10 * T)
    edges = np.linspace(-0.9, 0.9, 37)
    hist, _ = np.histogram(tr.q[1:, 0], edges, density=False)
    hist = hist / (tr.q[1:].size * (edges[1] - edges[0]))
    ref = mixed.at(0.5 * (edges[1:] + edges[:-1])[:, None])[:, 0]
    assert np.sum(np.abs(hist - ref)) / np.sum(ref) < 0.02


def test_trajectory_split_into_layers():
    T = 2 * np.pi
    tr = integrate_trajectory(harmonic_oscillator(), PhaseState(0.0, [0.0], [1.0]), 0.01, 2 * T)
    segs = split_into_layers(tr, harmonic_oscillator())
    assert [s.signs for s in segs[:3]] == [(1,), (-1,), (1,)]
    assert len(segs) == 5
    turning = [tr.t[s.start] for s in segs[1:]]
    np.testing.assert_allclose(turning, [T / 4, 3 * T / 4, 5 * T / 4, 7 * T / 4], atol=0.011)
