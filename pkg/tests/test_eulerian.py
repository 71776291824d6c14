import numpy as np
import pytest

from hjens.errors import CausticError, ConfigurationError, SchemeError, StepSizeError
from hjens.eulerian import (curl_diagnostic, detect_multivaluedness, run_eulerian, step_density,
                            step_momentum_field, total_mass, velocity_from_momentum)
from hjens.grid import GridField, GridSpec
from hjens.lagrangian import EnsembleCloud, integrate_ensemble
from hjens.models import (free_particle, hamiltonian_from_expression, harmonic_oscillator, make_damped_particle,
                          make_em_particle, make_potential_particle)

zero = (lambda t, q: np.zeros(np.shape(q)[:-1]), lambda t, q: np.zeros(np.shape(q)))


def const_field(spec, value, name="p"):
    value = np.atleast_1d(value)
    return GridField(spec, np.broadcast_to(value[:, None], (value.size, spec.size)).reshape(
        (value.size,) + spec.shape), 0.0, name)


def test_velocity_from_momentum_examples():
    g = GridSpec.uniform(-1, 1, 5)
    v = velocity_from_momentum(make_potential_particle(2.0, *zero), const_field(g, 4.0))
    np.testing.assert_array_equal(v.values, 2.0)
    g3 = GridSpec.uniform(-1, 1, 3, dim=3)
    em = make_em_particle(A=lambda t, q: np.broadcast_to([1.0, 0, 0], np.shape(q)))
    v = velocity_from_momentum(em, const_field(g3, [1.0, 0, 0]))
    np.testing.assert_array_equal(v.values, 0.0)
    ho = hamiltonian_from_expression("p1^2/2 + x^2/2", 1)
    p = GridField.from_function(g, lambda q: np.sin(3 * q[:, 0]))
    np.testing.assert_array_equal(velocity_from_momentum(ho, p).values, p.values)


def test_uniform_free_field_unchanged():
    g = GridSpec.uniform(-1, 1, 41)
    p = const_field(g, 0.8)
    for _ in range(10):
        p = step_momentum_field(free_particle(), p, 0.01)
    np.testing.assert_allclose(p.values, 0.8, rtol=0, atol=1e-14)


def test_oscillator_rest_field_matches_characteristics():
    # rest data: q = q0 cos t, p = -q0 sin t, hence p(t, q) = -q tan t
    g = GridSpec.uniform(-2, 2, 201)
    p = GridField(g, np.zeros(g.shape), 0.0)
    for _ in range(100):
        p = step_momentum_field(harmonic_oscillator(), p, 0.005)
    x = g.nodes[:, 0]
    inner = np.abs(x) < 1.5
    assert abs(p.t - 0.5) < 1e-12
    assert np.max(np.abs(p.values[0][inner] + x[inner] * np.tan(0.5))) < 1e-3


def test_damped_uniform_momentum_decays():
    m, beta = 2.0, 0.6
    model = make_damped_particle(m, *zero, beta=beta)
    g = GridSpec.uniform(-1, 1, 21, boundary="periodic")
    p = const_field(g, 1.0)
    for _ in range(100):
        p = step_momentum_field(model, p, 0.01)
    np.testing.assert_allclose(p.values, np.exp(-beta * 1.0 / m), rtol=0, atol=1e-6)


def test_momentum_step_enforces_cfl():
    g = GridSpec.uniform(-1, 1, 21)
    with pytest.raises(StepSizeError) as info:
        step_momentum_field(free_particle(), const_field(g, 10.0), 0.01)
    assert info.value.courant > 0.5


def test_density_at_rest_is_unchanged():
    g = GridSpec.uniform(-1, 1, 21)
    rho = GridField.from_function(g, lambda q: np.exp(-q[:, 0] ** 2), name="rho")
    out = step_density(const_field(g, 0.0, "v"), rho, 0.1)
    np.testing.assert_array_equal(out.values, rho.values)


@pytest.mark.parametrize("scheme", ["upwind", "muscl"])
def test_constant_advection_translates_and_conserves(scheme):
    g = GridSpec.uniform(0, 10 * 199 / 200, 200, boundary="periodic")
    rho = GridField.from_function(g, lambda q: np.exp(-((q[:, 0] - 3) / 0.4) ** 2), name="rho")
    c, dt, n = 0.7, 0.02, 100
    v = const_field(g, c, "v")
    x = g.nodes[:, 0]
    m0, c0 = total_mass(rho), np.sum(x * rho.values[0]) / rho.values[0].sum()
    for _ in range(n):
        rho = step_density(v, rho, dt, scheme)
    assert abs(total_mass(rho) - m0) < 1e-14
    centroid = np.sum(x * rho.values[0]) / rho.values[0].sum()
    assert abs(centroid - (c0 + c * n * dt)) < (1e-12 if scheme == "upwind" else 1e-3)


def test_gaussian_density_under_oscillator_flow_matches_cloud_histogram():
    # p0 = q0 gives q = q0 (cos t + sin t), v(t, q) = q (cos t - sin t) / (cos t + sin t)
    g = GridSpec.uniform(-3, 3, 601)
    x = g.nodes[:, 0]
    sigma = 0.3
    rho = GridField(g, np.exp(-x**2 / (2 * sigma**2)) / np.sqrt(2 * np.pi) / sigma, 0.0, "rho")
    m0 = total_mass(rho)
    t, dt = 0.0, 0.001
    t_end = np.pi / 2 - 0.4
    n = int(round(t_end / dt))
    vel = lambda s: GridField(g, x * (np.cos(s) - np.sin(s)) / (np.cos(s) + np.sin(s)), s, "v")
    for _ in range(n):
        rho = step_density(vel(t + dt / 2), rho, dt, "muscl")
        t += dt
    assert abs(total_mass(rho) - m0) < 1e-10
    rng = np.random.default_rng(0)
    q0 = rng.normal(0, sigma, 400_000)[:, None]
    cloud = integrate_ensemble(harmonic_oscillator(), EnsembleCloud(0.0, q0, q0.copy()), 0.05, t)
    edges = np.linspace(-2, 2, 41)
    hist, _ = np.histogram(cloud.q[:, 0], edges, density=True)
    width = edges[1] - edges[0]
    cells = np.array([rho.values[0][(x >= a) & (x < b)].mean() for a, b in zip(edges[:-1], edges[1:])])
    l1 = np.sum(np.abs(cells - hist)) * width
    assert l1 < 0.02


def test_negative_density_is_reported():
    g = GridSpec.uniform(0, 1, 11)
    v = GridField(g, np.where(np.arange(11) < 5, 1.0, -1.0) * 0.0 + np.linspace(-1, 1, 11), 0.0)
    rho = GridField(g, np.zeros(11), 0.0)
    rho.values[0, 5] = -1e-6
    with pytest.raises(SchemeError, match="negative"):
        step_density(v.replace(values=np.zeros((1, 11))), rho, 0.01)


def test_density_errors():
    g = GridSpec.uniform(0, 1, 11)
    rho = GridField(g, np.ones(11), 0.0)
    with pytest.raises(StepSizeError):
        step_density(const_field(g, 100.0), rho, 0.01)
    with pytest.raises(ConfigurationError):
        step_density(const_field(g, 1.0), rho, 0.01, scheme="lax")


def test_outflow_boundary_flux_is_reported():
    g = GridSpec.uniform(0, 1, 11)
    rho = GridField(g, np.ones(11), 0.0)
    out = step_density(const_field(g, 1.0), rho, 0.05)
    assert abs(total_mass(out) - total_mass(rho) + np.sum(out.meta["boundary_flux"])) < 1e-15


def test_curl_examples():
    g = GridSpec.uniform(-1, 1, 9, dim=2)
    assert curl_diagnostic(GridField.from_function(g, lambda q: q)) < 1e-12
    rot = GridField.from_function(g, lambda q: np.stack([-q[:, 1], q[:, 0]], axis=-1))
    assert abs(curl_diagnostic(rot) - 2) < 1e-12
    with pytest.raises(ConfigurationError):
        curl_diagnostic(GridField(GridSpec.uniform(0, 1, 5), np.zeros(5)))


def test_oscillator_preserves_potentiality_on_fine_grid():
    g = GridSpec.uniform(-1, 1, 256, dim=2)
    p = GridField.from_function(g, lambda q: q)
    model = harmonic_oscillator(dim=2)
    worst = 0.0
    for _ in range(400):
        p = step_momentum_field(model, p, 0.0025)
        worst = max(worst, curl_diagnostic(p))
    assert abs(p.t - 1.0) < 1e-12
    assert worst < 1e-4


def test_multivaluedness_examples():
    g = GridSpec.uniform(-1, 1, 101)
    free = run_eulerian(free_particle(), const_field(g, 0.5), 1.0, 0.01)
    assert detect_multivaluedness(free.momentum, model=free_particle()) is None
    with pytest.raises(CausticError) as info:
        run_eulerian(harmonic_oscillator(), GridField(g, np.zeros(g.shape), 0.0), 3.0, 2e-3, auto_reduce=True)
    assert abs(info.value.time - np.pi / 2) <= 0.05
    with pytest.raises(CausticError) as info:
        run_eulerian(free_particle(), GridField.from_function(g, lambda q: -q[:, 0]), 2.0, 2e-3, auto_reduce=True)
    assert abs(info.value.time - 1.0) <= 0.05
    assert info.value.run.momentum[-1].t <= info.value.time + 1e-12


def test_detector_uses_attached_flow_map():
    g = GridSpec.uniform(-1, 1, 11)
    snaps = [const_field(g, 0.0, "v").replace(t=t) for t in (0.0, 0.5, 1.0)]
    assert detect_multivaluedness(snaps, flow_map=([0.0, 0.5, 1.0], [np.ones(3), -np.ones(3), -np.ones(3)])) == 0.5
    with pytest.raises(ConfigurationError):
        detect_multivaluedness(snaps[:1])


def test_lagrangian_eulerian_caustics_agree():
    from hjens.lagrangian import caustic_time
    g = GridSpec.uniform(-1, 1, 201)
    dt = 2e-3
    t_flow = caustic_time(harmonic_oscillator(), g, lambda q: 0 * q, 3.0, dt)
    with pytest.raises(CausticError) as info:
        run_eulerian(harmonic_oscillator(), GridField(g, np.zeros(g.shape), 0.0), 3.0, dt, auto_reduce=True)
    assert abs(info.value.time - t_flow) <= 0.05
