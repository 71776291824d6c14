import math

import numpy as np
import pytest
from scipy.integrate import quad

from hjens.errors import ContractError
from hjens.eulerian import step_density, step_momentum_field, total_mass, velocity_from_momentum
from hjens.grid import GridField, GridSpec
from hjens.hj import free_particle_integral, jacobi_recover_q, oscillator_integral, uniform_force_integral
from hjens.lagrangian import EnsembleCloud, integrate_ensemble, integrate_trajectory
from hjens.models import (PhaseState, free_particle, harmonic_oscillator, hamiltonian_from_expression,
                          uniform_force)
from hjens.prep import (hj_residual_p, jacobi_recover_p, momentum_space_velocity, rotate_oscillator_data,
                        step_coordinate_field, step_density_p, truncated_hj_residual_p)


def pgrid(lo, hi, n, **kw):
    return GridSpec.uniform(lo, hi, n, axes_kind="p", **kw)


def test_momentum_space_velocity_examples():
    g = pgrid(-1, 1, 11)
    P = g.nodes[:, 0]
    q = GridField(g, P, 0.0, "q")
    np.testing.assert_array_equal(momentum_space_velocity(free_particle(), q).values, 0.0)
    np.testing.assert_array_equal(momentum_space_velocity(uniform_force(2.0), q).values, 2.0)
    np.testing.assert_array_equal(momentum_space_velocity(harmonic_oscillator(), q).values[0], -P)


def test_requires_momentum_axes():
    with pytest.raises(ContractError):
        momentum_space_velocity(free_particle(), GridField(GridSpec.uniform(-1, 1, 5), np.zeros(5)))


def test_free_coordinate_field_is_pure_source():
    g = pgrid(-1, 1, 21)
    P = g.nodes[:, 0]
    q = GridField(g, np.zeros(21), 0.0, "q")
    for _ in range(40):
        q = step_coordinate_field(free_particle(2.0), q, 0.025)
    np.testing.assert_allclose(q.values[0], P * 1.0 / 2.0, rtol=0, atol=1e-10)


def test_uniform_force_coordinate_field_closed_form():
    # p = p0 + t, q = p0 t + t^2/2 gives q(t, p) = p t - t^2/2
    g = pgrid(-2, 2, 81)
    P = g.nodes[:, 0]
    q = GridField(g, np.zeros(81), 0.0, "q")
    for _ in range(50):
        q = step_coordinate_field(uniform_force(1.0), q, 0.01)
    t = q.t
    inner = P > -2 + t + 0.1  # feet inside the grid
    assert np.max(np.abs(q.values[0][inner] - (P[inner] * t - t**2 / 2))) < 1e-3
    # the same against Lagrangian orbits launched on the initial line q = 0
    P0 = P[inner] - t
    cloud = integrate_ensemble(uniform_force(1.0), EnsembleCloud(0.0, 0 * P0[:, None], P0[:, None]), 0.01, t)
    np.testing.assert_allclose(cloud.p[:, 0], P[inner], atol=1e-12)
    assert np.max(np.abs(q.values[0][inner] - cloud.q[:, 0])) < 1e-3


def test_oscillator_coordinate_field_matches_phase_space_orbits():
    g = pgrid(-3, 3, 301)
    f = lambda P: 0.5 * np.sin(P)
    q = GridField.from_function(g, lambda n: f(n[:, 0]), name="q")
    for _ in range(100):
        q = step_coordinate_field(harmonic_oscillator(), q, 0.005)
    P0 = np.linspace(-2, 2, 41)
    cloud = integrate_ensemble(harmonic_oscillator(), EnsembleCloud(0.0, f(P0)[:, None], P0[:, None]), 0.005, q.t)
    field_q = q.at(cloud.p)[:, 0]
    assert np.max(np.abs(field_q - cloud.q[:, 0])) < 1e-3


def test_q_and_p_solvers_are_dual_under_rotation():
    f = lambda x: 0.5 * np.sin(x)
    gq = GridSpec.uniform(-3, 3, 301)
    gp = pgrid(-3, 3, 301)
    p = GridField.from_function(gq, lambda n: f(n[:, 0]), name="p")
    q = GridField.from_function(gp, lambda n: rotate_oscillator_data(f)(n[:, 0]), name="q")
    ho = harmonic_oscillator()
    for _ in range(100):
        p = step_momentum_field(ho, p, 0.005)
        q = step_coordinate_field(ho, q, 0.005)
    x = gq.nodes[:, 0]
    inner = np.abs(x) < 2.5
    # q_rot(t, P) = p(t, -P): node i of the p-grid mirrors node n-1-i of the q-grid
    assert np.max(np.abs(q.values[0][inner] - p.values[0][::-1][inner])) < 1e-3


def test_density_p_examples():
    g = pgrid(-1, 1, 41)
    rho = GridField.from_function(g, lambda n: np.exp(-4 * n[:, 0] ** 2), name="rho")
    out = step_density_p(GridField(g, np.zeros(41)), rho, 0.1)
    np.testing.assert_array_equal(out.values, rho.values)
    gper = pgrid(0, 10 * 99 / 100, 100, boundary="periodic")
    rho = GridField.from_function(gper, lambda n: 1 + np.sin(2 * np.pi * n[:, 0] / 10), name="rho")
    m0 = total_mass(rho)
    for _ in range(200):
        rho = step_density_p(GridField(gper, np.full(100, 0.3)), rho, 0.1)
    assert abs(total_mass(rho) - m0) < 1e-14


def test_oscillator_density_quarter_turn_dual_runs():
    # q-space: p0 = q, Gaussian off centre; p-space: the rotated ensemble
    f = lambda x: x
    sigma, c = 0.2, 0.3
    gq = GridSpec.uniform(-3, 3, 301)
    gp = pgrid(-3, 3, 301)
    x = gq.nodes[:, 0]
    ho = harmonic_oscillator()
    p = GridField(gq, f(x), 0.0, "p")
    rq = GridField(gq, np.exp(-((x - c) / sigma) ** 2 / 2), 0.0, "rho")
    q = GridField(gp, rotate_oscillator_data(f)(x), 0.0, "q")
    rp = GridField(gp, np.exp(-((-x - c) / sigma) ** 2 / 2), 0.0, "rho")
    m0 = total_mass(rq)
    dt = 0.003
    for _ in range(int(round((np.pi / 2 - 0.2) / dt))):
        v0, w0 = velocity_from_momentum(ho, p), momentum_space_velocity(ho, q)
        p, q = step_momentum_field(ho, p, dt), step_coordinate_field(ho, q, dt)
        v1, w1 = velocity_from_momentum(ho, p), momentum_space_velocity(ho, q)
        rq = step_density(v0.replace(values=(v0.values + v1.values) / 2), rq, dt, "muscl")
        rp = step_density_p(w0.replace(values=(w0.values + w1.values) / 2), rp, dt, "muscl")
    assert abs(total_mass(rq) - m0) < 1e-10 and abs(total_mass(rp) - m0) < 1e-10
    assert np.max(np.abs(rp.values[0] - rq.values[0][::-1])) < 1e-3


def test_hj_residual_p_examples():
    pts = np.linspace(-2, 2, 9)[:, None]
    np.testing.assert_array_equal(hj_residual_p(free_particle(1.5), "-p1^2*t/(2*1.5)", pts, t=0.4), 0.0)
    F0, m, E = 0.8, 1.3, 0.6
    Phi = f"-{E}*t + {E}*p1/{F0} - p1^3/(6*{m}*{F0})"
    assert np.max(np.abs(hj_residual_p(uniform_force(F0, m), Phi, pts, t=0.4))) < 1e-14
    np.testing.assert_allclose(hj_residual_p(free_particle(2.0), "3", pts, t=0.0), pts[:, 0] ** 2 / 4)


def test_hj_residual_p_from_snapshots():
    g = pgrid(-1, 1, 41)
    P = g.nodes[:, 0]
    a = GridField(g, -P**2 * 0.2 / 2, 0.2)
    b = GridField(g, -P**2 * 0.21 / 2, 0.21)
    assert abs(hj_residual_p(free_particle(), (a, b), [0.3])) < 1e-12


def test_truncated_residual_examples():
    F0, m, E = 0.8, 1.3, 0.6
    pts = np.linspace(-2, 2, 9)[:, None]
    res = truncated_hj_residual_p(uniform_force(F0, m), f"{E}*p1/{F0} - p1^3/(6*{m}*{F0})", E, pts)
    assert np.max(np.abs(res)) < 1e-14
    np.testing.assert_allclose(truncated_hj_residual_p(free_particle(), "0.7*p1", 0.25, pts),
                               pts[:, 0] ** 2 / 2 - 0.25)
    td = hamiltonian_from_expression("p1^2/2 + t*x", 1)
    with pytest.raises(ContractError):
        truncated_hj_residual_p(td, "p1", 1.0, pts)


def test_truncated_residual_oscillator_quadrature():
    # branch q = -W'(p) = +sqrt(2E - p^2) for m = omega = 1; W tabulated by quadrature
    E = 0.5
    g = pgrid(-0.95, 0.95, 40001)
    P = g.axes[0]
    W = -(P * np.sqrt(1 - P**2) + np.arcsin(P)) / 2
    check = np.arange(0, P.size, 2000)
    quadrature = [-quad(lambda s: math.sqrt(2 * E - s * s), 0.0, P[i], epsabs=1e-13)[0] for i in check]
    np.testing.assert_allclose(W[check], quadrature, atol=1e-12)
    field = truncated_hj_residual_p(harmonic_oscillator(), GridField(g, W, 0.0, "W"), E)
    inside = np.abs(P) <= 0.9
    assert np.max(np.abs(field.values[0][inside])) < 1e-8


def test_jacobi_p_examples():
    t = np.linspace(0, 1, 11)
    F0, alpha = 0.7, 0.3
    tr = jacobi_recover_p(uniform_force_integral(F0, 1.0, "p"), [0.4], [alpha], t)
    np.testing.assert_allclose(tr.p[:, 0], F0 * (t + alpha), atol=1e-12)
    m, beta = 2.0, 0.5
    tr = jacobi_recover_p(free_particle_integral(m, 1, "p"), [beta], [0.8], t)
    np.testing.assert_allclose(tr.p[:, 0], 0.8)
    np.testing.assert_allclose(tr.q[:, 0], 0.8 * t / m - beta, atol=1e-14)


def test_jacobi_p_oscillator_matches_rk4_and_q_representation():
    q0, p0 = 0.3, 0.5
    E = 0.5 * (q0**2 + p0**2)
    A = math.sqrt(2 * E)
    t = np.linspace(0, 0.5, 51)
    pr = jacobi_recover_p(oscillator_integral(1.0, 1.0, "p"), [E], [-math.asin(p0 / A)], t, [p0])
    qr = jacobi_recover_q(oscillator_integral(), [E], [math.asin(q0 / A)], t, [q0])
    ref = integrate_trajectory(harmonic_oscillator(), PhaseState(0, [q0], [p0]), 1e-3, 0.5)
    idx = np.rint(t / 1e-3).astype(int)
    assert np.max(np.abs(pr.q[:, 0] - ref.q[idx, 0])) < 1e-6
    assert np.max(np.abs(pr.p[:, 0] - ref.p[idx, 0])) < 1e-6
    assert np.max(np.abs(pr.q - qr.q)) < 1e-6


def test_jacobi_p_rejects_q_integral():
    with pytest.raises(ContractError):
        jacobi_recover_p(free_particle_integral(), [1.0], [0.0], [0.0])
