import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hjens.errors import ConfigurationError, DomainExitError, IntegrationError
from hjens.grid import GridField, GridSpec
from hjens.lagrangian import (EnsembleCloud, caustic_time, characteristics_from_action, flow_map_determinants,
                              flow_map_jacobian, integrate_ensemble, integrate_trajectory)
from hjens.models import (PhaseState, free_particle, hamiltonian_from_expression, harmonic_oscillator,
                          make_damped_particle, make_potential_particle)

zero = (lambda t, q: np.zeros(np.shape(q)[:-1]), lambda t, q: np.zeros(np.shape(q)))


def test_free_particle_is_exact():
    tr = integrate_trajectory(free_particle(), PhaseState(0, [0.0], [2.0]), 0.1, 3.0)
    assert tr.q[-1, 0] == pytest.approx(6.0, abs=1e-14) and tr.p[-1, 0] == 2.0
    assert tr.t[-1] == 3.0


def test_oscillator_period():
    tr = integrate_trajectory(harmonic_oscillator(), PhaseState(0, [0.0], [1.0]), 1e-3, 2 * np.pi)
    assert abs(tr.q[-1, 0]) < 1e-8


def test_damped_free_particle_decay():
    d = make_damped_particle(1.0, *zero, beta=1.0)
    tr = integrate_trajectory(d, PhaseState(0, [0.0], [1.0]), 1e-3, 2.0)
    assert np.max(np.abs(tr.p[:, 0] - np.exp(-tr.t))) < 1e-8


def test_last_step_is_shortened_and_cadence_kept():
    tr = integrate_trajectory(free_particle(), PhaseState(0, [0.0], [1.0]), 0.3, 1.0, cadence=2)
    np.testing.assert_allclose(tr.t, [0.0, 0.6, 1.0])


def test_leapfrog_rejected_for_non_separable_models():
    d = make_damped_particle(1.0, *zero, beta=1.0)
    with pytest.raises(ConfigurationError):
        integrate_trajectory(d, PhaseState(0, [0.0], [1.0]), 0.1, 1.0, method="symplectic_leapfrog")
    with pytest.raises(ConfigurationError):
        integrate_trajectory(free_particle(), PhaseState(0, [0.0], [1.0]), 0.1, 1.0, method="euler")


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blow_up_reports_last_good_state():
    m = make_potential_particle(1.0, lambda t, q: -q[..., 0] ** 4, lambda t, q: -4 * q**3, audit=False)
    with pytest.raises(IntegrationError) as info:
        integrate_trajectory(m, PhaseState(0, [1.0], [0.0]), 0.05, 10.0)
    assert np.all(np.isfinite(info.value.last_state.q))


def test_ensemble_examples():
    cloud = EnsembleCloud(0.0, [[0.0], [0.0]], [[1.0], [2.0]])
    out = integrate_ensemble(free_particle(), cloud, 0.1, 1.0)
    np.testing.assert_allclose(out.q[:, 0], [1, 2], atol=1e-14)
    np.testing.assert_array_equal(out.weights, [1, 1])


def test_ensemble_equals_separate_runs_bitwise():
    rng = np.random.default_rng(5)
    q, p = rng.uniform(-1, 1, (1000, 1)), rng.uniform(-1, 1, (1000, 1))
    ho = harmonic_oscillator()
    out = integrate_ensemble(ho, EnsembleCloud(0.0, q, p), 1e-2, 0.5)
    for i in range(0, 1000, 97):
        tr = integrate_trajectory(ho, PhaseState(0.0, q[i], p[i]), 1e-2, 0.5)
        np.testing.assert_array_equal(tr.q[-1], out.q[i])
        np.testing.assert_array_equal(tr.p[-1], out.p[i])


def test_rest_cloud_focuses_at_quarter_period():
    q0 = np.linspace(-1, 1, 21)[:, None]
    out = integrate_ensemble(harmonic_oscillator(), EnsembleCloud(0.0, q0, 0 * q0), 1e-3, np.pi / 2)
    assert np.max(np.abs(out.q)) < 1e-12


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_ensemble_errors_name_member():
    m = make_potential_particle(1.0, lambda t, q: -q[..., 0] ** 4, lambda t, q: -4 * q**3, audit=False)
    with pytest.raises(IntegrationError) as info:
        integrate_ensemble(m, EnsembleCloud(0.0, [[0.0], [1.0]], [[0.0], [0.0]]), 0.05, 10.0)
    assert info.value.member == 1
    with pytest.raises(ConfigurationError):
        EnsembleCloud(0.0, [[0.0]], [[0.0]], weights=[-1.0])


@settings(max_examples=25, deadline=None)
@given(st.permutations(range(6)))
def test_member_permutation_commutes(perm):
    rng = np.random.default_rng(11)
    q, p = rng.uniform(-1, 1, (6, 2)), rng.uniform(-1, 1, (6, 2))
    model = hamiltonian_from_expression("p1^2/2 + p2^2/2 + x^2*y/3 + y^2/2", 2)
    a = integrate_ensemble(model, EnsembleCloud(0, q, p), 0.05, 0.5)
    b = integrate_ensemble(model, EnsembleCloud(0, q[list(perm)], p[list(perm)]), 0.05, 0.5)
    np.testing.assert_array_equal(a.q[list(perm)], b.q)


@settings(max_examples=10, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(1, 10))
def test_forward_backward_returns_home(q0, p0, t_end):
    model = hamiltonian_from_expression("p1^2/2 + x^2/2 + x^4/8", 1)
    fwd = integrate_trajectory(model, PhaseState(0, [q0], [p0]), 1e-3, t_end)
    back = integrate_trajectory(model, fwd.final, 1e-3, 0.0)
    assert back.t[-1] == 0.0
    assert np.max(np.abs(np.r_[back.q[-1] - q0, back.p[-1] - p0])) < 1e-8


def test_rk4_energy_drift_on_bundled_models():
    for model, q, p in ((harmonic_oscillator(2.0, 1.5), [0.3], [0.8]),
                        (hamiltonian_from_expression("p1^2/2 + x^4/4", 1), [1.0], [0.0])):
        tr = integrate_trajectory(model, PhaseState(0, q, p), 1e-3, 100.0)
        H = model.energy(tr.t, tr.q, tr.p)
        assert abs(H[-1] - H[0]) / max(1, abs(H[0])) < 1e-6


def test_leapfrog_energy_has_no_secular_drift():
    ho = harmonic_oscillator()
    tr = integrate_trajectory(ho, PhaseState(0, [1.0], [0.0]), 1e-3, 30 * np.pi, method="symplectic_leapfrog")
    H = ho.energy(tr.t, tr.q, tr.p)
    assert abs(H[-1] - H[0]) < 1e-9
    quartic = hamiltonian_from_expression("p1^2/2 + x^4/4", 1)
    tr = integrate_trajectory(quartic, PhaseState(0, [1.0], [0.0]), 1e-3, 100.0, method="symplectic_leapfrog")
    err = np.abs(quartic.energy(tr.t, tr.q, tr.p) - 0.25)
    half = err.size // 2
    # bounded O(dt^2) oscillation, the same size late as early
    assert err.max() < 1e-6
    assert err[half:].max() < 1.1 * err[:half].max()


def test_flow_map_examples():
    g = GridSpec.uniform(-1, 1, 21)
    det = flow_map_jacobian(free_particle(), g, lambda q: np.full_like(q, 0.7), 2.0, 0.1)
    np.testing.assert_allclose(det.values, 1.0, atol=1e-13)
    times = [0.25, 0.5, 1.0]
    d = flow_map_determinants(harmonic_oscillator(), g, lambda q: 0 * q, times, 1e-3)
    np.testing.assert_allclose(d[:, 10], np.cos(times), atol=1e-10)
    assert abs(caustic_time(harmonic_oscillator(), g, lambda q: 0 * q, 3.0, 1e-3) - np.pi / 2) < 0.01
    d = flow_map_determinants(free_particle(), g, lambda q: -q, [0.5], 0.1)
    np.testing.assert_allclose(d, 0.5, atol=1e-12)
    assert abs(caustic_time(free_particle(), g, lambda q: -q, 3.0, 1e-2) - 1.0) < 0.01
    with pytest.raises(ConfigurationError):
        flow_map_jacobian(free_particle(), GridSpec((0,), (1,), (2,)), lambda q: q, 1.0, 0.1)


def test_characteristics_straight_line():
    g = GridSpec.uniform(-1, 10, 111)
    S = GridField.from_function(g, lambda q: 2 * q[:, 0] - 2.0 * 0)  # t = 0 slice of p0 x - p0^2 t / 2
    tr = characteristics_from_action(S, 1.0, [0.5], 0.1, 3.0)
    np.testing.assert_allclose(tr.q[:, 0], 0.5 + 2 * tr.t, atol=1e-12)


def test_characteristics_domain_exit():
    g = GridSpec.uniform(-1, 1, 21)
    S = GridField.from_function(g, lambda q: 2 * q[:, 0])
    with pytest.raises(DomainExitError) as info:
        characteristics_from_action(S, 1.0, [0.5], 0.01, 3.0)
    assert 0.2 < info.value.time < 0.3


def test_characteristics_of_damped_action():
    m, beta, a0 = 2.0, 0.5, 0.8
    k = beta / m
    grad = lambda t, q: np.full(np.shape(q), a0 * math.exp(-k * t))
    tr = characteristics_from_action(None, m, [0.0], 1e-2, 2.0, grad_S=grad)
    v = np.gradient(tr.q[:, 0], tr.t, edge_order=2)
    assert np.max(np.abs(tr.p[:, 0] / m - np.exp(-k * tr.t) * a0 / m)) < 1e-12
    assert np.max(np.abs(v - np.exp(-k * tr.t) * a0 / m)) < 1e-4
    x_exact = a0 / beta * (1 - np.exp(-k * tr.t))
    assert np.max(np.abs(tr.q[:, 0] - x_exact)) < 1e-6
