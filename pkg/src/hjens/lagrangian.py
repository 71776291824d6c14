"""Trajectories and ensembles integrated as ODEs, plus flow-map diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DomainExitError, IntegrationError
from .grid import GridField, GridSpec, gradient, interpolate
from .models import PhaseState, SystemModel

METHODS = ("rk4", "symplectic_leapfrog")


@dataclass
class Trajectory:
    """Time history of one system at a uniform output cadence."""

    t: np.ndarray
    q: np.ndarray
    p: np.ndarray
    model_name: str = "model"

    def __post_init__(self):
        self.t = np.asarray(self.t, float)
        self.q = np.asarray(self.q, float).reshape(self.t.size, -1)
        self.p = np.asarray(self.p, float).reshape(self.t.size, -1)

    def __len__(self):
        return self.t.size

    @property
    def dim(self):
        return self.q.shape[1]

    @property
    def states(self) -> list:
        return [PhaseState(t, q, p) for t, q, p in zip(self.t, self.q, self.p)]

    @property
    def final(self) -> PhaseState:
        return PhaseState(self.t[-1], self.q[-1], self.p[-1])

    def columns(self) -> np.ndarray:
        """Rows of ``t, q1..qs, p1..ps``."""
        return np.column_stack([self.t, self.q, self.p])


@dataclass
class EnsembleCloud:
    """Members sharing one time; ``q`` and ``p`` have shape ``(n, s)``."""

    t: float
    q: np.ndarray
    p: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        self.q = np.atleast_2d(np.asarray(self.q, float))
        self.p = np.atleast_2d(np.asarray(self.p, float))
        if self.q.shape != self.p.shape:
            raise ConfigurationError(f"cloud q {self.q.shape} and p {self.p.shape} differ in shape")
        n = self.q.shape[0]
        w = np.ones(n) if self.weights is None else np.asarray(self.weights, float).ravel()
        if w.size != n or np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ConfigurationError("ensemble weights must be one non-negative number per member")
        self.weights = w

    @classmethod
    def from_states(cls, states: Sequence[PhaseState], weights=None):
        times = {s.t for s in states}
        if len(times) != 1:
            raise ConfigurationError("ensemble members must share one time")
        return cls(times.pop(), np.array([s.q for s in states]), np.array([s.p for s in states]), weights)

    def __len__(self):
        return self.q.shape[0]

    @property
    def states(self) -> list:
        return [PhaseState(self.t, q, p) for q, p in zip(self.q, self.p)]


# ---------------------------------------------------------------------------
# steppers over (n, s) arrays


def rk4_step(model: SystemModel, t, q, p, dt):
    F, phi = model.force, model.velocity_map
    k1q, k1p = phi(t, q, p), F(t, q, p)
    th = t + dt / 2
    q2, p2 = q + dt / 2 * k1q, p + dt / 2 * k1p
    k2q, k2p = phi(th, q2, p2), F(th, q2, p2)
    q3, p3 = q + dt / 2 * k2q, p + dt / 2 * k2p
    k3q, k3p = phi(th, q3, p3), F(th, q3, p3)
    q4, p4 = q + dt * k3q, p + dt * k3p
    k4q, k4p = phi(t + dt, q4, p4), F(t + dt, q4, p4)
    return (q + dt / 6 * (k1q + 2 * k2q + 2 * k3q + k4q),
            p + dt / 6 * (k1p + 2 * k2p + 2 * k3p + k4p))


def leapfrog_step(model: SystemModel, t, q, p, dt):
    """Kick-drift-kick; valid when the force ignores ``p`` and the velocity ignores ``q``."""
    p_half = p + dt / 2 * model.force(t, q, p)
    q_new = q + dt * model.velocity_map(t + dt / 2, q, p_half)
    return q_new, p_half + dt / 2 * model.force(t + dt, q_new, p_half)


def _stepper(model, method):
    if method == "rk4":
        return rk4_step
    if method == "symplectic_leapfrog":
        if not (model.is_hamiltonian and model.separable):
            raise ConfigurationError(
                f"symplectic_leapfrog needs a separable Hamiltonian; model {model.name!r} is not")
        return leapfrog_step
    raise ConfigurationError(f"unknown integration method {method!r}; expected one of {METHODS}")


def _time_nodes(t0, t_end, dt):
    if not dt > 0:
        raise ConfigurationError(f"time step must be positive, got {dt}")
    span = abs(t_end - t0)
    n = max(0, math.ceil(span / dt - 1e-9))
    sign = 1.0 if t_end >= t0 else -1.0
    times = t0 + sign * dt * np.arange(n + 1)
    if n:
        times[-1] = t_end
    return times


def _integrate(model, t0, q, p, dt, t_end, method, cadence, record):
    """Fixed-step driver over ``(n, s)`` arrays; the last step is shortened to hit ``t_end``."""
    step = _stepper(model, method)
    if cadence < 1:
        raise ConfigurationError("output cadence must be a positive integer")
    times = _time_nodes(t0, t_end, dt)
    hist_t, hist_q, hist_p = [times[0]], [q.copy()], [p.copy()]
    for k in range(1, times.size):
        t = times[k - 1]
        q_new, p_new = step(model, t, q, p, times[k] - t)
        ok = np.all(np.isfinite(q_new), axis=-1) & np.all(np.isfinite(p_new), axis=-1)
        if not np.all(ok):
            bad = int(np.flatnonzero(~ok)[0])
            raise IntegrationError(
                f"non-finite state for member {bad} at t={times[k]:.6g}",
                last_state=PhaseState(t, q[bad], p[bad]), member=bad)
        q, p = q_new, p_new
        if record and (k % cadence == 0 or k == times.size - 1):
            hist_t.append(times[k])
            hist_q.append(q.copy())
            hist_p.append(p.copy())
    return times[-1], q, p, (np.array(hist_t), np.array(hist_q), np.array(hist_p))


def integrate_trajectory(model: SystemModel, s0: PhaseState, dt, t_end, method="rk4", cadence=1) -> Trajectory:
    """Integrate one system from ``s0`` to ``t_end``.

    ``t_end < s0.t`` integrates backward in time.
    """
    if s0.dim != model.dim:
        raise ConfigurationError(f"state has {s0.dim} coordinates, model {model.name!r} has {model.dim}")
    _, _, _, (t, q, p) = _integrate(model, s0.t, s0.q[None], s0.p[None], dt, t_end, method, cadence, True)
    return Trajectory(t, q[:, 0], p[:, 0], model.name)


def integrate_ensemble(model: SystemModel, cloud: EnsembleCloud, dt, t_end, method="rk4",
                       cadence=1, return_trajectories=False):
    """Integrate every member independently; member order and weights are preserved.

    Returns the final cloud, or ``(cloud, trajectories)`` if requested.
    """
    if cloud.q.shape[1] != model.dim:
        raise ConfigurationError(f"cloud has {cloud.q.shape[1]} coordinates, model has {model.dim}")
    t, q, p, (ht, hq, hp) = _integrate(model, cloud.t, cloud.q, cloud.p, dt, t_end, method, cadence,
                                       return_trajectories)
    final = EnsembleCloud(t, q, p, cloud.weights.copy())
    if not return_trajectories:
        return final
    trajs = [Trajectory(ht, hq[:, i], hp[:, i], model.name) for i in range(len(cloud))]
    return final, trajs


# ---------------------------------------------------------------------------
# flow map


def _initial_momenta(spec: GridSpec, p0_of_q0):
    if isinstance(p0_of_q0, GridField):
        if p0_of_q0.spec != spec:
            raise ConfigurationError("initial momentum field lives on a different grid")
        return p0_of_q0.node_values()
    p0 = np.asarray(p0_of_q0(spec.nodes), float)
    return np.broadcast_to(p0.reshape(spec.size, -1), (spec.size, spec.dim)).copy()


def flow_map_determinants(model: SystemModel, spec: GridSpec, p0_of_q0, times, dt, method="rk4", t0=0.0):
    """``det(dq(t)/dq0)`` on the launch grid for each requested time.

    Displacements are differenced (not positions) so periodic axes work too.
    Returns an array of shape ``(len(times), *spec.shape)``.
    """
    if any(n < 3 for n in spec.shape):
        raise ConfigurationError("flow map needs at least 3 nodes per axis")
    q0 = spec.nodes.copy()
    q, p = q0.copy(), _initial_momenta(spec, p0_of_q0)
    t = t0
    out = []
    for target in np.atleast_1d(times):
        if target != t:
            t, q, p, _ = _integrate(model, t, q, p, dt, float(target), method, 1, False)
        disp = (q - q0).T.reshape((spec.dim,) + spec.shape)
        jac = gradient(spec, disp) + np.eye(spec.dim).reshape((spec.dim, spec.dim) + (1,) * spec.dim)
        out.append(np.linalg.det(np.moveaxis(jac, (0, 1), (-2, -1))))
    return np.array(out)


def flow_map_jacobian(model: SystemModel, q0_grid: GridSpec, p0_of_q0, t, dt, method="rk4", t0=0.0) -> GridField:
    """Flow-map determinant field at time ``t`` over the launch grid."""
    det = flow_map_determinants(model, q0_grid, p0_of_q0, [t], dt, method, t0)[0]
    return GridField(q0_grid, det, t, "det")


def first_zero_crossing(times, values):
    """Earliest time at which ``values`` (one number per time) reaches zero, linearly interpolated."""
    times = np.asarray(times, float)
    values = np.asarray(values, float)
    for k in range(values.size):
        if values[k] <= 0:
            if k == 0:
                return float(times[0])
            a, b = values[k - 1], values[k]
            return float(times[k - 1] + (times[k] - times[k - 1]) * a / (a - b))
    return None


def caustic_time(model: SystemModel, spec: GridSpec, p0_of_q0, t_end, dt, method="rk4", t0=0.0,
                 interior_only=True):
    """First zero of the minimum flow-map determinant, sampled every step; ``None`` if none."""
    times = _time_nodes(t0, t_end, dt)
    q0 = spec.nodes.copy()
    q, p = q0.copy(), _initial_momenta(spec, p0_of_q0)
    step = _stepper(model, method)
    eye = np.eye(spec.dim).reshape((spec.dim, spec.dim) + (1,) * spec.dim)
    prev = 1.0
    for k in range(1, times.size):
        q, p = step(model, times[k - 1], q, p, times[k] - times[k - 1])
        disp = (q - q0).T.reshape((spec.dim,) + spec.shape)
        det = np.linalg.det(np.moveaxis(gradient(spec, disp) + eye, (0, 1), (-2, -1)))
        if interior_only:
            det = det[tuple(slice(1, -1) for _ in spec.shape)]
        cur = float(det.min())
        if cur <= 0:
            return first_zero_crossing(times[k - 1:k + 1], [prev, cur])
        prev = cur
    return None


# ---------------------------------------------------------------------------
# characteristics of a given action field


def _lagrange_weights(ts, t):
    w = np.ones(len(ts))
    for k in range(len(ts)):
        for j in range(len(ts)):
            if j != k:
                w[k] *= (t - ts[j]) / (ts[k] - ts[j])
    return w


class ActionGradientSampler:
    """Interpolates ``grad S`` from a time-ordered list of snapshots.

    Cubic in space, cubic Lagrange in time (linear if fewer than 4 snapshots).
    """

    def __init__(self, snapshots: Sequence[GridField]):
        if not snapshots:
            raise ConfigurationError("need at least one action snapshot")
        self.spec = snapshots[0].spec
        self.times = np.array([s.t for s in snapshots], float)
        if np.any(np.diff(self.times) <= 0):
            raise ConfigurationError("action snapshots must have strictly increasing times")
        self.grads = [gradient(self.spec, s.values[0]) for s in snapshots]

    def __call__(self, t, q):
        k = self.times.size
        if k == 1:
            return interpolate(self.spec, self.grads[0], q)
        if t < self.times[0] - 1e-12 or t > self.times[-1] + 1e-12:
            raise DomainExitError(f"time {t:.6g} outside action snapshot range", t)
        npts = min(4, k)
        i = int(np.searchsorted(self.times, t)) - npts // 2
        i = min(max(i, 0), k - npts)
        w = _lagrange_weights(self.times[i:i + npts], t)
        return sum(wj * interpolate(self.spec, self.grads[i + j], q) for j, wj in enumerate(w))


def characteristics_from_action(S_field, m, q0, dt, t_end, t0=None, model: Optional[SystemModel] = None,
                                grad_S: Optional[Callable] = None) -> Trajectory:
    """Integrate ``dr/dt = grad S / m`` (or ``model.velocity_map(t, r, grad S)``).

    ``S_field`` is a snapshot or time-ordered list of snapshots; alternatively pass
    ``grad_S(t, q)`` directly.  Reported momenta are ``grad S`` at the position,
    i.e. ``m v`` for a potential particle.
    """
    spec = None
    if grad_S is None:
        snaps = [S_field] if isinstance(S_field, GridField) else list(S_field)
        sampler = ActionGradientSampler(snaps)
        spec = sampler.spec
        grad_S = sampler
        if t0 is None:
            t0 = float(sampler.times[0])
    t0 = 0.0 if t0 is None else float(t0)
    q = np.atleast_1d(np.asarray(q0, float))

    def vel(t, r):
        g = np.asarray(grad_S(t, r[None]), float).reshape(r.shape)
        v = model.velocity_map(t, r, g) if model is not None else g / m
        return v, g

    def inside(r):
        return spec is None or bool(spec.contains(r[None])[0])

    times = _time_nodes(t0, t_end, dt)
    qs, ps = [q.copy()], [vel(t0, q)[1]]
    for k in range(1, times.size):
        t, h = times[k - 1], times[k] - times[k - 1]
        ks = []
        r = q
        for c, tc in ((0.0, t), (0.5, t + h / 2), (0.5, t + h / 2), (1.0, t + h)):
            if ks:
                r = q + c * h * ks[-1]
                if not inside(r):
                    raise DomainExitError(f"characteristic left the action field domain near t={t:.6g}", t)
            ks.append(vel(tc, r)[0])
        q = q + h / 6 * (ks[0] + 2 * ks[1] + 2 * ks[2] + ks[3])
        if not inside(q):
            raise DomainExitError(f"characteristic left the action field domain at t={times[k]:.6g}", times[k])
        qs.append(q.copy())
        ps.append(vel(times[k], q)[1])
    return Trajectory(times, np.array(qs), np.array(ps), getattr(model, "name", "action"))
