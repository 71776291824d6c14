"""Eulerian ensemble fields: momentum advection, density transport, diagnostics.

The momentum field obeys ``dp/dt + (v . grad) p = F`` with ``v = phi(t, q, p)``;
it is advanced semi-Lagrangian (time-centred departure points, cubic
interpolation).  Density obeys the continuity equation and is advanced by a
conservative finite-volume scheme with upwind face fluxes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import CausticError, ConfigurationError, SchemeError, StepSizeError
from .grid import GridField, GridSpec, gradient, interpolate
from .models import SystemModel

log = logging.getLogger(__name__)

CFL_LIMIT = 0.5
NEGATIVE_DENSITY_TOL = 1e-12


# ---------------------------------------------------------------------------
# shared semi-Lagrangian kernel


def check_cfl(spec: GridSpec, vel: np.ndarray, dt, limit=CFL_LIMIT):
    """Raise ``StepSizeError`` if ``max|v| dt > limit * min h``; ``vel`` is ``(N, s)``."""
    speed = np.max(np.abs(vel), axis=-1) if vel.ndim > 1 else np.abs(vel)
    i = int(np.argmax(speed))
    courant = float(speed[i] * dt / spec.h.min())
    if courant > limit:
        node = tuple(int(k) for k in np.unravel_index(i, spec.shape))
        raise StepSizeError(
            f"CFL violated at node {node}: max|v| dt / min h = {courant:.4g} > {limit}", node, courant)
    return courant


def admissible_dt(spec: GridSpec, vel: np.ndarray, limit=CFL_LIMIT):
    vmax = float(np.max(np.abs(vel)))
    return np.inf if vmax == 0 else limit * spec.h.min() / vmax


def semi_lagrangian_update(spec: GridSpec, values, t, dt, velocity: Callable, source: Optional[Callable] = None,
                           iterations=2, order=4):
    """One step of ``du/dt + a(t, x, u) . grad u = b(t, x, u)``.

    Departure points are found by fixed-point iteration on the midpoint rule;
    the state at the segment midpoint is predicted from the interpolated foot
    value by a half step of the source.  Returns ``(new_values, outside)`` where
    ``outside`` marks nodes whose foot left an outflow boundary (filled by
    extrapolation of the boundary stencil).
    """
    vals = np.asarray(values, float)
    c = vals.shape[0]
    x = spec.nodes
    u_nodes = vals.reshape(c, -1).T
    a0 = np.asarray(velocity(t, x, u_nodes), float).reshape(x.shape)
    check_cfl(spec, a0, dt)
    x_d = x - dt * a0
    for it in range(iterations + 1):
        u_d = interpolate(spec, vals, x_d, order)
        x_m = 0.5 * (x + x_d)
        u_m = u_d if source is None else u_d + 0.5 * dt * np.asarray(source(t, x_d, u_d), float).reshape(u_d.shape)
        if it == iterations:
            break
        x_d = x - dt * np.asarray(velocity(t + 0.5 * dt, x_m, u_m), float).reshape(x.shape)
    u_new = u_d
    if source is not None:
        u_new = u_d + dt * np.asarray(source(t + 0.5 * dt, x_m, u_m), float).reshape(u_d.shape)
    outside = ~spec.contains(x_d).reshape(spec.shape)
    return u_new.T.reshape(vals.shape), outside


# ---------------------------------------------------------------------------
# momentum field


def velocity_from_momentum(model: SystemModel, p_field: GridField, t=None) -> GridField:
    """Nodewise velocity map ``v = phi(t, q, p)``."""
    if p_field.components != model.dim:
        raise ConfigurationError(f"momentum field has {p_field.components} components, model needs {model.dim}")
    t = p_field.t if t is None else t
    v = np.asarray(model.velocity_map(t, p_field.spec.nodes, p_field.node_values()), float)
    v = np.broadcast_to(v, (p_field.spec.size, model.dim))
    return GridField(p_field.spec, v.T.reshape((model.dim,) + p_field.spec.shape), t, "v")


def step_momentum_field(model: SystemModel, p_field: GridField, dt, iterations=2) -> GridField:
    """Advance the momentum field by one semi-Lagrangian step."""
    if p_field.components != model.dim:
        raise ConfigurationError(f"momentum field has {p_field.components} components, model needs {model.dim}")
    new, outside = semi_lagrangian_update(
        p_field.spec, p_field.values, p_field.t, dt, model.velocity_map, model.force, iterations)
    out = GridField(p_field.spec, new, p_field.t + dt, p_field.name or "p")
    if outside.any():
        out.meta["extrapolated"] = outside
    return out


# ---------------------------------------------------------------------------
# density


def _minmod(a, b):
    return np.where(a * b > 0, np.sign(a) * np.minimum(np.abs(a), np.abs(b)), 0.0)


def _face_fluxes(spec: GridSpec, vel, rho, scheme):
    """Upwind fluxes through the low face of every cell along each axis.

    Returns a list of arrays with ``n + 1`` faces along the axis (periodic axes
    repeat the wrap face at both ends).
    """
    fluxes = []
    for a in range(spec.dim):
        v = vel[a]
        per = spec.periodic(a)
        if per:
            vl, vr = v, np.roll(v, -1, axis=a)
            rl, rr = rho, np.roll(rho, -1, axis=a)
        else:
            pad = [(0, 0)] * spec.dim
            pad[a] = (1, 1)
            vpad = np.pad(v, pad, mode="edge")
            rpad = np.pad(rho, pad, mode="constant")
            n = spec.shape[a] + 1
            vl = np.take(vpad, range(0, n), axis=a)
            vr = np.take(vpad, range(1, n + 1), axis=a)
            rl = np.take(rpad, range(0, n), axis=a)
            rr = np.take(rpad, range(1, n + 1), axis=a)
        uf = 0.5 * (vl + vr)
        if scheme == "muscl":
            if per:
                slope = _minmod(rho - np.roll(rho, 1, axis=a), np.roll(rho, -1, axis=a) - rho)
                sl, sr = slope, np.roll(slope, -1, axis=a)
            else:
                pad2 = [(0, 0)] * spec.dim
                pad2[a] = (2, 2)
                rp = np.pad(rho, pad2, mode="constant")
                d = np.diff(rp, axis=a)
                slope = _minmod(np.take(d, range(0, d.shape[a] - 1), axis=a),
                                np.take(d, range(1, d.shape[a]), axis=a))
                n = spec.shape[a] + 1
                sl = np.take(slope, range(0, n), axis=a)
                sr = np.take(slope, range(1, n + 1), axis=a)
            rl = rl + 0.5 * sl
            rr = rr - 0.5 * sr
        f = np.where(uf > 0, uf * rl, uf * rr)
        if not per:
            # zero inflow through the outer faces
            lo = [slice(None)] * spec.dim
            lo[a] = 0
            hi = [slice(None)] * spec.dim
            hi[a] = -1
            f[tuple(lo)] = np.minimum(f[tuple(lo)], 0.0)
            f[tuple(hi)] = np.maximum(f[tuple(hi)], 0.0)
        fluxes.append(f)
    return fluxes


def _divergence(spec: GridSpec, fluxes):
    div = np.zeros(spec.shape)
    outflow = 0.0
    face_area = spec.cell_volume / spec.h
    for a, f in enumerate(fluxes):
        if spec.periodic(a):
            div += (f - np.roll(f, 1, axis=a)) / spec.h[a]
        else:
            n = spec.shape[a]
            hi = np.take(f, range(1, n + 1), axis=a)
            lo = np.take(f, range(0, n), axis=a)
            div += (hi - lo) / spec.h[a]
            outflow += face_area[a] * (np.take(f, [n], axis=a).sum() - np.take(f, [0], axis=a).sum())
    return div, outflow


def step_density(v_field: GridField, rho: GridField, dt, scheme="upwind") -> GridField:
    """Conservative finite-volume step of ``drho/dt + div(rho v) = 0``.

    ``scheme`` is ``"upwind"`` (first order) or ``"muscl"`` (minmod-limited
    upwind reconstruction with a two-stage strong-stability-preserving step).
    Mass leaving through outflow faces is stored in ``meta["boundary_flux"]``
    (mass per step, positive outward).
    """
    spec = rho.spec
    if v_field.spec != spec:
        raise ConfigurationError("velocity and density fields live on different grids")
    if v_field.components != spec.dim:
        raise ConfigurationError("velocity field needs one component per axis")
    if scheme not in ("upwind", "muscl"):
        raise ConfigurationError(f"unknown density scheme {scheme!r}")
    vel = v_field.values
    check_cfl(spec, vel.reshape(spec.dim, -1).T, dt)
    r0 = rho.values[0]
    div, out = _divergence(spec, _face_fluxes(spec, vel, r0, scheme))
    r1 = r0 - dt * div
    boundary = dt * out
    if scheme == "muscl":
        div2, out2 = _divergence(spec, _face_fluxes(spec, vel, r1, scheme))
        r1 = 0.5 * r0 + 0.5 * (r1 - dt * div2)
        boundary = 0.5 * dt * (out + out2)
    low = float(r1.min())
    if low < -NEGATIVE_DENSITY_TOL:
        idx = tuple(int(k) for k in np.unravel_index(int(np.argmin(r1)), spec.shape))
        raise SchemeError(f"density went negative ({low:.3e}) at node {idx}")
    new = GridField(spec, r1, rho.t + dt, rho.name or "rho")
    new.meta["boundary_flux"] = boundary
    new.meta["min_density"] = low
    return new


def total_mass(rho: GridField) -> float:
    return float(rho.values[0].sum() * rho.spec.cell_volume)


# ---------------------------------------------------------------------------
# diagnostics


def curl_diagnostic(p_field: GridField, interior=False) -> float:
    """Max over nodes and index pairs of ``|dp_a/dq_b - dp_b/dq_a|``."""
    spec = p_field.spec
    if spec.dim < 2 or p_field.components != spec.dim:
        raise ConfigurationError("curl diagnostic needs a vector field in at least two dimensions")
    g = gradient(spec, p_field.values)
    if interior:
        g = g[(slice(None), slice(None)) + tuple(
            slice(None) if spec.periodic(a) else slice(1, -1) for a in range(spec.dim))]
    worst = 0.0
    for a in range(spec.dim):
        for b in range(a + 1, spec.dim):
            worst = max(worst, float(np.max(np.abs(g[a, b] - g[b, a]))))
    return worst


def steepness(v_field: GridField) -> float:
    """``max |dv_a/dq_b| * min h``; large values signal crossing characteristics."""
    g = gradient(v_field.spec, v_field.values)
    return float(np.max(np.abs(g)) * v_field.spec.h.min())


def detect_multivaluedness(history, threshold=1.0, model: Optional[SystemModel] = None, flow_map=None):
    """First snapshot time at which the field stops being single-valued, or ``None``.

    ``history`` is a sequence of velocity fields (or momentum fields when
    ``model`` is given).  ``flow_map`` optionally supplies ``(times, dets)`` of
    companion flow-map determinants; a non-positive determinant also flags.
    """
    history = list(history)
    if len(history) < 2:
        raise ConfigurationError("multivaluedness detection needs at least two snapshots")
    flagged = None
    for snap in history:
        v = velocity_from_momentum(model, snap) if model is not None else snap
        if steepness(v) > threshold:
            flagged = snap.t
            break
    if flow_map is not None:
        times, dets = flow_map
        for t, d in zip(times, dets):
            if np.min(d) <= 0:
                flagged = t if flagged is None else min(flagged, t)
                break
    return flagged


# ---------------------------------------------------------------------------
# run driver


@dataclass
class EulerianRun:
    momentum: list = field(default_factory=list)
    density: list = field(default_factory=list)
    log: list = field(default_factory=list)
    flagged_time: Optional[float] = None
    dt_used: Optional[float] = None
    boundary_flux: float = 0.0

    @property
    def final_momentum(self) -> GridField:
        return self.momentum[-1]


def run_eulerian(model: SystemModel, p0: GridField, t_end, dt, rho0: Optional[GridField] = None, cadence=1,
                 auto_reduce=False, threshold=1.0, stop_on_multivalued=True, density_scheme="upwind",
                 max_halvings=30) -> EulerianRun:
    """Evolve ``p`` (and optionally ``rho``) from ``p0.t`` to ``t_end``.

    Multivaluedness is checked on every step; by default the run stops with a
    ``CausticError`` carrying the flagged time (the partial run is attached as
    ``error.run``).  With ``auto_reduce`` the step is halved until the CFL
    bound holds and every reduction is logged.
    """
    if not dt > 0:
        raise ConfigurationError(f"time step must be positive, got {dt}")
    run = EulerianRun()
    p, rho = p0, rho0
    run.momentum.append(p)
    if rho is not None:
        run.density.append(rho)
    t = p0.t
    k = 0
    while t < t_end - 1e-12 * max(1.0, abs(t_end)):
        v = velocity_from_momentum(model, p)
        s = steepness(v)
        if s > threshold:
            run.flagged_time = t
            msg = f"multivaluedness flagged at t={t:.6g} (steepness {s:.3g} > {threshold})"
            run.log.append(msg)
            if stop_on_multivalued:
                err = CausticError(msg, t)
                err.run = run
                raise err
            break
        h = min(dt, t_end - t)
        vel = v.node_values()
        halvings = 0
        while h * float(np.max(np.abs(vel))) > CFL_LIMIT * p.spec.h.min():
            if not auto_reduce:
                check_cfl(p.spec, vel, h)
            if halvings >= max_halvings:
                raise StepSizeError(f"could not satisfy CFL after {max_halvings} halvings at t={t:.6g}")
            h *= 0.5
            halvings += 1
        if halvings:
            if h < dt:
                dt = h
            run.log.append(f"t={t:.6g}: dt reduced to {h:.6g} for CFL")
            log.info(run.log[-1])
        p_new = step_momentum_field(model, p, h)
        if rho is not None:
            v_new = velocity_from_momentum(model, p_new)
            v_mid = v.replace(values=0.5 * (v.values + v_new.values))
            rho = step_density(v_mid, rho, h, density_scheme)
            run.boundary_flux += rho.meta["boundary_flux"]
        p = p_new
        t = p.t
        k += 1
        if k % cadence == 0 or t >= t_end - 1e-12 * max(1.0, abs(t_end)):
            run.momentum.append(p)
            if rho is not None:
                run.density.append(rho)
    run.dt_used = dt
    return run
