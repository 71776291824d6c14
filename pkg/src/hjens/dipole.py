"""Non-relativistic magnetic dipole: orbits, spin fields and their HJ equation.

The spin ``s`` has fixed modulus and is parametrized by its projection ``xi``
on the z axis and the azimuth ``chi``:
``s = (s_perp sin chi, s_perp cos chi, xi)`` with ``s_perp = sqrt(|s|^2 - xi^2)``.
The spin part of the Hamiltonian is ``H_sp = -gamma s . H``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, DomainError, IntegrationError, SchemeError
from .eulerian import semi_lagrangian_update, step_density
from .grid import GridField, GridSpec, gradient, interior_mask, interpolate
from .lagrangian import _time_nodes
from .models import DipoleParams

POLE_TOL = 1e-9
XI_OVERSHOOT_TOL = 1e-10


# ---------------------------------------------------------------------------
# spin parametrization


def spin_vector_from_angles(xi, chi, spin_mag):
    """``(s_perp sin chi, s_perp cos chi, xi)``; raises ``DomainError`` if ``|xi| > spin_mag``."""
    xi = np.asarray(xi, float)
    chi = np.asarray(chi, float)
    if np.any(np.abs(xi) > spin_mag):
        raise DomainError(f"|xi| exceeds the spin modulus {spin_mag}")
    perp = np.sqrt(spin_mag * spin_mag - xi * xi)
    return np.stack(np.broadcast_arrays(perp * np.sin(chi), perp * np.cos(chi), xi), axis=-1)


def angles_from_spin(s):
    """Inverse map: ``xi = s_z``, ``chi = atan2(s_x, s_y)`` in ``(-pi, pi]``."""
    s = np.asarray(s, float)
    return s[..., 2], np.arctan2(s[..., 0], s[..., 1])


def unwrap_to(chi, reference):
    """Shift ``chi`` by multiples of ``2 pi`` to lie within ``pi`` of ``reference``."""
    return reference + np.mod(chi - reference + np.pi, 2 * np.pi) - np.pi


def spin_hamiltonian(xi, chi, H, params: DipoleParams):
    s = spin_vector_from_angles(np.clip(xi, -params.spin_mag, params.spin_mag), chi, params.spin_mag)
    return -params.gamma * np.sum(s * np.asarray(H, float), axis=-1)


def spin_hamiltonian_partials(xi, chi, H, params: DipoleParams):
    """``(dH_sp/dxi, dH_sp/dchi)``; at the poles the ``xi`` derivative drops its singular part."""
    xi = np.asarray(xi, float)
    chi = np.asarray(chi, float)
    H = np.asarray(H, float)
    sm, g = params.spin_mag, params.gamma
    perp = np.sqrt(np.maximum(sm * sm - xi * xi, 0.0))
    transverse = np.sin(chi) * H[..., 0] + np.cos(chi) * H[..., 1]
    ratio = np.divide(xi, perp, out=np.zeros_like(perp), where=perp > 0)
    d_xi = -g * (-ratio * transverse + H[..., 2])
    d_chi = -g * perp * (np.cos(chi) * H[..., 0] - np.sin(chi) * H[..., 1])
    return d_xi, d_chi


# ---------------------------------------------------------------------------
# Lagrangian orbits


@dataclass(frozen=True)
class DipoleState:
    t: float
    r: np.ndarray
    v: np.ndarray
    xi: float
    chi: float

    def __post_init__(self):
        r = np.asarray(self.r, float).reshape(3)
        v = np.asarray(self.v, float).reshape(3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(v)) and np.isfinite(self.xi) and np.isfinite(self.chi)):
            raise ConfigurationError("dipole state has non-finite entries")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "v", v)


@dataclass
class DipoleTrajectory:
    t: np.ndarray
    r: np.ndarray
    v: np.ndarray
    s: np.ndarray
    xi: np.ndarray
    chi: np.ndarray
    pole: np.ndarray

    def spin_modulus(self) -> np.ndarray:
        return np.linalg.norm(self.s, axis=-1)

    def columns(self) -> np.ndarray:
        return np.column_stack([self.t, self.r, self.v, self.xi, self.chi])


def _zero3(t, r):
    return np.zeros(3)


def _zero33(t, r):
    return np.zeros((3, 3))


def _cross(a, b):
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


def integrate_dipole_lagrangian(params: DipoleParams, E: Optional[Callable], H: Optional[Callable],
                                gradH: Optional[Callable], state0: DipoleState, dt, t_end,
                                cadence=1) -> DipoleTrajectory:
    """RK4 for ``r' = v``, ``m v' = e (E + v x H / c) + gamma (s . grad) H``, ``s' = gamma s x H``.

    ``gradH(t, r)[i, j]`` is ``dH_j / dr_i``.  ``chi`` is recovered from ``s``
    every step and kept continuous; within ``1e-9`` of a pole it is frozen and
    the sample flagged.
    """
    if abs(state0.xi) > params.spin_mag:
        raise DomainError(f"|xi| = {abs(state0.xi)} exceeds the spin modulus {params.spin_mag}")
    E = E or _zero3
    H = H or _zero3
    gradH = gradH or _zero33
    m, e, c, g = params.m, params.e, params.c, params.gamma

    def rhs(t, r, v, s):
        Hv = np.asarray(H(t, r), float)
        acc = (e * (np.asarray(E(t, r), float) + _cross(v, Hv) / c) + g * (s @ np.asarray(gradH(t, r), float))) / m
        return v, acc, g * _cross(s, Hv)

    times = _time_nodes(state0.t, t_end, dt)
    r, v = state0.r.copy(), state0.v.copy()
    s = spin_vector_from_angles(state0.xi, state0.chi, params.spin_mag)
    chi = float(state0.chi)
    rec = {k: [] for k in ("t", "r", "v", "s", "xi", "chi", "pole")}

    def record(t, pole):
        rec["t"].append(t)
        rec["r"].append(r.copy())
        rec["v"].append(v.copy())
        rec["s"].append(s.copy())
        rec["xi"].append(s[2])
        rec["chi"].append(chi)
        rec["pole"].append(pole)

    record(times[0], params.spin_mag - abs(state0.xi) < POLE_TOL)
    for k in range(1, times.size):
        t, h = times[k - 1], times[k] - times[k - 1]
        k1 = rhs(t, r, v, s)
        k2 = rhs(t + h / 2, r + h / 2 * k1[0], v + h / 2 * k1[1], s + h / 2 * k1[2])
        k3 = rhs(t + h / 2, r + h / 2 * k2[0], v + h / 2 * k2[1], s + h / 2 * k2[2])
        k4 = rhs(t + h, r + h * k3[0], v + h * k3[1], s + h * k3[2])
        r_new = r + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        v_new = v + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        s_new = s + h / 6 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        if not (np.all(np.isfinite(r_new)) and np.all(np.isfinite(v_new)) and np.all(np.isfinite(s_new))):
            raise IntegrationError(f"dipole orbit blew up at t={times[k]:.6g}",
                                   last_state=DipoleState(t, r, v, s[2], chi))
        r, v, s = r_new, v_new, s_new
        pole = params.spin_mag - abs(s[2]) < POLE_TOL
        if not pole:
            chi = float(unwrap_to(np.arctan2(s[0], s[1]), chi))
        if k % cadence == 0 or k == times.size - 1:
            record(times[k], pole)
    return DipoleTrajectory(*(np.array(rec[k]) for k in ("t", "r", "v", "s", "xi", "chi", "pole")))


# ---------------------------------------------------------------------------
# Eulerian fields


@dataclass
class DipoleFieldSet:
    """Action, spin projection, spin azimuth (unwrapped) and density on one position grid."""

    S: GridField
    xi: GridField
    chi: GridField
    rho: Optional[GridField] = None

    def __post_init__(self):
        fields = [self.S, self.xi, self.chi] + ([self.rho] if self.rho is not None else [])
        if len({f.spec for f in fields}) != 1 or len({f.t for f in fields}) != 1:
            raise ConfigurationError("dipole fields must share one grid and one time")

    @property
    def spec(self) -> GridSpec:
        return self.S.spec

    @property
    def t(self) -> float:
        return self.S.t

    def check_spin(self, spin_mag):
        if np.any(np.abs(self.xi.values) > spin_mag + XI_OVERSHOOT_TOL):
            raise SchemeError(f"|xi| exceeds the spin modulus {spin_mag}")


def _field_or_callable(obj, spec: GridSpec, t, points, width):
    """Evaluate a vector quantity given as a callable ``f(t, x)``, a grid field, or ``None`` (zero)."""
    if obj is None:
        return np.zeros((points.shape[0], width))
    if isinstance(obj, GridField):
        return interpolate(spec, obj.values, points)
    return np.asarray(obj(t, points), float).reshape(points.shape[0], width)


def step_dipole_spin_fields(fieldset: DipoleFieldSet, velocity, H, params: DipoleParams, dt,
                            iterations=2):
    """Semi-Lagrangian step of ``xi`` and ``chi`` along the given velocity.

    Along characteristics ``dxi/dt = dH_sp/dchi`` and ``dchi/dt = -dH_sp/dxi``.
    ``velocity`` is a grid field or ``v(t, x)``; ``H(t, x)`` returns the
    magnetic field as ``(N, 3)``.  Nodes within ``1e-9`` of a pole keep their
    ``chi`` and are flagged in ``meta["pole"]``.  Returns ``(xi, chi)``.
    """
    spec = fieldset.spec
    d = spec.dim
    u = np.concatenate([fieldset.xi.values, fieldset.chi.values])
    sm = params.spin_mag

    def vel(t, x, _):
        return _field_or_callable(velocity, spec, t, x, d)

    def source(t, x, uu):
        xi, chi = uu[:, 0], uu[:, 1]
        Hx = _field_or_callable(H, spec, t, x, 3)
        d_xi, d_chi = spin_hamiltonian_partials(xi, chi, Hx, params)
        pole = sm - np.abs(xi) < POLE_TOL
        return np.stack([d_chi, np.where(pole, 0.0, -d_xi)], axis=-1)

    new, outside = semi_lagrangian_update(spec, u, fieldset.t, dt, vel, source, iterations)
    xi = GridField(spec, new[0], fieldset.t + dt, "xi")
    chi = GridField(spec, new[1], fieldset.t + dt, "chi")
    if np.any(np.abs(new[0]) > sm + XI_OVERSHOOT_TOL):
        raise SchemeError(f"|xi| exceeded the spin modulus {sm} by more than {XI_OVERSHOOT_TOL}")
    pole = sm - np.abs(new[0]) < POLE_TOL
    if pole.any():
        chi.values[0][pole] = fieldset.chi.values[0][pole]
        chi.meta["pole"] = pole
    if outside.any():
        xi.meta["extrapolated"] = outside
        chi.meta["extrapolated"] = outside
    return xi, chi


def _canonical_gradient(fieldset: DipoleFieldSet, params: DipoleParams, A, t=None):
    spec = fieldset.spec
    t = fieldset.t if t is None else t
    gS = gradient(spec, fieldset.S.values[0])
    gchi = gradient(spec, fieldset.chi.values[0])
    Avals = _field_or_callable(A, spec, t, spec.nodes, spec.dim).T.reshape((spec.dim,) + spec.shape)
    return gS - (params.e / params.c) * Avals + fieldset.xi.values[0][None] * gchi


def dipole_velocity_from_fields(fieldset: DipoleFieldSet, params: DipoleParams, A=None) -> GridField:
    """``v = (grad S - (e/c) A + xi grad chi) / m`` by central differences."""
    v = _canonical_gradient(fieldset, params, A) / params.m
    return GridField(fieldset.spec, v, fieldset.t, "v")


def dipole_hj_residual(fs0: DipoleFieldSet, fs1: DipoleFieldSet, params: DipoleParams,
                       phi=None, A=None, H=None) -> GridField:
    """Nodewise ``dS/dt + xi dchi/dt + |grad S - eA/c + xi grad chi|^2 / 2m + e phi + H_sp``.

    Time derivatives are centred between the two snapshots; other terms use
    the snapshot average.  Outflow edge nodes are flagged invalid.
    """
    spec = fs0.spec
    if fs1.spec != spec or not fs1.t > fs0.t:
        raise ConfigurationError("residual needs two snapshots on one grid in increasing time")
    dt = fs1.t - fs0.t
    tm = 0.5 * (fs0.t + fs1.t)
    S_t = (fs1.S.values[0] - fs0.S.values[0]) / dt
    chi_t = (fs1.chi.values[0] - fs0.chi.values[0]) / dt
    xi = 0.5 * (fs0.xi.values[0] + fs1.xi.values[0])
    chi = 0.5 * (fs0.chi.values[0] + fs1.chi.values[0])
    kin = 0.5 * (_canonical_gradient(fs0, params, A, tm) + _canonical_gradient(fs1, params, A, tm))
    pot = _field_or_callable(phi, spec, tm, spec.nodes, 1).reshape(spec.shape)
    Hx = _field_or_callable(H, spec, tm, spec.nodes, 3).reshape(spec.shape + (3,))
    res = (S_t + xi * chi_t + np.sum(kin * kin, axis=0) / (2 * params.m) + params.e * pot
           + spin_hamiltonian(xi, chi, Hx, params))
    invalid = ~interior_mask(spec)
    res[invalid] = np.nan
    return GridField(spec, res, tm, "residual", invalid=invalid)


def dipole_continuity_step(fieldset: DipoleFieldSet, params: DipoleParams, dt, A=None, scheme="upwind") -> GridField:
    """Conservative density step with the dipole velocity."""
    if fieldset.rho is None:
        raise ConfigurationError("field set carries no density")
    v = dipole_velocity_from_fields(fieldset, params, A)
    return step_density(v, fieldset.rho, dt, scheme)
