"""Dynamical-system models.

A model is a pair of maps over the phase state: the generalized force
``F(t, q, p)`` driving ``dp/dt`` and the velocity map ``phi(t, q, p)``
giving ``dq/dt``.  Every map is vectorized: ``q`` and ``p`` have shape
``(..., s)`` and results broadcast over the leading axes, so the same model
drives one trajectory, an ensemble, or a whole grid of nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Callable, Mapping, Optional

import numpy as np
from scipy.stats import qmc

from .errors import ConfigurationError
from .expr import Expr, derivative, model_variables, parse_expression

FD_STEP = 1e-5
AUDIT_POINTS = 1000
AUDIT_TOL = 1e-6


@dataclass(frozen=True)
class SystemModel:
    dim: int
    force: Callable
    velocity_map: Callable
    hamiltonian: Optional[Callable] = None
    dH_dq: Optional[Callable] = None
    dH_dp: Optional[Callable] = None
    is_hamiltonian: bool = False
    # H = T(p) + V(t, q): force ignores p, velocity ignores q and t
    separable: bool = False
    time_dependent: bool = True
    name: str = "model"
    masses: Optional[np.ndarray] = None
    params: Mapping = field(default_factory=dict)

    def energy(self, t, q, p):
        if self.hamiltonian is None:
            raise ConfigurationError(f"model {self.name!r} has no Hamiltonian")
        return self.hamiltonian(t, np.asarray(q, float), np.asarray(p, float))


@dataclass(frozen=True)
class PhaseState:
    t: float
    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        q = np.atleast_1d(np.asarray(self.q, dtype=float))
        p = np.atleast_1d(np.asarray(self.p, dtype=float))
        if q.shape != p.shape or q.ndim != 1:
            raise ConfigurationError(f"q and p must be vectors of equal length, got {q.shape} and {p.shape}")
        if not (np.isfinite(self.t) and np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise ConfigurationError("phase state has non-finite entries")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    @property
    def dim(self):
        return self.q.size


@dataclass(frozen=True)
class DipoleParams:
    m: float = 1.0
    e: float = 1.0
    c: float = 1.0
    gamma: float = 1.0
    spin_mag: float = 0.5

    def __post_init__(self):
        if self.m <= 0 or self.c <= 0 or self.spin_mag <= 0:
            raise ConfigurationError("dipole parameters need m > 0, c > 0 and spin_mag > 0")


@dataclass
class AuditReport:
    max_error: float
    worst_point: Optional[tuple]
    checked: int

    def __str__(self):
        return f"max relative error {self.max_error:.3e} over {self.checked} points, worst at {self.worst_point}"


# ---------------------------------------------------------------------------
# audits


def _sample_points(dim, n, seed, box, with_p=True):
    k = 1 + dim * (2 if with_p else 1)
    pts = qmc.Halton(d=k, scramble=True, seed=seed).random(n)
    lo, hi = -box, box
    t = pts[:, 0]
    q = lo + (hi - lo) * pts[:, 1:1 + dim]
    p = lo + (hi - lo) * pts[:, 1 + dim:] if with_p else None
    return t, q, p


def _rel_err(a, b):
    return np.abs(a - b) / np.maximum(1.0, np.abs(b))


def audit_gradient(U, gradU, dim, n_points=AUDIT_POINTS, seed=0, box=1.0, tol=AUDIT_TOL, raise_on_fail=True):
    """Check ``gradU`` against central differences of ``U`` at quasi-random points."""
    t, q, _ = _sample_points(dim, n_points, seed, box, with_p=False)
    h = FD_STEP * box
    g = np.asarray(gradU(t, q), float).reshape(n_points, dim)
    fd = np.empty_like(g)
    for i in range(dim):
        dq = np.zeros(dim)
        dq[i] = h
        fd[:, i] = (np.asarray(U(t, q + dq)) - np.asarray(U(t, q - dq))) / (2 * h)
    err = _rel_err(g, fd)
    return _finish_audit(err, t, q, None, tol, raise_on_fail, "gradient")


def audit_hamiltonian(model: SystemModel, n_points=AUDIT_POINTS, seed=0, box=1.0, tol=AUDIT_TOL, raise_on_fail=True):
    """Compare the model's velocity and force maps with finite-difference partials of H.

    Checks ``|phi - dH/dp|`` and ``|F + dH/dq|`` (relative, floor 1) at
    ``n_points`` scrambled-Halton points in ``[-box, box]^(2s)``, ``t`` in ``[0, 1]``.
    """
    if model.hamiltonian is None:
        raise ConfigurationError(f"model {model.name!r} carries no Hamiltonian to audit")
    s = model.dim
    t, q, p = _sample_points(s, n_points, seed, box)
    h = FD_STEP * box
    H = model.hamiltonian
    vel = np.asarray(model.velocity_map(t, q, p), float).reshape(n_points, s)
    frc = np.asarray(model.force(t, q, p), float).reshape(n_points, s)
    errs = []
    for i in range(s):
        d = np.zeros(s)
        d[i] = h
        dHdp = (H(t, q, p + d) - H(t, q, p - d)) / (2 * h)
        dHdq = (H(t, q + d, p) - H(t, q - d, p)) / (2 * h)
        errs.append(_rel_err(vel[:, i], dHdp))
        errs.append(_rel_err(-frc[:, i], dHdq))
        if model.dH_dp is not None:
            errs.append(_rel_err(np.asarray(model.dH_dp(t, q, p))[..., i], dHdp))
        if model.dH_dq is not None:
            errs.append(_rel_err(np.asarray(model.dH_dq(t, q, p))[..., i], dHdq))
    err = np.max(np.stack(errs, axis=1), axis=1)
    return _finish_audit(err[:, None], t, q, p, tol, raise_on_fail, f"Hamiltonian consistency of {model.name!r}")


def _finish_audit(err, t, q, p, tol, raise_on_fail, what):
    flat = np.max(err, axis=1)
    worst = int(np.argmax(flat))
    point = (float(t[worst]), q[worst].tolist()) + ((p[worst].tolist(),) if p is not None else ())
    report = AuditReport(float(flat[worst]), point, len(flat))
    if raise_on_fail and not report.max_error <= tol:
        raise ConfigurationError(f"{what} audit failed: {report}")
    return report


# ---------------------------------------------------------------------------
# helpers


def _zeros_like_q(t, q):
    return np.zeros(np.shape(q), dtype=float)


def _scalar_zero(t, q):
    return np.zeros(np.shape(q)[:-1], dtype=float)


def _fd_gradient(f, t, q, h=FD_STEP):
    q = np.asarray(q, float)
    tail = np.shape(f(t, q))[q.ndim - 1:]
    out = np.empty(q.shape + tail)
    for i in range(q.shape[-1]):
        d = np.zeros(q.shape[-1])
        d[i] = h
        diff = (np.asarray(f(t, q + d)) - np.asarray(f(t, q - d))) / (2 * h)
        out[(Ellipsis, i) + (slice(None),) * len(tail)] = diff
    return out


def _masses_vector(masses, d):
    return np.repeat(np.asarray(masses, float), d)


# ---------------------------------------------------------------------------
# builders


def make_hamiltonian_model(s, H, dHdq, dHdp, *, separable=False, time_dependent=True,
                           name="hamiltonian", audit=True, seed=0, audit_box=1.0) -> SystemModel:
    """Generic Hamiltonian model: ``F = -dH/dq``, ``phi = dH/dp``."""
    if s < 1:
        raise ConfigurationError("number of degrees of freedom must be positive")

    def force(t, q, p):
        return -np.asarray(dHdq(t, q, p), float)

    def velocity(t, q, p):
        return np.asarray(dHdp(t, q, p), float)

    model = SystemModel(
        dim=s, force=force, velocity_map=velocity, hamiltonian=H, dH_dq=dHdq, dH_dp=dHdp,
        is_hamiltonian=True, separable=separable, time_dependent=time_dependent, name=name,
    )
    if audit:
        audit_hamiltonian(model, seed=seed, box=audit_box)
    return model


def make_potential_particle(m, U, gradU, dim=1, *, time_dependent=True, name="potential_particle",
                            audit=True, seed=0, audit_box=1.0) -> SystemModel:
    """Particle of mass ``m`` in potential ``U(t, q)``: ``H = |p|^2/2m + U``."""
    if not m > 0:
        raise ConfigurationError(f"mass must be positive, got {m}")
    if audit:
        audit_gradient(U, gradU, dim, seed=seed, box=audit_box)

    def force(t, q, p):
        return -np.broadcast_to(np.asarray(gradU(t, q), float), np.shape(q))

    def velocity(t, q, p):
        return np.asarray(p, float) / m

    def hamiltonian(t, q, p):
        p = np.asarray(p, float)
        return np.sum(p * p, axis=-1) / (2 * m) + U(t, q)

    return SystemModel(
        dim=dim, force=force, velocity_map=velocity, hamiltonian=hamiltonian,
        dH_dq=lambda t, q, p: -force(t, q, p), dH_dp=velocity,
        is_hamiltonian=True, separable=True, time_dependent=time_dependent, name=name,
        masses=np.full(dim, float(m)),
        params=MappingProxyType({"m": float(m), "U": U, "gradU": gradU}),
    )


def make_damped_particle(m, U, gradU, beta, dim=1, **kwargs) -> SystemModel:
    """Potential particle with linear drag ``-beta v``, stored as ``-beta p / m``."""
    if beta < 0:
        raise ConfigurationError(f"drag factor must be non-negative, got {beta}")
    base = make_potential_particle(m, U, gradU, dim, **kwargs)
    if beta == 0:
        return base
    grad_force = base.force

    def force(t, q, p):
        return grad_force(t, q, p) - beta * np.asarray(p, float) / m

    return SystemModel(
        dim=dim, force=force, velocity_map=base.velocity_map, hamiltonian=None,
        is_hamiltonian=False, separable=False, time_dependent=base.time_dependent,
        name=kwargs.get("name", "damped_particle"), masses=base.masses,
        params=MappingProxyType({**base.params, "beta": float(beta)}),
    )


def lorentz_force(e, c, E, H, v):
    """``e (E + v x H / c)``."""
    return e * (np.asarray(E, float) + np.cross(v, H) / c)


def make_em_particle(m=1.0, e=1.0, c=1.0, phi=None, A=None, grad_phi=None, dA_dt=None, jac_A=None,
                     *, time_dependent=True, name="em_particle") -> SystemModel:
    """Charged particle in external potentials ``phi(t, r)``, ``A(t, r)``.

    The state momentum is the canonical one, ``P = m v + (e/c) A``.  Its rate of
    change along an orbit is ``-e grad(phi) + (e/c) grad_A(v . A)``, i.e. minus the
    spatial gradient of ``H = |P - eA/c|^2 / 2m + e phi``.  ``jac_A[..., i, j]``
    holds ``dA_j / dr_i``.  Missing derivatives fall back to central differences.
    """
    if not (m > 0 and c > 0):
        raise ConfigurationError("EM particle needs m > 0 and c > 0")
    phi = phi or _scalar_zero
    A = A or _zeros_like_q
    if grad_phi is None:
        grad_phi = lambda t, q: _fd_gradient(phi, t, q)  # noqa: E731
    if jac_A is None:
        jac_A = lambda t, q: _fd_gradient(A, t, q)  # noqa: E731
    if dA_dt is None:
        def dA_dt(t, q, _h=FD_STEP):
            return (np.asarray(A(t + _h, q)) - np.asarray(A(t - _h, q))) / (2 * _h)
    k = e / c

    def velocity(t, q, p):
        return (np.asarray(p, float) - k * np.broadcast_to(A(t, q), np.shape(q))) / m

    def force(t, q, p):
        v = velocity(t, q, p)
        J = np.broadcast_to(jac_A(t, q), np.shape(q) + (3,))
        gphi = np.broadcast_to(grad_phi(t, q), np.shape(q))
        return -e * gphi + k * np.einsum("...ij,...j->...i", J, v)

    def hamiltonian(t, q, p):
        kin = np.asarray(p, float) - k * np.broadcast_to(A(t, q), np.shape(q))
        return np.sum(kin * kin, axis=-1) / (2 * m) + e * np.asarray(phi(t, q))

    return SystemModel(
        dim=3, force=force, velocity_map=velocity, hamiltonian=hamiltonian,
        dH_dq=lambda t, q, p: -force(t, q, p), dH_dp=velocity,
        is_hamiltonian=True, separable=False, time_dependent=time_dependent, name=name,
        masses=np.full(3, float(m)),
        params=MappingProxyType(dict(m=float(m), e=float(e), c=float(c), phi=phi, A=A,
                                     grad_phi=grad_phi, dA_dt=dA_dt, jac_A=jac_A)),
    )


def em_fields(model: SystemModel, t, q):
    """Electric and magnetic field strengths ``E = -grad phi - dA/dt / c``, ``H = rot A``."""
    P = model.params
    E = -np.asarray(P["grad_phi"](t, q)) - np.asarray(P["dA_dt"](t, q)) / P["c"]
    J = np.asarray(P["jac_A"](t, q))
    H = np.stack([J[..., 1, 2] - J[..., 2, 1], J[..., 2, 0] - J[..., 0, 2], J[..., 0, 1] - J[..., 1, 0]], axis=-1)
    return E, H


def make_damped_em_particle(m=1.0, e=1.0, c=1.0, phi=None, A=None, grad_phi=None, dA_dt=None, jac_A=None,
                            *, beta, variant="velocity_drag", time_dependent=True) -> SystemModel:
    """EM particle with drag: ``-beta v`` (``velocity_drag``) or ``-(beta/m) P`` (``canonical_drag``)."""
    if variant not in ("velocity_drag", "canonical_drag"):
        raise ConfigurationError(f"unknown drag variant {variant!r}")
    if beta < 0:
        raise ConfigurationError(f"drag factor must be non-negative, got {beta}")
    base = make_em_particle(m, e, c, phi, A, grad_phi, dA_dt, jac_A, time_dependent=time_dependent,
                            name=f"damped_em_particle[{variant}]")
    if beta == 0:
        return base
    em_force, velocity = base.force, base.velocity_map

    if variant == "velocity_drag":
        def force(t, q, p):
            return em_force(t, q, p) - beta * velocity(t, q, p)
    else:
        def force(t, q, p):
            return em_force(t, q, p) - (beta / m) * np.asarray(p, float)

    return SystemModel(
        dim=3, force=force, velocity_map=velocity, is_hamiltonian=False,
        time_dependent=time_dependent, name=base.name, masses=base.masses,
        params=MappingProxyType({**base.params, "beta": float(beta), "variant": variant}),
    )


def make_nbody(masses, U, gradU, d=1, *, time_dependent=True, name="nbody",
               audit=True, seed=0, audit_box=1.0) -> SystemModel:
    """``N`` interacting particles in ``d`` dimensions; state is ``(r_1..r_N)`` flattened."""
    masses = np.asarray(masses, float).ravel()
    if masses.size == 0 or np.any(~(masses > 0)):
        raise ConfigurationError("n-body masses must be a non-empty list of positive numbers")
    s = masses.size * d
    mvec = _masses_vector(masses, d)
    if audit:
        audit_gradient(U, gradU, s, seed=seed, box=audit_box)

    def force(t, q, p):
        return -np.broadcast_to(np.asarray(gradU(t, q), float), np.shape(q))

    def velocity(t, q, p):
        return np.asarray(p, float) / mvec

    def hamiltonian(t, q, p):
        p = np.asarray(p, float)
        return np.sum(p * p / (2 * mvec), axis=-1) + U(t, q)

    return SystemModel(
        dim=s, force=force, velocity_map=velocity, hamiltonian=hamiltonian,
        dH_dq=lambda t, q, p: -force(t, q, p), dH_dp=velocity,
        is_hamiltonian=True, separable=True, time_dependent=time_dependent, name=name,
        masses=mvec, params=MappingProxyType({"particle_masses": masses, "d": d, "U": U, "gradU": gradU}),
    )


# ---------------------------------------------------------------------------
# bundled models


def free_particle(m=1.0, dim=1) -> SystemModel:
    return make_potential_particle(m, _scalar_zero, _zeros_like_q, dim, time_dependent=False,
                                   name="free_particle", audit=False)


def harmonic_oscillator(m=1.0, omega=1.0, dim=1) -> SystemModel:
    k = m * omega**2
    return make_potential_particle(
        m, lambda t, q: 0.5 * k * np.sum(np.asarray(q) ** 2, axis=-1), lambda t, q: k * np.asarray(q, float),
        dim, time_dependent=False, name="harmonic_oscillator", audit=False,
    )


def uniform_force(F0, m=1.0, dim=1) -> SystemModel:
    """Constant force ``F0`` along the first axis: ``U = -F0 q1``."""
    g = np.zeros(dim)
    g[0] = -F0
    return make_potential_particle(
        m, lambda t, q: -F0 * np.asarray(q)[..., 0], lambda t, q: np.broadcast_to(g, np.shape(q)),
        dim, time_dependent=False, name="uniform_force", audit=False,
    )


# ---------------------------------------------------------------------------
# expression-backed callables


def _bindings(t, q, p, dim):
    b = {"t": t}
    q = np.asarray(q, float)
    for i in range(dim):
        b[f"q{i + 1}"] = q[..., i]
    if p is not None:
        p = np.asarray(p, float)
        for i in range(dim):
            b[f"p{i + 1}"] = p[..., i]
    return b


def _shaped(value, q):
    return np.broadcast_to(np.asarray(value, float), np.shape(q)[:-1]).copy()


def scalar_function(e: Expr, dim: int, with_p=False):
    """Wrap an expression as ``f(t, q)`` (or ``f(t, q, p)``) over ``(..., s)`` arrays."""
    if with_p:
        return lambda t, q, p: _shaped(e.evaluate(_bindings(t, q, p, dim)), q)
    return lambda t, q: _shaped(e.evaluate(_bindings(t, q, None, dim)), q)


def gradient_function(e: Expr, dim: int, prefix="q", with_p=False):
    """Vector of symbolic partials ``d e / d{prefix}i`` as a vectorized callable."""
    parts = [derivative(e, f"{prefix}{i + 1}") for i in range(dim)]
    if with_p:
        return lambda t, q, p: np.stack(
            [_shaped(d.evaluate(_bindings(t, q, p, dim)), q) for d in parts], axis=-1)
    return lambda t, q: np.stack([_shaped(d.evaluate(_bindings(t, q, None, dim)), q) for d in parts], axis=-1)


def potential_from_expression(text, dim, constants=None):
    """``(U, gradU, time_dependent)`` from an expression over ``t, q1..qs``."""
    names = {k: v for k, v in model_variables(dim).items() if not v.startswith("p")}
    e = parse_expression(text, names, constants)
    return scalar_function(e, dim), gradient_function(e, dim), e.depends_on("t")


def hamiltonian_from_expression(text, dim, constants=None, **kwargs) -> SystemModel:
    """Generic Hamiltonian model from ``H(t, q, p)`` with symbolic partials."""
    e = parse_expression(text, model_variables(dim), constants)
    H = scalar_function(e, dim, with_p=True)
    dHdq = gradient_function(e, dim, "q", with_p=True)
    dHdp = gradient_function(e, dim, "p", with_p=True)
    qs = {f"q{i + 1}" for i in range(dim)}
    ps = {f"p{i + 1}" for i in range(dim)}
    separable = all(not (derivative(e, a).free_vars() & (ps if a in qs else qs | {"t"})) for a in qs | ps)
    kwargs.setdefault("separable", separable)
    kwargs.setdefault("time_dependent", e.depends_on("t"))
    return make_hamiltonian_model(dim, H, dHdq, dHdp, **kwargs)
