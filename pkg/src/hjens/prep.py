"""Momentum-space (p-representation) fields and Hamilton-Jacobi equation.

On a momentum grid the coordinate field ``q(t, p)`` obeys
``dq/dt + (omega . grad_p) q = phi`` with ``omega = F(t, q, p)``.  This is the
configuration-space momentum equation with the roles of ``q`` and ``p``
exchanged, so the same semi-Lagrangian and finite-volume kernels apply
through :func:`dual_model`.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError
from .eulerian import run_eulerian, step_density, step_momentum_field, velocity_from_momentum
from .expr import Expr, derivative, model_variables, parse_expression
from .grid import GridField, gradient
from .hj import CompleteIntegral, _check_stencil, _hamiltonian_of, _sample, jacobi_solve
from .lagrangian import Trajectory
from .models import SystemModel, _bindings


def dual_model(model: SystemModel) -> SystemModel:
    """Model whose "position" is ``p`` and whose advected field is ``q``."""
    return SystemModel(
        dim=model.dim,
        force=lambda t, p, q: model.velocity_map(t, q, p),
        velocity_map=lambda t, p, q: model.force(t, q, p),
        is_hamiltonian=False, time_dependent=model.time_dependent, name=f"{model.name}[p]",
        masses=model.masses, params=model.params,
    )


def _require_p_axes(field: GridField):
    if field.spec.axes_kind != "p":
        raise ContractError(f"field {field.name!r} is not on a momentum grid (axes={field.spec.axes_kind})")


def momentum_space_velocity(model: SystemModel, q_field: GridField, t=None) -> GridField:
    """``omega(t, p) = F(t, q(t, p), p)`` nodewise."""
    _require_p_axes(q_field)
    out = velocity_from_momentum(dual_model(model), q_field, t)
    return out.replace(name="omega")


def step_coordinate_field(model: SystemModel, q_field: GridField, dt, iterations=2) -> GridField:
    """One semi-Lagrangian step of the coordinate field on a momentum grid."""
    _require_p_axes(q_field)
    return step_momentum_field(dual_model(model), q_field, dt, iterations).replace(name=q_field.name or "q")


def step_density_p(omega_field: GridField, rho_p: GridField, dt, scheme="upwind") -> GridField:
    """Conservative momentum-space continuity step (same scheme as configuration space)."""
    _require_p_axes(rho_p)
    return step_density(omega_field, rho_p, dt, scheme)


def run_prep(model: SystemModel, q0: GridField, t_end, dt, rho0=None, **kwargs):
    """Evolve ``q(t, p)`` (and ``rho(t, p)``); same options and stopping rules as ``run_eulerian``."""
    _require_p_axes(q0)
    return run_eulerian(dual_model(model), q0, t_end, dt, rho0=rho0, **kwargs)


# ---------------------------------------------------------------------------
# Hamilton-Jacobi equation in momentum space


def _parse_p_action(Phi, dim):
    if isinstance(Phi, Expr):
        return Phi
    names = {k: v for k, v in model_variables(dim).items() if not v.startswith("q")}
    return parse_expression(Phi, names)


def _p_parts(e: Expr, dim, t, p):
    p = np.asarray(p, float).reshape(-1, dim)
    b = _bindings(t, np.zeros_like(p), p, dim)
    shape = p.shape[:-1]
    S_t = np.broadcast_to(np.asarray(derivative(e, "t").evaluate(b), float), shape)
    dp = np.stack([np.broadcast_to(np.asarray(derivative(e, f"p{i + 1}").evaluate(b), float), shape)
                   for i in range(dim)], axis=-1)
    return S_t, dp, p


def hj_residual_p(model: SystemModel, Phi, p, t=None):
    """Residual of ``dPhi/dt + H(t, -dPhi/dp, p) = 0`` at momentum point(s) ``p``.

    ``Phi`` is an expression over ``t, p1..ps`` or a pair of momentum-grid
    snapshots differenced at their midpoint time.
    """
    H = _hamiltonian_of(model)
    scalar = np.ndim(p) <= 1 and model.dim == np.size(p)
    if isinstance(Phi, (str, Expr)):
        if t is None:
            raise ContractError("analytic residual needs a time")
        Phi_t, dPhi, pp = _p_parts(_parse_p_action(Phi, model.dim), model.dim, t, p)
        res = Phi_t + np.asarray(H(t, -dPhi, pp), float)
    else:
        P0, P1 = Phi
        _require_p_axes(P0)
        if P0.spec != P1.spec or not P1.t > P0.t:
            raise ContractError("snapshots must share a grid and increase in time")
        spec = P0.spec
        tm = 0.5 * (P0.t + P1.t)
        Phi_t = (P1.values[0] - P0.values[0]) / (P1.t - P0.t)
        grad = 0.5 * (gradient(spec, P0.values[0]) + gradient(spec, P1.values[0]))
        field = Phi_t.ravel() + np.asarray(H(tm, -grad.reshape(spec.dim, -1).T, spec.nodes), float)
        pp = _check_stencil(spec, p)
        res = _sample(spec, field.reshape(spec.shape), pp)
    return float(res[0]) if scalar else res


def truncated_hj_residual_p(model: SystemModel, W, E, points=None):
    """``H(-dW/dp, p) - E`` for a time-independent model.

    ``W`` is an expression over ``p1..ps`` (evaluated at ``points``) or a
    momentum-grid field (evaluated at every node; edge nodes use one-sided
    differences).
    """
    if model.time_dependent:
        raise ContractError(f"model {model.name!r} is time dependent; the truncated equation needs H(q, p)")
    H = _hamiltonian_of(model)
    if isinstance(W, (str, Expr)):
        if points is None:
            raise ContractError("expression W needs evaluation points")
        _, dW, pp = _p_parts(_parse_p_action(W, model.dim), model.dim, 0.0, points)
        return np.asarray(H(0.0, -dW, pp), float) - E
    _require_p_axes(W)
    grad = gradient(W.spec, W.values[0]).reshape(W.spec.dim, -1).T
    res = np.asarray(H(0.0, -grad, W.spec.nodes), float) - E
    return GridField(W.spec, res.reshape(W.spec.shape), W.t, "truncated_residual", invalid=W.invalid)


def jacobi_recover_p(ci: CompleteIntegral, beta, alpha, t_grid, seed=None) -> Trajectory:
    """Trajectory from a p-representation complete integral: ``p`` from the root solve, ``q = -dPhi/dp``."""
    if ci.representation != "p":
        raise ContractError("jacobi_recover_p needs a p-representation complete integral")
    seed = np.zeros(ci.dim) if seed is None else seed
    p, conj = jacobi_solve(ci, beta, alpha, t_grid, seed)
    return Trajectory(np.asarray(t_grid, float), -conj, p, ci.name)


def rotate_oscillator_data(f):
    """Initial coordinate field for the unit oscillator obtained by the phase-space turn ``(q, p) -> (p, -q)``.

    If the q-representation ensemble starts on ``p = f(q)``, the turned
    ensemble starts on ``q = f(-p)``; at later times ``q_rot(t, P) = p(t, -P)``.
    """
    return lambda P: f(-np.asarray(P, float))

