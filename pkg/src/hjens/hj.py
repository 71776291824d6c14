"""Hamilton-Jacobi layer: residuals, action fields from characteristics, Jacobi theorem."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations_with_replacement, product
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import (CausticError, ConfigurationError, ContractError, CoverageError, DegeneracyError,
                     OutOfStencilError, RootFindError)
from .expr import Expr, derivative, model_variables, parse_expression
from .grid import GridField, GridSpec, gradient, interior_mask, interpolate, nearest_node
from .lagrangian import Trajectory, _time_nodes, first_zero_crossing
from .models import FD_STEP, SystemModel, _bindings

NEWTON_MAX_ITER = 50
NEWTON_MAX_HALVINGS = 8
DEGENERACY_TOL = 1e-6


# ---------------------------------------------------------------------------
# types


@dataclass
class ActionField:
    """Time-ordered action snapshots ``S(t, q)`` on one grid."""

    snapshots: list
    model_name: str = "model"
    representation: str = "q"
    characteristics: list = field(default_factory=list)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.snapshots])

    @property
    def spec(self) -> GridSpec:
        return self.snapshots[0].spec

    def __getitem__(self, k) -> GridField:
        return self.snapshots[k]

    def __len__(self):
        return len(self.snapshots)


def _fd(f, x, h=FD_STEP):
    """Central-difference Jacobian of ``f`` at vector ``x``; result ``[..., j]`` is ``df/dx_j``."""
    x = np.asarray(x, float)
    cols = []
    for j in range(x.size):
        d = np.zeros_like(x)
        d[j] = h * max(1.0, abs(x[j]))
        cols.append((np.asarray(f(x + d), float) - np.asarray(f(x - d), float)) / (2 * d[j]))
    return np.stack(cols, axis=-1)


@dataclass
class CompleteIntegral:
    """Action family ``Phi(t, x; beta)`` with ``s`` non-additive constants.

    ``x`` stands for the coordinates (``representation="q"``) or the momenta
    (``"p"``).  Partials not supplied are taken by central differences.
    ``d2Phi_dbeta_dx(t, x, beta)[i, j]`` is ``d^2 Phi / d beta_i d x_j``.
    """

    Phi: Callable
    dim: int
    representation: str = "q"
    dPhi_dbeta: Optional[Callable] = None
    dPhi_dx: Optional[Callable] = None
    d2Phi_dbeta_dx: Optional[Callable] = None
    name: str = "complete_integral"

    def __post_init__(self):
        if self.representation not in ("q", "p"):
            raise ConfigurationError(f"representation must be 'q' or 'p', got {self.representation!r}")

    def grad_beta(self, t, x, beta):
        if self.dPhi_dbeta is not None:
            return np.asarray(self.dPhi_dbeta(t, x, beta), float).reshape(self.dim)
        return _fd(lambda b: self.Phi(t, x, b), beta).reshape(self.dim)

    def grad_x(self, t, x, beta):
        if self.dPhi_dx is not None:
            return np.asarray(self.dPhi_dx(t, x, beta), float).reshape(self.dim)
        return _fd(lambda y: self.Phi(t, y, beta), x).reshape(self.dim)

    def mixed(self, t, x, beta):
        if self.d2Phi_dbeta_dx is not None:
            return np.asarray(self.d2Phi_dbeta_dx(t, x, beta), float).reshape(self.dim, self.dim)
        return _fd(lambda y: self.grad_beta(t, y, beta), x).reshape(self.dim, self.dim)

    def audit(self, samples, tol=1e-6):
        """Max relative deviation of supplied partials from finite differences over ``(t, x, beta)`` samples."""
        worst = 0.0
        for t, x, beta in samples:
            x, beta = np.atleast_1d(np.asarray(x, float)), np.atleast_1d(np.asarray(beta, float))
            pairs = [
                (self.dPhi_dbeta, lambda: _fd(lambda b: self.Phi(t, x, b), beta)),
                (self.dPhi_dx, lambda: _fd(lambda y: self.Phi(t, y, beta), x)),
                (self.d2Phi_dbeta_dx, lambda: _fd(lambda y: self.grad_beta(t, y, beta), x)),
            ]
            for given, fd in pairs:
                if given is None:
                    continue
                a = np.asarray(given(t, x, beta), float).ravel()
                b = np.asarray(fd(), float).ravel()
                worst = max(worst, float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b)))))
        if worst > tol:
            raise ConfigurationError(f"complete integral partials audit failed: max relative error {worst:.3e}")
        return worst

    @classmethod
    def from_expression(cls, text, dim, representation="q", constants=None, name="complete_integral"):
        """Build from an expression over ``t``, the coordinates and ``beta1..betas``.

        Coordinates are ``q1..qs`` (aliases ``x, y, z``) in the q-representation
        and ``p1..ps`` in the p-representation.
        """
        betas = [f"beta{i + 1}" for i in range(dim)]
        names = model_variables(dim, betas)
        drop = "p" if representation == "q" else "q"
        names = {k: v for k, v in names.items() if not v.startswith(drop)}
        e = parse_expression(text, names, constants)
        xs = [f"{representation}{i + 1}" for i in range(dim)]
        d_beta = [derivative(e, b) for b in betas]
        d_x = [derivative(e, x) for x in xs]
        d_mixed = [[derivative(db, x) for x in xs] for db in d_beta]

        def bind(t, x, beta):
            b = {"t": t}
            b.update({n: v for n, v in zip(xs, np.atleast_1d(x))})
            b.update({n: v for n, v in zip(betas, np.atleast_1d(beta))})
            return b

        def vec(parts):
            return lambda t, x, beta: np.array([float(p.evaluate(bind(t, x, beta))) for p in parts])

        return cls(
            Phi=lambda t, x, beta: float(e.evaluate(bind(t, x, beta))),
            dim=dim, representation=representation,
            dPhi_dbeta=vec(d_beta), dPhi_dx=vec(d_x),
            d2Phi_dbeta_dx=lambda t, x, beta: np.array(
                [[float(p.evaluate(bind(t, x, beta))) for p in row] for row in d_mixed]),
            name=name,
        )


# ---------------------------------------------------------------------------
# residuals


def _parse_action(S, dim, extra=()):
    if isinstance(S, Expr):
        return S
    names = {k: v for k, v in model_variables(dim, extra).items() if not v.startswith("p")}
    return parse_expression(S, names)


def _analytic_parts(S: Expr, dim, t, q):
    q = np.asarray(q, float).reshape(-1, dim)
    b = _bindings(t, q, None, dim)
    val = np.broadcast_to(np.asarray(S.evaluate(b), float), q.shape[:-1])
    S_t = np.broadcast_to(np.asarray(derivative(S, "t").evaluate(b), float), q.shape[:-1])
    grad = np.stack([np.broadcast_to(np.asarray(derivative(S, f"q{i + 1}").evaluate(b), float), q.shape[:-1])
                     for i in range(dim)], axis=-1)
    return val, S_t, grad, q


def _check_stencil(spec: GridSpec, q):
    """Points must keep a full central stencil away from outflow edges."""
    q = np.asarray(q, float).reshape(-1, spec.dim)
    for a in range(spec.dim):
        if spec.periodic(a):
            continue
        lo, hi, h = spec.mins[a], spec.maxs[a], spec.h[a]
        if np.any(q[:, a] < lo + h * (1 - 1e-9)) or np.any(q[:, a] > hi - h * (1 - 1e-9)):
            raise OutOfStencilError(f"point(s) within one node of the boundary on axis {a}")
    return q


def _snapshot_parts(S0: GridField, S1: GridField):
    if S0.spec != S1.spec:
        raise ContractError("action snapshots live on different grids")
    dt = S1.t - S0.t
    if not dt > 0:
        raise ContractError("action snapshots must be in increasing time order")
    tm = 0.5 * (S0.t + S1.t)
    S_t = (S1.values[0] - S0.values[0]) / dt
    grad = 0.5 * (gradient(S0.spec, S0.values[0]) + gradient(S1.spec, S1.values[0]))
    val = 0.5 * (S0.values[0] + S1.values[0])
    return tm, val, S_t, grad


def _sample(spec, field_values, q):
    """Values at nodes exactly, cubic interpolation elsewhere (full interior stencil required)."""
    q = _check_stencil(spec, q)
    out = np.empty(q.shape[0])
    for k, pt in enumerate(q):
        node = nearest_node(spec, pt)
        if node is not None:
            out[k] = field_values[node]
            continue
        for a in range(spec.dim):
            if not spec.periodic(a) and (pt[a] < spec.mins[a] + 2 * spec.h[a] or pt[a] > spec.maxs[a] - 2 * spec.h[a]):
                raise OutOfStencilError(f"point {pt} too close to the boundary for interpolation")
        out[k] = interpolate(spec, field_values, pt[None])[0, 0]
    return out


def _hamiltonian_of(model: SystemModel):
    if model.hamiltonian is not None:
        return model.hamiltonian
    P = model.params
    if "U" in P and "m" in P:
        m, U = P["m"], P["U"]
        return lambda t, q, p: np.sum(np.asarray(p) ** 2, axis=-1) / (2 * m) + U(t, q)
    raise ContractError(f"model {model.name!r} carries no Hamiltonian")


def hj_residual_field(model: SystemModel, S0: GridField, S1: GridField, beta=0.0) -> GridField:
    """Nodewise ``dS/dt + H(t, q, grad S) [+ (beta/m) S]`` centred between two snapshots.

    Nodes on outflow edges are flagged invalid.
    """
    H = _hamiltonian_of(model)
    tm, val, S_t, grad = _snapshot_parts(S0, S1)
    spec = S0.spec
    p = grad.reshape(spec.dim, -1).T
    res = S_t.ravel() + np.asarray(H(tm, spec.nodes, p), float)
    if beta:
        res = res + (beta / model.params["m"]) * val.ravel()
    invalid = ~interior_mask(spec)
    if S0.invalid is not None:
        invalid |= S0.invalid
    if S1.invalid is not None:
        invalid |= S1.invalid
    res = res.reshape(spec.shape)
    res[invalid] = np.nan
    return GridField(spec, res, tm, "residual", invalid=invalid)


def hj_residual(model: SystemModel, S, q, t=None, *, _beta=0.0):
    """Residual of ``dS/dt + H(t, q, grad S) = 0`` at point(s) ``q``.

    ``S`` is either an expression (text or parsed) over ``t, q1..qs``, evaluated
    with symbolic derivatives at time ``t``, or a pair of snapshots
    ``(S0, S1)`` differenced at their midpoint time.
    """
    H = _hamiltonian_of(model)
    scalar = np.ndim(q) <= 1 and model.dim == np.size(q)
    if isinstance(S, (str, Expr)):
        if t is None:
            raise ContractError("analytic residual needs a time")
        val, S_t, grad, qq = _analytic_parts(_parse_action(S, model.dim), model.dim, t, q)
        res = S_t + np.asarray(H(t, qq, grad), float)
    else:
        S0, S1 = S
        fieldres = hj_residual_field(model, S0, S1, 0.0)
        tm, val_f, _, _ = _snapshot_parts(S0, S1)
        qq = _check_stencil(S0.spec, q)
        res = _sample(S0.spec, np.where(fieldres.invalid, 0.0, fieldres.values[0]), qq)
        val = _sample(S0.spec, val_f, qq)
    if _beta:
        res = res + (_beta / model.params["m"]) * val
    return float(res[0]) if scalar else res


def hj_damped_residual(model: SystemModel, S, q, beta=None, t=None):
    """Residual of ``dS/dt + |grad S|^2/2m + (beta/m) S + U = 0``.

    The extra term makes the residual depend on the additive constant of ``S``.
    """
    if beta is None:
        beta = model.params.get("beta", 0.0)
    if beta < 0:
        raise ConfigurationError("drag factor must be non-negative")
    return hj_residual(model, S, q, t, _beta=beta)


# ---------------------------------------------------------------------------
# characteristics and scatter-back


def _quadratic_design(d, h):
    """Value and gradient rows of the quadratic basis at offsets ``d`` of shape ``(..., s)``."""
    s = d.shape[-1]
    pairs = list(combinations_with_replacement(range(s), 2))
    K = 1 + s + len(pairs)
    val = np.zeros(d.shape[:-1] + (K,))
    grad = np.zeros(d.shape[:-1] + (s, K))
    val[..., 0] = 1.0
    for a in range(s):
        val[..., 1 + a] = d[..., a]
        grad[..., a, 1 + a] = 1.0
    for k, (a, b) in enumerate(pairs):
        col = 1 + s + k
        if a == b:
            val[..., col] = 0.5 * d[..., a] ** 2
            grad[..., a, col] = d[..., a]
        else:
            val[..., col] = d[..., a] * d[..., b]
            grad[..., a, col] = d[..., b]
            grad[..., b, col] = d[..., a]
    return val, grad * h


def mls_scatter(spec: GridSpec, launch_shape, positions, values, grads, radius=2.0):
    """Moving-least-squares quadratic fit of scattered ``S`` onto the grid nodes.

    ``positions`` ``(N, s)`` are characteristics in launch-grid order, ``values``
    their actions and ``grads`` their momenta (``= grad S``).  Each node uses the
    ``3^s`` logical neighbours of its nearest characteristic.  Nodes farther than
    ``radius`` cells from every characteristic are returned as NaN and flagged.
    """
    s = spec.dim
    hmax = float(spec.h.max())
    tree = cKDTree(positions)
    dist, nearest = tree.query(spec.nodes)
    invalid = dist > radius * hmax
    centre = np.array(np.unravel_index(nearest, launch_shape)).T
    offsets = np.array(list(product((-1, 0, 1), repeat=s)))
    lshape = np.array(launch_shape)
    centre = np.clip(centre, 1, lshape - 2)
    neigh = centre[:, None, :] + offsets[None]
    flat = np.ravel_multi_index(tuple(neigh[..., a] for a in range(s)), launch_shape)
    d = positions[flat] - spec.nodes[:, None, :]
    val_rows, grad_rows = _quadratic_design(d / hmax, 1.0)
    # rows: values then gradients, gradients scaled to the same units
    n, m, K = val_rows.shape
    A = np.concatenate([val_rows, grad_rows.reshape(n, m * s, K)], axis=1)
    rhs = np.concatenate([values[flat], (grads[flat] * hmax).reshape(n, m * s)], axis=1)
    w = 1.0 / (1.0 + np.sum((d / hmax) ** 2, axis=-1))
    W = np.concatenate([w, np.repeat(w, s, axis=1)], axis=1)
    AtW = np.transpose(A, (0, 2, 1)) * W[:, None, :]
    M = AtW @ A
    cond = np.linalg.cond(M)
    bad = ~np.isfinite(cond) | (cond > 1e12)
    if np.any(bad & ~invalid):
        i = int(np.flatnonzero(bad & ~invalid)[0])
        raise CoverageError(f"characteristics too sparse or degenerate near node {spec.nodes[i]}")
    M[invalid | bad] = np.eye(K)
    coef = np.linalg.solve(M, (AtW @ rhs[..., None]))[..., 0]
    out = coef[:, 0]
    out[invalid] = np.nan
    return out.reshape(spec.shape), invalid.reshape(spec.shape)


def _characteristic_rhs(model: SystemModel, H, t, q, p):
    v = model.velocity_map(t, q, p)
    return v, model.force(t, q, p), np.sum(p * v, axis=-1) - H(t, q, p)


def solve_hj_characteristics(model: SystemModel, S0: GridField, dt, t_end, cadence=1,
                             grad_S0: Optional[Callable] = None, radius=2.0) -> ActionField:
    """Action field from characteristics launched at every node with ``p0 = grad S0``.

    ``(q, p, S)`` are integrated jointly with ``dS/dt = p . dH/dp - H`` (RK4).
    The flow-map determinant is monitored every step; its first zero raises
    ``CausticError`` with the interpolated time.  Output snapshots (every
    ``cadence`` steps and at ``t_end``) are scattered back to the grid by
    moving least squares; the first snapshot is ``S0`` itself.
    """
    if not model.is_hamiltonian:
        raise ContractError("characteristics need a Hamiltonian model")
    H = _hamiltonian_of(model)
    spec = S0.spec
    if spec.dim != model.dim:
        raise ConfigurationError("action grid dimension differs from the model's")
    q0 = spec.nodes.copy()
    if grad_S0 is not None:
        p = np.asarray(grad_S0(q0), float).reshape(q0.shape)
    else:
        p = gradient(spec, S0.values[0]).reshape(spec.dim, -1).T.copy()
    q, S = q0.copy(), S0.values[0].ravel().copy()
    times = _time_nodes(S0.t, t_end, dt)
    eye = np.eye(spec.dim).reshape((spec.dim, spec.dim) + (1,) * spec.dim)
    out = ActionField([S0.replace(name="S")], model.name)
    out.characteristics.append((S0.t, q.copy(), p.copy(), S.copy()))
    prev_det = 1.0
    for k in range(1, times.size):
        t, h = times[k - 1], times[k] - times[k - 1]
        k1 = _characteristic_rhs(model, H, t, q, p)
        k2 = _characteristic_rhs(model, H, t + h / 2, q + h / 2 * k1[0], p + h / 2 * k1[1])
        k3 = _characteristic_rhs(model, H, t + h / 2, q + h / 2 * k2[0], p + h / 2 * k2[1])
        k4 = _characteristic_rhs(model, H, t + h, q + h * k3[0], p + h * k3[1])
        q = q + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        p = p + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        S = S + h / 6 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        disp = (q - q0).T.reshape((spec.dim,) + spec.shape)
        det = float(np.linalg.det(np.moveaxis(gradient(spec, disp) + eye, (0, 1), (-2, -1))).min())
        if det <= 0:
            tc = first_zero_crossing(times[k - 1:k + 1], [prev_det, det])
            err = CausticError(f"characteristics cross at t={tc:.6g}", tc)
            err.action = out
            raise err
        prev_det = det
        if k % cadence == 0 or k == times.size - 1:
            vals, invalid = mls_scatter(spec, spec.shape, q, S, p, radius)
            out.snapshots.append(GridField(spec, vals, times[k], "S", invalid=invalid if invalid.any() else None))
            out.characteristics.append((times[k], q.copy(), p.copy(), S.copy()))
    return out


def momentum_from_action(S: GridField) -> GridField:
    """Central-difference ``p = grad S``; invalid nodes stay invalid."""
    vals = S.values[0]
    invalid = S.invalid
    if invalid is not None:
        vals = np.where(invalid, 0.0, vals)
    g = gradient(S.spec, vals)
    if invalid is not None:
        spread = invalid.copy()
        for a in range(S.spec.dim):
            spread |= np.roll(invalid, 1, axis=a) | np.roll(invalid, -1, axis=a)
        invalid = spread
        g[:, invalid] = np.nan
    return GridField(S.spec, g, S.t, "p", invalid=invalid)


# ---------------------------------------------------------------------------
# Jacobi theorem


def _newton(G, J, x0, t):
    x = np.array(x0, float)
    g = G(x)
    for _ in range(NEWTON_MAX_ITER):
        norm = float(np.linalg.norm(g))
        if norm <= 1e-13 * max(1.0, float(np.linalg.norm(x))):
            return x
        jac = J(x)
        try:
            dx = -np.linalg.solve(jac, g)
        except np.linalg.LinAlgError:
            raise DegeneracyError(f"singular sensitivity matrix at t={t:.6g}", t) from None
        lam = 1.0
        for _ in range(NEWTON_MAX_HALVINGS + 1):
            trial = x + lam * dx
            with np.errstate(invalid="ignore"):
                g_trial = G(trial)
            if np.all(np.isfinite(g_trial)) and np.linalg.norm(g_trial) < norm:
                break
            lam *= 0.5
        else:
            if norm <= 1e-10 * max(1.0, float(np.linalg.norm(x))) or np.linalg.norm(dx) <= 1e-14 * max(1.0, np.linalg.norm(x)):
                return x
            raise RootFindError(f"Newton iteration stalled at t={t:.6g} (residual {norm:.3e})", t)
        if np.linalg.norm(lam * dx) <= 1e-15 * max(1.0, float(np.linalg.norm(x))):
            return trial
        x, g = trial, g_trial
    if float(np.linalg.norm(g)) <= 1e-10 * max(1.0, float(np.linalg.norm(x))):
        return x
    raise RootFindError(f"Newton did not converge in {NEWTON_MAX_ITER} iterations at t={t:.6g}", t)


def jacobi_solve(ci: CompleteIntegral, beta, alpha, t_grid, seed):
    """Roots ``x(t)`` of ``dPhi/dbeta(t, x; beta) = alpha`` continued along ``t_grid``.

    Returns ``(x, conj)`` with ``conj = dPhi/dx`` at each root.  A root where the
    sensitivity ``d^2 Phi / d beta dx`` is within ``1e-6`` of singular (in
    determinant or inverse determinant) raises ``DegeneracyError``.
    """
    beta = np.atleast_1d(np.asarray(beta, float))
    alpha = np.atleast_1d(np.asarray(alpha, float))
    if beta.size != ci.dim or alpha.size != ci.dim:
        raise ConfigurationError(f"need {ci.dim} constants beta and alpha")
    x = np.atleast_1d(np.asarray(seed, float)).copy()
    xs, conj = [], []
    for t in np.asarray(t_grid, float):
        G = lambda y, t=t: ci.grad_beta(t, y, beta) - alpha  # noqa: E731
        J = lambda y, t=t: ci.mixed(t, y, beta)  # noqa: E731
        x = _newton(G, J, x, t)
        det = abs(float(np.linalg.det(J(x))))
        if not np.isfinite(det) or det < DEGENERACY_TOL or det > 1.0 / DEGENERACY_TOL:
            raise DegeneracyError(f"sensitivity matrix degenerate at t={t:.6g} (|det| = {det:.3e})", t)
        xs.append(x.copy())
        conj.append(ci.grad_x(t, x, beta))
    return np.array(xs), np.array(conj)


def jacobi_recover_q(ci: CompleteIntegral, beta, alpha, t_grid, seed=None) -> Trajectory:
    """Trajectory from a q-representation complete integral: ``q`` from the root solve, ``p = dPhi/dq``."""
    if ci.representation != "q":
        raise ContractError("jacobi_recover_q needs a q-representation complete integral")
    seed = np.zeros(ci.dim) if seed is None else seed
    q, p = jacobi_solve(ci, beta, alpha, t_grid, seed)
    return Trajectory(np.asarray(t_grid, float), q, p, ci.name)


# ---------------------------------------------------------------------------
# bundled complete integrals


def free_particle_integral(m=1.0, dim=1, representation="q") -> CompleteIntegral:
    """``beta . x - |beta|^2 t / 2m`` (q) or ``beta . p - |p|^2 t / 2m`` (p)."""
    I = np.eye(dim)
    if representation == "q":
        return CompleteIntegral(
            Phi=lambda t, x, b: float(np.dot(b, x) - np.dot(b, b) * t / (2 * m)), dim=dim,
            dPhi_dbeta=lambda t, x, b: np.asarray(x) - np.asarray(b) * t / m,
            dPhi_dx=lambda t, x, b: np.asarray(b, float),
            d2Phi_dbeta_dx=lambda t, x, b: I, name="free_particle")
    return CompleteIntegral(
        Phi=lambda t, p, b: float(np.dot(b, p) - np.dot(p, p) * t / (2 * m)), dim=dim, representation="p",
        dPhi_dbeta=lambda t, p, b: np.asarray(p, float),
        dPhi_dx=lambda t, p, b: np.asarray(b) - np.asarray(p) * t / m,
        d2Phi_dbeta_dx=lambda t, p, b: I, name="free_particle")


def uniform_force_integral(F0, m=1.0, representation="q") -> CompleteIntegral:
    """One-dimensional constant force with ``beta = E``.

    q: ``-E t + (2m(E + F0 x))^{3/2} / (3 m F0)`` (branch ``p > 0``).
    p: ``-E t + E p / F0 - p^3 / (6 m F0)``.
    """
    if representation == "q":
        def root(x, E):
            return np.sqrt(2 * m * (E[0] + F0 * x[0]))

        return CompleteIntegral(
            Phi=lambda t, x, E: float(-E[0] * t + root(x, E) ** 3 / (3 * m * F0)), dim=1,
            dPhi_dbeta=lambda t, x, E: np.array([-t + root(x, E) / F0]),
            dPhi_dx=lambda t, x, E: np.array([root(x, E)]),
            d2Phi_dbeta_dx=lambda t, x, E: np.array([[m / root(x, E)]]), name="uniform_force")
    return CompleteIntegral(
        Phi=lambda t, p, E: float(-E[0] * t + E[0] * p[0] / F0 - p[0] ** 3 / (6 * m * F0)), dim=1,
        representation="p",
        dPhi_dbeta=lambda t, p, E: np.array([-t + p[0] / F0]),
        dPhi_dx=lambda t, p, E: np.array([E[0] / F0 - p[0] ** 2 / (2 * m * F0)]),
        d2Phi_dbeta_dx=lambda t, p, E: np.array([[1.0 / F0]]), name="uniform_force")


def oscillator_integral(m=1.0, omega=1.0, representation="q") -> CompleteIntegral:
    """One-dimensional oscillator with ``beta = E``.

    q (branch ``p > 0``): ``dPhi/dE = -t + arcsin(x / A) / omega``, ``A = sqrt(2E / m omega^2)``.
    p (branch ``q > 0``): ``dPhi/dE = -t - arcsin(p / B) / omega``, ``B = sqrt(2 m E)``.
    """
    def amp(E):
        return np.sqrt(2 * E / (m * omega**2))

    if representation == "q":
        def W(x, E):
            A, B = amp(E), np.sqrt(2 * m * E)
            u = x / A
            return 0.5 * A * B * (u * np.sqrt(1 - u * u) + np.arcsin(u))

        return CompleteIntegral(
            Phi=lambda t, x, E: float(-E[0] * t + W(x[0], E[0])), dim=1,
            dPhi_dbeta=lambda t, x, E: np.array([-t + np.arcsin(x[0] / amp(E[0])) / omega]),
            dPhi_dx=lambda t, x, E: np.array([np.sqrt(2 * m * E[0] - (m * omega * x[0]) ** 2)]),
            d2Phi_dbeta_dx=lambda t, x, E: np.array(
                [[1.0 / (omega * np.sqrt(amp(E[0]) ** 2 - x[0] ** 2))]]),
            name="harmonic_oscillator")

    def Wp(p, E):
        A, B = amp(E), np.sqrt(2 * m * E)
        v = p / B
        return -0.5 * A * B * (v * np.sqrt(1 - v * v) + np.arcsin(v))

    return CompleteIntegral(
        Phi=lambda t, p, E: float(-E[0] * t + Wp(p[0], E[0])), dim=1, representation="p",
        dPhi_dbeta=lambda t, p, E: np.array([-t - np.arcsin(p[0] / np.sqrt(2 * m * E[0])) / omega]),
        dPhi_dx=lambda t, p, E: np.array([-np.sqrt((2 * E[0] - p[0] ** 2 / m) / (m * omega**2))]),
        d2Phi_dbeta_dx=lambda t, p, E: np.array(
            [[-1.0 / (omega * np.sqrt(2 * m * E[0] - p[0] ** 2))]]),
        name="harmonic_oscillator")


def particle_velocities(model: SystemModel, S, t, q) -> np.ndarray:
    """Per-particle velocities ``v_i = grad_i S / m_i`` from a closed-form action.

    ``q`` holds configuration points of dimension ``N d``; the result has shape
    ``(n_points, N, d)`` where ``d`` is the per-particle dimension.
    """
    if model.masses is None:
        raise ContractError(f"model {model.name!r} carries no masses")
    d = int(model.params.get("d", 1)) if model.params else 1
    _, _, grad, _ = _analytic_parts(_parse_action(S, model.dim), model.dim, t, q)
    v = grad / np.asarray(model.masses, float)
    return v.reshape(v.shape[0], -1, d)
