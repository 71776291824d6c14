"""Partial ensembles on layers: turning surfaces, flux matching and mixing."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, ContractError
from .grid import GridField, GridSpec, gradient
from .hj import momentum_from_action
from .lagrangian import Trajectory
from .models import SystemModel

WEIGHT_TOL = 1e-12


@dataclass
class Layer:
    """One single-valued branch: density plus velocity (or an action to derive it from)."""

    index: int
    rho: GridField
    v: Optional[GridField] = None
    S: Optional[GridField] = None
    model: Optional[SystemModel] = None

    def __post_init__(self):
        if self.v is None and self.S is None:
            raise ConfigurationError("a layer needs a velocity field or an action field")
        other = self.v if self.v is not None else self.S
        if other.spec != self.rho.spec or other.t != self.rho.t:
            raise ContractError("layer fields must share one grid and one time")
        valid = self.rho.valid_mask()
        if np.any(self.rho.values[0][valid] < 0):
            raise ConfigurationError(f"layer {self.index} has negative density")

    @property
    def spec(self) -> GridSpec:
        return self.rho.spec

    @property
    def invalid(self) -> np.ndarray:
        bad = ~self.rho.valid_mask()
        other = self.v if self.v is not None else self.S
        return bad | ~other.valid_mask()

    def velocity(self) -> GridField:
        if self.v is not None:
            return self.v
        p = momentum_from_action(self.S)
        if self.model is None:
            raise ContractError("velocity from an action field needs the layer's model")
        vals = np.where(np.isfinite(p.values), p.values, 0.0)
        v = self.model.velocity_map(self.S.t, self.spec.nodes, vals.reshape(self.spec.dim, -1).T)
        return GridField(self.spec, np.asarray(v).T.reshape(p.values.shape), self.S.t, "v", invalid=p.invalid)

    def flux(self) -> np.ndarray:
        """``j = rho v`` with shape ``(s, *shape)``."""
        return self.rho.values[0][None] * self.velocity().values


@dataclass
class LayerSet:
    layers: list
    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, float).ravel()
        validate_weights(self.weights, len(self.layers))
        specs = {layer.spec for layer in self.layers}
        times = {layer.rho.t for layer in self.layers}
        if len(specs) != 1 or len(times) != 1:
            raise ContractError("layers of a set must share one grid and one time")

    @property
    def spec(self) -> GridSpec:
        return self.layers[0].spec


def validate_weights(weights, n_layers):
    w = np.asarray(weights, float).ravel()
    if w.size != n_layers:
        raise ContractError(f"{w.size} weights for {n_layers} layers")
    if np.any(w < 0) or abs(w.sum() - 1.0) > WEIGHT_TOL:
        raise ContractError(f"weights must be non-negative and sum to 1 (sum = {w.sum()!r})")
    return w


# ---------------------------------------------------------------------------
# turning surfaces


@dataclass
class TurningSurface:
    """Flagged cells where a velocity component vanishes.

    ``location`` and ``normal`` have shape ``(n, s)``; ``component`` and
    ``axis`` give the vanishing velocity component and the grid axis along
    which it was located; ``speed`` is the interpolated ``|v_c|`` there.
    """

    location: np.ndarray
    normal: np.ndarray
    component: np.ndarray
    axis: np.ndarray
    speed: np.ndarray
    pair: tuple = (0, 1)

    def __len__(self):
        return self.location.shape[0]

    @property
    def empty(self) -> bool:
        return len(self) == 0


def _unit(vecs):
    norm = np.linalg.norm(vecs, axis=-1, keepdims=True)
    return np.divide(vecs, norm, out=np.zeros_like(vecs), where=norm > 0)


def detect_turning_surface(layer: Layer, pair=(0, 1)) -> TurningSurface:
    """Cells where a velocity component changes sign or runs into the layer's edge.

    A sign change between adjacent valid nodes is located by linear
    interpolation.  Where a valid node borders an invalid one (the branch ends)
    the zero of the linear extrapolation of ``v_c^2`` from the last two valid
    nodes is used, provided it falls within one cell; ``v^2`` stays smooth
    through a turning point while ``v`` itself does not.
    """
    v = layer.velocity()
    spec = layer.spec
    invalid = layer.invalid | ~v.valid_mask()
    vals = np.where(invalid[None], np.nan, v.values)
    grads = gradient(spec, np.where(invalid[None], 0.0, v.values))
    nodes = spec.nodes.reshape(spec.shape + (spec.dim,))
    locs, normals, comps, axes, speeds = [], [], [], [], []
    for c in range(v.components):
        vc = vals[c]
        for a in range(spec.dim):
            n = spec.shape[a]
            lo = [slice(None)] * spec.dim
            hi = [slice(None)] * spec.dim
            lo[a], hi[a] = slice(0, n - 1), slice(1, n)
            v0, v1 = vc[tuple(lo)], vc[tuple(hi)]
            # half-open so a zero sitting on a node is counted once
            cross = np.isfinite(v0) & np.isfinite(v1) & (((v0 < 0) & (v1 >= 0)) | ((v0 > 0) & (v1 <= 0)))
            for idx in zip(*np.nonzero(cross)):
                frac = v0[idx] / (v0[idx] - v1[idx])
                base = nodes[idx]
                loc = base.copy()
                loc[a] += frac * spec.h[a]
                g = grads[c, :][(slice(None),) + idx]
                locs.append(loc)
                normals.append(_unit(g))
                comps.append(c)
                axes.append(a)
                speeds.append(0.0)
            # branch edges: valid node next to an invalid one
            for direction in (+1, -1):
                inner = np.isfinite(v0) & ~np.isfinite(v1) if direction > 0 else ~np.isfinite(v0) & np.isfinite(v1)
                for idx in zip(*np.nonzero(inner)):
                    i_last = idx[a] if direction > 0 else idx[a] + 1
                    i_prev = i_last - direction
                    if not 0 <= i_prev < n:
                        continue
                    last = list(idx)
                    last[a] = i_last
                    prev = list(idx)
                    prev[a] = i_prev
                    w_last, w_prev = vc[tuple(last)] ** 2, vc[tuple(prev)] ** 2
                    if not np.isfinite(w_prev) or w_prev <= w_last:
                        continue
                    # steps of h beyond the last valid node where v_c^2 reaches zero
                    reach = w_last / (w_prev - w_last)
                    if reach > 2.0:
                        continue
                    loc = nodes[tuple(last)].copy()
                    loc[a] += direction * reach * spec.h[a]
                    normal = np.zeros(spec.dim)
                    normal[a] = direction
                    locs.append(loc)
                    normals.append(normal)
                    comps.append(c)
                    axes.append(a)
                    speeds.append(0.0)
    s = spec.dim
    return TurningSurface(
        np.array(locs, float).reshape(-1, s), np.array(normals, float).reshape(-1, s),
        np.array(comps, int), np.array(axes, int), np.array(speeds, float), tuple(pair))


# ---------------------------------------------------------------------------
# flux matching and mixing


@dataclass
class FluxReport:
    location: np.ndarray
    j_n: np.ndarray
    j_k: np.ndarray
    mismatch: np.ndarray
    max_mismatch: float
    asymmetry: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.max_mismatch < self.tol)

    def __str__(self):
        verdict = "matched" if self.passed else "MISMATCH"
        return (f"{verdict}: max |j_n + j_k| = {self.max_mismatch:.3e} (tol {self.tol:g}), "
                f"flux magnitude ratio {self.asymmetry:.6g} over {len(self.mismatch)} cells")


def check_flux_matching(layer_n: Layer, layer_k: Layer, surface: TurningSurface, tol=1e-3) -> FluxReport:
    """Normal fluxes of two layers at the nodes nearest each surface cell that are valid in both.

    The two branches are glued when ``j_perp(n) + j_perp(k)`` vanishes there.
    """
    if layer_n.spec != layer_k.spec or layer_n.rho.t != layer_k.rho.t:
        raise ContractError("flux matching needs layers on one grid at one time")
    spec = layer_n.spec
    ok = ~(layer_n.invalid | layer_k.invalid)
    nodes = spec.nodes
    valid_idx = np.flatnonzero(ok.ravel())
    if valid_idx.size == 0 or surface.empty:
        empty = np.zeros(0)
        return FluxReport(np.zeros((0, spec.dim)), empty, empty, empty, 0.0, 1.0, tol)
    jn = layer_n.flux().reshape(spec.dim, -1)
    jk = layer_k.flux().reshape(spec.dim, -1)
    out_n, out_k, where = [], [], []
    for loc, normal in zip(surface.location, surface.normal):
        d = np.linalg.norm(nodes[valid_idx] - loc, axis=-1)
        i = valid_idx[int(np.argmin(d))]
        out_n.append(float(normal @ jn[:, i]))
        out_k.append(float(normal @ jk[:, i]))
        where.append(nodes[i])
    out_n, out_k = np.array(out_n), np.array(out_k)
    mismatch = np.abs(out_n + out_k)
    big = np.maximum(np.abs(out_n), np.abs(out_k))
    small = np.minimum(np.abs(out_n), np.abs(out_k))
    ratio = float(np.max(np.divide(big, small, out=np.full_like(big, np.inf), where=small > 0))) \
        if np.any(big > 0) else 1.0
    return FluxReport(np.array(where), out_n, out_k, mismatch, float(mismatch.max()), ratio, tol)


def mix_density(layers: Sequence[Layer], weights) -> GridField:
    """``rho = sum_n w_n rho_n``; nodes invalid in any layer stay invalid."""
    w = validate_weights(weights, len(layers))
    spec = layers[0].spec
    total = np.zeros(spec.shape)
    invalid = np.zeros(spec.shape, bool)
    for wn, layer in zip(w, layers):
        if layer.spec != spec:
            raise ContractError("layers live on different grids")
        bad = layer.invalid
        invalid |= bad
        total += wn * np.where(bad, 0.0, layer.rho.values[0])
    total[invalid] = np.nan
    return GridField(spec, total, layers[0].rho.t, "rho", invalid=invalid if invalid.any() else None)


def total_flux(layers: Sequence[Layer], weights) -> GridField:
    """``j = sum_n w_n rho_n v_n``."""
    w = validate_weights(weights, len(layers))
    spec = layers[0].spec
    total = np.zeros((spec.dim,) + spec.shape)
    invalid = np.zeros(spec.shape, bool)
    for wn, layer in zip(w, layers):
        bad = layer.invalid
        invalid |= bad
        total += wn * np.where(bad[None], 0.0, layer.flux())
    total[:, invalid] = np.nan
    return GridField(spec, total, layers[0].rho.t, "j", invalid=invalid if invalid.any() else None)


# ---------------------------------------------------------------------------
# bundled oscillator layers


def build_oscillator_layers(E, m, omega, grid: GridSpec) -> LayerSet:
    """Forward and backward branches of a one-dimensional oscillator at energy ``E``.

    ``v = +-sqrt(2(E - m omega^2 x^2 / 2) / m)`` and ``rho = omega / (pi |v|)`` on
    each branch, so the equal-weight mixture is ``1 / (pi sqrt(A^2 - x^2))`` and
    integrates to one.  Nodes within one cell of the turning points, and
    outside them, are flagged.
    """
    if grid.dim != 1:
        raise ConfigurationError("oscillator layers need a one-dimensional grid")
    if not (E > 0 and m > 0 and omega > 0):
        raise ConfigurationError("oscillator layers need E, m and omega positive")
    A = np.sqrt(2 * E / (m * omega**2))
    if grid.mins[0] > -A or grid.maxs[0] < A:
        raise ConfigurationError(f"grid [{grid.mins[0]}, {grid.maxs[0]}] does not cover [-{A}, {A}]")
    x = grid.axes[0]
    h = grid.h[0]
    invalid = np.abs(x) >= A - h
    speed = np.full_like(x, np.nan)
    speed[~invalid] = np.sqrt(2 * (E - 0.5 * m * omega**2 * x[~invalid] ** 2) / m)
    rho = omega / (np.pi * speed)
    layers = []
    for n, sign in enumerate((+1.0, -1.0)):
        layers.append(Layer(
            n, GridField(grid, rho, 0.0, "rho", invalid=invalid),
            GridField(grid, sign * speed, 0.0, "v", invalid=invalid)))
    return LayerSet(layers, [0.5, 0.5])


def oscillator_density(x, A):
    """Closed-form equal-weight mixture ``1 / (pi sqrt(A^2 - x^2))``."""
    x = np.asarray(x, float)
    return 1.0 / (np.pi * np.sqrt(A * A - x * x))


# ---------------------------------------------------------------------------
# trajectories split into layers


@dataclass
class LayerSegment:
    start: int
    stop: int
    signs: tuple


def split_into_layers(traj: Trajectory, model: SystemModel) -> list:
    """Cut a trajectory wherever a velocity component changes sign.

    Each segment ``[start, stop)`` indexes trajectory samples and carries the
    sign pattern of the velocity on it (the layer it travels on).
    """
    v = np.asarray(model.velocity_map(traj.t[:, None], traj.q, traj.p), float).reshape(traj.q.shape)
    signs = np.sign(v).astype(int)
    # zeros inherit the previous sign so an exact turning sample does not open a layer
    for k in range(1, len(signs)):
        signs[k] = np.where(signs[k] == 0, signs[k - 1], signs[k])
    segments = []
    start = 0
    for k in range(1, len(signs)):
        if np.any(signs[k] != signs[k - 1]):
            segments.append(LayerSegment(start, k, tuple(int(s) for s in signs[start])))
            start = k
    segments.append(LayerSegment(start, len(signs), tuple(int(s) for s in signs[start])))
    return segments
