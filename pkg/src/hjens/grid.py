"""Rectilinear grids, sampled fields, interpolation and finite differences."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError

BOUNDARIES = ("periodic", "outflow")


@dataclass(frozen=True)
class GridSpec:
    """Uniform node grid.  Spacing ``h = (max - min) / (n - 1)`` on every axis.

    Periodic axes identify node ``n`` with node ``0``, so their period is
    ``n * h`` (the node at ``max`` is one spacing short of wrapping).
    """

    mins: tuple
    maxs: tuple
    shape: tuple
    boundary: tuple = ()
    axes_kind: str = "q"

    def __post_init__(self):
        mins = tuple(float(v) for v in np.atleast_1d(self.mins))
        maxs = tuple(float(v) for v in np.atleast_1d(self.maxs))
        shape = tuple(int(v) for v in np.atleast_1d(self.shape))
        if not (len(mins) == len(maxs) == len(shape)) or not shape:
            raise ConfigurationError("grid mins, maxs and shape must have equal, non-zero length")
        boundary = self.boundary
        if isinstance(boundary, str):
            boundary = (boundary,) * len(shape)
        boundary = tuple(boundary) or ("outflow",) * len(shape)
        if len(boundary) != len(shape):
            raise ConfigurationError("one boundary condition per axis is required")
        for b in boundary:
            if b not in BOUNDARIES:
                raise ConfigurationError(f"unknown boundary condition {b!r}")
        for lo, hi, n in zip(mins, maxs, shape):
            if not hi > lo:
                raise ConfigurationError(f"grid axis needs max > min, got [{lo}, {hi}]")
            if n < 3:
                raise ConfigurationError(f"grid axis needs at least 3 nodes, got {n}")
        if self.axes_kind not in ("q", "p"):
            raise ConfigurationError(f"axes must be 'q' or 'p', got {self.axes_kind!r}")
        object.__setattr__(self, "mins", mins)
        object.__setattr__(self, "maxs", maxs)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "boundary", boundary)

    @classmethod
    def uniform(cls, lo, hi, n, dim=1, boundary="outflow", axes_kind="q"):
        return cls((lo,) * dim, (hi,) * dim, (n,) * dim, boundary, axes_kind)

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def h(self) -> np.ndarray:
        return np.array([(hi - lo) / (n - 1) for lo, hi, n in zip(self.mins, self.maxs, self.shape)])

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    @cached_property
    def axes(self) -> list:
        return [lo + np.arange(n) * h for lo, n, h in zip(self.mins, self.shape, self.h)]

    @cached_property
    def nodes(self) -> np.ndarray:
        """Node coordinates, shape ``(size, dim)``, row-major (last axis fastest)."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def periodic(self, axis) -> bool:
        return self.boundary[axis] == "periodic"

    def contains(self, points, tol=0.0) -> np.ndarray:
        pts = np.asarray(points, float)
        ok = np.ones(pts.shape[:-1], bool)
        for a in range(self.dim):
            if not self.periodic(a):
                ok &= (pts[..., a] >= self.mins[a] - tol) & (pts[..., a] <= self.maxs[a] + tol)
        return ok

    def with_axes_kind(self, kind):
        return replace(self, axes_kind=kind)


@dataclass
class GridField:
    """Scalar or vector quantity sampled on a grid.

    ``values`` has shape ``(components, *spec.shape)``; flattened it is the
    component-major, row-major layout used by the snapshot files.  ``invalid``
    marks nodes whose values must not be trusted (extrapolated, uncovered,
    singular); such nodes may hold non-finite numbers.
    """

    spec: GridSpec
    values: np.ndarray
    t: float = 0.0
    name: str = ""
    invalid: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape == self.spec.shape:
            vals = vals[None]
        if vals.shape[1:] != self.spec.shape:
            raise ConfigurationError(
                f"field values of shape {vals.shape} do not match grid {self.spec.shape}")
        self.values = vals
        if self.invalid is not None:
            self.invalid = np.asarray(self.invalid, bool).reshape(self.spec.shape)
        bad = ~np.isfinite(vals)
        if self.invalid is not None:
            bad &= ~self.invalid[None]
        if np.any(bad):
            raise ConfigurationError(f"field {self.name!r} has non-finite values at unflagged nodes")

    @classmethod
    def from_function(cls, spec, f, t=0.0, name="", components=None):
        """Sample ``f(nodes)`` (nodes of shape ``(size, dim)``) onto ``spec``."""
        raw = np.asarray(f(spec.nodes), float)
        if raw.ndim == 0:
            raw = np.full(spec.size, float(raw))
        if raw.ndim == 1:
            vals = raw.reshape((1,) + spec.shape)
        else:
            vals = np.moveaxis(raw, -1, 0).reshape((raw.shape[-1],) + spec.shape)
        if components is not None and vals.shape[0] != components:
            vals = np.broadcast_to(vals, (components,) + spec.shape).copy()
        return cls(spec, vals, t, name)

    @property
    def components(self) -> int:
        return self.values.shape[0]

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def node_values(self) -> np.ndarray:
        """Values as ``(size, components)``."""
        return self.values.reshape(self.components, -1).T

    def valid_mask(self) -> np.ndarray:
        return np.ones(self.spec.shape, bool) if self.invalid is None else ~self.invalid

    def replace(self, **changes) -> "GridField":
        return replace(self, **changes)

    def at(self, points, order=4):
        return interpolate(self.spec, self.values, points, order)


# ---------------------------------------------------------------------------
# interpolation


def _axis_stencil(x, lo, h, n, npts, periodic):
    xi = (x - lo) / h
    if npts % 2 == 0:
        i0 = np.floor(xi).astype(int) - (npts // 2 - 1)
    else:
        i0 = np.floor(xi + 0.5).astype(int) - npts // 2
    if not periodic:
        i0 = np.clip(i0, 0, n - npts)
    u = xi - i0
    ks = np.arange(npts)
    w = np.ones(x.shape + (npts,))
    for k in range(npts):
        for j in range(npts):
            if j != k:
                w[..., k] *= (u - j) / (k - j)
    idx = i0[..., None] + ks
    if periodic:
        idx %= n
    return idx, w


def interpolate(spec: GridSpec, values, points, order=4) -> np.ndarray:
    """Tensor-product Lagrange interpolation of grid values at ``points``.

    ``order`` is the number of stencil nodes per axis (4 = cubic, 2 = linear),
    reduced on axes with fewer nodes.  Outside an outflow axis the boundary
    stencil is extrapolated.  Returns ``(N, components)``.
    """
    vals = np.asarray(values, float)
    if vals.shape == spec.shape:
        vals = vals[None]
    pts = np.asarray(points, float).reshape(-1, spec.dim)
    n_pts = pts.shape[0]
    s = spec.dim
    idxs, ws = [], []
    for a in range(s):
        npts = min(order, spec.shape[a])
        idx, w = _axis_stencil(pts[:, a], spec.mins[a], spec.h[a], spec.shape[a], npts, spec.periodic(a))
        shape = [n_pts] + [1] * s
        shape[1 + a] = npts
        idxs.append(idx.reshape(shape))
        ws.append(w.reshape(shape))
    weight = ws[0]
    for w in ws[1:]:
        weight = weight * w
    gathered = vals[(slice(None),) + tuple(idxs)]
    out = np.sum(gathered * weight[None], axis=tuple(range(2, 2 + s)))
    return out.T


# ---------------------------------------------------------------------------
# finite differences


def gradient(spec: GridSpec, values) -> np.ndarray:
    """Second-order central differences, one-sided second order at outflow edges.

    ``values`` of shape ``(c, *shape)`` (or ``shape``) gives ``(c, s, *shape)``.
    """
    vals = np.asarray(values, float)
    scalar = vals.shape == spec.shape
    if scalar:
        vals = vals[None]
    out = np.empty((vals.shape[0], spec.dim) + spec.shape)
    for a in range(spec.dim):
        ax = a + 1
        h = spec.h[a]
        if spec.periodic(a):
            out[:, a] = (np.roll(vals, -1, axis=ax) - np.roll(vals, 1, axis=ax)) / (2 * h)
        else:
            out[:, a] = np.gradient(vals, h, axis=ax, edge_order=2)
    return out[0] if scalar else out


def interior_mask(spec: GridSpec, width=1) -> np.ndarray:
    """True away from outflow edges (``width`` nodes stripped per side)."""
    mask = np.ones(spec.shape, bool)
    for a in range(spec.dim):
        if spec.periodic(a):
            continue
        sl = [slice(None)] * spec.dim
        sl[a] = slice(0, width)
        mask[tuple(sl)] = False
        sl[a] = slice(spec.shape[a] - width, None)
        mask[tuple(sl)] = False
    return mask


def nearest_node(spec: GridSpec, point, tol=1e-9):
    """Index tuple of the node at ``point``, or ``None`` if no node lies within ``tol * h``."""
    p = np.asarray(point, float).ravel()
    idx = []
    for a in range(spec.dim):
        xi = (p[a] - spec.mins[a]) / spec.h[a]
        i = int(np.rint(xi))
        if abs(xi - i) > tol or not 0 <= i < spec.shape[a]:
            return None
        idx.append(i)
    return tuple(idx)


def as_spec(spec_or_axes: GridSpec | Sequence) -> GridSpec:
    if isinstance(spec_or_axes, GridSpec):
        return spec_or_axes
    raise ConfigurationError("expected a GridSpec")
