"""INI-style run configuration with line-numbered diagnostics.

Sections ``[model]``, ``[grid]``, ``[time]``, ``[init]``, ``[output]``,
``[layers]`` and ``[dipole]``; ``key = value`` entries; expressions in double
quotes; ``#`` starts a comment outside quotes.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigurationError, ExprError, FormatError
from .expr import Expr, derivative, model_variables, parse_expression
from .grid import GridField, GridSpec
from .models import (DipoleParams, SystemModel, free_particle, harmonic_oscillator, hamiltonian_from_expression,
                     make_damped_particle, make_em_particle, make_nbody, make_potential_particle,
                     potential_from_expression, scalar_function, gradient_function, uniform_force)

SECTIONS = ("model", "grid", "time", "init", "output", "layers", "dipole")
MODEL_NAMES = ("free_particle", "harmonic_oscillator", "uniform_force", "potential", "damped",
               "hamiltonian", "em", "nbody")


@dataclass(frozen=True)
class Entry:
    value: str
    line: int
    quoted: bool


@dataclass
class Section:
    name: str
    line: int
    entries: dict = field(default_factory=dict)

    def __contains__(self, key):
        return key in self.entries

    def _get(self, key, default, required):
        if key in self.entries:
            return self.entries[key]
        if required:
            raise FormatError(f"[{self.name}] needs '{key}'", self.line)
        return default

    def str(self, key, default=None, required=False):
        e = self._get(key, None, required)
        return default if e is None else e.value

    def float(self, key, default=None, required=False, positive=False):
        e = self._get(key, None, required)
        if e is None:
            return default
        try:
            x = float(e.value)
        except ValueError:
            raise FormatError(f"'{key}' must be a number, got {e.value!r}", e.line) from None
        if not np.isfinite(x) or (positive and x <= 0):
            raise FormatError(f"'{key}' must be a finite{' positive' if positive else ''} number", e.line)
        return x

    def int(self, key, default=None, required=False, minimum=None):
        e = self._get(key, None, required)
        if e is None:
            return default
        try:
            x = int(e.value)
        except ValueError:
            raise FormatError(f"'{key}' must be an integer, got {e.value!r}", e.line) from None
        if minimum is not None and x < minimum:
            raise FormatError(f"'{key}' must be at least {minimum}", e.line)
        return x

    def floats(self, key, default=None, required=False, count=None):
        e = self._get(key, None, required)
        if e is None:
            return default
        try:
            xs = [float(v) for v in e.value.split(",")]
        except ValueError:
            raise FormatError(f"'{key}' must be a comma-separated list of numbers", e.line) from None
        if count is not None and len(xs) == 1:
            xs = xs * count
        if count is not None and len(xs) != count:
            raise FormatError(f"'{key}' needs {count} values, got {len(xs)}", e.line)
        return xs

    def bool(self, key, default=False):
        e = self._get(key, None, False)
        if e is None:
            return default
        v = e.value.lower()
        if v not in ("true", "false", "yes", "no", "1", "0"):
            raise FormatError(f"'{key}' must be true or false", e.line)
        return v in ("true", "yes", "1")

    def expr(self, key, names, required=False, constants=None) -> Optional[Expr]:
        e = self._get(key, None, required)
        if e is None:
            return None
        if not e.quoted:
            raise FormatError(f"expression '{key}' must be in double quotes", e.line)
        try:
            return parse_expression(e.value, names, constants)
        except ExprError as exc:
            raise FormatError(f"'{key}': {exc}", e.line) from None

    def line_of(self, key):
        return self.entries[key].line if key in self.entries else self.line


_LINE = re.compile(r'^\s*([A-Za-z_][A-Za-z_0-9]*)\s*=\s*(?:"([^"]*)"|([^"#]*?))\s*(?:#.*)?$')


def parse_config_text(text: str, source="<config>") -> "RunConfig":
    sections = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        m = re.fullmatch(r"\[\s*([A-Za-z_]+)\s*\]\s*(?:#.*)?", line)
        if m:
            name = m.group(1).lower()
            if name not in SECTIONS:
                raise FormatError(f"unknown section [{name}]", lineno)
            if name in sections:
                raise FormatError(f"duplicate section [{name}]", lineno)
            current = sections[name] = Section(name, lineno)
            continue
        if current is None:
            raise FormatError("entry before the first section header", lineno)
        m = _LINE.match(line)
        if m is None:
            raise FormatError(f"cannot parse {line!r} (expected key = value)", lineno)
        key = m.group(1)
        if key in current.entries:
            raise FormatError(f"duplicate key '{key}' in [{current.name}]", lineno)
        quoted = m.group(2) is not None
        current.entries[key] = Entry(m.group(2) if quoted else m.group(3), lineno, quoted)
    cfg = RunConfig(source, sections)
    cfg.validate()
    return cfg


def parse_config(path) -> "RunConfig":
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        return parse_config_text(text, str(path))
    except FormatError as exc:
        exc.args = (f"{path}: {exc.args[0]}",)
        raise


@dataclass
class RunConfig:
    source: str
    sections: dict

    def section(self, name) -> Section:
        return self.sections.get(name) or Section(name, 0)

    def has(self, name) -> bool:
        return name in self.sections

    @property
    def representation(self) -> str:
        return self.section("model").str("representation", "q")

    @property
    def dim(self) -> int:
        return self.section("model").int("dim", 1, minimum=1)

    def validate(self):
        """Eager checks so that every error points at a config line before any run starts."""
        if "model" not in self.sections:
            raise FormatError("missing [model] section", 1)
        mod = self.section("model")
        rep = mod.entries.get("representation")
        if rep is not None and rep.value not in ("q", "p"):
            raise FormatError("representation must be q or p", rep.line)
        self.build_model(audit=False)
        if self.has("grid"):
            self.grid()
        if self.has("time"):
            self.time()
        names = self.field_names()
        init = self.section("init")
        for key, entry in init.entries.items():
            if entry.quoted:
                init.expr(key, names)
        if self.has("layers"):
            lay = self.section("layers")
            w = lay.floats("weights")
            if w is not None and (abs(sum(w) - 1.0) > 1e-12 or min(w) < 0):
                raise FormatError("layer weights must be non-negative and sum to 1", lay.line_of("weights"))
        if self.has("dipole"):
            self.dipole_params()
            dip = self.section("dipole")
            for key, entry in dip.entries.items():
                if entry.quoted:
                    dip.expr(key, names)

    # -- pieces ---------------------------------------------------------

    def field_names(self):
        """Expression variables for initial data: grid coordinates and time."""
        dim = self.dim
        allv = model_variables(dim)
        if self.representation == "p":
            return {k: v for k, v in allv.items() if v.startswith("p") or k == "t"}
        return {k: v for k, v in allv.items() if not v.startswith("p")}

    def time(self):
        t = self.section("time")
        dt = t.float("dt", required=True, positive=True)
        t_end = t.float("t_end", required=True)
        t0 = t.float("t0", 0.0)
        if t_end <= t0:
            raise FormatError("t_end must exceed t0", t.line_of("t_end"))
        method = t.str("method", "rk4")
        if method not in ("rk4", "symplectic_leapfrog"):
            raise FormatError(f"unknown method {method!r}", t.line_of("method"))
        return dict(dt=dt, t_end=t_end, t0=t0, cadence=t.int("cadence", 1, minimum=1), method=method)

    def grid(self) -> GridSpec:
        g = self.section("grid")
        dim = self.dim
        mins = g.floats("min", required=True, count=dim)
        maxs = g.floats("max", required=True, count=dim)
        n = g.floats("n", required=True, count=dim)
        bnd = g.str("boundary", "outflow").split(",")
        bnd = [b.strip() for b in bnd] * (dim if len(bnd) == 1 else 1)
        try:
            return GridSpec(tuple(mins), tuple(maxs), tuple(int(k) for k in n), tuple(bnd),
                            "p" if self.representation == "p" else "q")
        except ConfigurationError as exc:
            raise FormatError(str(exc), g.line) from None

    def build_model(self, audit=True, seed=0) -> SystemModel:
        mod = self.section("model")
        name = mod.str("name", required=True)
        if name not in MODEL_NAMES:
            raise FormatError(f"unknown model {name!r}; choose from {', '.join(MODEL_NAMES)}", mod.line_of("name"))
        dim = self.dim
        m = mod.float("m", 1.0, positive=True)
        qnames = {k: v for k, v in model_variables(dim).items() if not v.startswith("p")}
        kw = dict(audit=audit, seed=seed) if audit else dict(audit=False)
        try:
            if name == "free_particle":
                return free_particle(m, dim)
            if name == "harmonic_oscillator":
                return harmonic_oscillator(m, mod.float("omega", 1.0, positive=True), dim)
            if name == "uniform_force":
                return uniform_force(mod.float("force", required=True), m, dim)
            if name in ("potential", "damped"):
                e = mod.expr("potential", qnames, required=True)
                U, gU = scalar_function(e, dim), gradient_function(e, dim)
                td = e.depends_on("t")
                if name == "potential":
                    return make_potential_particle(m, U, gU, dim, time_dependent=td, **kw)
                return make_damped_particle(m, U, gU, mod.float("beta", required=True), dim,
                                            time_dependent=td, **kw)
            if name == "hamiltonian":
                e = mod.entries.get("hamiltonian")
                if e is None or not e.quoted:
                    raise FormatError("[model] needs a quoted 'hamiltonian'", mod.line)
                try:
                    return hamiltonian_from_expression(e.value, dim, **kw)
                except ExprError as exc:
                    raise FormatError(f"'hamiltonian': {exc}", e.line) from None
            if name == "em":
                if dim != 3:
                    raise FormatError("the em model is three dimensional (dim = 3)", mod.line_of("dim"))
                phi = mod.expr("phi", qnames)
                A = [mod.expr(f"A{i + 1}", qnames) for i in range(3)]
                return _em_from_expressions(m, mod.float("e", 1.0), mod.float("c", 1.0, positive=True), phi, A)
            if name == "nbody":
                masses = mod.floats("masses", required=True)
                d = mod.int("d", 1, minimum=1)
                if len(masses) * d != dim:
                    raise FormatError(f"dim must equal len(masses) * d = {len(masses) * d}", mod.line_of("dim"))
                U, gU, td = potential_from_expression(mod.str("potential", required=True), dim)
                return make_nbody(masses, U, gU, d, time_dependent=td, **kw)
        except FormatError:
            raise
        except ConfigurationError as exc:
            raise FormatError(str(exc), mod.line) from None
        raise AssertionError(name)

    def init_field(self, key, spec: GridSpec, t=0.0, components=None, required=False) -> Optional[GridField]:
        init = self.section("init")
        if key not in init:
            if required:
                raise FormatError(f"[init] needs '{key}'", init.line)
            return None
        names = self.field_names()
        base = init.expr(key, names)
        return _field_from_expr(base, spec, t, key, components)

    def init_vector(self, key, spec: GridSpec, t=0.0) -> Optional[GridField]:
        """Vector initial data from ``key1..keys`` (or ``key`` in one dimension)."""
        init = self.section("init")
        names = self.field_names()
        keys = [key] if spec.dim == 1 and key in init else [f"{key}{i + 1}" for i in range(spec.dim)]
        if not all(k in init for k in keys):
            return None
        cols = [_field_from_expr(init.expr(k, names), spec, t, k).values[0] for k in keys]
        return GridField(spec, np.stack(cols), t, key)

    def dipole_params(self) -> DipoleParams:
        d = self.section("dipole")
        try:
            return DipoleParams(m=d.float("m", 1.0), e=d.float("e", 0.0), c=d.float("c", 1.0),
                                gamma=d.float("gamma", 1.0), spin_mag=d.float("spin_mag", 0.5))
        except ConfigurationError as exc:
            raise FormatError(str(exc), d.line) from None

    def output_dir(self, override=None) -> Path:
        if override is not None:
            return Path(override)
        out = self.section("output")
        return Path(out.str("dir", "out"))


def _field_from_expr(e: Expr, spec: GridSpec, t, name, components=None) -> GridField:
    from .models import _bindings

    nodes = spec.nodes
    if spec.axes_kind == "p":
        b = _bindings(t, np.zeros_like(nodes), nodes, spec.dim)
    else:
        b = _bindings(t, nodes, None, spec.dim)
    vals = np.broadcast_to(np.asarray(e.evaluate(b), float), (spec.size,)).reshape(spec.shape)
    if components is not None:
        vals = np.broadcast_to(vals, (components,) + spec.shape).copy()
    return GridField(spec, vals, t, name)


def _em_from_expressions(m, e, c, phi, A):
    dim = 3
    zero = parse_expression("0")
    phi = phi or zero
    A = [a or zero for a in A]
    phi_f, gphi = scalar_function(phi, dim), gradient_function(phi, dim)
    A_fs = [scalar_function(a, dim) for a in A]
    gA = [gradient_function(a, dim) for a in A]
    dAt = [scalar_function(derivative(a, "t"), dim) for a in A]

    def A_vec(t, q):
        return np.stack([np.broadcast_to(f(t, q), np.shape(q)[:-1]) for f in A_fs], axis=-1)

    def jac(t, q):
        # jac[..., i, j] = dA_j / dq_i
        return np.stack([np.broadcast_to(g(t, q), np.shape(q)) for g in gA], axis=-1)

    def dA_dt(t, q):
        return np.stack([np.broadcast_to(f(t, q), np.shape(q)[:-1]) for f in dAt], axis=-1)

    return make_em_particle(m, e, c, phi=phi_f, A=A_vec, grad_phi=gphi, dA_dt=dA_dt, jac_A=jac)
