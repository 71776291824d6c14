"""Command-line entry point: ``hjens <command> --config run.ini --out dir``.

Exit codes: 0 success, 1 failed verification, 2 configuration error,
3 numerical failure (blow-up, caustic before the requested end time).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import CausticError, ConfigurationError, HJError, NumericalError
from .grid import GridField, GridSpec

COMMANDS = {
    "lagrangian": "integrate an ensemble launched from the grid nodes",
    "eulerian": "evolve momentum (and density) fields on a configuration grid",
    "hj": "build the action field by characteristics",
    "prep": "evolve coordinate (and density) fields on a momentum grid",
    "layers": "oscillator branches, turning surfaces and flux matching",
    "dipole": "spin fields of a magnetic dipole ensemble",
    "verify": "run the acceptance checks and print a pass/fail table",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hjens", description="Hamilton-Jacobi ensemble toolkit")
    sub = parser.add_subparsers(dest="command", metavar="command")
    parser.commands = {}
    for name, help_text in COMMANDS.items():
        p = parser.commands[name] = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="run configuration (INI)")
        p.add_argument("--out", help="output directory (overrides [output] dir)")
        p.add_argument("--seed", type=int, default=0, help="seed for sample-point audits")
        p.add_argument("--quiet", action="store_true", help="suppress progress messages")
    return parser


class _Printer:
    def __init__(self, quiet):
        self.quiet = quiet

    def __call__(self, msg):
        if not self.quiet:
            print(msg)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    say = _Printer(args.quiet)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        if args.command == "verify":
            return _cmd_verify(args, say)
        usage = parser.commands[args.command]
        if not args.config:
            usage.print_usage(sys.stderr)
            print(f"hjens {args.command}: error: --config is required", file=sys.stderr)
            return 2
        from .config import parse_config

        try:
            cfg = parse_config(args.config)
        except ConfigurationError:
            usage.print_usage(sys.stderr)
            raise
        out = cfg.output_dir(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return _HANDLERS[args.command](cfg, out, args, say)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except HJError as exc:  # pragma: no cover - every error is one of the two kinds
        print(f"error: {exc}", file=sys.stderr)
        return 2


# ---------------------------------------------------------------------------
# shared pieces


def _initial_momentum(cfg, spec: GridSpec) -> GridField:
    """``p0`` from ``[init] p0`` (or ``p01..p0s``), else ``grad S0``, else zero."""
    p0 = cfg.init_vector("p0", spec)
    if p0 is not None:
        return p0
    S0 = _action_expr(cfg)
    if S0 is None:
        return GridField(spec, np.zeros((spec.dim,) + spec.shape), 0.0, "p")
    from .expr import derivative
    from .models import _bindings

    b = _bindings(cfg.time()["t0"], spec.nodes, None, spec.dim)
    cols = [np.broadcast_to(np.asarray(derivative(S0, f"q{i + 1}").evaluate(b), float), (spec.size,))
            for i in range(spec.dim)]
    return GridField(spec, np.stack(cols).reshape((spec.dim,) + spec.shape), cfg.time()["t0"], "p")


def _action_expr(cfg):
    init = cfg.section("init")
    return init.expr("S0", cfg.field_names()) if "S0" in init else None


def _snapshot_name(stem, k):
    return f"{stem}_{k:04d}.hjfield"


def _write_log(out: Path, lines):
    (out / "run.log").write_text("".join(f"{ln}\n" for ln in lines))


# ---------------------------------------------------------------------------
# commands


def _cmd_lagrangian(cfg, out, args, say):
    from .io import write_trajectories
    from .lagrangian import EnsembleCloud, integrate_ensemble

    model = cfg.build_model(seed=args.seed)
    spec = cfg.grid()
    tm = cfg.time()
    p0 = _initial_momentum(cfg, spec)
    cloud = EnsembleCloud(tm["t0"], spec.nodes, p0.node_values())
    _, trajs = integrate_ensemble(model, cloud, tm["dt"], tm["t_end"], tm["method"], tm["cadence"], True)
    path = write_trajectories(out / "trajectories.hjtraj", trajs)
    say(f"{len(trajs)} trajectories written to {path}")
    return 0


def _cmd_eulerian(cfg, out, args, say):
    from .eulerian import run_eulerian
    from .io import write_field_snapshot

    model = cfg.build_model(seed=args.seed)
    spec = cfg.grid()
    tm = cfg.time()
    p0 = _initial_momentum(cfg, spec).replace(t=tm["t0"])
    rho0 = cfg.init_field("rho0", spec, tm["t0"])
    sec = cfg.section("time")
    opts = dict(cadence=tm["cadence"], auto_reduce=sec.bool("auto_reduce", False),
                threshold=sec.float("threshold", 1.0, positive=True),
                density_scheme=cfg.section("output").str("density_scheme", "upwind"))
    try:
        run = run_eulerian(model, p0, tm["t_end"], tm["dt"], rho0, **opts)
        caustic = None
    except CausticError as exc:
        run, caustic = exc.run, exc
    for k, p in enumerate(run.momentum):
        fields = [p.replace(name="p")]
        if run.density:
            fields.append(run.density[k].replace(name="rho"))
        write_field_snapshot(out / _snapshot_name("eulerian", k), fields)
    _write_log(out, run.log)
    if caustic is not None:
        raise CausticError(f"caustic at t={caustic.time:.6g} before t_end={tm['t_end']:g}", caustic.time)
    say(f"{len(run.momentum)} snapshots written to {out}")
    return 0


def _cmd_hj(cfg, out, args, say):
    from .expr import derivative
    from .hj import solve_hj_characteristics
    from .io import write_field_snapshot
    from .models import _bindings

    model = cfg.build_model(seed=args.seed)
    spec = cfg.grid()
    tm = cfg.time()
    S0e = _action_expr(cfg)
    if S0e is None:
        raise ConfigurationError("[init] needs a quoted 'S0' for the hj command")
    S0 = cfg.init_field("S0", spec, tm["t0"])
    parts = [derivative(S0e, f"q{i + 1}") for i in range(spec.dim)]

    def grad_S0(q):
        b = _bindings(tm["t0"], q, None, spec.dim)
        return np.stack([np.broadcast_to(np.asarray(d.evaluate(b), float), q.shape[:-1]) for d in parts], -1)

    try:
        action = solve_hj_characteristics(model, S0, tm["dt"], tm["t_end"], tm["cadence"], grad_S0=grad_S0)
        caustic = None
    except CausticError as exc:
        action, caustic = getattr(exc, "action", None), exc
    if action is not None:
        for k, S in enumerate(action.snapshots):
            write_field_snapshot(out / _snapshot_name("hj", k), S.replace(name="S"))
    if caustic is not None:
        raise CausticError(f"caustic at t={caustic.time:.6g} before t_end={tm['t_end']:g}", caustic.time)
    say(f"{len(action)} action snapshots written to {out}")
    return 0


def _cmd_prep(cfg, out, args, say):
    from .io import write_field_snapshot
    from .prep import run_prep

    if cfg.representation != "p":
        raise ConfigurationError("the prep command needs representation = p in [model]")
    model = cfg.build_model(seed=args.seed)
    spec = cfg.grid()
    tm = cfg.time()
    q0 = cfg.init_vector("q0", spec, tm["t0"])
    if q0 is None:
        raise ConfigurationError("[init] needs a quoted 'q0' (or q01..q0s) for the prep command")
    rho0 = cfg.init_field("rho0", spec, tm["t0"])
    sec = cfg.section("time")
    try:
        run = run_prep(model, q0, tm["t_end"], tm["dt"], rho0, cadence=tm["cadence"],
                       auto_reduce=sec.bool("auto_reduce", False), threshold=sec.float("threshold", 1.0))
        caustic = None
    except CausticError as exc:
        run, caustic = exc.run, exc
    for k, q in enumerate(run.momentum):
        fields = [q.replace(name="q")]
        if run.density:
            fields.append(run.density[k].replace(name="rho"))
        write_field_snapshot(out / _snapshot_name("prep", k), fields)
    _write_log(out, run.log)
    if caustic is not None:
        raise CausticError(f"caustic at t={caustic.time:.6g} before t_end={tm['t_end']:g}", caustic.time)
    say(f"{len(run.momentum)} snapshots written to {out}")
    return 0


def _cmd_layers(cfg, out, args, say):
    from .io import write_field_snapshot, write_layer_set
    from .multilayer import (LayerSet, build_oscillator_layers, check_flux_matching, detect_turning_surface,
                             mix_density)

    mod = cfg.section("model")
    if mod.str("name") != "harmonic_oscillator" or cfg.dim != 1:
        raise ConfigurationError("the layers command builds one-dimensional oscillator branches")
    lay = cfg.section("layers")
    E = lay.float("E", required=True, positive=True)
    spec = cfg.grid()
    ls = build_oscillator_layers(E, mod.float("m", 1.0), mod.float("omega", 1.0), spec)
    if "weights" in lay:
        ls = LayerSet(ls.layers, lay.floats("weights"))
    tol = lay.float("tol", 1e-3, positive=True)
    lines, ok = [], True
    for layer in ls.layers:
        surf = detect_turning_surface(layer)
        lines.append(f"layer {layer.index}: turning points at {', '.join(f'{x:.6g}' for x in surf.location[:, 0])}")
        if layer is ls.layers[0] and len(ls.layers) > 1:
            rep = check_flux_matching(ls.layers[0], ls.layers[1], surf, tol)
            ok &= rep.passed
            lines.append(f"flux matching: max |j1 + j2| = {rep.max_mismatch:.3e} (tol {tol:g})")
    write_layer_set(out, ls)
    write_field_snapshot(out / "mixed.hjfield", mix_density(ls.layers, ls.weights).replace(name="rho"))
    _write_log(out, lines)
    for ln in lines:
        say(ln)
    return 0 if ok else 3


def _cmd_dipole(cfg, out, args, say):
    from .dipole import DipoleFieldSet, dipole_velocity_from_fields, step_dipole_spin_fields
    from .eulerian import admissible_dt, step_density
    from .io import write_dipole_fields

    if not cfg.has("dipole"):
        raise ConfigurationError("the dipole command needs a [dipole] section")
    params = cfg.dipole_params()
    spec = cfg.grid()
    tm = cfg.time()
    t0 = tm["t0"]
    names = cfg.field_names()
    dip = cfg.section("dipole")
    Hexprs = [dip.expr(f"H{i + 1}", names) for i in range(3)]
    from .models import _bindings

    def H(t, x):
        b = _bindings(t, x, None, spec.dim)
        return np.stack([np.zeros(len(x)) if e is None else
                         np.broadcast_to(np.asarray(e.evaluate(b), float), (len(x),)) for e in Hexprs], -1)

    zero = GridField(spec, np.zeros(spec.shape), t0)
    S = cfg.init_field("S0", spec, t0) or zero.replace(name="S")
    xi = cfg.init_field("xi0", spec, t0, required=True)
    chi = cfg.init_field("chi0", spec, t0, required=True)
    rho = cfg.init_field("rho0", spec, t0)
    fs = DipoleFieldSet(S, xi, chi, rho)
    fs.check_spin(params.spin_mag)
    v = cfg.init_vector("v", spec, t0)
    if v is None:
        v = dipole_velocity_from_fields(fs, params)
    write_dipole_fields(out, fs, params, stem=f"dipole_{0:04d}")
    t, k, dt = t0, 0, tm["dt"]
    dt_max = admissible_dt(spec, v.node_values())
    if dt > dt_max:
        raise ConfigurationError(f"dt={dt:g} violates the CFL bound {dt_max:.3g} for the dipole velocity")
    while t < tm["t_end"] - 1e-12 * max(1.0, abs(tm["t_end"])):
        h = min(dt, tm["t_end"] - t)
        xi, chi = step_dipole_spin_fields(fs, v.replace(t=t), H, params, h)
        rho = step_density(v.replace(t=t), fs.rho, h) if fs.rho is not None else None
        t = xi.t
        fs = DipoleFieldSet(S.replace(t=t), xi, chi.replace(meta={}), rho)
        k += 1
        if k % tm["cadence"] == 0 or t >= tm["t_end"] - 1e-12:
            write_dipole_fields(out, fs, params, stem=f"dipole_{k:04d}")
    say(f"dipole fields advanced to t={t:.6g} in {k} steps; snapshots in {out}")
    return 0


def _cmd_verify(args, say):
    from .verification import format_table, run_all

    results = run_all(seed=args.seed)
    print(format_table(results))
    return 0 if all(r.passed for r in results) else 1


_HANDLERS = {
    "lagrangian": _cmd_lagrangian,
    "eulerian": _cmd_eulerian,
    "hj": _cmd_hj,
    "prep": _cmd_prep,
    "layers": _cmd_layers,
    "dipole": _cmd_dipole,
}


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
