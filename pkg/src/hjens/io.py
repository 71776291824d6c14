"""Text formats: ``hjfield`` grid snapshots, ``hjtraj`` trajectories and snapshot manifests.

Floats are printed with 17 significant digits, which round-trips every
IEEE double exactly.  Invalid nodes are written as ``nan``.
"""

from __future__ import annotations

import os
import re
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import FormatError, VersionError
from .grid import GridField, GridSpec
from .lagrangian import Trajectory

FIELD_MAGIC = "hjfield"
TRAJ_MAGIC = "hjtraj"
MANIFEST_MAGIC = "hjmanifest"
VERSION = "v1"


def fmt(x) -> str:
    return "%.17g" % x


def _check_magic(line: str, magic: str, lineno: int):
    m = re.fullmatch(r"#\s*(\w+)\s+v(\d+)\s*", line)
    if m is None or m.group(1) != magic:
        raise FormatError(f"expected '# {magic} {VERSION}' header", lineno)
    if "v" + m.group(2) != VERSION:
        raise VersionError(f"unsupported {magic} version v{m.group(2)} (this reader handles {VERSION})", lineno)


def _header_pairs(line: str, lineno: int) -> dict:
    if not line.startswith("#"):
        raise FormatError("expected a '#' header line", lineno)
    out = {}
    for tok in line[1:].split():
        key, sep, val = tok.partition("=")
        if not sep or not key:
            raise FormatError(f"malformed header entry {tok!r}", lineno)
        out[key] = val
    return out


def _float(text: str, lineno: int, what: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise FormatError(f"cannot read {what} from {text!r}", lineno) from None


# ---------------------------------------------------------------------------
# hjfield


def _columns(fields: Sequence[GridField]):
    names, cols = [], []
    for f in fields:
        if not f.name:
            raise FormatError("every field written to a snapshot needs a name")
        vals = f.values.reshape(f.components, -1)
        if f.invalid is not None:
            vals = np.where(f.invalid.ravel()[None], np.nan, vals)
        if f.components == 1:
            names.append(f.name)
        else:
            names.extend(f"{f.name}{k + 1}" for k in range(f.components))
        cols.extend(vals)
    if len(set(names)) != len(names):
        raise FormatError(f"duplicate column names {names}")
    return names, cols


def format_field_snapshot(fields) -> str:
    """Text of an ``hjfield`` file holding one or more fields on a shared grid."""
    if isinstance(fields, GridField):
        fields = [fields]
    elif isinstance(fields, Mapping):
        fields = [f if f.name == k else f.replace(name=k) for k, f in fields.items()]
    fields = list(fields)
    if not fields:
        raise FormatError("no fields to write")
    spec, t = fields[0].spec, fields[0].t
    if any(f.spec != spec or f.t != t for f in fields):
        raise FormatError("fields in one snapshot must share a grid and a time")
    names, cols = _columns(fields)
    lines = [
        f"# {FIELD_MAGIC} {VERSION}",
        f"# axes={spec.axes_kind} dims={spec.dim} grid={'x'.join(str(n) for n in spec.shape)} t={fmt(t)}",
        "# bounds=" + ",".join(f"{fmt(lo)}:{fmt(hi)}" for lo, hi in zip(spec.mins, spec.maxs)),
        "# fields=" + ",".join(names),
    ]
    table = np.column_stack([spec.nodes] + cols)
    lines.extend(",".join(fmt(x) for x in row) for row in table)
    return "\n".join(lines) + "\n"


def write_field_snapshot(path, fields) -> Path:
    path = Path(path)
    path.write_text(format_field_snapshot(fields))
    return path


def _regroup(names: list) -> list:
    """Group columns ``v1..vk`` (k >= 2, contiguous from 1) into one vector field."""
    groups, i = [], 0
    while i < len(names):
        m = re.fullmatch(r"(.*?[^\d])1", names[i])
        if m:
            base, k = m.group(1), 1
            while i + k < len(names) and names[i + k] == f"{base}{k + 1}":
                k += 1
            if k >= 2:
                groups.append((base, list(range(i, i + k))))
                i += k
                continue
        groups.append((names[i], [i]))
        i += 1
    return groups


def parse_field_snapshot(text: str, boundary=()) -> dict:
    """Fields of an ``hjfield`` text keyed by name; vector columns are regrouped."""
    lines = text.splitlines()
    if len(lines) < 4:
        raise FormatError("truncated header", len(lines) + 1)
    _check_magic(lines[0], FIELD_MAGIC, 1)
    head = _header_pairs(lines[1], 2)
    for key in ("axes", "dims", "grid", "t"):
        if key not in head:
            raise FormatError(f"header misses '{key}='", 2)
    axes_kind = head["axes"]
    if axes_kind not in ("q", "p"):
        raise FormatError(f"axes must be q or p, got {axes_kind!r}", 2)
    try:
        dims = int(head["dims"])
        shape = tuple(int(n) for n in head["grid"].split("x"))
    except ValueError:
        raise FormatError("dims and grid must be integers", 2) from None
    if len(shape) != dims:
        raise FormatError(f"grid {head['grid']} does not have {dims} axes", 2)
    t = _float(head["t"], 2, "time")

    if not lines[2].startswith("# bounds="):
        raise FormatError("expected '# bounds=' line", 3)
    bounds = lines[2][len("# bounds="):].split(",")
    if len(bounds) != dims:
        raise FormatError(f"{len(bounds)} bounds for {dims} axes", 3)
    mins, maxs = [], []
    for b in bounds:
        lo, sep, hi = b.partition(":")
        if not sep:
            raise FormatError(f"bound {b!r} is not min:max", 3)
        mins.append(_float(lo, 3, "bound"))
        maxs.append(_float(hi, 3, "bound"))
    if not lines[3].startswith("# fields="):
        raise FormatError("expected '# fields=' line", 4)
    names = [n.strip() for n in lines[3][len("# fields="):].split(",")]
    if not all(names) or len(set(names)) != len(names):
        raise FormatError("field names must be non-empty and distinct", 4)
    try:
        spec = GridSpec(tuple(mins), tuple(maxs), shape, tuple(boundary) or ("outflow",) * dims, axes_kind)
    except Exception as exc:
        raise FormatError(f"invalid grid: {exc}", 2) from None

    ncol = dims + len(names)
    rows = [(k + 5, ln) for k, ln in enumerate(lines[4:]) if ln.strip()]
    if len(rows) != spec.size:
        raise FormatError(f"{len(rows)} data rows for a grid of {spec.size} nodes",
                          rows[-1][0] if rows else 5)
    data = np.empty((spec.size, ncol))
    for r, (lineno, ln) in enumerate(rows):
        parts = ln.split(",")
        if len(parts) != ncol:
            raise FormatError(f"{len(parts)} columns, expected {ncol}", lineno)
        for c, tok in enumerate(parts):
            data[r, c] = _float(tok.strip(), lineno, "value")
    nodes = spec.nodes
    scale = np.maximum(np.abs(spec.mins), np.abs(spec.maxs)) + np.asarray(spec.h)
    off = np.abs(data[:, :dims] - nodes) > 1e-12 * scale
    if np.any(off):
        r = int(np.argmax(off.any(axis=1)))
        raise FormatError("node coordinates do not match the header grid", rows[r][0])

    out = {}
    for name, idx in _regroup(names):
        vals = data[:, [dims + i for i in idx]].T.reshape((len(idx),) + shape)
        bad = ~np.isfinite(vals).all(axis=0)
        out[name] = GridField(spec, vals, t, name, invalid=bad if bad.any() else None)
    return out


def read_field_snapshot(path, boundary=()) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror}") from None
    try:
        return parse_field_snapshot(text, boundary)
    except FormatError as exc:
        exc.args = (f"{path}: {exc.args[0]}",) + exc.args[1:]
        raise


# ---------------------------------------------------------------------------
# hjtraj


def format_trajectories(trajectories: Iterable[Trajectory]) -> str:
    trajectories = list(trajectories)
    if not trajectories:
        raise FormatError("no trajectories to write")
    s = trajectories[0].q.shape[1]
    if any(tr.q.shape[1] != s for tr in trajectories):
        raise FormatError("trajectories in one file must share a dimension")
    cols = ["t"] + [f"q{i + 1}" for i in range(s)] + [f"p{i + 1}" for i in range(s)]
    lines = [f"# {TRAJ_MAGIC} {VERSION}", f"# dims={s} members={len(trajectories)}", "# columns=" + ",".join(cols)]
    for k, tr in enumerate(trajectories):
        lines.append(f"# member={k}")
        lines.extend(",".join(fmt(x) for x in row) for row in tr.columns())
    return "\n".join(lines) + "\n"


def write_trajectories(path, trajectories) -> Path:
    path = Path(path)
    path.write_text(format_trajectories(trajectories))
    return path


def parse_trajectories(text: str, model_name="") -> list:
    lines = text.splitlines()
    if len(lines) < 3:
        raise FormatError("truncated header", len(lines) + 1)
    _check_magic(lines[0], TRAJ_MAGIC, 1)
    head = _header_pairs(lines[1], 2)
    try:
        s, members = int(head["dims"]), int(head["members"])
    except (KeyError, ValueError):
        raise FormatError("header needs integer dims= and members=", 2) from None
    ncol = 1 + 2 * s
    if not lines[2].startswith("# columns=") or len(lines[2].split("=", 1)[1].split(",")) != ncol:
        raise FormatError(f"expected '# columns=' with {ncol} names", 3)
    blocks, current = [], None
    for lineno, ln in enumerate(lines[3:], start=4):
        if not ln.strip():
            continue
        if ln.startswith("# member="):
            k = ln.split("=", 1)[1].strip()
            if k != str(len(blocks)):
                raise FormatError(f"member {k} out of sequence", lineno)
            current = []
            blocks.append(current)
            continue
        if current is None:
            raise FormatError("data row before the first '# member=' line", lineno)
        parts = ln.split(",")
        if len(parts) != ncol:
            raise FormatError(f"{len(parts)} columns, expected {ncol}", lineno)
        current.append([_float(p.strip(), lineno, "value") for p in parts])
    if len(blocks) != members:
        raise FormatError(f"{len(blocks)} members found, header says {members}", len(lines))
    out = []
    for b in blocks:
        a = np.array(b, float).reshape(-1, ncol)
        out.append(Trajectory(a[:, 0], a[:, 1:1 + s], a[:, 1 + s:], model_name))
    return out


def read_trajectories(path, model_name="") -> list:
    path = Path(path)
    try:
        return parse_trajectories(path.read_text(), model_name)
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror}") from None


# ---------------------------------------------------------------------------
# manifests


def write_manifest(path, kind: str, entries: Mapping[str, str]) -> Path:
    """``key=value`` manifest tying several snapshot files together."""
    path = Path(path)
    lines = [f"# {MANIFEST_MAGIC} {VERSION}", f"kind={kind}"]
    lines.extend(f"{k}={v}" for k, v in entries.items())
    path.write_text("\n".join(lines) + "\n")
    return path


def read_manifest(path) -> tuple:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise FormatError(f"{path}: empty manifest", 1)
    _check_magic(lines[0], MANIFEST_MAGIC, 1)
    entries = {}
    for lineno, ln in enumerate(lines[1:], start=2):
        if not ln.strip() or ln.startswith("#"):
            continue
        key, sep, val = ln.partition("=")
        if not sep:
            raise FormatError(f"{path}: expected key=value", lineno)
        entries[key.strip()] = val.strip()
    if "kind" not in entries:
        raise FormatError(f"{path}: manifest has no kind", 2)
    return entries.pop("kind"), entries


def write_layer_set(directory, layer_set, stem="layer") -> Path:
    """One snapshot per layer (``rho`` plus ``v`` or ``S``) and a manifest with the weights."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = {"layers": str(len(layer_set.layers)),
               "weights": ",".join(fmt(w) for w in layer_set.weights)}
    for k, layer in enumerate(layer_set.layers):
        fields = [layer.rho.replace(name="rho")]
        if layer.v is not None:
            fields.append(layer.v.replace(name="v"))
        if layer.S is not None:
            fields.append(layer.S.replace(name="S"))
        name = f"{stem}_{k + 1}.hjfield"
        write_field_snapshot(directory / name, fields)
        entries[f"layer{k + 1}"] = f"{name} index={layer.index}"
    return write_manifest(directory / f"{stem}s.manifest", "layers", entries)


def read_layer_set(manifest_path, model=None):
    from .multilayer import Layer, LayerSet

    manifest_path = Path(manifest_path)
    kind, entries = read_manifest(manifest_path)
    if kind != "layers":
        raise FormatError(f"{manifest_path}: manifest kind is {kind!r}, expected 'layers'")
    n = int(entries["layers"])
    weights = [float(w) for w in entries["weights"].split(",")]
    layers = []
    for k in range(n):
        fname, _, idx = entries[f"layer{k + 1}"].partition(" index=")
        f = read_field_snapshot(manifest_path.parent / fname)
        layers.append(Layer(int(idx or k + 1), f["rho"], f.get("v"), f.get("S"), model))
    return LayerSet(layers, weights)


def write_dipole_fields(directory, fieldset, params=None, stem="dipole") -> Path:
    """One snapshot per dipole field and a manifest; ``chi`` is stored unwrapped."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = {"t": fmt(fieldset.t)}
    for key in ("S", "xi", "chi", "rho"):
        f = getattr(fieldset, key)
        if f is None:
            continue
        name = f"{stem}_{key}.hjfield"
        write_field_snapshot(directory / name, f.replace(name=key))
        entries[key] = name
    if params is not None:
        entries["params"] = ",".join(f"{k}={fmt(getattr(params, k))}" for k in ("m", "e", "c", "gamma", "spin_mag"))
    return write_manifest(directory / f"{stem}.manifest", "dipole", entries)


def read_dipole_fields(manifest_path):
    """``(DipoleFieldSet, DipoleParams or None)`` from a dipole manifest."""
    from .dipole import DipoleFieldSet
    from .models import DipoleParams

    manifest_path = Path(manifest_path)
    kind, entries = read_manifest(manifest_path)
    if kind != "dipole":
        raise FormatError(f"{manifest_path}: manifest kind is {kind!r}, expected 'dipole'")
    fields = {k: read_field_snapshot(manifest_path.parent / entries[k])[k]
              for k in ("S", "xi", "chi", "rho") if k in entries}
    params = None
    if "params" in entries:
        kv = dict(item.split("=") for item in entries["params"].split(","))
        params = DipoleParams(**{k: float(v) for k, v in kv.items()})
    return DipoleFieldSet(fields["S"], fields["xi"], fields["chi"], fields.get("rho")), params


def ensure_dir(path) -> Path:
    path = Path(path)
    os.makedirs(path, exist_ok=True)
    return path
