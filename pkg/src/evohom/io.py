"""CSV and JSON serialization of signals, operators, reports and kernels.

Floats are written with ``repr`` (shortest round-trip form), so every
writer/reader pair below round-trips bit-exactly.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import DeserializationError, UnsupportedKind
from .operators import (Compose, Convolution, Derivative, HInfSymbol, Integration, Inverse, PointwiseOp, Scale,
                        Sum)
from .weighted_space import SpaceModel, TimeGrid, WeightedSignal


def _f(x) -> str:
    return repr(float(x))


def _sidecar(path) -> Path:
    return Path(path).with_suffix(".json")


def write_json(obj, path) -> Path:
    """Write ``obj`` (or ``obj.to_dict()``) as indented JSON."""
    path = Path(path)
    data = obj.to_dict() if hasattr(obj, "to_dict") else obj
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def read_json(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except (OSError, ValueError) as exc:
        raise DeserializationError(f"{path}: {exc}") from exc


def _read_rows(path, header_prefix):
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DeserializationError(f"{path}: {exc}") from exc
    if not rows or rows[0][: len(header_prefix)] != list(header_prefix):
        raise DeserializationError(f"{path}: expected header starting with {','.join(header_prefix)}")
    header, body = rows[0], rows[1:]
    try:
        data = np.array([[float(v) for v in r] for r in body], dtype=float).reshape(len(body), len(header))
    except ValueError as exc:
        raise DeserializationError(f"{path}: malformed row ({exc})") from exc
    return header, data


# ---------------------------------------------------------------- complex tables

def _write_complex_table(path, first_name, first_col, values, prefix="dof"):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    values = np.asarray(values, dtype=complex).reshape(len(first_col), -1)
    header = [first_name]
    for j in range(values.shape[1]):
        header += [f"{prefix}_{j}_re", f"{prefix}_{j}_im"]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for t, row in zip(first_col, values):
            out = [_f(t)]
            for v in row:
                out += [_f(v.real), _f(v.imag)]
            w.writerow(out)
    return path


def _read_complex_table(path, first_name):
    header, data = _read_rows(path, [first_name])
    if (len(header) - 1) % 2:
        raise DeserializationError(f"{path}: odd number of value columns")
    return data[:, 0], data[:, 1::2] + 1j * data[:, 2::2]


# ---------------------------------------------------------------- signals

def write_signal(u: WeightedSignal, path) -> Path:
    """CSV ``t,dof_0_re,dof_0_im,...`` plus a JSON sidecar with the grid and space."""
    path = _write_complex_table(path, "t", u.grid.times, u.values)
    write_json({**u.grid.to_dict(), "space": u.space.to_dict()}, _sidecar(path))
    return path


def read_signal(path) -> WeightedSignal:
    meta = read_json(_sidecar(path))
    try:
        grid = TimeGrid(meta["dt"], meta["n_steps"], meta["nu"])
        space = SpaceModel.from_dict(meta["space"])
    except (KeyError, TypeError) as exc:
        raise DeserializationError(f"{_sidecar(path)}: missing field {exc}") from exc
    _, vals = _read_complex_table(path, "t")
    if vals.shape != (grid.n_steps, space.n_dof):
        raise DeserializationError(f"{path}: table shape {vals.shape} does not match the sidecar")
    return WeightedSignal(grid, space, vals)


# ---------------------------------------------------------------- kernels and pairings

def write_kernel(K, grid: TimeGrid, path) -> Path:
    """Scalar kernel samples as CSV ``t,K_re,K_im``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    K = np.asarray(K, dtype=complex).reshape(-1)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "K_re", "K_im"])
        for t, k in zip(grid.times, K):
            w.writerow([_f(t), _f(k.real), _f(k.imag)])
    return path


def read_kernel(path):
    """Return ``(t, K)`` from a kernel CSV."""
    header, data = _read_rows(path, ["t", "K_re", "K_im"])
    if len(header) != 3:
        raise DeserializationError(f"{path}: kernel CSV must have exactly three columns")
    return data[:, 0], data[:, 1] + 1j * data[:, 2]


def write_pairings(table, schedule, path) -> Path:
    """Pairing table as CSV ``n,pair_id,re,im`` (one row per schedule point and pair)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table = np.asarray(table, dtype=complex)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "pair_id", "re", "im"])
        for s, n in enumerate(schedule):
            for c in range(table.shape[1]):
                w.writerow([int(n), c, _f(table[s, c].real), _f(table[s, c].imag)])
    return path


def read_pairings(path):
    """Return ``(schedule, table)`` from a pairings CSV."""
    _, data = _read_rows(path, ["n", "pair_id", "re", "im"])
    if data.shape[0] == 0:
        return (), np.zeros((0, 0), dtype=complex)
    schedule = tuple(dict.fromkeys(int(n) for n in data[:, 0]))
    n_pairs = int(data[:, 1].max()) + 1
    if data.shape[0] != len(schedule) * n_pairs:
        raise DeserializationError(f"{path}: incomplete pairing table")
    table = (data[:, 2] + 1j * data[:, 3]).reshape(len(schedule), n_pairs)
    return schedule, table


# ---------------------------------------------------------------- operators

def write_operator(op, path) -> Path:
    """Operator tree as JSON; fields, kernels and symbol samples go to CSV payload files.

    Payload files sit next to ``path`` and are referenced by relative name.
    Operators built from Python callables only (e.g. spatial stencils) are
    not serializable.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    counter = [0]

    def payload(arr, first_name):
        name = f"{path.stem}.payload{counter[0]}.csv"
        counter[0] += 1
        arr = np.asarray(arr)
        _write_complex_table(path.parent / name, first_name, np.arange(arr.shape[0]), arr.reshape(arr.shape[0], -1),
                             prefix="v")
        return {"file": name, "shape": list(arr.shape)}

    def enc(o):
        return {**enc_kind(o), "space_in": o.space_in.to_dict(), "space_out": o.space_out.to_dict()}

    def enc_kind(o):
        if isinstance(o, PointwiseOp):
            return {"kind": o.kind, "field": payload(o.blocks, "t")}
        if isinstance(o, Convolution):
            return {"kind": o.kind, "kernel": payload(o.kernel, "t")}
        if isinstance(o, HInfSymbol):
            return {"kind": o.kind, "name": o.name, "n_fft": o.n_fft, "meta": dict(o.meta),
                    "samples": payload(o.samples, "k")}
        if isinstance(o, (Integration, Derivative)):
            return {"kind": o.kind}
        if isinstance(o, (Sum, Compose)):
            return {"kind": o.kind, "ops": [enc(x) for x in o.ops]}
        if isinstance(o, Scale):
            return {"kind": o.kind, "alpha": [o.alpha.real, o.alpha.imag], "op": enc(o.op)}
        if isinstance(o, Inverse):
            return {"kind": o.kind, "method": o.method, "op": enc(o.op), "realized": enc(o.realized)}
        raise UnsupportedKind(f"operator kind {o.kind} ({type(o).__name__}) has no serialized form")

    doc = {"grid": op.grid.to_dict(), "op": enc(op)}
    write_json(doc, path)
    return path


def read_operator(path):
    path = Path(path)
    doc = read_json(path)

    def load(ref, first_name):
        _, vals = _read_complex_table(path.parent / ref["file"], first_name)
        return vals.reshape(ref["shape"])

    try:
        grid = TimeGrid(**doc["grid"])
    except (KeyError, TypeError) as exc:
        raise DeserializationError(f"{path}: bad header ({exc})") from exc

    def dec(d):
        kind = d.get("kind")
        sin, sout = SpaceModel.from_dict(d["space_in"]), SpaceModel.from_dict(d["space_out"])
        if kind in ("Multiplication", "ConstantMatrix") and "field" in d:
            return PointwiseOp(load(d["field"], "t"), grid, sin, sout)
        if kind == "Convolution":
            return Convolution(load(d["kernel"], "t"), grid, sin, sout)
        if kind == "HInfSymbol":
            return HInfSymbol(None, grid, sin, sout, samples=load(d["samples"], "k"), n_fft=d["n_fft"],
                              name=d.get("name", "symbol"), meta=d.get("meta", {}))
        if kind == "Integration":
            return Integration(grid, sin)
        if kind == "Derivative":
            return Derivative(grid, sin)
        if kind == "Sum":
            return Sum([dec(x) for x in d["ops"]])
        if kind == "Compose":
            return Compose([dec(x) for x in d["ops"]])
        if kind == "Scale":
            return Scale(complex(*d["alpha"]), dec(d["op"]))
        if kind == "Inverse":
            return Inverse(dec(d["op"]), d["method"], dec(d["realized"]))
        raise DeserializationError(f"{path}: unknown operator kind {kind!r}")

    try:
        return dec(doc["op"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DeserializationError(f"{path}: {exc}") from exc
