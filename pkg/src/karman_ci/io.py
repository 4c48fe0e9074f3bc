"""Field files and byte-stable JSON.

A field is a JSON manifest ``{name, kind, nx, ny, domain, data}`` next to a CSV
file with one grid row per line (components innermost), 17 significant digits.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .errors import KarmanError
from .grid_fields import FIELD_KINDS, GridSpec


class FieldIOError(KarmanError):
    exit_code = 1


def _fmt_float(x):
    x = float(x)
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    return "%.17g" % x


def _encode(obj, level):
    pad = "  " * (level + 1)
    end = "  " * level
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(_encode(v, level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _encode(v, level + 1) for v in obj) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj):
    """JSON text with keys in insertion order and floats at 17 significant digits."""
    return _encode(obj, 0) + "\n"


def write_json(path, obj):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(dumps(obj))
    except OSError as exc:
        raise FieldIOError(f"cannot write {path}: {exc}") from exc
    return path


def read_json(path):
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except OSError as exc:
        raise FieldIOError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FieldIOError(f"{path} is not valid JSON: {exc}") from exc


def write_field(f, directory, name):
    """Write ``name.json`` and ``name.csv`` into ``directory``; returns the manifest path."""
    directory = Path(directory)
    spec = f.spec
    rows = f.values.reshape(spec.ny, -1)
    lines = [",".join("%.17g" % x for x in row) for row in rows]
    manifest = {
        "name": name,
        "kind": f.kind,
        "nx": spec.nx,
        "ny": spec.ny,
        "domain": list(spec.domain),
        "data": f"{name}.csv",
    }
    try:
        directory.mkdir(parents=True, exist_ok=True)
        (directory / f"{name}.csv").write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise FieldIOError(f"cannot write field {name}: {exc}") from exc
    return write_json(directory / f"{name}.json", manifest)


def read_field(manifest_path):
    manifest_path = Path(manifest_path)
    meta = read_json(manifest_path)
    try:
        cls = FIELD_KINDS[meta["kind"]]
        spec = GridSpec(int(meta["nx"]), int(meta["ny"]), tuple(float(x) for x in meta["domain"]))
        data_path = manifest_path.parent / meta["data"]
    except (KeyError, TypeError) as exc:
        raise FieldIOError(f"malformed field manifest {manifest_path}: {exc}") from exc
    try:
        text = data_path.read_text()
    except OSError as exc:
        raise FieldIOError(f"cannot read {data_path}: {exc}") from exc
    lines = text.splitlines()
    per_row = spec.nx * cls.ncomp
    if len(lines) != spec.ny:
        raise FieldIOError(f"{data_path}: expected {spec.ny} rows, found {len(lines)}")
    try:
        rows = [np.array(line.split(","), dtype=float) for line in lines]
    except ValueError as exc:
        raise FieldIOError(f"{data_path}: unparsable value ({exc})") from exc
    for j, row in enumerate(rows):
        if row.size != per_row:
            raise FieldIOError(f"{data_path}: row {j} has {row.size} values, expected {per_row}")
    try:
        return cls(spec, np.stack(rows))
    except ValueError as exc:
        raise FieldIOError(f"{data_path}: {exc}") from exc
