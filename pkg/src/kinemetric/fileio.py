"""Readers and writers for the on-disk formats.

* angle CSV: ``# euler_convention=<tag>`` comment line, then
  ``time,<joint>_x,<joint>_y,<joint>_z,...`` (degrees)
* marker / position CSV: ``time,<name>_x,<name>_y,<name>_z,...`` in mm,
  missing samples as empty fields
* calibration JSON: ``{"cameras": [{"name", "P" (3x4 row-major), "width", "height"}]}``
* tensors: ``<base>.bin`` (magic, rank, shape, row-major little-endian
  float64) plus a ``<base>.json`` sidecar
  ``{"shape", "dtype": "f64", "order": "row-major", "views": [...]}``

Floats are written with ``repr`` so reading and re-writing a file
reproduces it byte for byte.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ParseError
from .geomcam import Camera
from .kinmodel import MarkerSequence
from .rotmath import DEFAULT_CONVENTION, AngleSet, parse_convention

TENSOR_MAGIC = b"KMTN"
_AXES = ("x", "y", "z")


def _fmt(x: float) -> str:
    return "" if not np.isfinite(x) else repr(float(x))


def _write_lines(path, lines):
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _read_rows(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(path, message=exc.strerror or str(exc)) from None
    return [(n, line) for n, line in enumerate(text.split("\n"), start=1) if line.strip()]


def _parse_header(path, lineno, header):
    cols = header.split(",")
    if not cols or cols[0] != "time":
        raise ParseError(path, lineno, cols[0] if cols else None, "first column must be 'time'")
    rest = cols[1:]
    if len(rest) % 3:
        raise ParseError(path, lineno, None, "expected x/y/z column triples after 'time'")
    names = []
    for k in range(0, len(rest), 3):
        base = rest[k].rsplit("_", 1)[0]
        for a, col in zip(_AXES, rest[k:k + 3]):
            if col != f"{base}_{a}":
                raise ParseError(path, lineno, col, f"expected column {base}_{a}")
        names.append(base)
    return names


def _parse_table(path, rows, allow_missing):
    lineno, header = rows[0]
    names = _parse_header(path, lineno, header)
    ncol = 1 + 3 * len(names)
    cols = header.split(",")
    times, values = [], []
    for lineno, line in rows[1:]:
        fields = line.split(",")
        if len(fields) != ncol:
            raise ParseError(path, lineno, None, f"expected {ncol} fields, found {len(fields)}")
        row = []
        for col, f in zip(cols, fields):
            if f == "" and allow_missing and col != "time":
                row.append(np.nan)
                continue
            try:
                v = float(f)
            except ValueError:
                raise ParseError(path, lineno, col, f"not a number: {f!r}") from None
            if not np.isfinite(v):
                raise ParseError(path, lineno, col, "non-finite value")
            row.append(v)
        times.append(row[0])
        values.append(row[1:])
    arr = np.array(values, dtype=float).reshape(len(values), len(names), 3)
    return names, np.array(times, dtype=float), arr


def _table_lines(names, times, values):
    header = ["time"] + [f"{n}_{a}" for n in names for a in _AXES]
    lines = [",".join(header)]
    for t, row in zip(times, values):
        lines.append(",".join([_fmt(t)] + [_fmt(v) for v in np.asarray(row).reshape(-1)]))
    return lines


def write_angles_csv(path, angles: AngleSet):
    lines = [f"# euler_convention={angles.convention}"]
    lines += _table_lines(angles.joints, angles.times, angles.angles)
    _write_lines(path, lines)


def read_angles_csv(path) -> AngleSet:
    rows = _read_rows(path)
    convention = DEFAULT_CONVENTION
    if rows and rows[0][1].startswith("#"):
        lineno, comment = rows.pop(0)
        key, _, value = comment.lstrip("#").strip().partition("=")
        if key.strip() != "euler_convention" or not value:
            raise ParseError(path, lineno, "euler_convention", "expected '# euler_convention=<tag>'")
        convention = value.strip()
        try:
            parse_convention(convention)
        except ValueError as exc:
            raise ParseError(path, lineno, "euler_convention", str(exc)) from None
    if not rows:
        raise ParseError(path, message="no header line")
    names, times, values = _parse_table(path, rows, allow_missing=False)
    return AngleSet(tuple(names), values, times, convention)


def write_positions_csv(path, names: Sequence[str], times, positions):
    _write_lines(path, _table_lines(names, times, positions))


def write_markers_csv(path, seq: MarkerSequence):
    write_positions_csv(path, seq.names, seq.times, seq.positions)


def read_markers_csv(path) -> MarkerSequence:
    rows = _read_rows(path)
    if not rows:
        raise ParseError(path, message="no header line")
    names, times, values = _parse_table(path, rows, allow_missing=True)
    return MarkerSequence(tuple(names), values, times)


def write_calibration(path, cameras: Sequence[Camera]):
    doc = {
        "cameras": [
            {"name": c.name, "P": c.P.tolist(), "width": int(c.width), "height": int(c.height)}
            for c in cameras
        ]
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def _load_json(path):
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(path, exc.lineno, None, exc.msg) from None
    except OSError as exc:
        raise ParseError(path, message=exc.strerror or str(exc)) from None


def read_calibration(path) -> list[Camera]:
    doc = _load_json(path)
    cams = []
    if not isinstance(doc, dict) or not isinstance(doc.get("cameras"), list):
        raise ParseError(path, field="cameras", message="expected a list of cameras")
    for i, c in enumerate(doc["cameras"]):
        where = f"cameras[{i}]"
        try:
            P = np.array(c["P"], dtype=float)
            if P.shape != (3, 4):
                raise ParseError(path, field=f"{where}.P", message="expected 3 rows of 4 numbers")
            cams.append(Camera(P, int(c["width"]), int(c["height"]), str(c.get("name", f"cam{i}"))))
        except KeyError as exc:
            raise ParseError(path, field=f"{where}.{exc.args[0]}", message="required key is missing") from None
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(path, field=where, message=str(exc)) from None
    return cams


def read_weights(path) -> dict:
    doc = _load_json(path)
    if not isinstance(doc, dict):
        raise ParseError(path, message="expected an object mapping marker names to weights")
    out = {}
    for k, v in doc.items():
        if not isinstance(v, (int, float)) or isinstance(v, bool) or v < 0:
            raise ParseError(path, field=k, message="weight must be a nonnegative number")
        out[str(k)] = float(v)
    return out


def _tensor_paths(base):
    base = Path(base)
    if base.suffix in (".bin", ".json"):
        base = base.with_suffix("")
    return base.with_suffix(".bin"), base.with_suffix(".json")


def write_tensor(base, array, views: Sequence[str] | None = None, extra: dict | None = None):
    """Write ``array`` as ``<base>.bin`` plus its JSON sidecar; returns the two paths."""
    arr = np.ascontiguousarray(array, dtype="<f8")
    bin_path, side_path = _tensor_paths(base)
    with open(bin_path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.tobytes(order="C"))
    side = {"shape": list(arr.shape), "dtype": "f64", "order": "row-major", "views": list(views or [])}
    if extra:
        side.update(extra)
    side_path.write_text(json.dumps(side, indent=2) + "\n")
    return bin_path, side_path


def read_tensor(base, with_sidecar: bool = False):
    bin_path, side_path = _tensor_paths(base)
    side = _load_json(side_path)
    for key in ("shape", "dtype", "order"):
        if key not in side:
            raise ParseError(side_path, field=key, message="required key is missing")
    if side["dtype"] != "f64" or side["order"] != "row-major":
        raise ParseError(side_path, field="dtype", message="only row-major f64 tensors are supported")
    try:
        raw = bin_path.read_bytes()
    except OSError as exc:
        raise ParseError(bin_path, message=exc.strerror or str(exc)) from None
    if raw[:4] != TENSOR_MAGIC:
        raise ParseError(bin_path, field="magic", message="not a tensor file")
    (ndim,) = struct.unpack_from("<I", raw, 4)
    shape = struct.unpack_from(f"<{ndim}Q", raw, 8)
    if list(shape) != list(side["shape"]):
        raise ParseError(side_path, field="shape", message=f"sidecar shape {side['shape']} != file shape {list(shape)}")
    offset = 8 + 8 * ndim
    count = int(np.prod(shape)) if ndim else 1
    if len(raw) - offset != 8 * count:
        raise ParseError(bin_path, message="truncated tensor payload")
    arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape).astype(float)
    return (arr, side) if with_sidecar else arr
