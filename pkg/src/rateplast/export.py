"""File output: legacy ASCII VTK, CSV series and JSON run logs."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .mesh import Mesh

_VTK_CELL_TYPE = {1: 3, 2: 5}  # line, triangle


def _fmt(x: float) -> str:
    return repr(float(x))


def write_vtk(path, mesh: Mesh, point_data: Mapping[str, np.ndarray] | None = None,
              cell_data: Mapping[str, np.ndarray] | None = None, displacement: Optional[np.ndarray] = None,
              magnification: float = 0.0, title: str = "rateplast") -> Path:
    """Unstructured-grid VTK (legacy ASCII).

    Arrays with one column become SCALARS, ``dim`` columns become VECTORS
    (padded to 3) and anything else is written as a FIELD array.  With a
    displacement and a nonzero magnification the points are moved to
    ``X + magnification * u``.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    d = mesh.dim
    X = mesh.vertices.copy()
    if displacement is not None and magnification:
        X = X + magnification * np.asarray(displacement, dtype=float).reshape(mesh.n_vertices, d)
    pts = np.zeros((mesh.n_vertices, 3))
    pts[:, :d] = X
    lines = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {mesh.n_vertices} double"]
    lines += [" ".join(_fmt(c) for c in p) for p in pts]
    nvc = d + 1
    lines.append(f"CELLS {mesh.n_cells} {mesh.n_cells * (nvc + 1)}")
    lines += [f"{nvc} " + " ".join(str(int(i)) for i in c) for c in mesh.cells]
    lines.append(f"CELL_TYPES {mesh.n_cells}")
    lines += [str(_VTK_CELL_TYPE[d])] * mesh.n_cells
    for header, n, data in (("CELL_DATA", mesh.n_cells, cell_data), ("POINT_DATA", mesh.n_vertices, point_data)):
        if not data:
            continue
        lines.append(f"{header} {n}")
        for name, arr in data.items():
            lines += _vtk_array(name, np.asarray(arr, dtype=float).reshape(n, -1), d)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def _vtk_array(name: str, a: np.ndarray, d: int) -> list[str]:
    name = name.replace(" ", "_")
    ncomp = a.shape[1]
    if ncomp == 1:
        return [f"SCALARS {name} double 1", "LOOKUP_TABLE default"] + [_fmt(v) for v in a[:, 0]]
    if ncomp == d and d <= 3:
        pad = np.zeros((a.shape[0], 3))
        pad[:, :d] = a
        return [f"VECTORS {name} double"] + [" ".join(_fmt(c) for c in row) for row in pad]
    return [f"FIELD FieldData 1", f"{name} {ncomp} {a.shape[0]} double"] + [" ".join(_fmt(c) for c in row) for row in a]


def read_vtk_arrays(path) -> dict[str, np.ndarray]:
    """Parse the data arrays of a file written by :func:`write_vtk` (for checks and tests)."""
    tokens = Path(path).read_text().split("\n")
    out: dict[str, np.ndarray] = {}
    i = 0
    n_cur = 0
    while i < len(tokens):
        line = tokens[i].split()
        if not line:
            i += 1
            continue
        key = line[0]
        if key == "POINTS":
            n = int(line[1])
            out["POINTS"] = np.array([[float(v) for v in tokens[i + 1 + j].split()] for j in range(n)])
            i += n + 1
        elif key in ("CELL_DATA", "POINT_DATA"):
            n_cur = int(line[1])
            i += 1
        elif key == "SCALARS":
            out[line[1]] = np.array([float(tokens[i + 2 + j]) for j in range(n_cur)])
            i += n_cur + 2
        elif key == "VECTORS":
            out[line[1]] = np.array([[float(v) for v in tokens[i + 1 + j].split()] for j in range(n_cur)])
            i += n_cur + 1
        elif key == "FIELD":
            name, ncomp, n = tokens[i + 1].split()[:3]
            out[name] = np.array([[float(v) for v in tokens[i + 2 + j].split()] for j in range(int(n))])
            i += int(n) + 2
        else:
            i += 1
    return out


class CsvSeries:
    """Row-by-row CSV writer with a fixed header."""

    def __init__(self, path, fields: Sequence[str]):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.fields = list(fields)
        self._fh = open(self.path, "w", newline="")
        self._w = csv.writer(self._fh)
        self._w.writerow(self.fields)

    def write(self, row: Mapping[str, object] | Sequence[object]):
        if isinstance(row, Mapping):
            row = [row[f] for f in self.fields]
        self._w.writerow([_cell(v) for v in row])

    def close(self):
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def write_csv(path, fields: Sequence[str], rows: Iterable) -> Path:
    with CsvSeries(path, fields) as out:
        for row in rows:
            out.write(row)
    return Path(path)


def read_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    cols = {}
    for j, name in enumerate(header):
        vals = [r[j] for r in body]
        try:
            cols[name] = np.array([float(v) for v in vals])
        except ValueError:
            cols[name] = np.array(vals)
    return cols


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return obj


def write_json(path, payload: Mapping) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")
    return path
