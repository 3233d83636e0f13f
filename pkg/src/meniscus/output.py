"""Field and time-series output: legacy ASCII VTK and CSV.

VTK layout. Without dG fields the grid is the mesh itself: ``POINTS`` are
the vertices, ``CELLS`` the triangles (type 5), nodal arrays go to
``POINT_DATA`` and element arrays to ``CELL_DATA``. When any dG-P1 field
is written the grid switches to a discontinuous point cloud: point
``3 e + i`` is local vertex ``i`` of element ``e`` and cell ``e`` is
``(3e, 3e+1, 3e+2)``, so each dG field is stored as its per-cell vertex
triples in ``POINT_DATA``; nodal fields are copied onto every duplicate.
Numbers are written with 17 significant digits.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .mesh import Mesh

VTK_HEADER = "# vtk DataFile Version 3.0"
VTK_TRIANGLE = 5


class VtkFormatError(ValueError):
    pass


class SchemaError(ValueError):
    """A series row or an existing file does not match the run's column set."""


def _fmt(v) -> str:
    return format(float(v), ".17g")


def _array_block(name: str, values: np.ndarray) -> list[str]:
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        lines = [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [_fmt(v) for v in values]
        return lines
    if values.ndim == 2 and values.shape[1] in (2, 3):
        vec = np.zeros((len(values), 3))
        vec[:, :values.shape[1]] = values
        return [f"VECTORS {name} double"] + [" ".join(_fmt(c) for c in row) for row in vec]
    raise ValueError(f"field {name!r} must be scalar or a 2/3-vector per entry")


def write_vtk(mesh: Mesh, path: str | Path, *, point_data: Mapping[str, np.ndarray] = {},
              cell_data: Mapping[str, np.ndarray] = {}, dg_data: Mapping[str, np.ndarray] = {},
              title: str = "meniscus") -> Path:
    ne, nv = mesh.n_elements, mesh.n_vertices
    for name, arr in point_data.items():
        if len(arr) != nv:
            raise ValueError(f"point field {name!r} has {len(arr)} values for {nv} vertices")
    for name, arr in cell_data.items():
        if len(arr) != ne:
            raise ValueError(f"cell field {name!r} has {len(arr)} values for {ne} cells")
    for name, arr in dg_data.items():
        if len(arr) != 3 * ne:
            raise ValueError(f"dG field {name!r} needs {3 * ne} values, got {len(arr)}")
    for name in [*point_data, *cell_data, *dg_data]:
        if not name or any(ch.isspace() for ch in name):
            raise ValueError(f"invalid field name {name!r}")

    if dg_data:
        pts = mesh.vertices[mesh.elements].reshape(-1, 2)
        cells = np.arange(3 * ne).reshape(ne, 3)
        pdata = {k: np.asarray(v)[mesh.elements].reshape(3 * ne, *np.shape(v)[1:])
                 for k, v in point_data.items()}
        pdata.update(dg_data)
    else:
        pts, cells, pdata = mesh.vertices, mesh.elements, dict(point_data)

    lines = [VTK_HEADER, title.splitlines()[0] if title else "meniscus", "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {len(pts)} double"]
    lines += [f"{_fmt(x)} {_fmt(y)} 0" for x, y in pts]
    lines.append(f"CELLS {ne} {4 * ne}")
    lines += [f"3 {a} {b} {c}" for a, b, c in cells]
    lines.append(f"CELL_TYPES {ne}")
    lines += [str(VTK_TRIANGLE)] * ne
    if pdata:
        lines.append(f"POINT_DATA {len(pts)}")
        for name, arr in pdata.items():
            lines += _array_block(name, arr)
    if cell_data:
        lines.append(f"CELL_DATA {ne}")
        for name, arr in cell_data.items():
            lines += _array_block(name, arr)
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def read_vtk(path: str | Path) -> dict:
    """Parse a file written by :func:`write_vtk` and check its structure.

    Returns ``points``, ``cells``, ``cell_types``, ``point_data`` and
    ``cell_data``; raises :class:`VtkFormatError` on any inconsistency.
    """
    text = Path(path).read_text().splitlines()
    if not text or text[0] != VTK_HEADER:
        raise VtkFormatError(f"first line must be {VTK_HEADER!r}")
    if len(text) < 4 or text[2] != "ASCII" or text[3] != "DATASET UNSTRUCTURED_GRID":
        raise VtkFormatError("expected ASCII UNSTRUCTURED_GRID")
    tokens = iter(text[4:])

    def expect(prefix):
        line = next(tokens, None)
        if line is None or not line.startswith(prefix):
            raise VtkFormatError(f"expected {prefix!r}, got {line!r}")
        return line.split()

    head = expect("POINTS")
    npts = int(head[1])
    points = np.array([[float(v) for v in next(tokens).split()] for _ in range(npts)])
    head = expect("CELLS")
    ncells, size = int(head[1]), int(head[2])
    cells = [list(map(int, next(tokens).split())) for _ in range(ncells)]
    if sum(len(c) for c in cells) != size or any(c[0] != len(c) - 1 for c in cells):
        raise VtkFormatError("CELLS size field inconsistent with connectivity")
    cells = np.array([c[1:] for c in cells])
    if cells.size and (cells.min() < 0 or cells.max() >= npts):
        raise VtkFormatError("cell references a missing point")
    head = expect("CELL_TYPES")
    types = np.array([int(next(tokens)) for _ in range(int(head[1]))])
    if len(types) != ncells:
        raise VtkFormatError("CELL_TYPES count differs from CELLS")

    data = {"POINT_DATA": {}, "CELL_DATA": {}}
    counts = {"POINT_DATA": npts, "CELL_DATA": ncells}
    section = None
    for line in tokens:
        parts = line.split()
        if not parts:
            continue
        if parts[0] in data:
            section = parts[0]
            if int(parts[1]) != counts[section]:
                raise VtkFormatError(f"{section} count {parts[1]} != {counts[section]}")
            continue
        if section is None:
            raise VtkFormatError(f"data before POINT_DATA/CELL_DATA: {line!r}")
        n = counts[section]
        if parts[0] == "SCALARS":
            if next(tokens).split()[0] != "LOOKUP_TABLE":
                raise VtkFormatError("SCALARS without LOOKUP_TABLE")
            data[section][parts[1]] = np.array([float(next(tokens)) for _ in range(n)])
        elif parts[0] == "VECTORS":
            data[section][parts[1]] = np.array(
                [[float(v) for v in next(tokens).split()] for _ in range(n)])
        else:
            raise VtkFormatError(f"unsupported attribute {parts[0]!r}")
    return {"points": points, "cells": cells, "cell_types": types,
            "point_data": data["POINT_DATA"], "cell_data": data["CELL_DATA"]}


class SeriesWriter:
    """Row-per-step CSV with a fixed header.

    Opening an existing non-empty file appends after checking that its
    header matches; a fresh file gets the header immediately, so an empty
    run leaves a header-only file. Rows are flushed as they are written.
    """

    def __init__(self, path: str | Path, columns: Sequence[str], append: bool = False):
        self.path = Path(path)
        self.columns = tuple(columns)
        if len(set(self.columns)) != len(self.columns):
            raise SchemaError("duplicate column names")
        exists = self.path.exists() and self.path.stat().st_size > 0
        if append and exists:
            with self.path.open(newline="") as fh:
                header = tuple(next(csv.reader(fh)))
            if header != self.columns:
                raise SchemaError(f"{self.path} has columns {header}, expected {self.columns}")
            self._fh = self.path.open("a", newline="")
        else:
            self._fh = self.path.open("w", newline="")
            self._fh.write(",".join(self.columns) + "\n")
            self._fh.flush()
        self.rows_written = 0

    def write(self, row: Mapping[str, object]) -> None:
        keys = tuple(row)
        if set(keys) != set(self.columns):
            missing = set(self.columns) - set(keys)
            extra = set(keys) - set(self.columns)
            raise SchemaError(f"row schema drift: missing {sorted(missing)}, extra {sorted(extra)}")
        cells = []
        for c in self.columns:
            v = row[c]
            if isinstance(v, (bool, np.bool_)):
                cells.append(str(int(v)))
            elif isinstance(v, (int, np.integer)):
                cells.append(str(int(v)))
            else:
                cells.append(_fmt(v))
        self._fh.write(",".join(cells) + "\n")
        self._fh.flush()
        self.rows_written += 1

    def write_all(self, rows: Iterable[Mapping[str, object]]) -> None:
        for row in rows:
            self.write(row)

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_series(path: str | Path, columns: Sequence[str], rows: Iterable[Mapping]) -> Path:
    with SeriesWriter(path, columns) as w:
        w.write_all(rows)
    return Path(path)


def read_series(path: str | Path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in r] for r in reader]
    return header, np.array(rows).reshape(len(rows), len(header))


def key_value_text(items: Mapping[str, object]) -> str:
    buf = io.StringIO()
    for k, v in items.items():
        buf.write(f"{k}: {_fmt(v) if isinstance(v, float) else v}\n")
    return buf.getvalue()
