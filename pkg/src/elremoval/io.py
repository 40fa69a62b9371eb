"""Plain-text density fields, iteration logs, PGM images and legacy VTK files."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .grid_fem import StructuredMesh


class FieldFormatError(ValueError):
    pass


def _fmt(x: float) -> str:
    # repr of a Python float is the shortest string that round-trips exactly
    return repr(float(x))


# -- density fields ----------------------------------------------------------------

def write_density_field(path, field: np.ndarray, dims: Sequence[int]) -> None:
    """One ``dims: nx ny [nz]`` header line, then one grid row (x fastest) per line."""
    field = np.asarray(field, dtype=float).ravel()
    dims = tuple(int(d) for d in dims)
    if len(dims) not in (2, 3) or field.size != int(np.prod(dims)):
        raise FieldFormatError(f"field of length {field.size} does not match dims {dims}")
    nx = dims[0]
    lines = ["dims: " + " ".join(map(str, dims))]
    for row in field.reshape(-1, nx):
        lines.append(" ".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_density_field(path) -> tuple[np.ndarray, tuple[int, ...]]:
    text = Path(path).read_text()
    head, _, body = text.partition("\n")
    parts = head.split()
    if not parts or parts[0] != "dims:" or len(parts) not in (3, 4):
        raise FieldFormatError(f"malformed header {head!r}")
    try:
        dims = tuple(int(p) for p in parts[1:])
    except ValueError as exc:
        raise FieldFormatError(f"malformed header {head!r}") from exc
    values = np.array([float(t) for t in body.split()])
    if values.size != int(np.prod(dims)):
        raise FieldFormatError(f"expected {int(np.prod(dims))} values for dims {dims}, found {values.size}")
    return values, dims


# -- iteration log ----------------------------------------------------------------

LOG_COLUMNS = ("k", "g0", "tau_phi", "tau_g0", "abs_tau_g0", "V", "n_active", "active_elements", "reduced_dim",
               "reintroduced", "removed", "eta", "beta", "rho_t", "eig1", "ks_bound", "phi_rat_max",
               "phi_rat_flags", "seconds")
TIMING_COLUMNS = ("seconds",)


def _cell(value) -> str:
    if value is None:
        return "nan"
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    v = float(value)
    return "nan" if math.isnan(v) else _fmt(v)


def log_row(record) -> list[str]:
    return [_cell(getattr(record, c)) for c in LOG_COLUMNS]


def write_iteration_log(records: Iterable, path) -> None:
    records = list(records)
    if not records:
        raise ValueError("cannot write an empty iteration log")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in records:
            w.writerow(log_row(r))


def read_iteration_log(path) -> dict[str, np.ndarray]:
    """Columns as float arrays (integers stay exact up to 2**53)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, data = rows[0], rows[1:]
    cols = {name: np.array([float(r[i]) for r in data]) for i, name in enumerate(header)}
    return cols


# -- images and VTK ------------------------------------------------------------

def pgm_bytes(field: np.ndarray, dims: Sequence[int]) -> bytes:
    """Binary P5 greyscale, solid = black; the top image row is the top of the domain."""
    if len(dims) != 2:
        raise ValueError("PGM export supports 2D fields only; use export_vtk for 3D")
    nx, ny = (int(d) for d in dims)
    rho = np.asarray(field, dtype=float).reshape(ny, nx)
    pix = np.rint(255.0 * (1.0 - np.clip(rho, 0.0, 1.0))).astype(np.uint8)
    return f"P5\n{nx} {ny}\n255\n".encode("ascii") + pix[::-1].tobytes()


def export_image(field: np.ndarray, dims: Sequence[int], path) -> None:
    Path(path).write_bytes(pgm_bytes(field, dims))


def export_vtk(path, mesh: StructuredMesh, cell_data: dict[str, np.ndarray] | None = None,
               point_data: dict[str, np.ndarray] | None = None) -> None:
    """ASCII legacy STRUCTURED_POINTS; scalars per cell, vectors (3 components) per node."""
    dims = list(mesh.dims) + [0] * (3 - mesh.ndim)
    lines = ["# vtk DataFile Version 3.0", "elremoval field", "ASCII", "DATASET STRUCTURED_POINTS",
             "DIMENSIONS " + " ".join(str(d + 1) for d in dims),
             "ORIGIN 0 0 0", f"SPACING {_fmt(mesh.h)} {_fmt(mesh.h)} {_fmt(mesh.h)}"]
    if cell_data:
        lines.append(f"CELL_DATA {mesh.n_elements}")
        for name, arr in cell_data.items():
            arr = np.asarray(arr, dtype=float).ravel()
            if arr.size != mesh.n_elements:
                raise ValueError(f"cell field {name!r} has {arr.size} values, mesh has {mesh.n_elements} cells")
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [_fmt(v) for v in arr]
    if point_data:
        lines.append(f"POINT_DATA {mesh.n_nodes}")
        for name, arr in point_data.items():
            arr = np.asarray(arr, dtype=float).reshape(mesh.n_nodes, -1)
            if arr.shape[1] < 3:
                arr = np.hstack([arr, np.zeros((mesh.n_nodes, 3 - arr.shape[1]))])
            lines.append(f"VECTORS {name} double")
            lines += [" ".join(_fmt(v) for v in row) for row in arr]
    Path(path).write_text("\n".join(lines) + "\n")


def read_vtk(path) -> dict:
    """Minimal reader for files written by :func:`export_vtk`."""
    tokens = Path(path).read_text().split("\n")
    out: dict = {"cells": {}, "points": {}}
    i, section, count = 0, None, 0
    while i < len(tokens):
        line = tokens[i].strip()
        if line.startswith("DIMENSIONS"):
            out["dimensions"] = tuple(int(t) for t in line.split()[1:])
        elif line.startswith("SPACING"):
            out["spacing"] = float(line.split()[1])
        elif line.startswith("CELL_DATA"):
            section, count = "cells", int(line.split()[1])
        elif line.startswith("POINT_DATA"):
            section, count = "points", int(line.split()[1])
        elif line.startswith("SCALARS"):
            name = line.split()[1]
            out[section][name] = np.array([float(v) for v in tokens[i + 2:i + 2 + count]])
            i += 1 + count
        elif line.startswith("VECTORS"):
            name = line.split()[1]
            out[section][name] = np.array([[float(t) for t in v.split()] for v in tokens[i + 1:i + 1 + count]])
            i += count
        i += 1
    return out
