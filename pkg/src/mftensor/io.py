"""CSV readers and writers for designs and meshes."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .exceptions import FormatError


def _fmt(v: float) -> str:
    return repr(float(v))


def write_design_csv(path, design, names=None) -> None:
    design = np.atleast_2d(np.asarray(design, dtype=np.float64))
    names = names or [f"x{d + 1}" for d in range(design.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in design:
            w.writerow([_fmt(v) for v in row])


def read_design_csv(path) -> np.ndarray:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError as exc:
        raise FormatError(f"{path}: no such design file") from exc
    if len(rows) < 2:
        raise FormatError(f"{path}: design CSV needs a header and at least one row")
    try:
        out = np.array([[float(v) for v in r] for r in rows[1:]])
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric design entry") from exc
    if out.ndim != 2 or out.shape[1] != len(rows[0]):
        raise FormatError(f"{path}: ragged design rows")
    return out


def write_mesh_csv(path, points) -> None:
    points = np.asarray(points, dtype=np.float64)
    cols = ["x", "y", "z"][: points.shape[1]]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", *cols])
        for i, row in enumerate(points):
            w.writerow([i, *(_fmt(v) for v in row)])


def read_mesh_csv(path) -> np.ndarray:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError as exc:
        raise FormatError(f"{path}: no such mesh file") from exc
    if len(rows) < 2 or rows[0][0] != "index":
        raise FormatError(f"{path}: mesh CSV must start with an 'index' column")
    try:
        body = np.array([[float(v) for v in r] for r in rows[1:]])
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric mesh entry") from exc
    order = np.argsort(body[:, 0], kind="stable")
    return body[order, 1:]


def write_table_csv(path, header, rows) -> None:
    """Rows of mixed strings and numbers; floats are written round-trip exact."""
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])
