"""File output: CSV tables, legacy-VTK polylines and structured run reports.

Everything written here is deterministic: numbers use the C-locale ``%.17g``
format so that a float survives a write/read round trip bit for bit, and
reports are emitted with a fixed key order.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import yaml

logger = logging.getLogger(__name__)

FLOAT_FMT = "%.17g"


def _fmt(v) -> str:
    return FLOAT_FMT % float(v)


def write_csv(path, header: Sequence[str], columns: Sequence) -> Path:
    """Write equal-length columns with a header row; complex columns must be split by the caller."""
    path = Path(path)
    cols = [np.asarray(c) for c in columns]
    if len(cols) != len(header):
        raise ValueError("header and column counts differ")
    n = {len(c) for c in cols}
    if len(n) > 1:
        raise ValueError("columns have different lengths")
    if any(np.iscomplexobj(c) for c in cols):
        raise TypeError("split complex columns into real and imaginary parts")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*cols):
            fh.write(",".join(_fmt(v) if isinstance(v, (float, np.floating)) else str(v) for v in row) + "\n")
    logger.info("wrote %s", path)
    return path


def read_csv(path) -> tuple[list[str], np.ndarray]:
    """Header and float data of a file written by ``write_csv``."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


def complex_columns(name: str, z) -> tuple[list[str], list[np.ndarray]]:
    """Split a complex (n,) or (n, 3) array into re/im columns named like name_x_re."""
    z = np.asarray(z)
    if z.ndim == 1:
        return [f"{name}_re", f"{name}_im"], [z.real.astype(float), z.imag.astype(float)]
    names, cols = [], []
    for k, ax in enumerate("xyz"[: z.shape[1]]):
        names += [f"{name}_{ax}_re", f"{name}_{ax}_im"]
        cols += [z[:, k].real.astype(float), z[:, k].imag.astype(float)]
    return names, cols


def write_grid_csv(grid, path) -> Path:
    """Nodes, normals and weights of a surface grid: x,y,z,nx,ny,nz,w."""
    X, N = grid.nodes, grid.normals
    return write_csv(path, ["x", "y", "z", "nx", "ny", "nz", "w"],
                     [X[:, 0], X[:, 1], X[:, 2], N[:, 0], N[:, 1], N[:, 2], grid.weights])


def write_polylines(path, lines: Iterable[np.ndarray], title: str = "beltrami polylines") -> Path:
    """Legacy ASCII VTK POLYDATA: one points block, then the LINES connectivity."""
    path = Path(path)
    lines = [np.asarray(l, dtype=float).reshape(-1, 3) for l in lines]
    pts = np.concatenate(lines) if lines else np.zeros((0, 3))
    out = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII", "DATASET POLYDATA",
           f"POINTS {len(pts)} double"]
    out += [" ".join(_fmt(v) for v in p) for p in pts]
    size = sum(len(l) + 1 for l in lines)
    out.append(f"LINES {len(lines)} {size}")
    start = 0
    for l in lines:
        out.append(" ".join([str(len(l))] + [str(start + k) for k in range(len(l))]))
        start += len(l)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(out) + "\n", encoding="utf-8")
    logger.info("wrote %s (%d lines, %d points)", path, len(lines), len(pts))
    return path


def read_polylines(path) -> list[np.ndarray]:
    """Inverse of ``write_polylines``."""
    tokens = Path(path).read_text(encoding="utf-8").split("\n")
    i = next(k for k, t in enumerate(tokens) if t.startswith("POINTS"))
    npts = int(tokens[i].split()[1])
    pts = np.array([[float(v) for v in tokens[i + 1 + k].split()] for k in range(npts)]).reshape(-1, 3)
    j = i + 1 + npts
    nlines = int(tokens[j].split()[1])
    out = []
    for k in range(nlines):
        ids = [int(v) for v in tokens[j + 1 + k].split()[1:]]
        out.append(pts[ids])
    return out


def write_streamlines_csv(path, lines: Sequence[np.ndarray], times: Sequence[np.ndarray]) -> Path:
    """Long-format table line,t,x,y,z."""
    ids, ts, xs = [], [], []
    for k, (l, t) in enumerate(zip(lines, times)):
        l = np.asarray(l, dtype=float).reshape(-1, 3)
        ids.append(np.full(len(l), k))
        ts.append(np.asarray(t, dtype=float))
        xs.append(l)
    X = np.concatenate(xs) if xs else np.zeros((0, 3))
    return write_csv(path, ["line", "t", "x", "y", "z"],
                     [np.concatenate(ids) if ids else np.zeros(0, int),
                      np.concatenate(ts) if ts else np.zeros(0), X[:, 0], X[:, 1], X[:, 2]])


def _plain(obj):
    """Convert numpy scalars/arrays and tuples into YAML-safe builtins."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def write_report(path, sections: dict) -> Path:
    """UTF-8 YAML report with sections in insertion order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = yaml.safe_dump(_plain(sections), sort_keys=False, allow_unicode=True, width=100)
    path.write_text(text, encoding="utf-8")
    logger.info("wrote %s", path)
    return path
