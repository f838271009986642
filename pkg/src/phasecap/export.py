"""Legacy VTK ASCII snapshots and CSV convergence histories."""
from __future__ import annotations

import csv
import io
import os
import tempfile

import numpy as np

from .mesh import TriangleMesh

HISTORY_COLUMNS = ("iter", "objective", "energy", "penalized_energy", "volume",
                   "volume_error", "gummel_iters", "wall_time_s")

VTK_TRIANGLE = 5


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def atomic_write_text(path, text: str):
    """Write ``text`` to a temporary file in the target directory, then rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    try:
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    try:
        with os.fdopen(fd, "w", encoding="ascii", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException as exc:
        if os.path.exists(tmp):
            os.unlink(tmp)
        if isinstance(exc, OSError):
            raise OSError(f"cannot write {path}: {exc}") from exc
        raise


def vtk_text(mesh: TriangleMesh, fields=(), title: str = "phasecap") -> str:
    fields = list(fields)
    nv, nt = mesh.n_vertices, mesh.n_triangles
    for name, values in fields:
        if np.shape(values) != (nv,):
            raise ValueError(f"field {name!r} has shape {np.shape(values)}, expected ({nv},)")
        if not name or any(c.isspace() for c in name):
            raise ValueError(f"invalid field name {name!r}")
    out = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
           f"POINTS {nv} double"]
    out.extend(f"{_fmt(x)} {_fmt(y)} 0" for x, y in mesh.vertices)
    out.append(f"CELLS {nt} {4 * nt}")
    out.extend(f"3 {a} {b} {c}" for a, b, c in mesh.triangles)
    out.append(f"CELL_TYPES {nt}")
    out.extend([str(VTK_TRIANGLE)] * nt)
    if fields:
        out.append(f"POINT_DATA {nv}")
        for name, values in fields:
            out.append(f"SCALARS {name} double 1")
            out.append("LOOKUP_TABLE default")
            out.extend(_fmt(v) for v in values)
    return "\n".join(out) + "\n"


def write_vtk_snapshot(path, mesh: TriangleMesh, fields=()):
    """Write ``fields`` (``(name, nodal array)`` pairs) as a legacy VTK file."""
    atomic_write_text(path, vtk_text(mesh, fields))


def read_vtk(path):
    """Read a file written by :func:`write_vtk_snapshot`.

    Returns ``(vertices (n, 2), triangles (m, 3), {name: values})``.
    """
    with open(path, encoding="ascii") as fh:
        lines = [ln.strip() for ln in fh]
    if not lines or not lines[0].startswith("# vtk DataFile"):
        raise ValueError(f"{path}: not a legacy VTK file")
    if lines[2] != "ASCII" or lines[3] != "DATASET UNSTRUCTURED_GRID":
        raise ValueError(f"{path}: unsupported VTK variant")
    k = 4
    nv = int(lines[k].split()[1])
    pts = np.array([[float(v) for v in lines[k + 1 + i].split()] for i in range(nv)])
    k += 1 + nv
    nt = int(lines[k].split()[1])
    cells = np.array([[int(v) for v in lines[k + 1 + i].split()] for i in range(nt)])
    if nt and np.any(cells[:, 0] != 3):
        raise ValueError(f"{path}: non-triangular cell")
    k += 1 + nt
    types = np.array([int(v) for v in lines[k + 1:k + 1 + nt]])
    if np.any(types != VTK_TRIANGLE):
        raise ValueError(f"{path}: unexpected cell type")
    k += 1 + nt
    fields = {}
    if k < len(lines) and lines[k].startswith("POINT_DATA"):
        k += 1
        while k < len(lines) and lines[k]:
            name = lines[k].split()[1]
            fields[name] = np.array([float(v) for v in lines[k + 2:k + 2 + nv]])
            k += 2 + nv
    tris = cells[:, 1:] if nt else np.zeros((0, 3), dtype=int)
    return pts[:, :2], tris, fields


def history_csv_text(history) -> str:
    if len(history) == 0:
        raise ValueError("history is empty")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(HISTORY_COLUMNS)
    for rec in history:
        row = []
        for col in HISTORY_COLUMNS:
            v = getattr(rec, col)
            row.append(str(int(v)) if col in ("iter", "gummel_iters") else _fmt(v))
        writer.writerow(row)
    return buf.getvalue()


def write_history_csv(path, history):
    atomic_write_text(path, history_csv_text(history))


def read_history_csv(path) -> dict:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [list(map(float, r)) for r in reader]
    data = np.array(rows).reshape(len(rows), len(header))
    return {name: data[:, i] for i, name in enumerate(header)}
