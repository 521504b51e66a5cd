"""File exports: legacy ASCII VTK, CSV fields, JSON manifests and Matrix Market."""
from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np
import scipy.io

from .fem import FeFunction

VTK_CELL_TYPES = {"triangle": 5, "quad": 9, "hexahedron": 12}


def _fmt(x: float) -> str:
    return repr(float(x))


def write_vtk(path, mesh, fields: dict | None = None, title: str = "tfmkit field") -> Path:
    """Write a legacy VTK 3.0 ASCII unstructured grid.

    ``fields`` maps names to :class:`FeFunction` objects; values at the mesh
    vertices are written as point data (three components for vector fields).
    """
    path = Path(path)
    pts = np.zeros((mesh.n_vertices, 3))
    pts[:, : mesh.dim] = mesh.vertices
    nvc = mesh.cells.shape[1]
    lines = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {mesh.n_vertices} double")
    lines += [" ".join(_fmt(c) for c in p) for p in pts]
    lines.append(f"CELLS {mesh.n_cells} {mesh.n_cells * (nvc + 1)}")
    lines += [f"{nvc} " + " ".join(str(int(v)) for v in c) for c in mesh.cells]
    lines.append(f"CELL_TYPES {mesh.n_cells}")
    lines += [str(VTK_CELL_TYPES[mesh.cell_type])] * mesh.n_cells
    if fields:
        lines.append(f"POINT_DATA {mesh.n_vertices}")
        for name, f in fields.items():
            vals = vertex_values(f, mesh)
            if vals.shape[1] == 1:
                lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
                lines += [_fmt(v) for v in vals[:, 0]]
            else:
                lines.append(f"VECTORS {name} double")
                v3 = np.zeros((len(vals), 3))
                v3[:, : vals.shape[1]] = vals
                lines += [" ".join(_fmt(c) for c in v) for v in v3]
    path.write_text("\n".join(lines) + "\n")
    return path


def vertex_values(f: FeFunction, mesh) -> np.ndarray:
    """Values of ``f`` at the vertices of ``mesh`` (its own mesh or another one)."""
    space = f.space
    if space.mesh is mesh:
        # vertex nodes coincide with mesh vertices; look them up by position
        from scipy.spatial import cKDTree

        dist, idx = cKDTree(space.node_coords).query(mesh.vertices)
        if np.all(dist < 1e-9 * max(1.0, float(np.ptp(mesh.vertices)))):
            return f.nodal_values()[idx]
    return f.evaluate(mesh.vertices)


def write_field_csv(path, f: FeFunction, value_names=None) -> Path:
    """Nodal values as CSV with a header row of coordinates then components."""
    path = Path(path)
    space = f.space
    d, vd = space.mesh.dim, space.value_dim
    coord_names = ["x", "y", "z"][:d]
    if value_names is None:
        value_names = [f"u{c}" for c in "xyz"[:vd]] if vd <= 3 else [f"u{k}" for k in range(vd)]
    vals = f.nodal_values()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(coord_names + list(value_names))
        for p, v in zip(space.node_coords, vals):
            w.writerow([_fmt(c) for c in p] + [_fmt(c) for c in v])
    return path


def read_field_csv(path, space) -> FeFunction:
    """Inverse of :func:`write_field_csv` for a field on ``space``.

    Rows are matched to nodes by coordinates, so row order does not matter.
    """
    from scipy.spatial import cKDTree

    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    d, vd = space.mesh.dim, space.value_dim
    if data.shape[1] != d + vd:
        raise ValueError(f"expected {d + vd} columns, found {data.shape[1]}")
    if data.shape[0] != space.n_nodes:
        raise ValueError(f"expected {space.n_nodes} rows, found {data.shape[0]}")
    dist, idx = cKDTree(data[:, :d]).query(space.node_coords)
    scale = max(1.0, float(np.ptp(space.node_coords)))
    if np.any(dist > 1e-9 * scale) or len(np.unique(idx)) != len(idx):
        raise ValueError("CSV coordinates do not match the nodes of the space")
    return FeFunction(space, data[idx, d:].T.ravel().copy())


def export_matrix(path, K) -> Path:
    """Matrix Market export for external inspection of assembled operators."""
    path = Path(path)
    scipy.io.mmwrite(str(path), K)
    return path


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(path, entries: dict) -> Path:
    path = Path(path)
    path.write_text(json.dumps(entries, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


def _jsonable(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")
