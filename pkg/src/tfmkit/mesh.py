"""Structured meshes for the planar and the cuboid substrate.

Cells are stored as vertex-index arrays in VTK ordering, so every cell has
positive orientation: counter-clockwise triangles/quadrilaterals and
hexahedra whose first four vertices form the bottom face seen from below.
"""
from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field

import numpy as np


class BoundaryTag(enum.IntEnum):
    TOP = 1
    SIDE = 2
    BOTTOM = 3
    DIRICHLET = 4


# local faces with outward orientation, indices into the cell's vertex list
LOCAL_FACETS = {
    "triangle": ((0, 1), (1, 2), (2, 0)),
    "quad": ((0, 1), (1, 2), (2, 3), (3, 0)),
    "hexahedron": (
        (0, 3, 2, 1),
        (4, 5, 6, 7),
        (0, 1, 5, 4),
        (1, 2, 6, 5),
        (2, 3, 7, 6),
        (3, 0, 4, 7),
    ),
}

CELL_DIM = {"triangle": 2, "quad": 2, "hexahedron": 3}


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable simplicial or tensor-product mesh.

    Attributes
    ----------
    vertices : (nv, dim) float array
    cells : (nc, nvc) int array
    cell_type : ``"triangle"``, ``"quad"`` or ``"hexahedron"``
    facets : (nf, nvf) int array of boundary facets
    facet_tags : (nf,) int array of :class:`BoundaryTag` values
    facet_cells : (nf,) index of the single cell owning each facet
    facet_local : (nf,) local facet number inside the owning cell
    """

    vertices: np.ndarray
    cells: np.ndarray
    cell_type: str
    facets: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    facet_tags: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    facet_cells: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    facet_local: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        for name in ("vertices", "cells", "facets", "facet_tags", "facet_cells", "facet_local"):
            arr = np.ascontiguousarray(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.cell_type not in CELL_DIM:
            raise ValueError(f"unknown cell type {self.cell_type!r}")

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    def cell_volumes(self) -> np.ndarray:
        """Signed cell volumes (areas in 2D)."""
        x = self.vertices[self.cells]
        if self.cell_type == "triangle":
            e1 = x[:, 1] - x[:, 0]
            e2 = x[:, 2] - x[:, 0]
            return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        # tensor-product cells: integrate det J of the multilinear map with 2-point Gauss
        g = 0.5 + np.array([-1.0, 1.0]) / (2.0 * np.sqrt(3.0))
        d = CELL_DIM[self.cell_type]
        pts = np.stack(np.meshgrid(*([g] * d), indexing="ij"), -1).reshape(-1, d)
        corners = _unit_corners(d)
        vol = np.zeros(self.n_cells)
        for p in pts:
            dphi = _multilinear_grads(corners, p)  # (nvc, d)
            jac = np.einsum("cvi,vj->cij", x, dphi)
            vol += np.linalg.det(jac) / len(pts)
        return vol

    def volume(self) -> float:
        return float(self.cell_volumes().sum())

    def facets_with(self, tag: BoundaryTag) -> np.ndarray:
        return np.flatnonzero(self.facet_tags == int(tag))

    def facet_normals(self) -> np.ndarray:
        """Outer unit normals of the boundary facets."""
        x = self.vertices[self.facets]
        if self.dim == 2:
            t = x[:, 1] - x[:, 0]
            n = np.stack([t[:, 1], -t[:, 0]], axis=1)
        else:
            n = np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.cell_type.encode())
        h.update(np.ascontiguousarray(self.vertices, dtype=np.float64).tobytes())
        h.update(np.ascontiguousarray(self.cells, dtype=np.int64).tobytes())
        return h.hexdigest()[:16]

    def summary(self) -> dict:
        counts = {BoundaryTag(t).name: int(np.sum(self.facet_tags == t)) for t in np.unique(self.facet_tags)}
        return {
            "cell_type": self.cell_type,
            "dim": self.dim,
            "vertices": self.n_vertices,
            "cells": self.n_cells,
            "boundary_facets": int(len(self.facets)),
            "facet_tags": counts,
            "volume": self.volume(),
            "hash": self.fingerprint(),
        }


def _unit_corners(d):
    if d == 2:
        return np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
    return np.array(
        [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]],
        dtype=float,
    )


def _multilinear_grads(corners, p):
    d = corners.shape[1]
    grads = np.empty_like(corners)
    for v, c in enumerate(corners):
        f = np.where(c > 0.5, p, 1.0 - p)
        s = np.where(c > 0.5, 1.0, -1.0)
        for k in range(d):
            grads[v, k] = s[k] * np.prod(np.delete(f, k))
    return grads


def boundary_facets(cells: np.ndarray, cell_type: str):
    """Facets that belong to exactly one cell.

    Returns ``(facets, owner_cells, local_index)``.
    """
    local = LOCAL_FACETS[cell_type]
    nloc = len(local)
    all_f = np.concatenate([cells[:, list(f)] for f in local], axis=0)
    owner = np.tile(np.arange(len(cells)), nloc)
    lidx = np.repeat(np.arange(nloc), len(cells))
    key = np.sort(all_f, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    on_boundary = counts[inv] == 1
    order = np.lexsort((lidx[on_boundary], owner[on_boundary]))
    return all_f[on_boundary][order], owner[on_boundary][order], lidx[on_boundary][order]


def _check_counts(*counts):
    for n in counts:
        if int(n) != n or n < 1:
            raise ValueError(f"cell counts must be positive integers, got {n}")


def build_rect_mesh(half_width: float, nx: int, ny: int, flip: bool = False) -> Mesh:
    """Uniform triangulation of ``[-half_width, half_width]^2``.

    Each grid square is cut along the diagonal through its lower-left corner,
    or through its lower-right corner when ``flip`` is set.
    """
    _check_counts(nx, ny)
    if not half_width > 0:
        raise ValueError("half_width must be positive")
    xs = np.linspace(-half_width, half_width, nx + 1)
    ys = np.linspace(-half_width, half_width, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    vertices = np.stack([X.ravel(), Y.ravel()], axis=1)

    idx = np.arange((nx + 1) * (ny + 1)).reshape(nx + 1, ny + 1)
    v00 = idx[:-1, :-1].ravel()
    v10 = idx[1:, :-1].ravel()
    v11 = idx[1:, 1:].ravel()
    v01 = idx[:-1, 1:].ravel()
    if flip:
        t1 = np.stack([v00, v10, v01], axis=1)
        t2 = np.stack([v10, v11, v01], axis=1)
    else:
        t1 = np.stack([v00, v10, v11], axis=1)
        t2 = np.stack([v00, v11, v01], axis=1)
    cells = np.stack([t1, t2], axis=1).reshape(-1, 3)

    facets, owner, local = boundary_facets(cells, "triangle")
    tags = np.full(len(facets), int(BoundaryTag.DIRICHLET))
    return Mesh(vertices, cells, "triangle", facets, tags, owner, local)


def build_box_mesh(half_width: float, depth: float, nx: int, ny: int, nz: int) -> Mesh:
    """Uniform hexahedral mesh of ``[-half_width, half_width]^2 x [-depth, 0]``.

    Facets on ``x3 = 0`` are tagged TOP, on ``x3 = -depth`` BOTTOM, the rest SIDE.
    """
    _check_counts(nx, ny, nz)
    if not (half_width > 0 and depth > 0):
        raise ValueError("half_width and depth must be positive")
    xs = np.linspace(-half_width, half_width, nx + 1)
    ys = np.linspace(-half_width, half_width, ny + 1)
    zs = np.linspace(-depth, 0.0, nz + 1)
    X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
    vertices = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)

    idx = np.arange(vertices.shape[0]).reshape(nx + 1, ny + 1, nz + 1)

    def corner(i, j, k):
        return idx[i : nx + i, j : ny + j, k : nz + k].ravel()

    cells = np.stack(
        [
            corner(0, 0, 0),
            corner(1, 0, 0),
            corner(1, 1, 0),
            corner(0, 1, 0),
            corner(0, 0, 1),
            corner(1, 0, 1),
            corner(1, 1, 1),
            corner(0, 1, 1),
        ],
        axis=1,
    )
    facets, owner, local = boundary_facets(cells, "hexahedron")
    z = vertices[facets][:, :, 2]
    tags = np.full(len(facets), int(BoundaryTag.SIDE))
    tags[np.all(z == 0.0, axis=1)] = int(BoundaryTag.TOP)
    tags[np.all(z == -depth, axis=1)] = int(BoundaryTag.BOTTOM)
    return Mesh(vertices, cells, "hexahedron", facets, tags, owner, local)


def facet_mesh(mesh: Mesh, tag: BoundaryTag) -> tuple[Mesh, np.ndarray]:
    """Planar quadrilateral mesh induced by the TOP facets of a box mesh.

    Returns the 2D mesh (coordinates ``x1, x2``) and the map from its vertices
    to vertices of the volumetric mesh.
    """
    if mesh.cell_type != "hexahedron":
        raise ValueError("facet meshes are only defined for hexahedral meshes")
    sel = mesh.facets_with(tag)
    if len(sel) == 0:
        raise ValueError(f"mesh has no facets tagged {BoundaryTag(tag).name}")
    faces = mesh.facets[sel]
    if tag == BoundaryTag.BOTTOM:
        faces = faces[:, ::-1]
    used, inv = np.unique(faces, return_inverse=True)
    coords = mesh.vertices[used]
    planar = coords[:, :2] if tag in (BoundaryTag.TOP, BoundaryTag.BOTTOM) else None
    if planar is None:
        raise ValueError("only TOP and BOTTOM facet meshes are planar in x1, x2")
    cells = inv.reshape(faces.shape)
    return Mesh(planar, cells, "quad"), used
