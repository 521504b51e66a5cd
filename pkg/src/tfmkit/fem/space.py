"""Vector-valued Lagrange spaces and finite element functions."""
from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ..mesh import BoundaryTag, Mesh, facet_mesh
from .elements import reference_element, quadrature


@dataclass(frozen=True)
class QuadData:
    """Quadrature data on all cells.

    x : (nc, nq, d) physical points
    jxw : (nc, nq) weights times Jacobian determinants
    phi : (nq, nb) basis values
    dphi : (nc, nq, nb, d) physical basis gradients
    """

    x: np.ndarray
    jxw: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray


def _dedupe(points: np.ndarray, scale: float):
    key = np.rint(points / (1e-9 * scale)).astype(np.int64)
    _, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
    return points[first], inverse.ravel()


class FeSpace:
    """Continuous Lagrange space of ``value_dim``-vector fields.

    Dofs are blocked by component: dof ``k * n_nodes + j`` is component ``k``
    at node ``j``.

    Parameters
    ----------
    mesh : Mesh
    order : int
        Polynomial order 1, 2 or 3.
    value_dim : int
    constrained_tag : BoundaryTag, None or "auto"
        Facets whose nodes carry homogeneous Dirichlet conditions. ``"auto"``
        selects DIRICHLET for triangle meshes and BOTTOM for box meshes.
    """

    def __init__(self, mesh: Mesh, order: int, value_dim: int, constrained_tag="auto"):
        self.mesh = mesh
        self.order = order
        self.value_dim = value_dim
        self.element = reference_element(mesh.cell_type, order)
        self.geometry = reference_element(mesh.cell_type, 1)

        # physical coordinates of every local node, then global numbering by position
        N = self.geometry.values(self.element.nodes)  # (nb, nv)
        X = mesh.vertices[mesh.cells]  # (nc, nv, d)
        local_coords = np.einsum("bv,cvd->cbd", N, X)
        scale = float(np.ptp(mesh.vertices, axis=0).max())
        self.node_coords, inv = _dedupe(local_coords.reshape(-1, mesh.dim), scale)
        self.cell_nodes = inv.reshape(mesh.n_cells, self.element.n_basis)

        if constrained_tag == "auto":
            constrained_tag = {"triangle": BoundaryTag.DIRICHLET, "hexahedron": BoundaryTag.BOTTOM}.get(
                mesh.cell_type
            )
        self.constrained_tag = constrained_tag
        node_mask = np.zeros(self.n_nodes, dtype=bool)
        if constrained_tag is not None:
            for f in mesh.facets_with(constrained_tag):
                c, loc = mesh.facet_cells[f], mesh.facet_local[f]
                node_mask[self.cell_nodes[c, self.element.facet_nodes[loc]]] = True
        self.constrained_nodes = node_mask
        self.constrained = np.tile(node_mask, value_dim)
        self.free = ~self.constrained

    @property
    def n_nodes(self) -> int:
        return len(self.node_coords)

    @property
    def n_dofs(self) -> int:
        return self.value_dim * self.n_nodes

    @functools.cached_property
    def cell_dofs(self) -> np.ndarray:
        """(nc, value_dim * nb) global dofs, local order (component, node)."""
        comps = np.arange(self.value_dim)[None, :, None] * self.n_nodes
        return (comps + self.cell_nodes[:, None, :]).reshape(self.mesh.n_cells, -1)

    def default_degree(self) -> int:
        return 2 * self.order

    @functools.lru_cache(maxsize=8)
    def quad(self, degree: int | None = None) -> QuadData:
        degree = self.default_degree() if degree is None else degree
        pts, wts = quadrature(self.mesh.cell_type, degree)
        X = self.mesh.vertices[self.mesh.cells]
        gphi = self.geometry.values(pts)  # (nq, nv)
        gdphi = self.geometry.gradients(pts)  # (nq, nv, d)
        x = np.einsum("qv,cvd->cqd", gphi, X)
        J = np.einsum("cvi,qvj->cqij", X, gdphi)
        detJ = np.linalg.det(J)
        if np.any(detJ <= 0):
            raise ValueError("mesh contains inverted cells")
        Jinv = np.linalg.inv(J)
        dref = self.element.gradients(pts)  # (nq, nb, d)
        dphi = np.einsum("qbk,cqkj->cqbj", dref, Jinv)
        return QuadData(x, wts[None, :] * detJ, self.element.values(pts), dphi)

    def interpolate(self, f) -> "FeFunction":
        """Nodal interpolation of ``f(points) -> (npts, value_dim)``."""
        vals = np.asarray(f(self.node_coords), dtype=float).reshape(self.n_nodes, self.value_dim)
        return FeFunction(self, vals.T.ravel().copy())

    def zeros(self) -> "FeFunction":
        return FeFunction(self, np.zeros(self.n_dofs))

    def same_as(self, other: "FeSpace") -> bool:
        return (
            self is other
            or (
                self.mesh is other.mesh
                and self.order == other.order
                and self.value_dim == other.value_dim
            )
        )

    # -- point location -------------------------------------------------
    @functools.cached_property
    def _locator(self):
        centroids = self.mesh.vertices[self.mesh.cells].mean(axis=1)
        return cKDTree(centroids)

    def _reference_coords(self, cells, pts):
        X = self.mesh.vertices[self.mesh.cells[cells]]  # (n, nv, d)
        if self.mesh.cell_type == "triangle":
            J = np.stack([X[:, 1] - X[:, 0], X[:, 2] - X[:, 0]], axis=2)
            xi = np.linalg.solve(J, (pts - X[:, 0])[..., None])[..., 0]
            inside = (xi >= -1e-10).all(axis=1) & (xi.sum(axis=1) <= 1 + 1e-10)
            return xi, inside
        xi = np.full(pts.shape, 0.5)
        for _ in range(8):
            g = np.stack([self.geometry.values(p[None])[0] for p in xi])  # (n, nv)
            dg = np.stack([self.geometry.gradients(p[None])[0] for p in xi])  # (n, nv, d)
            r = np.einsum("nv,nvd->nd", g, X) - pts
            J = np.einsum("nvi,nvj->nij", X, dg)
            xi = xi - np.linalg.solve(J, r[..., None])[..., 0]
        inside = ((xi >= -1e-10) & (xi <= 1 + 1e-10)).all(axis=1)
        return xi, inside

    def locate(self, points: np.ndarray):
        """Cell index and reference coordinates for each point.

        Raises ValueError for points outside the mesh.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        k = min(12, self.mesh.n_cells)
        _, cand = self._locator.query(points, k=k)
        cand = cand.reshape(len(points), k)
        cell = np.full(len(points), -1)
        xi = np.zeros_like(points)
        for r in range(k):
            todo = np.flatnonzero(cell < 0)
            if len(todo) == 0:
                break
            ref, inside = self._reference_coords(cand[todo, r], points[todo])
            hit = todo[inside]
            cell[hit] = cand[todo, r][inside]
            xi[hit] = ref[inside]
        if np.any(cell < 0):
            raise ValueError(f"{int(np.sum(cell < 0))} points lie outside the mesh")
        return cell, xi


@dataclass
class FeFunction:
    """Coefficient vector bound to a :class:`FeSpace`."""

    space: FeSpace
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.space.n_dofs,):
            raise ValueError(
                f"coefficient vector has shape {self.coeffs.shape}, space has {self.space.n_dofs} dofs"
            )

    def components(self) -> np.ndarray:
        """Nodal values, shape (value_dim, n_nodes)."""
        return self.coeffs.reshape(self.space.value_dim, self.space.n_nodes)

    def nodal_values(self) -> np.ndarray:
        """Nodal values, shape (n_nodes, value_dim)."""
        return self.components().T

    def copy(self) -> "FeFunction":
        return FeFunction(self.space, self.coeffs.copy())

    def with_coeffs(self, coeffs) -> "FeFunction":
        return FeFunction(self.space, coeffs)

    def at_quadrature(self, degree=None):
        """Values (nc, nq, vd) and gradients (nc, nq, vd, d) at quadrature points."""
        q = self.space.quad(degree)
        loc = self.coeffs[self.space.cell_dofs].reshape(
            self.space.mesh.n_cells, self.space.value_dim, -1
        )
        vals = np.einsum("qb,cib->cqi", q.phi, loc)
        grads = np.einsum("cqbj,cib->cqij", q.dphi, loc)
        return vals, grads

    def evaluate(self, points) -> np.ndarray:
        """Point values, shape (npts, value_dim)."""
        cell, xi = self.space.locate(points)
        phi = self.space.element.values(xi)  # (npts, nb)
        loc = self.coeffs[self.space.cell_dofs[cell]].reshape(len(cell), self.space.value_dim, -1)
        return np.einsum("pb,pib->pi", phi, loc)

    def transfer(self, space: FeSpace) -> "FeFunction":
        """Nodal interpolation onto another space on the same domain."""
        vals = self.evaluate(space.node_coords)
        return FeFunction(space, vals.T.ravel().copy())


class TraceSpace(FeSpace):
    """Space on the planar TOP facet mesh of a box space, with the restriction map."""

    def __init__(self, volume_space: FeSpace, tag: BoundaryTag = BoundaryTag.TOP):
        fmesh, _ = facet_mesh(volume_space.mesh, tag)
        super().__init__(fmesh, volume_space.order, volume_space.value_dim, constrained_tag=None)
        self.volume_space = volume_space
        self.tag = tag
        z = 0.0 if tag == BoundaryTag.TOP else volume_space.mesh.vertices[:, 2].min()
        pts = np.column_stack([self.node_coords, np.full(self.n_nodes, z)])
        scale = float(np.ptp(volume_space.node_coords, axis=0).max())
        tree = cKDTree(volume_space.node_coords)
        dist, idx = tree.query(pts)
        if np.any(dist > 1e-8 * scale):
            raise ValueError("trace nodes do not match volume nodes")
        self.node_map = idx
        vn = volume_space.n_nodes
        self.dof_map = (np.arange(self.value_dim)[:, None] * vn + idx[None, :]).ravel()

    def restrict(self, coeffs: np.ndarray) -> np.ndarray:
        return coeffs[self.dof_map]

    def extend(self, coeffs: np.ndarray) -> np.ndarray:
        """Transpose of :meth:`restrict`."""
        out = np.zeros(self.volume_space.n_dofs)
        out[self.dof_map] = coeffs
        return out


def trace_on(u: FeFunction, tag: BoundaryTag = BoundaryTag.TOP, trace_space: TraceSpace | None = None):
    """Restriction of a volumetric field to the facets tagged ``tag``."""
    if u.space.mesh.dim != 3:
        raise ValueError("trace_on expects a field on a 3D mesh")
    if trace_space is None:
        trace_space = TraceSpace(u.space, tag)
    return FeFunction(trace_space, trace_space.restrict(u.coeffs))
