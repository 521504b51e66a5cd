"""Lagrange reference elements and quadrature rules."""
from __future__ import annotations

import functools
import itertools

import numpy as np

from ..mesh import CELL_DIM, LOCAL_FACETS

REF_VERTICES = {
    "triangle": np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
    "quad": np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]),
    "hexahedron": np.array(
        [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]],
        dtype=float,
    ),
}


class ReferenceElement:
    """Nodal Lagrange element of a given order on the unit simplex or unit cube.

    The basis is obtained by inverting the Vandermonde matrix of a monomial
    basis at equispaced nodes, which is well conditioned up to order 3.
    """

    def __init__(self, cell_type: str, order: int):
        if order not in (1, 2, 3):
            raise ValueError(f"polynomial order must be 1, 2 or 3, got {order}")
        self.cell_type = cell_type
        self.order = order
        self.dim = CELL_DIM[cell_type]
        p = order
        if cell_type == "triangle":
            self.exponents = np.array([(i, j) for i in range(p + 1) for j in range(p + 1 - i)])
            self.nodes = np.array(
                [(i / p, j / p) for i in range(p + 1) for j in range(p + 1 - i)], dtype=float
            )
        else:
            grid = list(itertools.product(range(p + 1), repeat=self.dim))
            self.exponents = np.array(grid)
            self.nodes = np.array(grid, dtype=float) / p
        # vertex nodes first, in mesh vertex order
        verts = REF_VERTICES[cell_type]
        first = [int(np.flatnonzero(np.all(np.isclose(self.nodes, v), axis=1))[0]) for v in verts]
        rest = [i for i in range(len(self.nodes)) if i not in first]
        self.nodes = self.nodes[first + rest]
        V = self._monomials(self.nodes)
        self.coeffs = np.linalg.inv(V)

    @property
    def n_basis(self) -> int:
        return len(self.nodes)

    def _monomials(self, pts):
        pts = np.atleast_2d(pts)
        return np.prod(pts[:, None, :] ** self.exponents[None, :, :], axis=2)

    def _monomial_grads(self, pts):
        pts = np.atleast_2d(pts)
        out = np.zeros((len(pts), len(self.exponents), self.dim))
        for k in range(self.dim):
            e = self.exponents.copy()
            fac = e[:, k].astype(float)
            e[:, k] = np.maximum(e[:, k] - 1, 0)
            out[:, :, k] = fac * np.prod(pts[:, None, :] ** e[None, :, :], axis=2)
        return out

    def values(self, pts) -> np.ndarray:
        """Basis values, shape (npts, nbasis)."""
        return self._monomials(pts) @ self.coeffs

    def gradients(self, pts) -> np.ndarray:
        """Reference gradients, shape (npts, nbasis, dim)."""
        return np.einsum("pmk,mb->pbk", self._monomial_grads(pts), self.coeffs)

    @functools.cached_property
    def facet_nodes(self) -> list[np.ndarray]:
        """Local node indices lying on each local facet."""
        out = []
        for f in LOCAL_FACETS[self.cell_type]:
            verts = REF_VERTICES[self.cell_type][list(f)]
            base = verts[0]
            span = (verts[1:] - base).T
            coef, *_ = np.linalg.lstsq(span, (self.nodes - base).T, rcond=None)
            dist = np.linalg.norm(span @ coef - (self.nodes - base).T, axis=0)
            out.append(np.flatnonzero(dist < 1e-12))
        return out


@functools.lru_cache(maxsize=None)
def reference_element(cell_type: str, order: int) -> ReferenceElement:
    return ReferenceElement(cell_type, order)


@functools.lru_cache(maxsize=None)
def _gauss01(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@functools.lru_cache(maxsize=None)
def quadrature(cell_type: str, degree: int):
    """Points and weights exact for polynomials of total (triangle) or
    per-variable (tensor cells) degree ``degree``."""
    if degree < 0:
        raise ValueError("quadrature degree must be non-negative")
    if degree > 30:
        raise ValueError(f"quadrature degree {degree} exceeds the supported maximum of 30")
    if cell_type == "triangle":
        # collapsed (Duffy) Gauss rule
        n = (degree + 3) // 2
        x, w = _gauss01(n)
        U, V = np.meshgrid(x, x, indexing="ij")
        WU, WV = np.meshgrid(w, w, indexing="ij")
        pts = np.stack([U.ravel(), (V * (1.0 - U)).ravel()], axis=1)
        wts = (WU * WV * (1.0 - U)).ravel()
        return pts, wts
    d = CELL_DIM[cell_type]
    n = degree // 2 + 1
    x, w = _gauss01(n)
    pts = np.array(list(itertools.product(x, repeat=d)))
    wts = np.prod(np.array(list(itertools.product(w, repeat=d))), axis=1)
    return pts, wts
