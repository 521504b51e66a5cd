"""Linear 2.5D model: tractions on the top face of a clamped cuboid substrate.

The displacement solves the mixed problem of linear elasticity with prescribed
tractions on the top face, traction-free sides and a clamped bottom. The
observation is the whole volumetric displacement in L2(Omega, R^3).
"""
from __future__ import annotations

import functools

import numpy as np
import scipy.sparse as sp

from .fem import FeFunction, FeSpace, TraceSpace, assemble_bilinear, assemble_mass, solve_spd
from .material import MaterialParams
from .mesh import BoundaryTag, Mesh


class Linear25D:
    """Forward operator ``A: t -> u`` and its L2 adjoint on a box mesh.

    Matrices are assembled once per (mesh, params, order) and only read
    afterwards.
    """

    def __init__(self, mesh: Mesh, params: MaterialParams, order: int = 1, cg_tol: float = 1e-10):
        if mesh.cell_type != "hexahedron":
            raise ValueError("the 2.5D model needs a hexahedral box mesh")
        self.mesh = mesh
        self.params = params
        self.cg_tol = cg_tol
        self.space = FeSpace(mesh, order, 3)
        self.trace_space = TraceSpace(self.space, BoundaryTag.TOP)

    @functools.cached_property
    def stiffness(self) -> sp.csr_matrix:
        return assemble_bilinear(self.space, ("elasticity", self.params.mu, self.params.lam))

    @functools.cached_property
    def mass(self) -> sp.csr_matrix:
        """L2 Gram matrix of the volumetric displacement space."""
        return assemble_mass(self.space)

    @functools.cached_property
    def trace_mass(self) -> sp.csr_matrix:
        """L2 Gram matrix of tractions on the top face."""
        return assemble_mass(self.trace_space)

    def _check(self, f, space):
        if isinstance(f, FeFunction):
            if not f.space.same_as(space):
                raise ValueError("field lives on a different space than the operator expects")
            return f.coeffs
        return np.asarray(f, dtype=float)

    def forward(self, t) -> FeFunction:
        """Displacement for the traction ``t`` given on the top-face space."""
        tc = self._check(t, self.trace_space)
        b = self.trace_space.extend(self.trace_mass @ tc)
        b[self.space.constrained] = 0.0
        return FeFunction(self.space, solve_spd(self.stiffness, b, tol=self.cg_tol))

    def adjoint(self, w) -> FeFunction:
        """Trace of ``phi`` with ``a(phi, v) = <w, v>`` for all admissible v."""
        wc = self._check(w, self.space)
        b = self.mass @ wc
        b[self.space.constrained] = 0.0
        phi = solve_spd(self.stiffness, b, tol=self.cg_tol)
        return FeFunction(self.trace_space, self.trace_space.restrict(phi))

    def linear_map(self):
        """The pair (forward, adjoint) on coefficient vectors with L2 Gram matrices."""
        from .inversion import LinearMap

        return LinearMap(
            lambda t: self.forward(t).coeffs,
            lambda w: self.adjoint(w).coeffs,
            self.trace_mass,
            self.mass,
        )

    def energy(self, u) -> float:
        uc = self._check(u, self.space)
        return float(uc @ (self.stiffness @ uc))


@functools.lru_cache(maxsize=4)
def _cached(mesh, params, order):
    return Linear25D(mesh, params, order)


def forward(t: FeFunction, params: MaterialParams, mesh3: Mesh, order: int = 1) -> FeFunction:
    op = _cached(mesh3, params, order)
    if not isinstance(t.space, TraceSpace) or t.space.mesh.n_cells != op.trace_space.mesh.n_cells:
        raise ValueError("traction must live on the top-face space of mesh3")
    return op.forward(t.coeffs)


def adjoint(w: FeFunction, params: MaterialParams, mesh3: Mesh, order: int = 1) -> FeFunction:
    op = _cached(mesh3, params, order)
    return op.adjoint(w)
