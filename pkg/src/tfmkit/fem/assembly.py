"""Sparse Galerkin assembly of bilinear and linear forms."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np
import scipy.sparse as sp

from ..mesh import BoundaryTag
from .space import FeFunction, FeSpace, TraceSpace


def elasticity_tensor(mu: float, lam: float, dim: int) -> np.ndarray:
    """Hooke tensor ``C[i,J,k,L]`` with ``sigma_iJ = C_iJkL du_k/dx_L``."""
    I = np.eye(dim)
    return (
        mu * (np.einsum("ik,JL->iJkL", I, I) + np.einsum("iL,Jk->iJkL", I, I))
        + lam * np.einsum("iJ,kL->iJkL", I, I)
    )


def laplace_tensor(dim: int) -> np.ndarray:
    I = np.eye(dim)
    return np.einsum("ik,JL->iJkL", I, I)


def _scatter(space: FeSpace, ke: np.ndarray) -> sp.csr_matrix:
    dofs = space.cell_dofs
    nl = dofs.shape[1]
    rows = np.repeat(dofs, nl, axis=1).ravel()
    cols = np.tile(dofs, (1, nl)).ravel()
    n = space.n_dofs
    return sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def apply_constraints(K: sp.spmatrix, constrained: np.ndarray) -> sp.csr_matrix:
    """Replace rows and columns of constrained dofs by the identity."""
    if not np.any(constrained):
        return sp.csr_matrix(K)
    keep = sp.diags((~constrained).astype(float))
    return sp.csr_matrix(keep @ K @ keep + sp.diags(constrained.astype(float)))


def _chunked(n_cells: int, workers: int, kernel) -> np.ndarray:
    """Evaluate ``kernel(slice)`` over cell chunks, concatenated in cell order.

    The chunks are computed on a thread pool; because the result is assembled
    in the same order as the serial loop, the matrix is bit-identical.
    """
    if workers <= 1 or n_cells < 2 * workers:
        return kernel(slice(0, n_cells))
    bounds = np.linspace(0, n_cells, workers + 1).astype(int)
    chunks = [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(kernel, chunks))
    return np.concatenate(parts, axis=0)


def assemble_mass(space: FeSpace, degree=None, constrain: bool = False, workers: int = 1) -> sp.csr_matrix:
    q = space.quad(degree)
    vd = space.value_dim
    nb = q.phi.shape[1]

    def kernel(cs):
        me = np.einsum("cq,qa,qb->cab", q.jxw[cs], q.phi, q.phi)
        ke = np.zeros((me.shape[0], vd, nb, vd, nb))
        for i in range(vd):
            ke[:, i, :, i, :] = me
        return ke

    K = _scatter(space, _chunked(space.mesh.n_cells, workers, kernel))
    return apply_constraints(K, space.constrained) if constrain else K


def assemble_gradient_form(
    space: FeSpace, C, degree=None, constrain: bool = True, workers: int = 1
) -> sp.csr_matrix:
    """Matrix of ``int grad(v) : C grad(w) dx``.

    ``C`` has shape (vd, d, vd, d) or (nc, nq, vd, d, vd, d), or is a callable
    receiving the :class:`QuadData` and returning such an array. ``workers > 1``
    computes element matrices on a thread pool with an unchanged result.
    """
    q = space.quad(degree)
    if callable(C):
        C = C(q)
    C = np.asarray(C, dtype=float)
    if C.ndim == 4:

        def kernel(cs):
            return np.einsum("cqaJ,iJkL,cqbL,cq->ciakb", q.dphi[cs], C, q.dphi[cs], q.jxw[cs], optimize=True)

    else:

        def kernel(cs):
            W = C[cs] * q.jxw[cs][:, :, None, None, None, None]
            dphi = q.dphi[cs]
            nc, nq, nb, d = dphi.shape
            vd = W.shape[2]
            tmp = np.einsum("cqaJ,cqiJkL->ciakqL", dphi, W, optimize=True)
            ke = np.matmul(tmp.reshape(nc, vd * nb * vd, nq * d), dphi.transpose(0, 1, 3, 2).reshape(nc, nq * d, nb))
            return ke.reshape(nc, vd, nb, vd, nb)

    K = _scatter(space, _chunked(space.mesh.n_cells, workers, kernel))
    return apply_constraints(K, space.constrained) if constrain else K


def assemble_bilinear(
    space: FeSpace, density, degree=None, constrain: bool = True, workers: int = 1
) -> sp.csr_matrix:
    """Galerkin matrix of a bilinear density.

    ``density`` is ``"mass"``, ``"laplace"``, ``("elasticity", mu, lam)``, a
    constant tensor, or a callable mapping quadrature data to a tensor field.
    Constrained rows and columns are replaced by the identity unless
    ``constrain`` is false.
    """
    dim = space.mesh.dim
    if isinstance(density, str):
        if density == "mass":
            return assemble_mass(space, degree, constrain, workers)
        if density == "laplace":
            if space.value_dim != dim:
                raise ValueError("vector Laplacian needs value_dim == mesh dim")
            return assemble_gradient_form(space, laplace_tensor(dim), degree, constrain, workers)
        raise ValueError(f"unknown density {density!r}")
    if isinstance(density, tuple) and density and density[0] == "elasticity":
        _, mu, lam = density
        if space.value_dim != dim:
            raise ValueError("elasticity needs value_dim == mesh dim")
        return assemble_gradient_form(space, elasticity_tensor(mu, lam, dim), degree, constrain, workers)
    return assemble_gradient_form(space, density, degree, constrain, workers)


def assemble_load(space: FeSpace, f, kind: str = "domain", tag=None, degree=None) -> np.ndarray:
    """Load vector ``int f . v`` over the domain or a tagged boundary part.

    ``f`` is a callable ``(npts, dim) -> (npts, value_dim)`` or an
    :class:`FeFunction` (on the space itself for domain loads, on the trace
    space for boundary loads). Constrained entries are zero.
    """
    if kind == "domain":
        b = _domain_load(space, f, degree)
    elif kind == "boundary":
        if tag is None or int(tag) not in {int(t) for t in np.unique(space.mesh.facet_tags)}:
            raise ValueError(f"mesh has no boundary facets tagged {tag!r}")
        tag = BoundaryTag(tag)
        if space.mesh.dim == 2:
            # every node on a 2D boundary facet is a Dirichlet node
            b = np.zeros(space.n_dofs)
        else:
            if tag not in (BoundaryTag.TOP, BoundaryTag.BOTTOM):
                raise ValueError("boundary loads are supported on the planar TOP/BOTTOM facets")
            if isinstance(f, FeFunction) and isinstance(f.space, TraceSpace):
                tspace = f.space
            else:
                tspace = TraceSpace(space, tag)
            b = tspace.extend(_domain_load(tspace, f, degree))
    else:
        raise ValueError(f"unknown load kind {kind!r}")
    b[space.constrained] = 0.0
    return b


def _domain_load(space: FeSpace, f, degree):
    if isinstance(f, FeFunction):
        if not f.space.same_as(space):
            raise ValueError("load function lives on a different space")
        return assemble_mass(space, degree) @ f.coeffs
    q = space.quad(degree)
    pts = q.x.reshape(-1, q.x.shape[-1])
    vals = np.asarray(f(pts), dtype=float).reshape(q.x.shape[0], q.x.shape[1], space.value_dim)
    be = np.einsum("cq,qa,cqi->cia", q.jxw, q.phi, vals)
    return np.bincount(space.cell_dofs.ravel(), weights=be.ravel(), minlength=space.n_dofs)
