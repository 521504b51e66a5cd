"""Planar forward models: force density T to displacement u with u = 0 on the boundary.

``LinearPlane`` uses Hooke's law, ``HyperelasticPlane`` the polyconvex stored
energy of :mod:`tfmkit.material`, solved by Newton's method on the discrete
energy with optional load stepping. Force densities are discretized in the
same Lagrange space as the displacement.
"""
from __future__ import annotations

import functools
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import material
from .fem import (
    ConvergenceError,
    FeFunction,
    FeSpace,
    assemble_bilinear,
    assemble_gradient_form,
    assemble_mass,
    solve_spd,
    solve_symmetric,
)
from .material import MaterialParams
from .mesh import Mesh

log = logging.getLogger(__name__)

PARAM_SPACES = ("L2", "H10")


def _check_param_space(name):
    if name not in PARAM_SPACES:
        raise ValueError(f"parameter space must be one of {PARAM_SPACES}, got {name!r}")


class PlaneModel:
    """Shared matrices of a planar displacement problem."""

    def __init__(self, mesh: Mesh, params: MaterialParams, order: int = 2, cg_tol: float = 1e-10):
        if mesh.cell_type != "triangle":
            raise ValueError("planar models need a triangle mesh")
        self.mesh = mesh
        self.params = params
        self.order = order
        self.cg_tol = cg_tol
        self.space = FeSpace(mesh, order, 2)

    @functools.cached_property
    def mass(self) -> sp.csr_matrix:
        """Unconstrained L2 Gram matrix."""
        return assemble_mass(self.space)

    @functools.cached_property
    def laplacian(self) -> sp.csr_matrix:
        """Vector Dirichlet Laplacian, the H^1_0 Gram matrix on constrained fields."""
        return assemble_bilinear(self.space, "laplace")

    @functools.cached_property
    def hooke(self) -> sp.csr_matrix:
        return assemble_bilinear(self.space, ("elasticity", self.params.mu, self.params.lam))

    def gram(self, param_space: str) -> sp.csr_matrix:
        _check_param_space(param_space)
        return self.mass if param_space == "L2" else self.laplacian

    def load(self, T) -> np.ndarray:
        """``int T . v dx`` with zeros at boundary dofs."""
        b = self.mass @ _coeffs(T)
        b[self.space.constrained] = 0.0
        return b

    def project(self, x, param_space: str) -> np.ndarray:
        """Zero the boundary coefficients for the H^1_0 parameter space."""
        x = np.array(_coeffs(x), dtype=float)
        if param_space == "H10":
            x[self.space.constrained] = 0.0
        return x

    def riesz_h10(self, y) -> np.ndarray:
        """Solve ``L x = M y`` on interior dofs, the discrete inverse Dirichlet Laplacian."""
        return solve_spd(self.laplacian, self.load(y), tol=self.cg_tol)

    def l2_norm(self, x) -> float:
        x = _coeffs(x)
        return float(np.sqrt(max(x @ (self.mass @ x), 0.0)))

    def function(self, coeffs) -> FeFunction:
        return FeFunction(self.space, coeffs)


def _coeffs(x):
    return x.coeffs if isinstance(x, FeFunction) else np.asarray(x, dtype=float)


class LinearPlane(PlaneModel):
    """Hooke's law, ``-div sigma_lin(u) = T``."""

    def solve(self, T) -> FeFunction:
        return self.function(solve_spd(self.hooke, self.load(T), tol=self.cg_tol))

    def adjoint(self, g, param_space: str = "L2") -> FeFunction:
        v = self.solve(g).coeffs
        if param_space == "H10":
            v = self.riesz_h10(v)
        return self.function(v)

    def linear_map(self, param_space: str = "L2"):
        from .inversion import LinearMap

        _check_param_space(param_space)
        return LinearMap(
            lambda T: self.solve(self.project(T, param_space)).coeffs,
            lambda g: self.adjoint(g, param_space).coeffs,
            self.gram(param_space),
            self.mass,
        )


@dataclass(frozen=True)
class NonlinearState:
    """Result of a hyperelastic forward solve.

    ``tangent`` is the constrained tangent stiffness at ``u``; ``force`` the
    force density coefficients that produced the state.
    """

    u: FeFunction
    converged: bool
    newton_iterations: int
    residual_norm: float
    homotopy_steps: int
    force: np.ndarray = field(repr=False, default=None)
    tangent: sp.csr_matrix = field(repr=False, default=None)


@dataclass
class NewtonOptions:
    newton_tol: float = 1e-10
    max_newton: int = 25
    homotopy_steps: int = 1
    auto_homotopy: int = 10
    initial_guess: np.ndarray | None = None
    max_backtracks: int = 20


class HyperelasticPlane(PlaneModel):
    """Polyconvex hyperelastic plane, ``-div P(I + grad u) = T``."""

    def __init__(self, mesh, params, order=2, cg_tol=1e-10, quad_degree=None, tangent_sign=1.0):
        super().__init__(mesh, params, order, cg_tol)
        self.quad_degree = 2 * order + 2 if quad_degree is None else quad_degree
        # negative control hook for self tests: scales the tangent inside S'(T) only
        self.tangent_sign = tangent_sign
        if not material.check_coercivity_condition(params):
            warnings.warn("Lamé parameters violate lam > 2 mu / (e - 1); existence is not guaranteed")

    @functools.cached_property
    def hooke(self) -> sp.csr_matrix:
        return assemble_bilinear(self.space, ("elasticity", self.params.mu, self.params.lam), self.quad_degree)

    def _deformation(self, u):
        q = self.space.quad(self.quad_degree)
        _, grads = FeFunction(self.space, u).at_quadrature(self.quad_degree)
        return q, grads + np.eye(2)

    def admissible(self, u) -> bool:
        _, F = self._deformation(u)
        return bool(np.all(material._det2(F) > material.DET_GUARD))

    def internal_force(self, u) -> np.ndarray:
        """``int P(F) : grad v dx`` for every basis function v."""
        q, F = self._deformation(u)
        P = material.piola_stress(F, self.params)
        be = np.einsum("cq,cqiJ,cqaJ->cia", q.jxw, P, q.dphi)
        return np.bincount(self.space.cell_dofs.ravel(), weights=be.ravel(), minlength=self.space.n_dofs)

    def residual(self, u, load) -> np.ndarray:
        r = self.internal_force(u) - load
        r[self.space.constrained] = 0.0
        return r

    def energy(self, u, load) -> float:
        """Discrete ``G(u) = int W(I + grad u) dx - int T . u dx``."""
        q, F = self._deformation(u)
        W = material.stored_energy(F, self.params)
        return float(np.sum(q.jxw * W) - load @ u)

    def tangent(self, u) -> sp.csr_matrix:
        q, F = self._deformation(u)
        C = material.tangent_tensor(F, self.params)
        return assemble_gradient_form(self.space, C, self.quad_degree)

    # -- forward solve ----------------------------------------------------
    def solve(self, T, opts: NewtonOptions | None = None, **kw) -> NonlinearState:
        """Minimize the discrete energy for force density ``T``.

        Retries with ``opts.auto_homotopy`` load steps if the direct solve fails.
        """
        opts = NewtonOptions(**kw) if opts is None else opts
        try:
            return self._solve(T, opts, opts.homotopy_steps)
        except (ConvergenceError, material.DomainError) as err:
            if opts.auto_homotopy and opts.auto_homotopy > opts.homotopy_steps:
                log.info("Newton failed (%s); retrying with %d load steps", err, opts.auto_homotopy)
                return self._solve(T, opts, opts.auto_homotopy)
            raise

    def _solve(self, T, opts, steps) -> NonlinearState:
        Tc = np.array(_coeffs(T), dtype=float)
        full = self.load(Tc)
        scale = 1.0 + np.linalg.norm(full)
        tol = opts.newton_tol * scale
        u = np.zeros(self.space.n_dofs) if opts.initial_guess is None else np.array(_coeffs(opts.initial_guess))
        u[self.space.constrained] = 0.0
        if not self.admissible(u):
            raise material.DomainError("initial guess has det F <= 0")
        total = 0
        for k in range(1, steps + 1):
            load = full * (k / steps)
            r = self.residual(u, load)
            rn = np.linalg.norm(r)
            it = 0
            while rn > tol:
                if it >= opts.max_newton:
                    raise ConvergenceError(
                        f"Newton did not converge in {it} iterations at load step {k}/{steps} "
                        f"(residual {rn:.3e})",
                        rn,
                        total,
                        state=NonlinearState(self.function(u), False, total, rn, steps, Tc),
                    )
                K = self.tangent(u)
                du = solve_symmetric(K, -r, tol=self.cg_tol)
                u, r, rn = self._line_search(u, du, r, rn, load, opts)
                it += 1
                total += 1
        state = NonlinearState(self.function(u), True, total, rn, steps, Tc, self.tangent(u))
        return state

    def _line_search(self, u, du, r, rn, load, opts):
        e0 = self.energy(u, load)
        step = 1.0
        for _ in range(opts.max_backtracks + 1):
            trial = u + step * du
            if self.admissible(trial):
                r_new = self.residual(trial, load)
                rn_new = np.linalg.norm(r_new)
                e_new = self.energy(trial, load)
                if e_new <= e0 + 1e-12 * (abs(e0) + 1.0) or rn_new < rn:
                    return trial, r_new, rn_new
            step *= 0.5
        raise ConvergenceError("line search failed to find an admissible descent step", rn)

    # -- derivative -------------------------------------------------------
    def frechet_apply(self, state: NonlinearState, h) -> FeFunction:
        """``S'(T) h``: solve the tangent system at ``state`` with right-hand side ``M h``."""
        if not state.converged:
            raise ValueError("Fréchet derivative needs a converged state")
        K = state.tangent if state.tangent is not None else self.tangent(state.u.coeffs)
        rhs = self.load(h)
        return self.function(solve_symmetric(K, rhs, tol=self.cg_tol) / self.tangent_sign)

    def frechet_adjoint_apply(self, state: NonlinearState, g, param_space: str = "L2") -> FeFunction:
        """Adjoint of ``S'(T)`` for the L2 or H^1_0 parameter inner product.

        The L2 adjoint coincides with ``S'(T)`` (self-adjointness); the H^1_0
        adjoint applies the inverse vector Dirichlet Laplacian on top.
        """
        _check_param_space(param_space)
        v = self.frechet_apply(state, g).coeffs
        if param_space == "H10":
            v = self.riesz_h10(v)
        return self.function(v)


class NonlinearInverseProblem:
    """The map ``T -> S(T)`` with its derivative, as consumed by Newton-CG.

    Each forward solve is warm-started from the previous displacement when
    possible; a failed warm start falls back to load stepping from zero.
    """

    def __init__(self, model: HyperelasticPlane, param_space: str = "L2", opts: NewtonOptions | None = None):
        _check_param_space(param_space)
        self.model = model
        self.param_space = param_space
        self.opts = opts or NewtonOptions()
        self.n_params = model.space.n_dofs
        self.last_state: NonlinearState | None = None
        self.forward_solves = 0

    def forward(self, T) -> NonlinearState:
        T = self.model.project(T, self.param_space)
        self.forward_solves += 1
        if self.last_state is not None:
            warm = NewtonOptions(**{**self.opts.__dict__, "initial_guess": self.last_state.u.coeffs, "auto_homotopy": 0})
            try:
                return self.model.solve(T, warm)
            except (ConvergenceError, material.DomainError):
                log.info("warm-started forward solve failed; restarting from zero")
        return self.model.solve(T, self.opts)

    def linearize(self, T):
        from .inversion import LinearMap

        state = self.forward(T)
        self.last_state = state
        ps = self.param_space
        m = self.model
        deriv = LinearMap(
            lambda h: m.frechet_apply(state, m.project(h, ps)).coeffs,
            lambda g: m.frechet_adjoint_apply(state, g, ps).coeffs,
            m.gram(ps),
            m.mass,
        )
        return state.u.coeffs, deriv


def solve_linear2(T: FeFunction, params: MaterialParams, model: LinearPlane | None = None) -> FeFunction:
    model = model or LinearPlane(T.space.mesh, params, T.space.order)
    return model.solve(T)


def solve_nonlinear2(
    T: FeFunction, params: MaterialParams, model: HyperelasticPlane | None = None, **opts
) -> NonlinearState:
    model = model or HyperelasticPlane(T.space.mesh, params, T.space.order)
    return model.solve(T, **opts)
