"""Fast consistency checks on coarse meshes: adjoints, derivatives and dense oracles."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import material
from .fem import FeSpace, assemble_bilinear, assemble_mass
from .forward2d import HyperelasticPlane, LinearPlane
from .forward25d import Linear25D
from .inversion import InversionConfig, cgne
from .mesh import Mesh, build_box_mesh, build_rect_mesh


@dataclass
class CheckResult:
    module: str
    invariant: str
    passed: bool
    seconds: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.module:<10} {self.invariant:<40} {self.seconds:7.3f}s  {self.detail}"


def _params():
    return material.MaterialParams.from_young_poisson(10_000.0, 0.45)


def check_adjoint_25d(rng):
    op = Linear25D(build_box_mesh(1.0, 0.5, 4, 4, 2), _params())
    worst = 0.0
    for _ in range(3):
        t = rng.standard_normal(op.trace_space.n_dofs)
        w = rng.standard_normal(op.space.n_dofs)
        lhs = op.forward(t).coeffs @ (op.mass @ w)
        rhs = t @ (op.trace_mass @ op.adjoint(w).coeffs)
        scale = np.sqrt(t @ (op.trace_mass @ t)) * np.sqrt(w @ (op.mass @ w))
        worst = max(worst, abs(lhs - rhs) / scale)
    return worst <= 1e-10, f"defect {worst:.2e}"


def check_adjoint_2d(rng):
    model = LinearPlane(build_rect_mesh(1.0, 4, 4), _params())
    worst = 0.0
    for ps in ("L2", "H10"):
        A = model.linear_map(ps)
        h = model.project(rng.standard_normal(model.space.n_dofs), ps)
        g = rng.standard_normal(model.space.n_dofs)
        lhs = A.apply(h) @ (model.mass @ g)
        rhs = h @ (A.domain_gram @ A.adjoint(g))
        worst = max(worst, abs(lhs - rhs) / (A.domain_norm(h) * A.codomain_norm(g)))
    return worst <= 1e-9, f"defect {worst:.2e}"


def _random_F(rng, n):
    F = np.eye(2) + 0.3 * rng.standard_normal((n, 2, 2))
    return F[np.linalg.det(F) > 0.3]


def check_stress_fd(rng):
    p = _params()
    F = _random_F(rng, 20)
    P = material.piola_stress(F, p)
    eps = 1e-6
    fd = np.zeros_like(P)
    for i in range(2):
        for j in range(2):
            E = np.zeros((2, 2))
            E[i, j] = eps
            fd[:, i, j] = (material.stored_energy(F + E, p) - material.stored_energy(F - E, p)) / (2 * eps)
    err = np.linalg.norm(fd - P) / np.linalg.norm(P)
    return err <= 1e-6, f"relative error {err:.2e}"


def check_tangent_fd(rng):
    p = _params()
    F = _random_F(rng, 20)
    C = material.tangent_tensor(F, p)
    eps = 1e-6
    fd = np.zeros_like(C)
    for k in range(2):
        for l in range(2):
            E = np.zeros((2, 2))
            E[k, l] = eps
            fd[:, :, :, k, l] = (material.piola_stress(F + E, p) - material.piola_stress(F - E, p)) / (2 * eps)
    err = np.linalg.norm(fd - C) / np.linalg.norm(C)
    return err <= 1e-6, f"relative error {err:.2e}"


def check_frechet_taylor(rng, tangent_sign=1.0):
    model = HyperelasticPlane(build_rect_mesh(1.0, 4, 4), _params(), order=2, tangent_sign=tangent_sign)
    T = model.project(500.0 * rng.standard_normal(model.space.n_dofs), "H10")
    h = model.project(500.0 * rng.standard_normal(model.space.n_dofs), "H10")
    st = model.solve(T)
    dv = model.frechet_apply(st, h).coeffs
    errs = []
    epss = (1e-1, 1e-2)
    for eps in epss:
        u = model.solve(T + eps * h).u.coeffs
        errs.append(model.l2_norm(u - st.u.coeffs - eps * dv))
    order = float(np.log(errs[0] / errs[1]) / np.log(epss[0] / epss[1]))
    return order >= 1.9, f"observed order {order:.2f}"


def check_dense_mass():
    mesh = Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]), np.array([[0, 1, 2], [0, 2, 3]]), "triangle")
    space = FeSpace(mesh, 1, 1, constrained_tag=None)
    M = assemble_mass(space).toarray()
    local = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 24.0
    ref = np.zeros((4, 4))
    for c in mesh.cells:
        ref[np.ix_(c, c)] += local
    perm = [int(np.argmin(np.linalg.norm(space.node_coords - v, axis=1))) for v in mesh.vertices]
    err = np.abs(M[np.ix_(perm, perm)] - ref).max()
    return err <= 1e-12, f"max deviation {err:.2e}"


def check_tangent_identity():
    p = _params()
    mesh = build_rect_mesh(1.0, 2, 2)
    nl = HyperelasticPlane(mesh, p, order=1)
    K = nl.tangent(np.zeros(nl.space.n_dofs))
    H = assemble_bilinear(nl.space, ("elasticity", p.mu, p.lam), nl.quad_degree)
    err = abs(K - H).max() / abs(H).max()
    return err <= 1e-9, f"relative deviation {err:.2e}"


def check_cgne_zero():
    op = Linear25D(build_box_mesh(1.0, 0.5, 2, 2, 1), _params()).linear_map()
    x, rep = cgne(op, np.zeros(op.codomain_gram.shape[0]), InversionConfig(delta=0.0))
    ok = rep.outer_iterations == 0 and not np.any(x)
    return ok, f"{rep.outer_iterations} iterations"


CHECKS = (
    ("forward25d", "adjoint identity", lambda rng, s: check_adjoint_25d(rng)),
    ("forward2d", "linear adjoint identity (L2, H10)", lambda rng, s: check_adjoint_2d(rng)),
    ("material", "stress is energy derivative", lambda rng, s: check_stress_fd(rng)),
    ("material", "tangent is stress derivative", lambda rng, s: check_tangent_fd(rng)),
    ("forward2d", "Frechet derivative Taylor order", check_frechet_taylor),
    ("forward2d", "tangent at identity is Hooke", lambda rng, s: check_tangent_identity()),
    ("fem", "P1 mass matrix dense oracle", lambda rng, s: check_dense_mass()),
    ("inversion", "zero data gives zero in 0 steps", lambda rng, s: check_cgne_zero()),
)


def run_selftest(seed: int = 0, tangent_sign: float = 1.0) -> list[CheckResult]:
    """Run every check; ``tangent_sign = -1`` corrupts the derivative as a negative control."""
    results = []
    for module, name, fn in CHECKS:
        rng = np.random.default_rng(seed)
        t0 = time.perf_counter()
        try:
            ok, detail = fn(rng, tangent_sign)
        except Exception as err:  # a crashing check is a failing check
            ok, detail = False, f"{type(err).__name__}: {err}"
        results.append(CheckResult(module, name, bool(ok), time.perf_counter() - t0, detail))
    return results
