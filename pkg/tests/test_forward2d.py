import numpy as np
import pytest

from tfmkit.fem import ConvergenceError
from tfmkit.forward2d import (
    HyperelasticPlane,
    LinearPlane,
    NonlinearInverseProblem,
    solve_linear2,
    solve_nonlinear2,
)
from tfmkit.material import MaterialParams
from tfmkit.mesh import build_rect_mesh

from oracles import dense_linear_solve, dense_nonlinear_solve

SQUARE = build_rect_mesh(0.5, 1, 1)  # two triangles, one interior P2 node


def bump_field(scale):
    return lambda x: scale * np.column_stack(
        [np.sin(np.pi * x[:, 0]) * np.cos(x[:, 1]), x[:, 0] * x[:, 1] + 0.5 * np.cos(x[:, 0])]
    )


@pytest.fixture(scope="module")
def p():
    return MaterialParams.from_young_poisson(10_000.0, 0.45)


@pytest.fixture(scope="module")
def mesh():
    return build_rect_mesh(1.0, 6, 6)


@pytest.fixture(scope="module")
def lin(mesh, p):
    return LinearPlane(mesh, p)


@pytest.fixture(scope="module")
def nl(mesh, p):
    return HyperelasticPlane(mesh, p)


def test_linear_dense_oracle(p):
    T = lambda x: np.column_stack([1000.0 + 0 * x[:, 0], -500.0 + 0 * x[:, 1]])
    pts, z = dense_linear_solve(SQUARE, p, T)
    model = LinearPlane(SQUARE, p)
    u = model.solve(model.space.interpolate(T))
    np.testing.assert_allclose(u.evaluate(pts).T.ravel(), z, rtol=1e-12, atol=1e-12 * np.abs(z).max())


def test_nonlinear_dense_oracle(p):
    model = HyperelasticPlane(SQUARE, p)
    T = lambda x: np.column_stack([4e4 + 0 * x[:, 0], -2e4 + 0 * x[:, 1]])
    pts, z = dense_nonlinear_solve(SQUARE, p, T, model.quad_degree)
    got = model.solve(model.space.interpolate(T)).u.evaluate(pts).T.ravel()
    lin = LinearPlane(SQUARE, p).solve(model.space.interpolate(T)).evaluate(pts).T.ravel()
    assert np.linalg.norm(got - lin) > 0.01 * np.linalg.norm(lin)  # genuinely nonlinear regime
    np.testing.assert_allclose(got, z, rtol=1e-12, atol=1e-12 * np.abs(z).max())


# -- linear solver -------------------------------------------------------------
def test_linear_zero(lin):
    assert not solve_linear2(lin.space.zeros(), lin.params, lin).coeffs.any()


def test_linear_linearity(lin, rng):
    a, b = rng.standard_normal((2, lin.space.n_dofs))
    lhs = lin.solve(2 * a + 5 * b).coeffs
    rhs = 2 * lin.solve(a).coeffs + 5 * lin.solve(b).coeffs
    assert np.linalg.norm(lhs - rhs) <= 1e-9 * np.linalg.norm(rhs)


def test_linear_boundary_values_zero(lin, rng):
    u = lin.solve(rng.standard_normal(lin.space.n_dofs))
    assert not u.coeffs[lin.space.constrained].any()


@pytest.mark.parametrize("ps", ["L2", "H10"])
def test_linear_adjoint_identity(lin, rng, ps):
    A = lin.linear_map(ps)
    for _ in range(5):
        h = lin.project(rng.standard_normal(lin.space.n_dofs), ps)
        g = rng.standard_normal(lin.space.n_dofs)
        lhs = A.apply(h) @ (lin.mass @ g)
        rhs = h @ (A.domain_gram @ A.adjoint(g))
        assert abs(lhs - rhs) <= 1e-10 * A.domain_norm(h) * A.codomain_norm(g)


# -- nonlinear solver ----------------------------------------------------------
def test_nonlinear_zero_load(nl):
    st = solve_nonlinear2(nl.space.zeros(), nl.params, nl)
    assert st.converged and st.newton_iterations == 0
    assert not st.u.coeffs.any()


def test_small_load_close_to_linear(nl, lin):
    T = lin.space.interpolate(bump_field(50.0))
    u_lin = lin.solve(T).coeffs
    u_nl = nl.solve(T).u.coeffs
    assert lin.l2_norm(u_nl - u_lin) / lin.l2_norm(u_lin) <= 0.01


def test_energy_decreases(nl):
    T = nl.space.interpolate(bump_field(2e4))
    st = nl.solve(T)
    load = nl.load(T)
    assert nl.energy(st.u.coeffs, load) <= nl.energy(np.zeros(nl.space.n_dofs), load)


def test_state_invariants(nl):
    T = nl.space.interpolate(bump_field(3e4))
    st = nl.solve(T)
    assert st.converged
    assert nl.admissible(st.u.coeffs)
    r = nl.residual(st.u.coeffs, nl.load(T))
    assert np.linalg.norm(r) <= 1e-10 * (1 + np.linalg.norm(nl.load(T)))


def test_tangent_symmetric(nl):
    st = nl.solve(nl.space.interpolate(bump_field(3e4)))
    K = st.tangent
    assert abs(K - K.T).max() <= 1e-10 * abs(K).max()


def test_energy_gradient_is_residual(nl, rng):
    T = nl.space.interpolate(bump_field(1e4))
    load = nl.load(T)
    u = nl.solve(T.coeffs * 0.5).u.coeffs
    v = nl.project(rng.standard_normal(nl.space.n_dofs), "H10") * 1e-3
    eps = 1e-4
    fd = (nl.energy(u + eps * v, load) - nl.energy(u - eps * v, load)) / (2 * eps)
    exact = nl.residual(u, load) @ v
    assert fd == pytest.approx(exact, rel=1e-6)


def test_homotopy_invariance(nl):
    T = nl.space.interpolate(bump_field(2e4))
    a = nl.solve(T, homotopy_steps=1).u.coeffs
    b = nl.solve(T, homotopy_steps=10).u.coeffs
    assert nl.l2_norm(a - b) <= 1e-9 * nl.l2_norm(a)


def test_initial_guess_is_used(nl):
    T = nl.space.interpolate(bump_field(2e4))
    st = nl.solve(T)
    again = nl.solve(T, initial_guess=st.u.coeffs)
    assert again.newton_iterations == 0


def test_newton_budget_error_carries_state(nl):
    T = nl.space.interpolate(bump_field(5e4))
    with pytest.raises(ConvergenceError) as info:
        nl.solve(T, max_newton=1, auto_homotopy=0)
    assert info.value.state is not None and not info.value.state.converged


def test_coercivity_warning(mesh):
    with pytest.warns(UserWarning):
        HyperelasticPlane(mesh, MaterialParams(1.0, 1.0))


def test_strong_compression_indefinite_tangent(p):
    # the tangent loses definiteness at this load; the solve must still converge
    from tfmkit.experiments import force_ring, planar

    model = HyperelasticPlane(build_rect_mesh(2.0, 12, 12), p)
    st = model.solve(model.space.interpolate(planar(lambda x: force_ring(2e5, x))), homotopy_steps=10)
    assert st.converged and model.admissible(st.u.coeffs)


# -- derivative ---------------------------------------------------------------
def test_frechet_zero_direction(nl):
    st = nl.solve(nl.space.interpolate(bump_field(1e4)))
    assert not nl.frechet_apply(st, np.zeros(nl.space.n_dofs)).coeffs.any()
    assert not nl.frechet_adjoint_apply(st, np.zeros(nl.space.n_dofs), "H10").coeffs.any()


def test_frechet_at_zero_is_linear_solve(nl, lin, rng):
    st = nl.solve(nl.space.zeros())
    h = rng.standard_normal(nl.space.n_dofs)
    v = nl.frechet_apply(st, h).coeffs
    w = lin.solve(h).coeffs
    assert nl.l2_norm(v - w) <= 1e-9 * nl.l2_norm(w)


def test_frechet_taylor_order(nl):
    T = nl.space.interpolate(bump_field(3e4)).coeffs
    h = nl.space.interpolate(bump_field(3e4)).coeffs[::-1].copy()
    h[nl.space.constrained] = 0.0
    st = nl.solve(T)
    dv = nl.frechet_apply(st, h).coeffs
    epss = np.array([1e-2, 1e-3, 1e-4])
    errs = np.array([nl.l2_norm(nl.solve(T + e * h).u.coeffs - st.u.coeffs - e * dv) for e in epss])
    orders = np.log(errs[:-1] / errs[1:]) / np.log(epss[:-1] / epss[1:])
    assert orders.min() >= 1.9


@pytest.mark.parametrize("ps", ["L2", "H10"])
def test_frechet_adjoint_identity(nl, rng, ps):
    st = nl.solve(nl.space.interpolate(bump_field(3e4)))
    for _ in range(3):
        h = nl.project(rng.standard_normal(nl.space.n_dofs), ps)
        g = rng.standard_normal(nl.space.n_dofs)
        lhs = nl.frechet_apply(st, h).coeffs @ (nl.mass @ g)
        adj = nl.frechet_adjoint_apply(st, g, ps).coeffs
        rhs = h @ (nl.gram(ps) @ adj)
        scale = np.sqrt(h @ nl.gram(ps) @ h) * nl.l2_norm(g)
        assert abs(lhs - rhs) <= 1e-8 * scale


def test_frechet_needs_converged_state(nl):
    st = nl.solve(nl.space.zeros())
    from dataclasses import replace

    with pytest.raises(ValueError):
        nl.frechet_apply(replace(st, converged=False), np.zeros(nl.space.n_dofs))


def test_negative_control_breaks_taylor(mesh, p):
    bad = HyperelasticPlane(mesh, p, tangent_sign=-1.0)
    T = bad.space.interpolate(bump_field(3e4)).coeffs
    h = T[::-1].copy()
    h[bad.space.constrained] = 0.0
    st = bad.solve(T)
    dv = bad.frechet_apply(st, h).coeffs
    e1, e2 = (bad.l2_norm(bad.solve(T + e * h).u.coeffs - st.u.coeffs - e * dv) for e in (1e-2, 1e-3))
    assert np.log10(e1 / e2) < 1.5


def test_inverse_problem_adapter(nl):
    prob = NonlinearInverseProblem(nl, "H10")
    T = nl.space.interpolate(bump_field(1e4)).coeffs
    u, deriv = prob.linearize(T)
    ref = nl.solve(nl.project(T, "H10")).u.coeffs
    np.testing.assert_allclose(u, ref, atol=1e-10 * np.abs(ref).max())
    assert prob.n_params == nl.space.n_dofs
    # second call warm-starts from the previous state
    u2, _ = prob.linearize(T * 1.01)
    assert prob.forward_solves == 2 and np.all(np.isfinite(u2))
