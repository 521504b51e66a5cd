"""Preconditioned conjugate gradients for the symmetric positive definite systems."""
from __future__ import annotations

import numpy as np
import scipy.sparse.linalg as spla


class ConvergenceError(RuntimeError):
    """Iterative solver ran out of iterations."""

    def __init__(self, message, residual=None, iterations=None, state=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
        self.state = state


class IndefiniteError(ConvergenceError):
    """CG met a direction of non-positive curvature."""


def solve_symmetric(K, b, tol: float = 1e-10, max_iter: int | None = None):
    """Solve a symmetric, possibly indefinite system.

    Tries Jacobi-CG first and falls back to Jacobi-preconditioned MINRES when
    CG detects non-positive curvature, as happens for hyperelastic tangents
    at strongly compressed states.
    """
    try:
        return solve_spd(K, b, tol=tol, max_iter=max_iter)
    except IndefiniteError:
        pass
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    max_iter = 10 * n if max_iter is None else max_iter
    bnorm = np.linalg.norm(b)
    dinv = 1.0 / np.abs(K.diagonal())
    prec = spla.LinearOperator(K.shape, matvec=lambda v: dinv * v, dtype=float)
    x = np.zeros(n)
    for _ in range(5):
        # minres measures the preconditioned residual; restart until the true one is small
        x, _info = spla.minres(K, b, x0=x, rtol=tol * 1e-2, maxiter=max_iter, M=prec)
        res = np.linalg.norm(K @ x - b)
        if res <= tol * bnorm:
            return x
    raise ConvergenceError(f"MINRES stalled at relative residual {res / bnorm:.3e}", res / bnorm)


def solve_spd(K, b, tol: float = 1e-10, max_iter: int | None = None, x0=None, return_info=False):
    """Jacobi-preconditioned CG for ``K x = b``.

    Stops once ``||K x - b|| <= tol * ||b||``. The residual is recomputed from
    scratch before declaring convergence so the bound holds for the returned x.
    """
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if max_iter is None:
        max_iter = 10 * n
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        x = np.zeros(n)
        return (x, 0) if return_info else x
    target = tol * bnorm
    diag = K.diagonal()
    if np.any(diag <= 0):
        raise ValueError("matrix has non-positive diagonal entries")
    dinv = 1.0 / diag

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - K @ x
    it = 0
    while True:
        z = dinv * r
        p = z.copy()
        rz = r @ z
        while np.linalg.norm(r) > target and it < max_iter:
            Kp = K @ p
            pKp = p @ Kp
            if pKp <= 0:
                raise IndefiniteError("matrix is not positive definite", np.linalg.norm(r), it)
            alpha = rz / pKp
            x += alpha * p
            r -= alpha * Kp
            z = dinv * r
            rz_new = r @ z
            p = z + (rz_new / rz) * p
            rz = rz_new
            it += 1
        r = b - K @ x
        res = np.linalg.norm(r)
        if res <= target:
            return (x, it) if return_info else x
        if it >= max_iter:
            raise ConvergenceError(
                f"CG did not converge in {it} iterations (relative residual {res / bnorm:.3e})",
                res / bnorm,
                it,
            )
