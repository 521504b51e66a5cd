"""Iterative regularization: CGNE and truncated Newton-CG with discrepancy stopping.

Operators work on plain coefficient vectors. Inner products are given by
Gram matrices: ``<x, z>_X = x^T G_X z`` in the parameter space and
``<y, w>_Y = y^T G_Y w`` in the data space; the adjoint must be taken with
respect to exactly these inner products.
"""
from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

log = logging.getLogger(__name__)

DISCREPANCY = "DISCREPANCY"
MAX_ITER = "MAX_ITER"
BREAKDOWN = "BREAKDOWN"
FAILURE = "FAILURE"
INNER_TARGET = "INNER_TARGET"


@dataclass
class InversionConfig:
    tau: float = 1.2
    delta: float = 0.0
    rho: float = 0.7
    max_outer: int = 50
    max_inner: int = 200
    param_space: str = "L2"
    seed: int = 0
    # floor on the stopping threshold; replaces tau * delta for noise-free data
    residual_floor: float = 1e-14

    def __post_init__(self):
        if not self.tau > 1:
            raise ValueError("tau must exceed 1")
        if not 0 < self.rho < 1:
            raise ValueError("rho must lie in (0, 1)")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")
        if self.param_space not in ("L2", "H10"):
            raise ValueError(f"unknown parameter space {self.param_space!r}")

    @property
    def threshold(self) -> float:
        return max(self.tau * self.delta, self.residual_floor)


def discrepancy_reached(residual_norm: float, cfg: InversionConfig) -> bool:
    return residual_norm <= cfg.threshold


@dataclass
class LinearMap:
    """A bounded linear operator between two Gram-matrix Hilbert spaces."""

    apply: Callable[[np.ndarray], np.ndarray]
    adjoint: Callable[[np.ndarray], np.ndarray]
    domain_gram: object
    codomain_gram: object

    def domain_norm(self, x) -> float:
        return float(np.sqrt(max(x @ (self.domain_gram @ x), 0.0)))

    def codomain_norm(self, y) -> float:
        return float(np.sqrt(max(y @ (self.codomain_gram @ y), 0.0)))


class NonlinearProblem(Protocol):
    n_params: int

    def linearize(self, x: np.ndarray) -> tuple[np.ndarray, LinearMap]:
        """Forward value and derivative at ``x``."""


@dataclass
class SolveReport:
    outer_iterations: int = 0
    inner_iterations: list[int] = field(default_factory=list)
    residual_history: list[float] = field(default_factory=list)
    error_history: list[float] = field(default_factory=list)
    stop_reason: str = MAX_ITER
    wall_time_seconds: float = 0.0
    final_relative_error: float | None = None
    breakdown: bool = False
    message: str = ""
    discrepancy_index: int | None = None
    discrepancy_iterate: np.ndarray | None = field(default=None, repr=False)
    best_iterate: np.ndarray | None = field(default=None, repr=False)

    @property
    def final_residual(self) -> float:
        return self.residual_history[-1] if self.residual_history else float("nan")

    def as_dict(self) -> dict:
        d = {
            "outer_iterations": self.outer_iterations,
            "inner_iterations_total": int(sum(self.inner_iterations)),
            "inner_iterations": " ".join(str(k) for k in self.inner_iterations),
            "stop_reason": self.stop_reason,
            "final_residual": self.final_residual,
            "wall_time_seconds": self.wall_time_seconds,
            "breakdown": self.breakdown,
        }
        if self.final_relative_error is not None:
            d["final_relative_error_percent"] = self.final_relative_error
        if self.message:
            d["message"] = self.message
        return d

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.as_dict().items())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "residual", "error_percent"])
        for k, r in enumerate(self.residual_history):
            err = self.error_history[k] if k < len(self.error_history) else ""
            w.writerow([k, repr(float(r)), repr(float(err)) if err != "" else ""])
        return buf.getvalue()


def cgne(
    op: LinearMap,
    data: np.ndarray,
    cfg: InversionConfig,
    x0: np.ndarray | None = None,
    target: float | None = None,
    max_iter: int | None = None,
    error: Callable[[np.ndarray], float] | None = None,
    stop_on_discrepancy: bool = True,
):
    """Conjugate gradients on the normal equations ``A* A x = A* y``.

    Stops at the first iterate with ``||A x_k - y||_Y <= target``
    (``tau * delta`` by default). ``error`` maps an iterate to an error value
    recorded in the report; ``stop_on_discrepancy=False`` keeps iterating to
    ``max_iter`` so that the whole error history can be observed, while the
    report still remembers where the discrepancy principle would have stopped.

    Returns ``(x, report)``; with ``stop_on_discrepancy=False`` the iterate at
    the discrepancy stop is available as ``report.discrepancy_iterate``.
    """
    t_start = time.perf_counter()
    target = cfg.threshold if target is None else target
    max_iter = cfg.max_inner if max_iter is None else max_iter
    y = np.asarray(data, dtype=float)
    x = np.zeros(op.domain_gram.shape[0]) if x0 is None else np.array(x0, dtype=float)

    r = y - op.apply(x) if np.any(x) else y.copy()
    d = op.adjoint(r)
    p = d.copy()
    dd = d @ (op.domain_gram @ d)
    report = SolveReport()
    rn = op.codomain_norm(r)
    report.residual_history.append(rn)
    if error is not None:
        report.error_history.append(error(x))
    stop_at = 0 if rn <= target else None
    stop_x = x.copy() if stop_at == 0 else None
    best = (report.error_history[0], x.copy()) if error is not None else None

    k = 0
    while k < max_iter and (stop_at is None or not stop_on_discrepancy):
        if dd <= 0.0:
            report.breakdown = True
            break
        q = op.apply(p)
        qq = q @ (op.codomain_gram @ q)
        if qq <= 0.0:
            report.breakdown = True
            break
        alpha = dd / qq
        x = x + alpha * p
        r = r - alpha * q
        d = op.adjoint(r)
        dd_new = d @ (op.domain_gram @ d)
        p = d + (dd_new / dd) * p
        dd = dd_new
        k += 1
        rn = op.codomain_norm(r)
        report.residual_history.append(rn)
        if error is not None:
            report.error_history.append(error(x))
            if report.error_history[-1] < best[0]:
                best = (report.error_history[-1], x.copy())
        if stop_at is None and rn <= target:
            stop_at = k
            stop_x = x.copy()

    report.outer_iterations = k if stop_on_discrepancy or stop_at is None else stop_at
    report.inner_iterations = [k]
    if stop_at is not None:
        report.stop_reason = DISCREPANCY
    elif report.breakdown:
        report.stop_reason = BREAKDOWN
    if report.error_history:
        report.final_relative_error = report.error_history[report.outer_iterations]
    report.discrepancy_index = stop_at
    report.discrepancy_iterate = stop_x
    if best is not None:
        report.best_iterate = best[1]
    report.wall_time_seconds = time.perf_counter() - t_start
    if not stop_on_discrepancy and stop_x is not None:
        return stop_x, report
    return x, report


def newton_cg(
    problem: NonlinearProblem,
    data: np.ndarray,
    cfg: InversionConfig,
    x0: np.ndarray | None = None,
    error: Callable[[np.ndarray], float] | None = None,
):
    """Truncated Newton-CG (inexact Newton with CGNE inner solver).

    Each outer step solves ``S'(x_k) h = y - S(x_k)`` approximately by CGNE,
    stopping once the linearized residual is below ``rho`` times the outer
    residual, then sets ``x_{k+1} = x_k + h``. The outer loop stops by the
    discrepancy principle.
    """
    t_start = time.perf_counter()
    y = np.asarray(data, dtype=float)
    report = SolveReport()
    x = None
    try:
        x0 = np.zeros(problem.n_params) if x0 is None else np.array(x0, dtype=float)
        x = x0.copy()
        fx, deriv = problem.linearize(x)
        while True:
            r = y - fx
            rn = deriv.codomain_norm(r)
            report.residual_history.append(rn)
            if error is not None:
                report.error_history.append(error(x))
            log.info("newton-cg outer %d: residual %.4e", report.outer_iterations, rn)
            if discrepancy_reached(rn, cfg):
                report.stop_reason = DISCREPANCY
                break
            if report.outer_iterations >= cfg.max_outer:
                report.stop_reason = MAX_ITER
                break
            h, inner = cgne(deriv, r, cfg, target=cfg.rho * rn, max_iter=cfg.max_inner)
            report.inner_iterations.append(inner.outer_iterations)
            if inner.breakdown and inner.outer_iterations == 0:
                report.breakdown = True
                report.stop_reason = BREAKDOWN
                break
            x = x + h
            fx, deriv = problem.linearize(x)
            report.outer_iterations += 1
    except Exception as err:  # forward solver failure: keep the partial result
        log.warning("newton-cg aborted: %s", err)
        report.stop_reason = FAILURE
        report.message = str(err)
    if report.error_history:
        report.final_relative_error = report.error_history[-1]
    report.wall_time_seconds = time.perf_counter() - t_start
    return x, report
