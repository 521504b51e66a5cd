"""Synthetic force fields, noise, error metrics and the reference experiments.

Force fields are vectorized: they take an ``(n, 2)`` (or ``(n, 3)``) array of
points and return ``(n, 3)`` tractions whose third component is zero.
"""
from __future__ import annotations

import csv
import logging
import math
import weakref
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .fem import ConvergenceError, FeFunction, FeSpace, assemble_mass
from .forward2d import HyperelasticPlane, LinearPlane, NewtonOptions, NonlinearInverseProblem
from .forward25d import Linear25D
from .inversion import InversionConfig, SolveReport, cgne, newton_cg
from .material import DomainError, MaterialParams
from .mesh import build_box_mesh, build_rect_mesh

log = logging.getLogger(__name__)

# the ring experiments use [-2, 2]^2, which reproduces the relative force norm 5.39e3 at a = 2e5
RING_HALF_WIDTH = 2.0
SPOTS_HALF_WIDTH = 3.0
BOX_HALF_WIDTH = 2.0
BOX_DEPTH = 1.0
DEFAULT_YOUNG = 10_000.0
DEFAULT_POISSON = 0.45


def default_params() -> MaterialParams:
    return MaterialParams.from_young_poisson(DEFAULT_YOUNG, DEFAULT_POISSON)


@dataclass(frozen=True)
class ForceSpot:
    center: tuple
    direction: tuple
    magnitude: float = 10.0
    radius: float = 1.0

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("spot radius must be positive")


SPOT_TABLE = (
    ((-0.6, -0.2), (1.0, -0.4)),
    ((0.3, 0.2), (-1.0, 0.4)),
    ((0.6, -0.8), (-0.2, 1.0)),
    ((-0.4, 1.2), (0.2, -1.0)),
)


def spots(b: float = 10.0) -> tuple[ForceSpot, ...]:
    return tuple(ForceSpot(c, d, b) for c, d in SPOT_TABLE)


def _points(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    return np.atleast_2d(x)[:, :2], single


def bump(r2: np.ndarray) -> np.ndarray:
    """``exp(-1 / (1 - r^2))`` inside the unit disc, exactly zero outside."""
    out = np.zeros_like(r2)
    inside = r2 < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    return out


def force_ring(a: float, x) -> np.ndarray:
    """Radially inward ring ``a * bump(|x|^2) * (-x1, -x2, 0)``."""
    p, single = _points(x)
    w = a * bump(np.einsum("ij,ij->i", p, p))
    out = np.zeros((p.shape[0], 3))
    out[:, :2] = -w[:, None] * p
    return out[0] if single else out


def force_spots(b: float, x, spot_list=None) -> np.ndarray:
    """Sum of the four directed spots; overlapping contributions add up."""
    p, single = _points(x)
    out = np.zeros((p.shape[0], 3))
    for s in spot_list if spot_list is not None else spots(b):
        diff = (p - np.asarray(s.center)) / s.radius
        w = s.magnitude * bump(np.einsum("ij,ij->i", diff, diff))
        out[:, :2] += w[:, None] * np.asarray(s.direction, dtype=float)
    return out[0] if single else out


def planar(field3):
    """Drop the third component of a vectorized force field."""
    return lambda x: field3(x)[..., :2]


# -- noise -----------------------------------------------------------------
@dataclass(frozen=True)
class NoisyData:
    field: FeFunction
    delta: float
    level_percent: float
    seed: int | None
    exact: FeFunction | None = field(default=None, repr=False)


_MASS: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def l2_norm(f: FeFunction) -> float:
    """L2 norm of a finite element field via its (cached) mass matrix."""
    M = _MASS.get(f.space)
    if M is None:
        M = _MASS[f.space] = assemble_mass(f.space)
    return float(np.sqrt(max(f.coeffs @ (M @ f.coeffs), 0.0)))


def add_noise(exact: FeFunction, level_percent: float, seed: int | None = 0) -> NoisyData:
    """Gaussian noise on every nodal coefficient, rescaled to an exact L2 level."""
    if level_percent < 0:
        raise ValueError("noise level must be non-negative")
    if level_percent == 0:
        return NoisyData(exact.copy(), 0.0, 0.0, seed, exact)
    norm = l2_norm(exact)
    if norm == 0.0:
        raise ValueError("cannot scale relative noise on a zero field")
    rng = np.random.default_rng(seed)
    e = rng.standard_normal(exact.coeffs.shape)
    e *= (level_percent / 100.0) * norm / l2_norm(exact.with_coeffs(e))
    noisy = exact.with_coeffs(exact.coeffs + e)
    delta = l2_norm(exact.with_coeffs(e))
    return NoisyData(noisy, delta, 100.0 * delta / norm, seed, exact)


# -- conversions and metrics -----------------------------------------------
def traction_to_density(t, h: float = 1.0):
    if not h > 0:
        raise ValueError("effective thickness must be positive")
    if isinstance(t, FeFunction):
        return t.with_coeffs(t.coeffs / h)
    return np.asarray(t, dtype=float) / h


def density_to_traction(T, h: float = 1.0):
    if not h > 0:
        raise ValueError("effective thickness must be positive")
    if isinstance(T, FeFunction):
        return T.with_coeffs(T.coeffs * h)
    return np.asarray(T, dtype=float) * h


def relative_error(rec: FeFunction, truth: FeFunction) -> float:
    """``100 * ||rec - truth|| / ||truth||`` in L2."""
    if not rec.space.same_as(truth.space):
        raise ValueError("fields live on different spaces")
    tn = l2_norm(truth)
    if tn == 0.0:
        raise ValueError("relative error undefined for a zero truth")
    return 100.0 * l2_norm(truth.with_coeffs(rec.coeffs - truth.coeffs)) / tn


def relative_force_norm(t: FeFunction) -> float:
    """``||t|| / ||1||`` with every vector component of ``1`` equal to one."""
    one = t.with_coeffs(np.ones_like(t.coeffs))
    return l2_norm(t) / l2_norm(one)


def estimate_noise_from_margin(f: FeFunction, box) -> float:
    """Scale the L2 norm over a quiet box to the whole domain.

    ``box`` is ``((x0, x1), (y0, y1))``. The norm over the box is integrated
    over cells whose centroid lies in it, so the box should be aligned with
    the mesh.
    """
    (x0, x1), (y0, y1) = box
    mesh = f.space.mesh
    cent = mesh.vertices[mesh.cells].mean(axis=1)
    sel = (cent[:, 0] >= x0) & (cent[:, 0] <= x1) & (cent[:, 1] >= y0) & (cent[:, 1] <= y1)
    if not np.any(sel):
        raise ValueError("margin box contains no cells")
    vals, _ = f.at_quadrature()
    q = f.space.quad()
    jxw = q.jxw[sel]
    area = float(jxw.sum())
    sq = float(np.sum(jxw[..., None] * vals[sel] ** 2))
    return math.sqrt(sq) * math.sqrt(mesh.volume() / area)


# -- forward comparison ----------------------------------------------------
@dataclass
class CompareRow:
    magnitude: float
    relative_force_norm: float
    discrepancy_percent: float
    newton_iterations: int = 0
    note: str = ""


def compare_models(magnitudes, params: MaterialParams | None = None, mesh2=None, order: int = 2, opts=None):
    """Linear versus hyperelastic displacement for the ring field over a magnitude sweep."""
    magnitudes = list(magnitudes)
    if not magnitudes:
        raise ValueError("empty magnitude sweep")
    params = params or default_params()
    mesh2 = mesh2 or build_rect_mesh(RING_HALF_WIDTH, 32, 32)
    lin = LinearPlane(mesh2, params, order)
    nl = HyperelasticPlane(mesh2, params, order)
    opts = opts or NewtonOptions()
    unit = lin.space.interpolate(planar(lambda x: force_ring(1.0, x)))
    rows = []
    for a in magnitudes:
        T = unit.with_coeffs(a * unit.coeffs)
        rfn = relative_force_norm(T)
        if a == 0:
            rows.append(CompareRow(a, rfn, 0.0))
            continue
        u_lin = lin.solve(T)
        try:
            st = nl.solve(T, opts)
        except (ConvergenceError, DomainError) as err:
            rows.append(CompareRow(a, rfn, float("nan"), note=f"nonlinear solve failed: {err}"))
            continue
        disc = 100.0 * lin.l2_norm(u_lin.coeffs - st.u.coeffs) / lin.l2_norm(st.u.coeffs)
        rows.append(CompareRow(a, rfn, disc, st.newton_iterations))
    return rows


# -- measured data ---------------------------------------------------------
def write_grid_csv(path, points, values, names=("x", "y"), value_names=("ux", "uy")):
    points = np.asarray(points, dtype=float)
    values = np.asarray(values, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(names) + list(value_names))
        for p, v in zip(points, values):
            w.writerow([repr(float(c)) for c in p] + [repr(float(c)) for c in v])


def read_grid_csv(path):
    """Read a regular-grid displacement table with header ``x,y,ux,uy``.

    Returns ``(xs, ys, values)`` with ``values[i, j] = (ux, uy)`` at ``(xs[i], ys[j])``.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = [h.strip() for h in rows[0]]
    if header[:4] != ["x", "y", "ux", "uy"]:
        raise ValueError(f"expected header x,y,ux,uy, got {','.join(header)}")
    data = np.array([[float(c) for c in r[:4]] for r in rows[1:] if r], dtype=float)
    xs = np.unique(data[:, 0])
    ys = np.unique(data[:, 1])
    if xs.size * ys.size != data.shape[0]:
        raise ValueError("displacement table is not a complete regular grid")
    ix = np.searchsorted(xs, data[:, 0])
    iy = np.searchsorted(ys, data[:, 1])
    vals = np.full((xs.size, ys.size, 2), np.nan)
    vals[ix, iy] = data[:, 2:4]
    if np.isnan(vals).any():
        raise ValueError("displacement table has duplicate or missing grid points")
    return xs, ys, vals


def grid_to_function(space: FeSpace, xs, ys, vals) -> FeFunction:
    """Bilinear interpolation of gridded data at the nodes of ``space``."""
    interp = RegularGridInterpolator((xs, ys), vals, method="linear", bounds_error=False, fill_value=None)
    return space.interpolate(lambda p: interp(p[:, :2]))


# -- reference experiments -------------------------------------------------
@dataclass
class ExperimentResult:
    reconstruction: FeFunction
    truth: FeFunction
    report: SolveReport
    data: NoisyData
    error_percent: float
    extra: dict = field(default_factory=dict)


def ring_25d(
    a: float = 1000.0,
    level: float = 5.0,
    tau: float = 1.2,
    seed: int = 0,
    data_res=(24, 24, 8),
    rec_res=(16, 16, 6),
    params=None,
    max_iter: int = 500,
    stop_on_discrepancy: bool = True,
) -> ExperimentResult:
    """Ring traction on the 2.5D box: data on a fine mesh, reconstruction on a coarser one."""
    params = params or default_params()
    fine = Linear25D(build_box_mesh(BOX_HALF_WIDTH, BOX_DEPTH, *data_res), params)
    coarse = Linear25D(build_box_mesh(BOX_HALF_WIDTH, BOX_DEPTH, *rec_res), params)
    ring = lambda x: force_ring(a, x)
    u_exact = fine.forward(fine.trace_space.interpolate(ring)).transfer(coarse.space)
    data = add_noise(u_exact, level, seed)
    truth = coarse.trace_space.interpolate(ring)
    cfg = InversionConfig(tau=tau, delta=data.delta, max_inner=max_iter)
    err = lambda x: relative_error(truth.with_coeffs(x), truth)
    x, rep = cgne(coarse.linear_map(), data.field.coeffs, cfg, error=err, stop_on_discrepancy=stop_on_discrepancy)
    rec = truth.with_coeffs(x)
    e = relative_error(rec, truth)
    rep.final_relative_error = e
    return ExperimentResult(rec, truth, rep, data, e)


def _plane_data(field2, half_width, data_res, rec_res, params, nonlinear_data, opts):
    fine_mesh = build_rect_mesh(half_width, data_res, data_res, flip=True)
    rec_mesh = build_rect_mesh(half_width, rec_res, rec_res)
    model_f = HyperelasticPlane(fine_mesh, params) if nonlinear_data else LinearPlane(fine_mesh, params)
    T_f = model_f.space.interpolate(field2)
    u_f = model_f.solve(T_f, opts).u if nonlinear_data else model_f.solve(T_f)
    return fine_mesh, rec_mesh, u_f


def plane_newton(
    field2,
    half_width: float,
    level: float,
    tau: float = 1.01,
    param_space: str = "L2",
    seed: int = 0,
    data_res: int = 40,
    rec_res: int = 24,
    params=None,
    max_outer: int = 50,
    max_inner: int = 20,
    rho: float = 0.7,
    opts: NewtonOptions | None = None,
) -> ExperimentResult:
    """Newton-CG on the hyperelastic plane with data from a finer, differently split mesh."""
    params = params or default_params()
    opts = opts or NewtonOptions()
    _, rec_mesh, u_f = _plane_data(field2, half_width, data_res, rec_res, params, True, opts)
    model = HyperelasticPlane(rec_mesh, params)
    data = add_noise(u_f.transfer(model.space), level, seed)
    truth = model.function(model.project(model.space.interpolate(field2), param_space))
    truth_full = model.space.interpolate(field2)
    cfg = InversionConfig(tau=tau, delta=data.delta, rho=rho, max_outer=max_outer, max_inner=max_inner, param_space=param_space)
    problem = NonlinearInverseProblem(model, param_space, opts)
    err = lambda x: relative_error(truth_full.with_coeffs(x), truth_full)
    x, rep = newton_cg(problem, data.field.coeffs, cfg, error=err)
    rec = truth_full.with_coeffs(x)
    e = relative_error(rec, truth_full)
    rep.final_relative_error = e
    return ExperimentResult(rec, truth, rep, data, e, {"forward_solves": problem.forward_solves})


def ring_plane_newton(a: float = 1000.0, level: float = 3.54, **kw) -> ExperimentResult:
    """Ring force density on the hyperelastic plane."""
    return plane_newton(planar(lambda x: force_ring(a, x)), RING_HALF_WIDTH, level, **kw)


def spots_plane_newton(b: float = 10.0, level: float = 15.63, **kw) -> ExperimentResult:
    """Four-spot force density on the hyperelastic plane."""
    return plane_newton(planar(lambda x: force_spots(b, x)), SPOTS_HALF_WIDTH, level, **kw)


def two_stage(
    a: float = 2e5,
    data_res: int = 40,
    rec_res: int = 24,
    params=None,
    linear_iters: int = 300,
    newton_iters: int = 10,
    homotopy_steps: int = 10,
    max_inner: int = 200,
    rho: float = 0.7,
) -> dict:
    """Linear CGNE reconstruction of nonlinear data, refined by Newton-CG.

    Noise-free data, so both stages run a fixed number of iterations and keep
    the iterate of minimal error against the known truth.
    """
    params = params or default_params()
    opts = NewtonOptions(homotopy_steps=homotopy_steps)
    field2 = planar(lambda x: force_ring(a, x))
    _, rec_mesh, u_f = _plane_data(field2, RING_HALF_WIDTH, data_res, rec_res, params, True, opts)
    lin = LinearPlane(rec_mesh, params)
    y = u_f.transfer(lin.space).coeffs
    truth = lin.space.interpolate(field2)
    err = lambda x: relative_error(truth.with_coeffs(x), truth)
    cfg = InversionConfig(tau=1.01, delta=0.0, max_inner=linear_iters)
    _, rep_lin = cgne(lin.linear_map("L2"), y, cfg, error=err, stop_on_discrepancy=False)
    x_lin = rep_lin.best_iterate
    e_lin = err(x_lin)

    nl = HyperelasticPlane(rec_mesh, params)
    problem = NonlinearInverseProblem(nl, "L2", opts)
    cfg_nl = InversionConfig(tau=1.01, delta=0.0, rho=rho, max_outer=newton_iters, max_inner=max_inner)
    _, rep_nl = newton_cg(problem, y, cfg_nl, x0=x_lin, error=err)
    hist = rep_nl.error_history
    k = int(np.argmin(hist)) if hist else 0
    return {
        "relative_force_norm": relative_force_norm(truth),
        "linear_error": e_lin,
        "linear_best_iteration": int(np.argmin(rep_lin.error_history)),
        "nonlinear_error": float(hist[k]) if hist else float("nan"),
        "nonlinear_best_iteration": k,
        "linear_report": rep_lin,
        "nonlinear_report": rep_nl,
    }
