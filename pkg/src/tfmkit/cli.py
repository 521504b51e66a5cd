"""Command line driver: ``tfmkit {simulate,reconstruct,compare,selftest,mesh-info}``.

Experiments are described by an INI file::

    [model]
    type = LINEAR_25D            ; LINEAR_25D | LINEAR_2D | NONLINEAR_2D

    [domain]
    half_width = 2.0
    depth = 1.0                  ; box models only
    resolution = 16, 16, 6       ; reconstruction mesh (nx, ny[, nz])
    data_resolution = 24, 24, 8  ; simulation mesh
    data_flip = true             ; planar data mesh uses the other diagonal
    order = 1

    [material]
    young = 10000
    poisson = 0.45

    [force]
    kind = RING                  ; RING | SPOTS | FROM_CSV
    magnitude = 1000
    thickness = 1.0

    [noise]
    level_percent = 5            ; or: delta = ..., or: margin = x0, x1, y0, y1
    seed = 0

    [inversion]
    tau = 1.2
    rho = 0.7
    max_outer = 50
    max_inner = 300
    param_space = L2

    [output]
    dir = out
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import logging
import re
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, experiments as ex, io
from .fem import ConvergenceError, FeFunction
from .forward2d import HyperelasticPlane, LinearPlane, NewtonOptions, NonlinearInverseProblem
from .forward25d import Linear25D
from .inversion import FAILURE, InversionConfig, cgne, newton_cg
from .material import DomainError, MaterialParams
from .mesh import build_box_mesh, build_rect_mesh
from .selftest import run_selftest

log = logging.getLogger("tfmkit")

MODELS = ("LINEAR_25D", "LINEAR_2D", "NONLINEAR_2D")
FORCES = ("RING", "SPOTS", "FROM_CSV")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    model: str
    half_width: float
    depth: float
    resolution: tuple
    data_resolution: tuple
    order: int
    params: MaterialParams
    force: str
    magnitude: float
    force_path: Path | None
    thickness: float
    level_percent: float | None
    delta: float | None
    margin: tuple | None
    seed: int
    inversion: dict
    out_dir: Path
    truth_path: Path | None = None
    magnitudes: list = field(default_factory=list)
    two_stage: bool = False
    two_stage_magnitude: float = 2e5
    two_stage_linear_iters: int = 300
    two_stage_newton_iters: int = 10
    homotopy_steps: int = 1
    data_flip: bool = True
    digest: str = ""

    @property
    def is_box(self) -> bool:
        return self.model == "LINEAR_25D"


def _line_of(text: str, section: str, key: str | None) -> int | None:
    cur = None
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        m = re.match(r"\[(.+)\]", line)
        if m:
            cur = m.group(1).strip()
            if key is None and cur == section:
                return n
        elif cur == section and key is not None and re.match(rf"{re.escape(key)}\s*[=:]", line):
            return n
    return None


def load_config(path, seed_override: int | None = None) -> ExperimentConfig:
    """Parse and validate an experiment file; errors name the offending line."""
    path = Path(path)
    text = path.read_text()
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as err:
        raise ConfigError(str(err)) from err

    def fail(section, key, msg):
        n = _line_of(text, section, key)
        where = f"{path}:{n}" if n else str(path)
        raise ConfigError(f"{where}: [{section}] {key or ''}: {msg}")

    def get(section, key, conv=str, default=None, required=False):
        if not cp.has_option(section, key):
            if required:
                fail(section, key, "missing required key")
            return default
        raw = cp.get(section, key)
        try:
            return conv(raw)
        except (TypeError, ValueError) as err:
            fail(section, key, f"invalid value {raw!r} ({err})")

    ints = lambda s: tuple(int(v) for v in s.replace(",", " ").split())
    floats = lambda s: [float(v) for v in s.replace(",", " ").split()]
    boolean = lambda s: {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}[s.strip().lower()]

    model = get("model", "type", str.upper, required=True)
    if model not in MODELS:
        fail("model", "type", f"must be one of {', '.join(MODELS)}")
    box = model == "LINEAR_25D"
    ndim = 3 if box else 2

    half = get("domain", "half_width", float, ex.BOX_HALF_WIDTH if box else ex.RING_HALF_WIDTH)
    depth = get("domain", "depth", float, ex.BOX_DEPTH)
    res = get("domain", "resolution", ints, (16, 16, 6) if box else (24, 24))
    dres = get("domain", "data_resolution", ints, (24, 24, 8) if box else (40, 40))
    for key, r in (("resolution", res), ("data_resolution", dres)):
        if len(r) != ndim or min(r) < 1:
            fail("domain", key, f"needs {ndim} positive integers")
    if not half > 0 or not depth > 0:
        fail("domain", "half_width", "domain sizes must be positive")
    order = get("domain", "order", int, 1 if box else 2)

    has_mu = cp.has_option("material", "mu") or cp.has_option("material", "lambda")
    has_e = cp.has_option("material", "young") or cp.has_option("material", "poisson")
    if has_mu and has_e:
        fail("material", None, "give either (young, poisson) or (mu, lambda), not both")
    try:
        if has_mu:
            params = MaterialParams(get("material", "mu", float, required=True), get("material", "lambda", float, required=True))
        else:
            params = MaterialParams.from_young_poisson(
                get("material", "young", float, ex.DEFAULT_YOUNG), get("material", "poisson", float, ex.DEFAULT_POISSON)
            )
    except ValueError as err:
        fail("material", None, str(err))

    kind = get("force", "kind", str.upper, "RING")
    if kind not in FORCES:
        fail("force", "kind", f"must be one of {', '.join(FORCES)}")
    magnitude = get("force", "magnitude", float, 1000.0 if kind == "RING" else 10.0)
    force_path = get("force", "path", Path)
    if kind == "FROM_CSV" and force_path is None:
        fail("force", "path", "FROM_CSV needs a path")
    if kind != "FROM_CSV" and force_path is not None:
        fail("force", "path", "only FROM_CSV takes a path; exactly one force source is allowed")
    if kind == "FROM_CSV" and box:
        fail("force", "kind", "measured planar data needs a 2D model")
    thickness = get("force", "thickness", float, 1.0)
    if not thickness > 0:
        fail("force", "thickness", "must be positive")

    level = get("noise", "level_percent", float)
    delta = get("noise", "delta", float)
    margin = get("noise", "margin", floats)
    given = [k for k, v in (("level_percent", level), ("delta", delta), ("margin", margin)) if v is not None]
    if len(given) > 1:
        fail("noise", given[1], "exactly one noise specification is allowed")
    if not given:
        level = 0.0
    if level is not None and level < 0:
        fail("noise", "level_percent", "must be non-negative")
    if delta is not None and delta < 0:
        fail("noise", "delta", "must be non-negative")
    if margin is not None:
        if len(margin) != 4 or margin[0] >= margin[1] or margin[2] >= margin[3]:
            fail("noise", "margin", "expects x0, x1, y0, y1 with x0 < x1 and y0 < y1")
        margin = ((margin[0], margin[1]), (margin[2], margin[3]))
    seed = get("noise", "seed", int, 0) if seed_override is None else seed_override

    inv = {
        "tau": get("inversion", "tau", float, 1.2 if box else 1.01),
        "rho": get("inversion", "rho", float, 0.7),
        "max_outer": get("inversion", "max_outer", int, 50),
        "max_inner": get("inversion", "max_inner", int, 300 if model != "NONLINEAR_2D" else 20),
        "param_space": get("inversion", "param_space", str.upper, "L2"),
    }
    try:
        InversionConfig(**inv)
    except ValueError as err:
        msg = str(err)
        key = next((k for k in inv if msg.startswith(k)), "param_space" if "parameter space" in msg else None)
        fail("inversion", key, msg)

    cfg = ExperimentConfig(
        model=model,
        half_width=half,
        depth=depth,
        resolution=res,
        data_resolution=dres,
        order=order,
        params=params,
        force=kind,
        magnitude=magnitude,
        force_path=force_path,
        thickness=thickness,
        level_percent=level,
        delta=delta,
        margin=margin,
        seed=seed,
        inversion=inv,
        out_dir=get("output", "dir", Path, Path("out")),
        truth_path=get("reconstruct", "truth", Path),
        magnitudes=get("compare", "magnitudes", floats, []),
        two_stage=get("compare", "two_stage", boolean, False),
        two_stage_magnitude=get("compare", "two_stage_magnitude", float, 2e5),
        two_stage_linear_iters=get("compare", "linear_iterations", int, 300),
        two_stage_newton_iters=get("compare", "newton_iterations", int, 10),
        homotopy_steps=get("compare", "homotopy_steps", int, 10),
        data_flip=get("domain", "data_flip", boolean, True),
        digest=hashlib.sha256(text.encode()).hexdigest()[:16],
    )
    for p in ("force_path", "truth_path"):
        v = getattr(cfg, p)
        if v is not None and not v.is_absolute():
            setattr(cfg, p, path.parent / v)
    return cfg


# -- model construction ----------------------------------------------------
def build_meshes(cfg: ExperimentConfig):
    if cfg.is_box:
        rec = build_box_mesh(cfg.half_width, cfg.depth, *cfg.resolution)
        data = build_box_mesh(cfg.half_width, cfg.depth, *cfg.data_resolution)
    else:
        rec = build_rect_mesh(cfg.half_width, *cfg.resolution)
        data = build_rect_mesh(cfg.half_width, *cfg.data_resolution, flip=cfg.data_flip)
    return rec, data


def build_model(cfg: ExperimentConfig, mesh):
    if cfg.model == "LINEAR_25D":
        return Linear25D(mesh, cfg.params, cfg.order)
    if cfg.model == "LINEAR_2D":
        return LinearPlane(mesh, cfg.params, cfg.order)
    return HyperelasticPlane(mesh, cfg.params, cfg.order)


def force_field(cfg: ExperimentConfig):
    """Vectorized traction (box) or force density (plane) callable."""
    if cfg.force == "RING":
        t = lambda x: ex.force_ring(cfg.magnitude, x)
    elif cfg.force == "SPOTS":
        t = lambda x: ex.force_spots(cfg.magnitude, x)
    else:
        raise ConfigError("FROM_CSV has no synthetic force field")
    if cfg.is_box:
        return t
    return lambda x: ex.planar(t)(x) / cfg.thickness


def param_space_of(model):
    return model.trace_space if isinstance(model, Linear25D) else model.space


def forward_solve(model, T: FeFunction, cfg: ExperimentConfig) -> FeFunction:
    if isinstance(model, HyperelasticPlane):
        return model.solve(T, NewtonOptions(auto_homotopy=cfg.homotopy_steps)).u
    if isinstance(model, Linear25D):
        return model.forward(T)
    return model.solve(T)


def _manifest(cfg, model, mesh, **extra):
    m = {
        "version": __version__,
        "config_hash": cfg.digest,
        "model": cfg.model,
        "seed": cfg.seed,
        "dofs": int(model.space.n_dofs),
        "parameter_dofs": int(param_space_of(model).n_dofs),
        "mesh_hash": mesh.fingerprint(),
        "mesh_cells": int(mesh.n_cells),
    }
    m.update(extra)
    return m


# -- subcommands -----------------------------------------------------------
def cmd_simulate(cfg: ExperimentConfig, out: Path) -> int:
    out.mkdir(parents=True, exist_ok=True)
    rec_mesh, data_mesh = build_meshes(cfg)
    fine = build_model(cfg, data_mesh)
    coarse = build_model(cfg, rec_mesh)
    field_fn = force_field(cfg)
    T_fine = param_space_of(fine).interpolate(field_fn)
    u = forward_solve(fine, T_fine, cfg).transfer(coarse.space)
    truth = param_space_of(coarse).interpolate(field_fn)
    if cfg.level_percent is not None:
        if cfg.level_percent > 0 and not np.any(u.coeffs):
            raise ConfigError("relative noise needs a nonzero displacement")
        noisy = ex.add_noise(u, cfg.level_percent, cfg.seed)
    else:
        # an absolute noise norm: draw a unit-level pattern and rescale it
        delta = cfg.delta or 0.0
        rng = np.random.default_rng(cfg.seed)
        e = u.with_coeffs(rng.standard_normal(u.coeffs.shape))
        e = e.with_coeffs(e.coeffs * (delta / ex.l2_norm(e))) if delta > 0 else e.with_coeffs(np.zeros_like(e.coeffs))
        un = ex.l2_norm(u)
        noisy = ex.NoisyData(u.with_coeffs(u.coeffs + e.coeffs), delta, 100 * delta / un if un else 0.0, cfg.seed, u)
    io.write_field_csv(out / "truth_traction.csv", truth)
    io.write_field_csv(out / "displacement.csv", u)
    io.write_field_csv(out / "displacement_noisy.csv", noisy.field)
    io.write_vtk(out / "displacement.vtk", rec_mesh, {"u": u, "u_noisy": noisy.field})
    tmesh = truth.space.mesh
    io.write_vtk(out / "truth_traction.vtk", tmesh, {"traction": truth})
    io.write_manifest(
        out / "manifest.json",
        _manifest(
            cfg,
            coarse,
            rec_mesh,
            command="simulate",
            data_mesh_hash=data_mesh.fingerprint(),
            delta=noisy.delta,
            noise_level_percent=noisy.level_percent,
            displacement_l2=ex.l2_norm(u),
        ),
    )
    print(f"simulate: wrote {out} (delta = {noisy.delta:.6e}, {coarse.space.n_dofs} dofs)")
    return 0


def _read_data(cfg, model, path: Path):
    with open(path) as fh:
        header = [h.strip() for h in fh.readline().split(",")]
    if not cfg.is_box and header == ["x", "y", "ux", "uy"]:
        try:
            return io.read_field_csv(path, model.space)
        except ValueError:
            xs, ys, vals = ex.read_grid_csv(path)
            return ex.grid_to_function(model.space, xs, ys, vals)
    return io.read_field_csv(path, model.space)


def _find_delta(cfg, data: FeFunction, data_path: Path):
    if cfg.delta is not None:
        return cfg.delta, "config"
    if cfg.margin is not None:
        return ex.estimate_noise_from_margin(data, cfg.margin), "margin"
    manifest = data_path.parent / "manifest.json"
    if manifest.exists():
        import json

        m = json.loads(manifest.read_text())
        if "delta" in m:
            return float(m["delta"]), "manifest"
    if cfg.level_percent == 0:
        return 0.0, "noise-free"
    raise ConfigError("noise norm unknown: give [noise] delta or margin, or keep the simulate manifest next to the data")


def cmd_reconstruct(cfg: ExperimentConfig, data_path: Path, out: Path) -> int:
    out.mkdir(parents=True, exist_ok=True)
    rec_mesh, data_mesh = build_meshes(cfg)
    model = build_model(cfg, rec_mesh)
    data = _read_data(cfg, model, data_path)
    delta, delta_source = _find_delta(cfg, data, data_path)
    sim_manifest = data_path.parent / "manifest.json"
    same_mesh = False
    if sim_manifest.exists():
        import json

        m = json.loads(sim_manifest.read_text())
        same_mesh = m.get("data_mesh_hash") == rec_mesh.fingerprint()
    if same_mesh:
        warnings.warn("data were simulated on the reconstruction mesh (inverse crime); errors will look optimistic")
    inv = InversionConfig(delta=delta, seed=cfg.seed, **cfg.inversion)
    pspace = param_space_of(model)
    truth = None
    if cfg.truth_path is not None:
        truth = io.read_field_csv(cfg.truth_path, pspace)
    pspace_fn = lambda x: FeFunction(pspace, x)
    error = (lambda x: ex.relative_error(pspace_fn(x), truth)) if truth is not None else None

    if isinstance(model, HyperelasticPlane):
        problem = NonlinearInverseProblem(model, inv.param_space)
        x, rep = newton_cg(problem, data.coeffs, inv, error=error)
        if x is None:
            x = np.zeros(pspace.n_dofs)
    else:
        op = model.linear_map() if isinstance(model, Linear25D) else model.linear_map(inv.param_space)
        x, rep = cgne(op, data.coeffs, inv, max_iter=inv.max_inner, error=error)
    rec = pspace_fn(x)
    if not cfg.is_box:
        rec_t = ex.density_to_traction(rec, cfg.thickness)
    else:
        rec_t = rec
    if truth is not None:
        rep.final_relative_error = ex.relative_error(rec, truth)
    io.write_field_csv(out / "reconstruction.csv", rec_t)
    io.write_vtk(out / "reconstruction.vtk", pspace.mesh, {"traction": rec_t})
    (out / "report.txt").write_text(rep.to_text())
    (out / "report.csv").write_text(rep.to_csv())
    io.write_manifest(
        out / "manifest.json",
        _manifest(
            cfg,
            model,
            rec_mesh,
            command="reconstruct",
            delta=delta,
            delta_source=delta_source,
            estimated_noise_percent=100 * delta / ex.l2_norm(data) if ex.l2_norm(data) else 0.0,
            inverse_crime=same_mesh,
            data_file=str(data_path),
            stop_reason=rep.stop_reason,
            outer_iterations=rep.outer_iterations,
        ),
    )
    msg = f"reconstruct: {rep.stop_reason} after {rep.outer_iterations} iterations"
    if rep.final_relative_error is not None:
        msg += f", relative error {rep.final_relative_error:.2f}%"
    print(msg)
    return 1 if rep.stop_reason == FAILURE else 0


def cmd_compare(cfg: ExperimentConfig, out: Path) -> int:
    if not cfg.magnitudes:
        raise ConfigError("[compare] magnitudes must list at least one force magnitude")
    if cfg.is_box:
        raise ConfigError("compare runs the planar models; set [model] type to LINEAR_2D or NONLINEAR_2D")
    out.mkdir(parents=True, exist_ok=True)
    mesh = build_rect_mesh(cfg.half_width, *cfg.resolution)
    opts = NewtonOptions(homotopy_steps=1, auto_homotopy=cfg.homotopy_steps)
    rows = ex.compare_models(cfg.magnitudes, cfg.params, mesh, order=cfg.order, opts=opts)
    lines = ["magnitude,relative_force_norm,discrepancy_percent,newton_iterations,note"]
    for r in rows:
        lines.append(f"{r.magnitude!r},{r.relative_force_norm!r},{r.discrepancy_percent!r},{r.newton_iterations},{r.note}")
    (out / "comparison.csv").write_text("\n".join(lines) + "\n")
    disc = [r.discrepancy_percent for r in rows]
    monotone = all(b >= a for a, b in zip(disc, disc[1:]))
    summary = [f"points = {len(rows)}", f"monotone = {monotone}"]
    failed = any(r.note for r in rows)
    if cfg.two_stage:
        res = ex.two_stage(
            cfg.two_stage_magnitude,
            data_res=cfg.data_resolution[0],
            rec_res=cfg.resolution[0],
            params=cfg.params,
            linear_iters=cfg.two_stage_linear_iters,
            newton_iters=cfg.two_stage_newton_iters,
            homotopy_steps=cfg.homotopy_steps,
            max_inner=cfg.inversion["max_inner"],
            rho=cfg.inversion["rho"],
        )
        summary += [
            f"two_stage_magnitude = {cfg.two_stage_magnitude!r}",
            f"two_stage_relative_force_norm = {res['relative_force_norm']!r}",
            f"linear_error_percent = {res['linear_error']!r}",
            f"nonlinear_error_percent = {res['nonlinear_error']!r}",
        ]
        failed = failed or res["nonlinear_report"].stop_reason == FAILURE
    (out / "summary.txt").write_text("\n".join(summary) + "\n")
    print("\n".join(lines))
    print("\n".join(summary))
    return 1 if failed else 0


def cmd_selftest(seed: int = 0) -> int:
    results = run_selftest(seed)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    total = sum(r.seconds for r in results)
    print(f"{len(results) - len(failed)}/{len(results)} checks passed in {total:.2f}s")
    return 1 if failed else 0


def cmd_mesh_info(cfg: ExperimentConfig) -> int:
    rec, data = build_meshes(cfg)
    for name, mesh in (("reconstruction", rec), ("data", data)):
        model = build_model(cfg, mesh)
        print(f"[{name}]")
        for k, v in mesh.summary().items():
            print(f"{k} = {v}")
        print(f"dofs = {model.space.n_dofs}")
        print(f"parameter_dofs = {param_space_of(model).n_dofs}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tfmkit", description="Traction force reconstruction experiments")
    p.add_argument("--verbose", "-v", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=False):
        sp.add_argument("--config", required=True, type=Path, help="INI experiment file")
        sp.add_argument("--out", type=Path, help="output directory (overrides [output] dir)")
        sp.add_argument("--seed", type=int, help="noise seed (overrides [noise] seed)")
        if data:
            sp.add_argument("--data", type=Path, help="displacement CSV (defaults to [force] path for FROM_CSV)")

    common(sub.add_parser("simulate", help="generate synthetic displacement data"))
    common(sub.add_parser("reconstruct", help="reconstruct tractions from displacement data"), data=True)
    common(sub.add_parser("compare", help="linear versus nonlinear forward comparison"))
    st = sub.add_parser("selftest", help="run the fast consistency checks")
    st.add_argument("--seed", type=int, default=0)
    mi = sub.add_parser("mesh-info", help="describe the configured meshes")
    mi.add_argument("--config", required=True, type=Path)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "selftest":
            return cmd_selftest(args.seed)
        cfg = load_config(args.config, getattr(args, "seed", None))
        if args.command == "mesh-info":
            return cmd_mesh_info(cfg)
        out = args.out if args.out is not None else cfg.out_dir
        if args.command == "simulate":
            return cmd_simulate(cfg, out)
        if args.command == "reconstruct":
            data = args.data if args.data is not None else cfg.force_path
            if data is None:
                raise ConfigError("reconstruct needs --data or a FROM_CSV force path")
            return cmd_reconstruct(cfg, data, out)
        return cmd_compare(cfg, out)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (ConvergenceError, DomainError) as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
