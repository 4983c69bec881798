"""Run configuration and the three study drivers (convergence, simulate,
projection check), with CSV and VTK emission.

Config files are line-oriented ``key = value`` ASCII with ``#`` comments.
All validation happens before any compute; dt rules that do not divide the
final time exactly are adjusted downward to the nearest divisor (logged).
"""

import math
import os
import sys
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .femcore import segment_tables
from .manufactured import (
    ErrorReport,
    eoc_table,
    example1_boundary,
    example1_solution,
    example1_sources,
    example2_problem,
    l2_error,
)
from .mesh import build_structured_unit_square
from .projections import hdg_project, l2_project_element, l2_project_face
from .timestepping import CoupledStepper, CouplingConfig, TimeGrid, initialize, run
from .vtkio import write_vtk

DEFAULT_LEVELS = (2, 4, 8, 16, 32)


class ConfigError(ValueError):
    """Invalid run configuration (CLI exit code 1)."""


@dataclass
class RunConfig:
    """Validated parameters for one driver invocation."""

    k: int = 0
    eps: float = 0.1
    tau: float = 1.0
    t_final: float = 1.0
    dt: str = "h"
    levels: tuple = DEFAULT_LEVELS
    n: int = 50
    problem: str = "example2"
    snapshots: tuple = (0.01, 0.4, 0.7, 1.0)
    coupling_rtol: float = 1e-10
    coupling_atol: float = 1e-12
    coupling_maxit: int = 50
    out: str = "out"
    threads: int = 1

    def coupling(self):
        return CouplingConfig(rtol=self.coupling_rtol, atol=self.coupling_atol,
                              max_iter=self.coupling_maxit)


_FIELD_TYPES = {
    "k": int, "eps": float, "tau": float, "t_final": float, "dt": str,
    "levels": "int_list", "n": int, "problem": str, "snapshots": "float_list",
    "coupling_rtol": float, "coupling_atol": float, "coupling_maxit": int,
    "out": str, "threads": int,
}


def parse_config(text):
    """Parse key=value lines into a RunConfig; unknown keys are errors."""
    values = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected key = value, got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {ln}: unknown key {key!r}")
        kind = _FIELD_TYPES[key]
        try:
            if kind == "int_list":
                values[key] = tuple(int(v) for v in val.split(",") if v.strip())
            elif kind == "float_list":
                values[key] = tuple(float(v) for v in val.split(",") if v.strip())
            else:
                values[key] = kind(val)
        except ValueError as err:
            raise ConfigError(f"line {ln}: bad value for {key}: {err}") from None
    cfg = RunConfig(**values)
    validate_config(cfg)
    return cfg


def serialize_config(cfg):
    """Canonical text form; parse(serialize(parse(t))) == parse(t)."""
    lines = []
    for key in _FIELD_TYPES:
        val = getattr(cfg, key)
        if isinstance(val, tuple):
            val = ",".join(repr(v) if isinstance(v, float) else str(v) for v in val)
        elif isinstance(val, float):
            val = repr(val)
        lines.append(f"{key} = {val}")
    return "\n".join(lines) + "\n"


def validate_config(cfg):
    if cfg.k not in (0, 1, 2):
        raise ConfigError(f"k must be 0, 1, or 2 (got {cfg.k})")
    if cfg.eps <= 0 or cfg.tau <= 0:
        raise ConfigError("eps and tau must be positive")
    if cfg.t_final <= 0:
        raise ConfigError("t_final must be positive")
    if any(n < 1 for n in cfg.levels) or not cfg.levels:
        raise ConfigError("levels must be positive integers")
    if cfg.n < 1:
        raise ConfigError("n must be >= 1")
    if cfg.threads < 1:
        raise ConfigError("threads must be >= 1")
    if cfg.coupling_rtol <= 0 or cfg.coupling_atol <= 0 or cfg.coupling_maxit < 1:
        raise ConfigError("coupling tolerances must be positive, maxit >= 1")
    try:
        TimeGrid.from_rule(cfg.t_final, cfg.dt, 1.0)
    except ValueError as err:
        raise ConfigError(f"bad dt rule {cfg.dt!r}: {err}") from None
    for ts in cfg.snapshots:
        if not (0.0 < ts <= cfg.t_final + 1e-12):
            raise ConfigError(f"snapshot time {ts} outside (0, T]")
    return cfg


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    return "%.5e" % x


def write_csv(path, header, rows):
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(c) for c in row) + "\n")
    return path


def _resolve_grid(cfg, h, log=None):
    grid, dt_req = TimeGrid.from_rule(cfg.t_final, cfg.dt, h)
    if abs(grid.dt - dt_req) > 1e-12 * max(1.0, dt_req) and log is not None:
        log(f"note: dt adjusted from {dt_req:.6g} to {grid.dt:.6g} "
            f"({grid.n_steps} steps) to divide T = {cfg.t_final}")
    return grid


def run_convergence(cfg, out_dir=None, log=print, progress=None):
    """Benchmark study: solve the coupled system on a refinement ladder and
    report final-time L2 errors and rates for (u, phi, q, p)."""
    if cfg.k not in (0, 1):
        raise ConfigError("convergence study supports k = 0 or 1")
    sol = example1_solution()
    f1, f2 = example1_sources(cfg.eps)
    bc = example1_boundary()
    reports = []
    for lvl, n in enumerate(cfg.levels):
        mesh = build_structured_unit_square(n)
        grid = _resolve_grid(cfg, mesh.h_max, log)
        stepper = CoupledStepper(mesh, cfg.k, cfg.eps, cfg.tau, f1, f2, bc,
                                 coupling=cfg.coupling())
        state = initialize(lambda p: sol.u(p, 0.0), mesh, cfg.k)
        traj = run(state, grid, stepper)
        q, u, _, p, phi, _ = traj.fields
        T = cfg.t_final
        rep = ErrorReport(level=lvl, h=mesh.h_max, errors={
            "u": l2_error(u, sol.u, T, mesh),
            "phi": l2_error(phi, sol.phi, T, mesh),
            "q": l2_error(q, sol.q, T, mesh),
            "p": l2_error(p, sol.p, T, mesh),
        })
        reports.append(rep)
        if progress is not None:
            progress(n, rep)
    if len(reports) >= 2:
        table = eoc_table(reports)
    else:
        r = reports[0]
        table = {"level": [r.level], "h": [r.h]}
        for k2, v in r.errors.items():
            table[f"err_{k2}"] = [v]
            table[f"rate_{k2}"] = [None]
    rows = []
    for i in range(len(reports)):
        rows.append([table["level"][i], table["h"][i],
                     table["err_u"][i], table["rate_u"][i],
                     table["err_phi"][i], table["rate_phi"][i],
                     table["err_q"][i], table["rate_q"][i],
                     table["err_p"][i], table["rate_p"][i]])
    header = ["level", "h", "err_u", "rate_u", "err_phi", "rate_phi",
              "err_q", "rate_q", "err_p", "rate_p"]
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_csv(os.path.join(out_dir, "convergence.csv"), header, rows)
    if log is not None:
        log(",".join(header))
        for row in rows:
            log(",".join(_fmt(c) for c in row))
    return table


def run_simulation(cfg, out_dir=None, problem=None, log=print):
    """Device-style run: VTK snapshots plus a scalar time series CSV."""
    if problem is None:
        if cfg.problem != "example2":
            raise ConfigError(f"unknown problem {cfg.problem!r}")
        problem = example2_problem()
    mesh = problem.make_mesh(cfg.n)
    grid = _resolve_grid(cfg, mesh.h_max, log)
    for ts in cfg.snapshots:
        if abs(ts / grid.dt - round(ts / grid.dt)) > 1e-9:
            raise ConfigError(f"snapshot time {ts} does not land on the grid "
                              f"(dt = {grid.dt})")
    stepper = CoupledStepper(mesh, cfg.k, problem.eps, problem.tau,
                             problem.f1, problem.f2, problem.bc,
                             coupling=cfg.coupling())
    state = initialize(problem.u0, mesh, cfg.k)
    traj = run(state, grid, stepper, snapshot_times=cfg.snapshots)
    paths = []
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        for ts, fields in traj.snapshots:
            step = round(ts / grid.dt)
            q, u, _, p, phi, _ = fields
            name = os.path.join(out_dir, f"snapshot_step{step:06d}.vtk")
            write_vtk(mesh, {
                "u": u.cell_means()[:, 0],
                "phi": phi.cell_means()[:, 0],
                "p": p.cell_means(),
            }, name)
            paths.append(name)
        rows = [[t, mn, mx, float(it)] for t, mn, mx, it in
                zip(traj.step_times, traj.u_min, traj.u_max, traj.iteration_counts)]
        write_csv(os.path.join(out_dir, "timeseries.csv"),
                  ["t", "min_u", "max_u", "gummel_iterations"], rows)
    return traj, paths


def _face_l2_error(g, trace, mesh):
    """Skeleton error in the length-weighted norm (sum_e h_e int_e err^2)^1/2.

    The h_e weight normalizes the growing skeleton measure so a degree-k
    face projection of smooth data converges at order k+1.
    """
    rule, seg = segment_tables(trace.degree, 2 * trace.degree + 8)
    pts = mesh.face_points(np.arange(mesh.n_faces), rule.points)
    vals = np.asarray(g(pts.reshape(-1, 2)), dtype=float).reshape(mesh.n_faces, -1)
    num = trace.coeffs @ seg.T
    a = mesh.vertices[mesh.faces[:, 0]]
    b = mesh.vertices[mesh.faces[:, 1]]
    lengths = np.linalg.norm(b - a, axis=1)
    return math.sqrt(float(np.einsum("f,q,fq->", lengths**2, rule.weights,
                                     (num - vals) ** 2)))


def run_project_check(cfg, out_dir=None, t=0.5, log=print):
    """Observed approximation orders of the five projections on the
    benchmark fields at a fixed time."""
    sol = example1_solution()
    k = cfg.k
    names = ["flux_l2", "scalar_l2", "trace_l2", "hdg_flux", "hdg_scalar"]
    errors = {nm: [] for nm in names}
    hs = []
    for n in cfg.levels:
        mesh = build_structured_unit_square(n)
        hs.append(mesh.h_max)
        qf = l2_project_element(lambda p: sol.q(p, t), k, mesh, components=2)
        uf = l2_project_element(lambda p: sol.u(p, t), k + 1, mesh, components=1)
        ut = l2_project_face(lambda p: sol.u(p, t), k, mesh)
        pv, pw = hdg_project(lambda p: sol.p(p, t), lambda p: sol.phi(p, t),
                             k, cfg.tau, mesh)
        errors["flux_l2"].append(l2_error(qf, sol.q, t, mesh))
        errors["scalar_l2"].append(l2_error(uf, sol.u, t, mesh))
        errors["trace_l2"].append(_face_l2_error(lambda p: sol.u(p, t), ut, mesh))
        errors["hdg_flux"].append(l2_error(pv, sol.p, t, mesh))
        errors["hdg_scalar"].append(l2_error(pw, sol.phi, t, mesh))
    rows = []
    orders = {}
    for nm in names:
        errs = errors[nm]
        for i, (h, e) in enumerate(zip(hs, errs)):
            if i == 0:
                rate = None
            elif errs[i - 1] < 1e-13 and e < 1e-13:
                rate = "exact"
            else:
                rate = math.log2(errs[i - 1] / e)
            rows.append([nm, float(cfg.levels[i]), h, e, rate])
        last = rows[-1][-1]
        orders[nm] = last
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_csv(os.path.join(out_dir, "projection_rates.csv"),
                  ["projection", "n", "h", "error", "rate"],
                  rows)
    if log is not None:
        for nm in names:
            log(f"{nm}: observed order "
                f"{orders[nm] if isinstance(orders[nm], str) else f'{orders[nm]:.3f}'}")
    return errors, orders
