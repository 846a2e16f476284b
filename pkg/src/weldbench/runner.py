"""Simulation runs, scaling sweeps and result tables."""
from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import laser_bc
from .config import RunConfig
from .laser_bc import MeltPool, PoolSchedule, TriSurface
from .linalg import GmresConfig
from .meshdd import (
    build_hex_mesh,
    build_restrictions,
    classify_interface,
    count_dofs,
    partition,
    set_overlap,
)
from .schwarz import SchwarzSolver
from .thermo_fem import Assembler, SimulationState, StepStats, rounded_mean, time_loop
from .vtk import write_vtk

logger = logging.getLogger(__name__)

MARK_FAILED = "x"
TABLE_COLUMNS = ("name", "prec", "nSubdomains", "nDoFs", "nDoFs_Gamma", "M", "coarse_dim",
                 "dropped", "it_Avg", "it_N", "it_Tot", "converged")


@dataclass
class MeshInfo:
    n_subdomains: int
    n_dofs: int
    n_components: int

    @property
    def n_dofs_gamma(self) -> int:
        return 4 * self.n_components


def mesh_info(config: RunConfig, classify: bool = True) -> MeshInfo:
    """DoF and coarse-space counts without assembling anything."""
    n_dofs = count_dofs(config.mesh_elems)
    m = 0
    if classify:
        mesh = build_hex_mesh(config.extent, config.mesh_elems)
        m = classify_interface(partition(mesh, config.grid)).n_components
    return MeshInfo(config.n_subdomains, n_dofs, m)


@dataclass
class RunReport:
    name: str
    prec: str
    n_subdomains: int
    n_dofs: int
    n_dofs_gamma: int
    n_components: int
    steps: list[StepStats] = field(default_factory=list)
    coarse_dims: list[int] = field(default_factory=list)
    dropped: list[int] = field(default_factory=list)
    failed: bool = False
    error: str | None = None
    wall_time: float = 0.0

    @property
    def gmres_iters(self) -> list[int]:
        return [i for s in self.steps for i in s.gmres_iters]

    @property
    def converged(self) -> bool:
        return not self.failed and bool(self.steps) and all(s.converged for s in self.steps)

    @property
    def it_tot(self) -> int:
        return int(sum(self.gmres_iters))

    @property
    def it_avg(self) -> int:
        return rounded_mean(self.it_tot, len(self.gmres_iters))

    @property
    def it_n(self) -> int:
        return rounded_mean(sum(s.newton_iters for s in self.steps), len(self.steps))

    def row(self) -> dict:
        ok = self.converged
        mark = (lambda v: v) if ok else (lambda v: MARK_FAILED)
        return {
            "name": self.name,
            "prec": self.prec,
            "nSubdomains": self.n_subdomains,
            "nDoFs": self.n_dofs,
            "nDoFs_Gamma": self.n_dofs_gamma,
            "M": self.n_components,
            "coarse_dim": max(self.coarse_dims) if self.coarse_dims else 0,
            "dropped": max(self.dropped) if self.dropped else 0,
            "it_Avg": mark(self.it_avg),
            "it_N": mark(self.it_n),
            "it_Tot": mark(self.it_tot),
            "converged": ok,
        }


def make_pool(config: RunConfig, top: float) -> MeltPool:
    pc = config.pool
    if pc.shape == "stl":
        shape = TriSurface(laser_bc.read_ascii_stl(pc.stl))
    else:
        shape = pc.ellipsoid()
    return MeltPool(shape, pc.position_0, pc.y_center, pc.speed, pc.theta_l, top)


def run(config: RunConfig, prec: str | None = None, out_dir: str | Path | None = None,
        keep_state: bool = False):
    """Run one preconditioner on the configured time series.

    Returns ``(report, state)``; ``state`` is the final simulation state when
    ``keep_state`` is set, else ``None``.
    """
    prec = prec or config.prec[0]
    t0 = time.perf_counter()
    mesh = build_hex_mesh(config.extent, config.mesh_elems)
    dd = classify_interface(set_overlap(partition(mesh, config.grid), config.overlap))
    report = RunReport(config.name, prec, dd.n_subdomains, mesh.n_dofs,
                       4 * dd.n_components, dd.n_components)
    restrictions = build_restrictions(dd)
    solver = SchwarzSolver(prec, dd, restrictions,
                           GmresConfig(rtol=config.rtol, max_iters=config.max_iters))
    assembler = Assembler(mesh)
    pool = make_pool(config, float(mesh.extent[2]))
    schedule = PoolSchedule(mesh, pool, n_ramp=config.pool.n_ramp,
                            theta_init=config.pool.theta_init)
    state = SimulationState.initial(mesh, config.dt, config.pool.theta_init)
    mat = config.material

    out = Path(out_dir) if out_dir is not None else None

    def on_step(step, st, stats):
        stats.n_pool_nodes = int(schedule.last.temperature.size) if schedule.last else 0
        if out is not None and config.vtk:
            out.mkdir(parents=True, exist_ok=True)
            write_vtk(mesh, st, out / f"{config.name}_{prec}_step{step:03d}.vtk")

    try:
        series = time_loop(state, config.n_steps, config.dt, schedule.at,
                           lambda s, c: assembler.assemble(s, mat, c), solver,
                           config.newton_abs_tol, config.max_newton, on_step=on_step)
        report.steps = series.steps
        report.failed = series.failed
        if series.failed:
            report.error = series.steps[-1].failure
    except Exception as exc:  # runtime failure: keep the partial report
        logger.exception("run %s/%s failed", config.name, prec)
        report.failed = True
        report.error = f"{type(exc).__name__}: {exc}"
        raise RunFailure(report) from exc
    finally:
        report.coarse_dims = solver.coarse_dims
        report.dropped = solver.dropped
        report.wall_time = time.perf_counter() - t0
    return report, (state if keep_state else None)


class RunFailure(RuntimeError):
    def __init__(self, report: RunReport):
        super().__init__(report.error)
        self.report = report


class SweepError(ValueError):
    pass


def check_sweep(configs: list[RunConfig], mode: str) -> None:
    if mode not in ("weak", "strong"):
        raise SweepError(f"mode must be weak or strong, got {mode!r}")
    if not configs:
        return
    if mode == "weak":
        locs = {tuple(g // s for g, s in zip(c.mesh_elems, c.grid)) for c in configs}
        if len(locs) > 1 or any(c.local_elems is None and c.n_elems is None for c in configs):
            raise SweepError(f"weak sweep needs a common local_elems, got {sorted(locs)}")
    else:
        sizes = {c.mesh_elems for c in configs}
        if len(sizes) > 1:
            raise SweepError(f"strong sweep needs a common n_elems, got {sorted(sizes)}")


def sweep(configs: list[RunConfig], mode: str, out_dir=None) -> list[RunReport]:
    check_sweep(configs, mode)
    reports = []
    for cfg in configs:
        for prec in cfg.prec:
            try:
                rep, _ = run(cfg, prec, out_dir)
            except RunFailure as exc:
                rep = exc.report
            reports.append(rep)
    return reports


def table_csv(reports: list[RunReport]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=TABLE_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow(r.row())
    return buf.getvalue()


def steps_csv(reports: list[RunReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["name", "prec", "step", "time", "it_N", "gmres_iters", "it_Avg", "it_Tot",
                "final_residual", "pool_nodes", "converged"])
    for r in reports:
        for s in r.steps:
            w.writerow([r.name, r.prec, s.step, f"{s.time:.6g}", s.newton_iters,
                        " ".join(map(str, s.gmres_iters)), s.it_avg, s.it_tot,
                        f"{s.residuals[-1]:.6e}" if s.residuals else "", s.n_pool_nodes,
                        s.converged])
    return buf.getvalue()


def default_sweep_configs(mode: str = "weak", grids=((2, 2, 1), (4, 4, 1), (8, 8, 1)),
                          local=(10, 5, 10), n_elems=(40, 20, 10), precs=None) -> list[RunConfig]:
    precs = tuple(precs or ("one_level", "gdsw", "egdsw"))
    out = []
    for g in grids:
        if mode == "weak":
            cfg = RunConfig(local_elems=tuple(local), grid=tuple(g), prec=precs)
        else:
            cfg = RunConfig(n_elems=tuple(n_elems), local_elems=None, grid=tuple(g), prec=precs)
        cfg.name = "x".join(map(str, g))
        out.append(cfg.validate())
    return out


def summarize(reports: list[RunReport]) -> np.ndarray:
    """it_Avg per report (NaN when the run did not converge)."""
    return np.array([r.it_avg if r.converged else np.nan for r in reports], dtype=float)
