import csv
import io

import numpy as np
import pytest

from weldbench.cli import EXIT_CONFIG, EXIT_NONCONVERGED, EXIT_OK, main
from weldbench.config import ConfigError, RunConfig
from weldbench.laser_bc import Ellipsoid, half_ellipsoid_surface, write_ascii_stl
from weldbench.meshdd import build_hex_mesh
from weldbench.runner import (
    RunReport,
    SweepError,
    check_sweep,
    default_sweep_configs,
    mesh_info,
    run,
    summarize,
    table_csv,
)
from weldbench.thermo_fem import SimulationState, StepStats
from weldbench.vtk import read_vtk_point_data, write_vtk

TINY = """
[run]
name = tiny
[mesh]
extent = 12 8 1
local_elems = 2 2 2
[decomposition]
grid = 2 2 1
overlap = 1
[solver]
prec = one_level, gdsw
[time]
n_steps = 2
[pool]
semi_axes = 2 1.5 1
position_0 = 4
y_center = 4
"""


def write(tmp_path, text, name="c.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_defaults_valid():
    cfg = RunConfig().validate()
    assert cfg.mesh_elems == (40, 20, 10) and cfg.n_subdomains == 16
    assert cfg.rtol == 1e-6 and cfg.max_iters == 1000 and cfg.newton_abs_tol == 1e-8
    assert cfg.max_newton == 10 and cfg.dt == 0.05 and cfg.pool.theta_l == 1480.0


def test_roundtrip():
    cfg = RunConfig.from_text(TINY)
    again = RunConfig.from_text(cfg.to_text())
    assert again == cfg
    assert cfg.prec == ("one_level", "gdsw") and cfg.pool.semi_axes == (2.0, 1.5, 1.0)


def test_serialization_idempotent():
    text = RunConfig.from_text(TINY + "[material]\nnu = 0.3\n").to_text()
    assert RunConfig.from_text(text).to_text() == text


def test_material_override():
    cfg = RunConfig.from_text("[material]\nE = 1000\nalpha_T = 0\n")
    assert cfg.material.E == 1000.0 and cfg.material.alpha_T == 0.0
    assert RunConfig.from_text(cfg.to_text()).material == cfg.material


def test_validation_collects_all_errors():
    text = """
[mesh]
n_elems = 5 5 5
local_elems = 1 1 1
[decomposition]
overlap = -1
[solver]
prec = multigrid
rtol = 0
[bogus]
x = 1
[time]
dt = abc
"""
    with pytest.raises(ConfigError) as exc:
        RunConfig.from_text(text)
    msg = "\n".join(exc.value.errors)
    assert "time.dt" in msg and "unknown section [bogus]" in msg
    errs = None
    try:
        RunConfig.from_text(text.replace("dt = abc", "dt = 1").replace("[bogus]\nx = 1\n", ""))
    except ConfigError as e:
        errs = "\n".join(e.errors)
    assert "exactly one of" in errs and "overlap" in errs and "multigrid" in errs and "rtol" in errs


def test_grid_must_divide():
    with pytest.raises(ConfigError, match="does not divide"):
        RunConfig.from_text("[mesh]\nn_elems = 5 4 4\n[decomposition]\ngrid = 2 2 1\n")


def test_unknown_key_and_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="unknown key solver.tol"):
        RunConfig.from_text("[solver]\ntol = 1\n")
    with pytest.raises(ConfigError, match="cannot read"):
        RunConfig.from_file(tmp_path / "nope.ini")


def test_mesh_info_counts():
    info = mesh_info(RunConfig(grid=(4, 4, 1)))
    assert (info.n_subdomains, info.n_dofs, info.n_components, info.n_dofs_gamma) == (16, 37884, 33, 132)


def test_cli_mesh_info(tmp_path, capsys):
    p = write(tmp_path, "[decomposition]\ngrid = 8 8 1\n")
    assert main(["mesh-info", str(p)]) == EXIT_OK
    out = dict(line.split() for line in capsys.readouterr().out.splitlines())
    assert out["nDoFs"] == "146124" and out["nSubdomains"] == "64"
    assert int(out["nDoFs_Gamma"]) == 4 * int(out["M"])


def test_cli_bad_config_exit_code(tmp_path, capsys):
    p = write(tmp_path, "[solver]\nprec = nope\n")
    assert main(["run", str(p)]) == EXIT_CONFIG
    assert "nope" in capsys.readouterr().err
    assert main(["show-config", str(tmp_path / "missing.ini")]) == EXIT_CONFIG


def test_cli_run_tiny(tmp_path, capsys):
    p = write(tmp_path, TINY)
    out = tmp_path / "out"
    assert main(["run", str(p), "--out", str(out), "--vtk"]) == EXIT_OK
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert [r["prec"] for r in rows] == ["one_level", "gdsw"]
    assert all(r["converged"] == "True" and r["nDoFs"] == "300" for r in rows)
    assert int(rows[1]["coarse_dim"]) + int(rows[1]["dropped"]) == 4 * int(rows[1]["M"])
    assert (out / "tiny.csv").exists() and (out / "tiny_steps.csv").exists()
    steps = list(csv.DictReader((out / "tiny_steps.csv").open()))
    assert len(steps) == 4 and all(float(s["final_residual"]) <= 1e-8 for s in steps)
    vtk = read_vtk_point_data(out / "tiny_gdsw_step002.vtk")
    assert vtk["temperature"].max() == pytest.approx(1480.0)


def test_cli_nonconvergence_marker(tmp_path, capsys):
    p = write(tmp_path, TINY)
    code = main(["run", str(p), "--prec", "one_level", "--max-iters", "2", "--out", str(tmp_path)])
    assert code == EXIT_NONCONVERGED
    row = next(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert row["it_Avg"] == "x" and row["it_Tot"] == "x" and row["converged"] == "False"


def test_deterministic_csv(tmp_path, capsys):
    p = write(tmp_path, TINY.replace("n_steps = 2", "n_steps = 1"))
    outs = []
    for k in range(2):
        assert main(["run", str(p), "--out", str(tmp_path / f"o{k}")]) == EXIT_OK
        capsys.readouterr()
        outs.append((tmp_path / f"o{k}" / "tiny_steps.csv").read_text())
    assert outs[0] == outs[1]


def test_threads_flag_accepted(tmp_path, capsys):
    p = write(tmp_path, "[decomposition]\ngrid = 2 2 1\n")
    assert main(["--threads", "4", "mesh-info", str(p), "--no-classify"]) == EXIT_OK


def test_stl_pool_run(tmp_path):
    stl = tmp_path / "pool.stl"
    write_ascii_stl(stl, half_ellipsoid_surface(Ellipsoid(2, 1.5, 1), 24, 12))
    cfg = RunConfig.from_text(TINY + f"shape = stl\nstl = {stl}\n")
    cfg.n_steps = 1
    rep, state = run(cfg, "one_level", keep_state=True)
    assert rep.converged and state.theta.max() == pytest.approx(1480.0)


def test_report_statistics_and_marks():
    rep = RunReport("r", "gdsw", 4, 100, 8, 2)
    rep.steps = [StepStats(1, 0.05, [10, 12, 11, 13], 4, True, [1.0]),
                 StepStats(2, 0.1, [9, 9, 9], 3, True, [1.0])]
    assert rep.it_tot == 73 and rep.it_avg == 10 and rep.it_n == 4
    assert rep.row()["it_Avg"] == 10
    rep.failed = True
    assert rep.row()["it_Avg"] == "x" and np.isnan(summarize([rep])[0])
    assert "x" in table_csv([rep])


def test_sweep_checks():
    weak = default_sweep_configs("weak", grids=((2, 2, 1), (4, 4, 1)))
    check_sweep(weak, "weak")
    assert [mesh_info(c, classify=False).n_dofs for c in weak] == [10164, 37884]
    strong = default_sweep_configs("strong", grids=((2, 2, 1), (4, 4, 1)))
    check_sweep(strong, "strong")
    with pytest.raises(SweepError):
        check_sweep(weak, "strong")
    with pytest.raises(SweepError):
        check_sweep(strong, "weak")
    with pytest.raises(SweepError):
        check_sweep(weak, "sideways")
    check_sweep([], "weak")


def test_cli_empty_sweep(tmp_path, capsys):
    assert main(["sweep", "--mode", "weak", "--out", str(tmp_path)]) == EXIT_OK
    assert capsys.readouterr().out.startswith("name,prec")


def test_cli_mixed_sweep_rejected(tmp_path):
    a = write(tmp_path, "[decomposition]\ngrid = 2 2 1\n", "a.ini")
    b = write(tmp_path, "[mesh]\nlocal_elems = 5 5 10\n", "b.ini")
    assert main(["sweep", str(a), str(b), "--mode", "weak"]) == EXIT_CONFIG


def test_vtk_roundtrip(tmp_path, rng):
    mesh = build_hex_mesh((2, 1, 1), (2, 2, 1))
    state = SimulationState.initial(mesh, 0.05)
    state.u = rng.normal(size=state.u.shape)
    state.theta = rng.random(mesh.n_nodes) * 1000
    data = read_vtk_point_data(write_vtk(mesh, state, tmp_path / "s.vtk"))
    np.testing.assert_array_equal(data["points"], mesh.node_coords)
    np.testing.assert_array_equal(data["cells"], mesh.elem_conn)
    assert set(data["cell_types"]) == {12}
    np.testing.assert_array_equal(data["temperature"], state.theta)
    np.testing.assert_array_equal(data["displacement"], state.u)


def test_vtk_unwritable(tmp_path):
    mesh = build_hex_mesh((1, 1, 1), (1, 1, 1))
    with pytest.raises(OSError, match="cannot write"):
        write_vtk(mesh, SimulationState.initial(mesh, 0.05), tmp_path / "no" / "dir" / "s.vtk")
