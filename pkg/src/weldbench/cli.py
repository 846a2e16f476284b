"""Command line front end: ``weldbench run|sweep|mesh-info``."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import time
from pathlib import Path

from .config import PREC_KINDS, ConfigError, RunConfig
from .runner import RunFailure, SweepError, check_sweep, mesh_info, run, steps_csv, sweep, table_csv

EXIT_OK = 0
EXIT_NONCONVERGED = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

logger = logging.getLogger("weldbench")


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "prec", None):
        cfg.prec = tuple(p.strip() for p in args.prec.split(",") if p.strip())
    if getattr(args, "overlap", None) is not None:
        cfg.overlap = args.overlap
    if getattr(args, "steps", None) is not None:
        cfg.n_steps = args.steps
    if getattr(args, "max_iters", None) is not None:
        cfg.max_iters = args.max_iters
    if getattr(args, "vtk", False):
        cfg.vtk = True
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    return cfg.validate()


def _write_outputs(reports, out_dir: Path, stem: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{stem}.csv").write_text(table_csv(reports))
    (out_dir / f"{stem}_steps.csv").write_text(steps_csv(reports))


def cmd_run(args) -> int:
    cfg = _apply_overrides(RunConfig.from_file(args.config), args)
    out = Path(cfg.out_dir)
    reports = []
    status = EXIT_OK
    for prec in cfg.prec:
        try:
            rep, _ = run(cfg, prec, out)
        except RunFailure as exc:
            reports.append(exc.report)
            status = EXIT_RUNTIME
            continue
        reports.append(rep)
        if not rep.converged and status == EXIT_OK:
            status = EXIT_NONCONVERGED
    _write_outputs(reports, out, cfg.name)
    sys.stdout.write(table_csv(reports))
    return status


def cmd_sweep(args) -> int:
    configs = [_apply_overrides(RunConfig.from_file(p), args) for p in args.configs]
    check_sweep(configs, args.mode)
    out = Path(args.out or (configs[0].out_dir if configs else "out"))
    reports = sweep(configs, args.mode, out)
    _write_outputs(reports, out, f"sweep_{args.mode}")
    sys.stdout.write(table_csv(reports))
    if any(r.error and not r.steps for r in reports):
        return EXIT_RUNTIME
    return EXIT_OK if all(r.converged for r in reports) else EXIT_NONCONVERGED


def cmd_mesh_info(args) -> int:
    cfg = RunConfig.from_file(args.config)
    t0 = time.perf_counter()
    info = mesh_info(cfg, classify=not args.no_classify)
    lines = [f"nSubdomains {info.n_subdomains}", f"nDoFs {info.n_dofs}"]
    if not args.no_classify:
        lines += [f"M {info.n_components}", f"nDoFs_Gamma {info.n_dofs_gamma}"]
    lines.append(f"seconds {time.perf_counter() - t0:.3f}")
    print("\n".join(lines))
    return EXIT_OK


def cmd_show_config(args) -> int:
    sys.stdout.write(RunConfig.from_file(args.config).to_text())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="weldbench", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads (runs are sequential; kept for interface compatibility)")
    sub = p.add_subparsers(dest="command", required=True)

    def solver_flags(sp):
        sp.add_argument("--prec", help=f"comma-separated subset of {','.join(PREC_KINDS)}")
        sp.add_argument("--overlap", type=int)
        sp.add_argument("--steps", type=int)
        sp.add_argument("--max-iters", type=int, dest="max_iters")
        sp.add_argument("--out")
        sp.add_argument("--vtk", action="store_true")

    sp = sub.add_parser("run", help="run one configuration")
    sp.add_argument("config")
    solver_flags(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="run a weak or strong scaling sweep")
    sp.add_argument("configs", nargs="*")
    sp.add_argument("--mode", choices=("weak", "strong"), required=True)
    solver_flags(sp)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("mesh-info", help="print nDoFs, M and nDoFs_Gamma without solving")
    sp.add_argument("config")
    sp.add_argument("--no-classify", action="store_true")
    sp.set_defaults(func=cmd_mesh_info)

    sp = sub.add_parser("show-config", help="print the parsed configuration")
    sp.add_argument("config")
    sp.set_defaults(func=cmd_show_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, SweepError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
