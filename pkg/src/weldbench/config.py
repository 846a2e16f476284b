"""Run configuration: sectioned ``key = value`` text files.

Example::

    [mesh]
    extent = 60 20 1
    local_elems = 10 5 10

    [decomposition]
    grid = 4 4 1
    overlap = 1

    [solver]
    prec = one_level, gdsw, egdsw
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .laser_bc import Ellipsoid
from .thermo_fem import MaterialParams

PREC_KINDS = ("none", "one_level", "gdsw", "egdsw")


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("invalid configuration:\n  " + "\n  ".join(errors))
        self.errors = errors


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return " ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class PoolConfig:
    shape: str = "ellipsoid"
    semi_axes: tuple[float, float, float] = (3.0, 1.5, 1.0)
    stl: str = ""
    position_0: float = 10.0
    y_center: float = 10.0
    speed: float = 10.0
    theta_l: float = 1480.0
    theta_init: float = 20.0
    n_ramp: int = 1

    def ellipsoid(self) -> Ellipsoid:
        return Ellipsoid(*self.semi_axes)


@dataclass
class RunConfig:
    extent: tuple[float, float, float] = (60.0, 20.0, 1.0)
    n_elems: tuple[int, int, int] | None = None
    local_elems: tuple[int, int, int] | None = (10, 5, 10)
    grid: tuple[int, int, int] = (4, 4, 1)
    overlap: int = 1
    prec: tuple[str, ...] = ("gdsw",)
    rtol: float = 1e-6
    max_iters: int = 1000
    newton_abs_tol: float = 1e-8
    max_newton: int = 10
    dt: float = 0.05
    n_steps: int = 3
    material: MaterialParams = field(default_factory=MaterialParams)
    pool: PoolConfig = field(default_factory=PoolConfig)
    out_dir: str = "out"
    vtk: bool = False
    seed: int = 0
    name: str = "run"

    # (section, key, attribute, kind)
    _SCHEMA = (
        ("run", "name", "name", str),
        ("run", "seed", "seed", int),
        ("mesh", "extent", "extent", (float, 3)),
        ("mesh", "n_elems", "n_elems", (int, 3)),
        ("mesh", "local_elems", "local_elems", (int, 3)),
        ("decomposition", "grid", "grid", (int, 3)),
        ("decomposition", "overlap", "overlap", int),
        ("solver", "prec", "prec", "list"),
        ("solver", "rtol", "rtol", float),
        ("solver", "max_iters", "max_iters", int),
        ("solver", "newton_abs_tol", "newton_abs_tol", float),
        ("solver", "max_newton", "max_newton", int),
        ("time", "dt", "dt", float),
        ("time", "n_steps", "n_steps", int),
        ("output", "dir", "out_dir", str),
        ("output", "vtk", "vtk", bool),
    )

    @property
    def mesh_elems(self) -> tuple[int, int, int]:
        if self.n_elems is not None:
            return tuple(self.n_elems)
        return tuple(g * l for g, l in zip(self.grid, self.local_elems))

    @property
    def n_subdomains(self) -> int:
        gx, gy, gz = self.grid
        return gx * gy * gz

    def validate(self) -> "RunConfig":
        errs = []
        if (self.n_elems is None) == (self.local_elems is None):
            errs.append("exactly one of mesh.n_elems and mesh.local_elems must be given")
        if any(e <= 0 for e in self.extent):
            errs.append(f"mesh.extent must be positive, got {self.extent}")
        if any(g <= 0 for g in self.grid):
            errs.append(f"decomposition.grid must be positive, got {self.grid}")
        elif self.n_elems is not None:
            for d in range(3):
                if self.n_elems[d] <= 0 or self.n_elems[d] % self.grid[d]:
                    errs.append(f"grid {self.grid} does not divide n_elems {self.n_elems}")
                    break
        if self.local_elems is not None and any(n <= 0 for n in self.local_elems):
            errs.append(f"mesh.local_elems must be positive, got {self.local_elems}")
        if self.overlap < 0:
            errs.append("decomposition.overlap must be >= 0")
        for p in self.prec:
            if p not in PREC_KINDS:
                errs.append(f"solver.prec: unknown preconditioner {p!r}")
        if not self.prec:
            errs.append("solver.prec is empty")
        for name in ("rtol", "newton_abs_tol", "dt"):
            if not getattr(self, name) > 0:
                errs.append(f"{name} must be positive")
        for name in ("max_iters", "max_newton", "n_steps"):
            if getattr(self, name) < 1:
                errs.append(f"{name} must be >= 1")
        if self.pool.shape not in ("ellipsoid", "stl"):
            errs.append(f"pool.shape must be 'ellipsoid' or 'stl', got {self.pool.shape!r}")
        if self.pool.shape == "stl" and not self.pool.stl:
            errs.append("pool.stl path required for pool.shape = stl")
        if any(a <= 0 for a in self.pool.semi_axes):
            errs.append("pool.semi_axes must be positive")
        if self.pool.n_ramp < 1:
            errs.append("pool.n_ramp must be >= 1")
        try:
            MaterialParams(**dataclasses.asdict(self.material))
        except ValueError as exc:
            errs.append(f"material: {exc}")
        if errs:
            raise ConfigError(errs)
        return self

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError([str(exc)]) from exc
        cfg = cls()
        errs = []

        def conv(raw, kind, key):
            if kind is bool:
                low = raw.strip().lower()
                if low not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
                    raise ValueError(f"not a boolean: {raw!r}")
                return low in ("true", "yes", "1", "on")
            if kind == "list":
                return tuple(p.strip() for p in raw.replace(",", " ").split() if p.strip())
            if isinstance(kind, tuple):
                typ, n = kind
                parts = raw.replace(",", " ").split()
                if len(parts) != n:
                    raise ValueError(f"expected {n} values, got {len(parts)}")
                return tuple(typ(p) for p in parts)
            return kind(raw.strip())

        known = {}
        for section, key, attr, kind in cls._SCHEMA:
            known.setdefault(section, set()).add(key)
            if cp.has_option(section, key):
                try:
                    setattr(cfg, attr, conv(cp.get(section, key), kind, key))
                except ValueError as exc:
                    errs.append(f"{section}.{key}: {exc}")
        if cp.has_option("mesh", "n_elems") and not cp.has_option("mesh", "local_elems"):
            cfg.local_elems = None

        mat_fields = {f.name: f.type for f in dataclasses.fields(MaterialParams)}
        known["material"] = {k.lower() for k in mat_fields}
        if cp.has_section("material"):
            kw = {}
            names = {k.lower(): k for k in mat_fields}
            for key in cp.options("material"):
                if key in names:
                    try:
                        kw[key] = float(cp.get("material", key))
                    except ValueError as exc:
                        errs.append(f"material.{key}: {exc}")
            try:
                cfg.material = MaterialParams(**{names[k]: v for k, v in kw.items()})
            except ValueError as exc:
                errs.append(f"material: {exc}")

        pool_kinds = {"shape": str, "semi_axes": (float, 3), "stl": str, "position_0": float,
                      "y_center": float, "speed": float, "theta_l": float,
                      "theta_init": float, "n_ramp": int}
        known["pool"] = set(pool_kinds)
        if cp.has_section("pool"):
            for key, kind in pool_kinds.items():
                if cp.has_option("pool", key):
                    try:
                        setattr(cfg.pool, key, conv(cp.get("pool", key), kind, key))
                    except ValueError as exc:
                        errs.append(f"pool.{key}: {exc}")

        for section in cp.sections():
            if section not in known:
                errs.append(f"unknown section [{section}]")
                continue
            for key in cp.options(section):
                if key not in known[section]:
                    errs.append(f"unknown key {section}.{key}")
        if errs:
            raise ConfigError(errs)
        return cfg.validate()

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError([f"cannot read {path}: {exc}"]) from exc
        return cls.from_text(text)

    def to_text(self) -> str:
        sections: dict[str, list[str]] = {}
        for section, key, attr, _ in self._SCHEMA:
            val = getattr(self, attr)
            if val is None:
                continue
            sections.setdefault(section, []).append(f"{key} = {_fmt(val)}")
        sections["material"] = [f"{f.name} = {_fmt(getattr(self.material, f.name))}"
                                for f in dataclasses.fields(MaterialParams)]
        sections["pool"] = [f"{f.name} = {_fmt(getattr(self.pool, f.name))}"
                            for f in dataclasses.fields(PoolConfig)]
        out = []
        for section, lines in sections.items():
            out.append(f"[{section}]")
            out.extend(lines)
            out.append("")
        return "\n".join(out)
