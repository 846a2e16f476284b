"""Moving melt-pool temperature condition and clamped displacement faces.

The melt pool is either a half-ellipsoid hanging from the top surface of the
plate or a closed triangulated surface read from ASCII STL.  A triangulated
pool may be open at the top: the plane ``z = top`` closes it.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .meshdd import HexMesh
from .thermo_fem import Constraints

logger = logging.getLogger(__name__)

SNAP_TOL = 1e-9


class InvalidShape(ValueError):
    pass


@dataclass(frozen=True)
class Ellipsoid:
    a_x: float = 3.0
    a_y: float = 1.5
    a_z: float = 1.0

    def __post_init__(self):
        if min(self.a_x, self.a_y, self.a_z) <= 0:
            raise InvalidShape(f"semi-axes must be positive: {self}")


@dataclass(frozen=True)
class TriSurface:
    """Triangles in coordinates relative to the pool reference point on the top plane."""

    triangles: np.ndarray = field(repr=False)  # (T, 3, 3)

    def __post_init__(self):
        tri = np.asarray(self.triangles, dtype=float)
        if tri.ndim != 3 or tri.shape[1:] != (3, 3):
            raise InvalidShape(f"triangles must have shape (T, 3, 3), got {tri.shape}")
        area = 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
        scale = max(np.ptp(tri.reshape(-1, 3), axis=0).max(), 1.0)
        bad = np.flatnonzero(area <= 1e-14 * scale**2)
        if bad.size:
            raise InvalidShape(f"degenerate (zero-area) triangle {int(bad[0])}")
        check_watertight(tri)


def check_watertight(tri: np.ndarray, top: float = 0.0, tol: float = 1e-9) -> None:
    """Every edge is shared by two triangles, or lies in the top plane (closed by the cap)."""
    verts, inv = np.unique(np.round(tri.reshape(-1, 3) / tol) * tol, axis=0, return_inverse=True)
    inv = inv.reshape(-1, 3)
    edges = np.sort(np.concatenate([inv[:, [0, 1]], inv[:, [1, 2]], inv[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    open_edges = uniq[counts == 1]
    on_top = np.all(np.abs(verts[open_edges][..., 2] - top) <= 1e-6, axis=1)
    if np.any(counts > 2) or not np.all(on_top):
        raise InvalidShape("triangulated pool is not watertight against the top plane")


@dataclass(frozen=True)
class MeltPool:
    """Pool geometry moving along x at constant ``speed``.

    ``position_0`` is the x coordinate of the pool reference point at ``t = 0``;
    the reference point sits on the top surface at ``y = y_center``.
    """

    shape: Ellipsoid | TriSurface = field(default_factory=Ellipsoid)
    position_0: float = 10.0
    y_center: float = 10.0
    speed: float = 10.0
    theta_l: float = 1480.0
    top: float = 1.0

    @property
    def center(self) -> np.ndarray:
        return np.array([self.position_0, self.y_center, self.top])

    def footprint(self) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned bounding box of the pool volume."""
        c = self.center
        if isinstance(self.shape, Ellipsoid):
            a = np.array([self.shape.a_x, self.shape.a_y, self.shape.a_z])
            return c - a, c + np.array([a[0], a[1], 0.0])
        pts = self.shape.triangles.reshape(-1, 3)
        return c + pts.min(axis=0), c + pts.max(axis=0)


def pool_at(pool: MeltPool, t: float) -> MeltPool:
    if t < 0:
        raise ValueError(f"time must be non-negative, got {t}")
    return replace(pool, position_0=pool.position_0 + pool.speed * t)


def _inside_ellipsoid(points, pool: MeltPool, tol: float):
    e = pool.shape
    c = pool.center
    depth = c[2] - points[:, 2]
    q = ((points[:, 0] - c[0]) / e.a_x) ** 2 + ((points[:, 1] - c[1]) / e.a_y) ** 2 \
        + (depth / e.a_z) ** 2
    return (q <= 1.0 + tol) & (depth >= -SNAP_TOL)


def _inside_surface(points, pool: MeltPool, tol: float):
    """Vertical ray parity test; the downward ray never meets the top cap."""
    tri = pool.shape.triangles + pool.center
    lo, hi = pool.footprint()
    inside = np.zeros(len(points), dtype=bool)
    cand = np.flatnonzero(np.all((points >= lo - tol) & (points <= hi + tol), axis=1))
    if cand.size == 0:
        return inside
    p = points[cand]
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    v0 = (b - a)[:, :2]
    v1 = (c - a)[:, :2]
    det = v0[:, 0] * v1[:, 1] - v0[:, 1] * v1[:, 0]
    vertical = np.abs(det) <= 1e-14
    det = np.where(vertical, 1.0, det)

    def bary(xy):
        rel = xy[:, None, :] - a[None, :, :2]
        l1 = (rel[..., 0] * v1[:, 1] - rel[..., 1] * v1[:, 0]) / det
        l2 = (v0[:, 0] * rel[..., 1] - v0[:, 1] * rel[..., 0]) / det
        lam = np.stack([1.0 - l1 - l2, l1, l2])
        return lam, lam[0] * a[:, 2] + lam[1] * b[:, 2] + lam[2] * c[:, 2]

    lam, z_hit = bary(p[:, :2])
    hit = np.all(lam >= -1e-12, axis=0) & ~vertical
    on_surface = np.any(hit & (np.abs(z_hit - p[:, None, 2]) <= tol), axis=1)
    # parity along a ray nudged off mesh-aligned edges and vertices
    scale = max(float(np.ptp(tri[..., :2])), 1.0)
    lam, z_hit = bary(p[:, :2] + scale * np.array([1.37e-9, 2.71e-9]))
    strict = np.all(lam > 0.0, axis=0) & ~vertical
    crossings = np.sum(strict & (z_hit < p[:, None, 2]), axis=1)
    inside[cand] = on_surface | (crossings % 2 == 1)
    return inside


def inside_pool(points, pool: MeltPool, tol: float = 1e-12) -> np.ndarray:
    """Boolean mask of points inside the pool; boundary points count as inside."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if isinstance(pool.shape, Ellipsoid):
        mask = _inside_ellipsoid(pts, pool, tol)
    else:
        mask = _inside_surface(pts, pool, max(tol, 1e-9))
    return mask if np.ndim(points) > 1 else bool(mask[0])


@dataclass(frozen=True)
class ClampSpec:
    """Faces with ``u = 0``: (axis, coordinate) pairs."""

    faces: tuple[tuple[int, float], ...] = ((1, 0.0), (1, 20.0))

    @classmethod
    def for_mesh(cls, mesh: HexMesh) -> "ClampSpec":
        return cls(((1, 0.0), (1, float(mesh.extent[1]))))


@dataclass
class DirichletSets:
    displacement: np.ndarray
    temperature: np.ndarray
    temperature_values: np.ndarray
    time: float

    def constraints(self) -> Constraints:
        u = self.displacement
        udofs = (4 * u[:, None] + np.arange(3)).ravel()
        tdofs = 4 * self.temperature + 3
        dofs = np.concatenate([udofs, tdofs])
        vals = np.concatenate([np.zeros(udofs.size), self.temperature_values])
        order = np.argsort(dofs, kind="stable")
        return Constraints(dofs[order].astype(np.int64), vals[order])


def clamped_nodes(mesh: HexMesh, clamp: ClampSpec) -> np.ndarray:
    mask = np.zeros(mesh.n_nodes, dtype=bool)
    for axis, coord in clamp.faces:
        mask |= np.abs(mesh.node_coords[:, axis] - coord) <= SNAP_TOL
    return np.flatnonzero(mask)


def build_dirichlet_sets(mesh: HexMesh, pool: MeltPool, t: float,
                         clamp: ClampSpec | None = None, theta_values=None) -> DirichletSets:
    """Dirichlet data at time ``t``.

    ``theta_values`` optionally maps the in-pool node array to prescribed
    temperatures (used for ramping); the default is ``pool.theta_l`` everywhere.
    """
    clamp = clamp or ClampSpec.for_mesh(mesh)
    moved = pool_at(pool, t)
    lo, hi = moved.footprint()
    plate_lo = np.zeros(3)
    plate_hi = np.asarray(mesh.extent, dtype=float)
    if np.any(lo[:2] < plate_lo[:2] - SNAP_TOL) or np.any(hi[:2] > plate_hi[:2] + SNAP_TOL):
        logger.warning("melt pool footprint leaves the plate at t=%g", t)
    in_pool = np.flatnonzero(inside_pool(mesh.node_coords, moved))
    if in_pool.size == 0:
        logger.warning("melt pool covers no node at t=%g (laser off the plate)", t)
    if theta_values is None:
        values = np.full(in_pool.size, pool.theta_l)
    else:
        values = np.asarray(theta_values(in_pool), dtype=float)
    return DirichletSets(clamped_nodes(mesh, clamp), in_pool, values, t)


class PoolSchedule:
    """Dirichlet data per time step, with an optional temporal temperature ramp.

    A node that has been inside the pool for ``s`` consecutive steps gets
    ``theta_init + (theta_l - theta_init) * min(1, s / n_ramp)``.  Nodes left
    behind by the pool are released.
    """

    def __init__(self, mesh: HexMesh, pool: MeltPool, clamp: ClampSpec | None = None,
                 n_ramp: int = 1, theta_init: float = 20.0):
        if n_ramp < 1:
            raise ValueError("n_ramp must be >= 1")
        self.mesh = mesh
        self.pool = pool
        self.clamp = clamp or ClampSpec.for_mesh(mesh)
        self.n_ramp = n_ramp
        self.theta_init = theta_init
        self._count = np.zeros(mesh.n_nodes, dtype=np.int64)
        self.last: DirichletSets | None = None

    def _values(self, nodes):
        frac = np.minimum(1.0, self._count[nodes] / self.n_ramp)
        return self.theta_init + (self.pool.theta_l - self.theta_init) * frac

    def at(self, step: int, t: float) -> Constraints:
        moved = pool_at(self.pool, t)
        in_pool = inside_pool(self.mesh.node_coords, moved)
        self._count = np.where(in_pool, self._count + 1, 0)
        self.last = build_dirichlet_sets(self.mesh, self.pool, t, self.clamp, self._values)
        return self.last.constraints()


def read_ascii_stl(path) -> np.ndarray:
    """Triangles from an ASCII STL file; normals are ignored."""
    text = Path(path).read_text()
    tokens = text.split()
    if not tokens or tokens[0].lower() != "solid":
        raise InvalidShape(f"{path}: not an ASCII STL file")
    verts = []
    i = 0
    while i < len(tokens):
        if tokens[i].lower() == "vertex":
            try:
                verts.append([float(tokens[i + 1]), float(tokens[i + 2]), float(tokens[i + 3])])
            except (IndexError, ValueError) as exc:
                raise InvalidShape(f"{path}: malformed vertex near token {i}") from exc
            i += 4
        else:
            i += 1
    if len(verts) % 3:
        raise InvalidShape(f"{path}: vertex count {len(verts)} is not a multiple of 3")
    return np.asarray(verts, dtype=float).reshape(-1, 3, 3)


def write_ascii_stl(path, triangles, name="pool") -> None:
    tri = np.asarray(triangles, dtype=float)
    lines = [f"solid {name}"]
    for t in tri:
        n = np.cross(t[1] - t[0], t[2] - t[0])
        n = n / (np.linalg.norm(n) or 1.0)
        lines.append(f"  facet normal {n[0]:.9e} {n[1]:.9e} {n[2]:.9e}")
        lines.append("    outer loop")
        for v in t:
            lines.append(f"      vertex {v[0]:.12e} {v[1]:.12e} {v[2]:.12e}")
        lines.append("    endloop")
        lines.append("  endfacet")
    lines.append(f"endsolid {name}")
    Path(path).write_text("\n".join(lines) + "\n")


def half_ellipsoid_surface(shape: Ellipsoid, n_theta: int = 24, n_phi: int = 12) -> np.ndarray:
    """Triangulated lower half-ellipsoid, open along the top plane ``z = 0``."""
    phi = np.linspace(0.0, 0.5 * np.pi, n_phi + 1)  # 0 at the top rim, pi/2 at the bottom
    th = np.linspace(0.0, 2.0 * np.pi, n_theta, endpoint=False)

    def point(p, t):
        return np.array([shape.a_x * np.cos(p) * np.cos(t),
                         shape.a_y * np.cos(p) * np.sin(t),
                         -shape.a_z * np.sin(p)])

    bottom = np.array([0.0, 0.0, -shape.a_z])
    tris = []
    for i in range(n_phi - 1):
        for j in range(n_theta):
            j2 = (j + 1) % n_theta
            a, b = point(phi[i], th[j]), point(phi[i], th[j2])
            c, d = point(phi[i + 1], th[j]), point(phi[i + 1], th[j2])
            tris.append([a, c, b])
            tris.append([b, c, d])
    for j in range(n_theta):
        j2 = (j + 1) % n_theta
        tris.append([point(phi[n_phi - 1], th[j]), bottom, point(phi[n_phi - 1], th[j2])])
    tri = np.asarray(tris)
    tri[np.abs(tri[..., 2]) < 1e-15, 2] = 0.0
    return tri
