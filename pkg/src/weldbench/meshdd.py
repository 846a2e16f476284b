"""Structured hexahedral meshes and regular box domain decompositions.

Node and element numbering is lexicographic with x running fastest.  The
local corner ordering of an element follows the VTK hexahedron convention::

    0:(-,-,-)  1:(+,-,-)  2:(+,+,-)  3:(-,+,-)
    4:(-,-,+)  5:(+,-,+)  6:(+,+,+)  7:(-,+,+)

Each node carries four degrees of freedom, stored node-blocked as
``(u_x, u_y, u_z, theta)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

logger = logging.getLogger(__name__)

DOFS_PER_NODE = 4
CORNERS = np.array(
    [
        [-1, -1, -1],
        [1, -1, -1],
        [1, 1, -1],
        [-1, 1, -1],
        [-1, -1, 1],
        [1, -1, 1],
        [1, 1, 1],
        [-1, 1, 1],
    ],
    dtype=float,
)
FIELD_NAMES = ("u_x", "u_y", "u_z", "theta")


def _triple(values, name, kind=float):
    vals = tuple(kind(v) for v in values)
    if len(vals) != 3:
        raise ValueError(f"{name} must have 3 entries, got {len(vals)}")
    if any(not np.isfinite(v) or v <= 0 for v in vals):
        raise ValueError(f"{name} entries must be positive, got {vals}")
    return vals


@dataclass(frozen=True)
class HexMesh:
    extent: tuple[float, float, float]
    n_elems: tuple[int, int, int]
    node_coords: np.ndarray = field(repr=False)
    elem_conn: np.ndarray = field(repr=False)

    @property
    def n_nodes(self) -> int:
        return self.node_coords.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elem_conn.shape[0]

    @property
    def n_dofs(self) -> int:
        return DOFS_PER_NODE * self.n_nodes

    @property
    def node_shape(self) -> tuple[int, int, int]:
        return tuple(n + 1 for n in self.n_elems)

    @property
    def spacing(self) -> np.ndarray:
        return np.asarray(self.extent) / np.asarray(self.n_elems)

    def node_ijk(self) -> np.ndarray:
        """Lattice indices ``(i, j, k)`` of every node, shape (n_nodes, 3)."""
        nx, ny, nz = self.node_shape
        idx = np.arange(self.n_nodes)
        return np.column_stack([idx % nx, (idx // nx) % ny, idx // (nx * ny)])

    def elem_ijk(self) -> np.ndarray:
        ex, ey, ez = self.n_elems
        idx = np.arange(self.n_elements)
        return np.column_stack([idx % ex, (idx // ex) % ey, idx // (ex * ey)])


def count_dofs(n_elems: Sequence[int]) -> int:
    """Number of DoFs of a structured mesh without building it."""
    return DOFS_PER_NODE * int(np.prod([int(n) + 1 for n in n_elems]))


def build_hex_mesh(extent: Sequence[float], n_elems: Sequence[int]) -> HexMesh:
    """Build a uniform box mesh of ``n_elems`` hexahedra spanning ``[0, extent]``."""
    extent = _triple(extent, "extent")
    if any(int(n) != n for n in n_elems):
        raise ValueError(f"n_elems must be integers, got {tuple(n_elems)}")
    n_elems = _triple(n_elems, "n_elems", int)
    nx, ny, nz = (n + 1 for n in n_elems)

    axes = [np.linspace(0.0, extent[d], n_elems[d] + 1) for d in range(3)]
    zz, yy, xx = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
    coords = np.column_stack([xx.ravel(), yy.ravel(), zz.ravel()])

    ex, ey, ez = n_elems
    k, j, i = np.meshgrid(np.arange(ez), np.arange(ey), np.arange(ex), indexing="ij")
    base = (i + nx * (j + ny * k)).ravel()
    offsets = [int(ox + nx * (oy + ny * oz)) for ox, oy, oz in ((CORNERS + 1) // 2).astype(int)]
    conn = base[:, None] + np.asarray(offsets)[None, :]
    return HexMesh(extent, n_elems, coords, conn.astype(np.int64))


@dataclass(frozen=True)
class InterfaceComponent:
    kind: str
    nodes: np.ndarray
    sharing_set: tuple[int, ...]

    def __repr__(self):
        return (f"InterfaceComponent(kind={self.kind!r}, n_nodes={len(self.nodes)}, "
                f"sharing_set={self.sharing_set})")


@dataclass
class DomainDecomposition:
    mesh: HexMesh
    grid: tuple[int, int, int]
    owner: np.ndarray
    overlap_k: int | None = None
    overlapping_nodes: list[np.ndarray] | None = None
    interface_nodes: np.ndarray | None = None
    components: list[InterfaceComponent] | None = None

    @property
    def n_subdomains(self) -> int:
        return int(np.prod(self.grid))

    @property
    def local_elems(self) -> tuple[int, int, int]:
        return tuple(n // g for n, g in zip(self.mesh.n_elems, self.grid))

    @property
    def n_components(self) -> int:
        return 0 if self.components is None else len(self.components)

    def subdomain_ijk(self, s: int) -> tuple[int, int, int]:
        gx, gy, _ = self.grid
        return s % gx, (s // gx) % gy, s // (gx * gy)

    def subdomain_nodes(self, s: int) -> np.ndarray:
        """Nodes of the closed nonoverlapping subdomain ``s``."""
        return extend_overlap(self, 0, subdomains=[s])[0]

    def dump(self) -> str:
        """Plain-text debug dump: node count, owner list and component table."""
        lines = [
            f"n_nodes {self.mesh.n_nodes}",
            f"n_elems {' '.join(map(str, self.mesh.n_elems))}",
            f"grid {' '.join(map(str, self.grid))}",
            "owner " + " ".join(map(str, self.owner.tolist())),
        ]
        comps = self.components or []
        lines.append(f"components {len(comps)}")
        for j, c in enumerate(comps):
            lines.append(
                f"{j} {c.kind} {len(c.nodes)} "
                f"{','.join(map(str, c.sharing_set))} {int(c.nodes.min())}"
            )
        return "\n".join(lines) + "\n"


def partition(mesh: HexMesh, grid: Sequence[int]) -> DomainDecomposition:
    """Assign each element to a box of a regular ``grid`` of subdomains."""
    grid = _triple(grid, "grid", int)
    for d in range(3):
        if mesh.n_elems[d] % grid[d]:
            raise ValueError(
                f"grid {grid} does not divide n_elems {mesh.n_elems} along axis {d}"
            )
    local = np.asarray(mesh.n_elems) // np.asarray(grid)
    sub = mesh.elem_ijk() // local
    owner = sub[:, 0] + grid[0] * (sub[:, 1] + grid[1] * sub[:, 2])
    return DomainDecomposition(mesh, grid, owner.astype(np.int64))


def extend_overlap(dd: DomainDecomposition, k: int, subdomains: Iterable[int] | None = None):
    """Node sets of the overlapping subdomains with ``k`` element layers of overlap.

    Two elements are adjacent when they share a node.  On a structured grid the
    elements within graph distance ``k`` of a box are again a box, grown by
    ``k`` in every axis and clipped to the mesh.
    """
    if k < 0:
        raise ValueError(f"overlap must be >= 0, got {k}")
    mesh = dd.mesh
    local = dd.local_elems
    nx, ny, _ = mesh.node_shape
    if subdomains is None:
        subdomains = range(dd.n_subdomains)
    out = []
    for s in subdomains:
        ranges = []
        for d, sd in enumerate(dd.subdomain_ijk(s)):
            lo = max(sd * local[d] - k, 0)
            hi = min((sd + 1) * local[d] + k, mesh.n_elems[d])
            ranges.append(np.arange(lo, hi + 1))
        k3, j3, i3 = np.meshgrid(ranges[2], ranges[1], ranges[0], indexing="ij")
        out.append((i3 + nx * (j3 + ny * k3)).ravel())
    return out


def set_overlap(dd: DomainDecomposition, k: int) -> DomainDecomposition:
    dd.overlap_k = int(k)
    dd.overlapping_nodes = extend_overlap(dd, k)
    return dd


def _axis_sharing(idx: np.ndarray, local: int, g: int):
    """Lowest and highest subdomain index along one axis containing lattice index ``idx``."""
    hi = np.minimum(idx // local, g - 1)
    lo = np.where((idx % local == 0) & (idx > 0), idx // local - 1, hi)
    return lo, hi


def node_sharing(dd: DomainDecomposition):
    """Per-node bounds ``(lo, hi)`` of the subdomain index ranges per axis, shape (n_nodes, 3)."""
    ijk = dd.mesh.node_ijk()
    local = dd.local_elems
    lo = np.empty_like(ijk)
    hi = np.empty_like(ijk)
    for d in range(3):
        lo[:, d], hi[:, d] = _axis_sharing(ijk[:, d], local[d], dd.grid[d])
    return lo, hi


def _sharing_set(dd, lo_n, hi_n) -> tuple[int, ...]:
    gx, gy, _ = dd.grid
    subs = [
        sx + gx * (sy + gy * sz)
        for sz in range(lo_n[2], hi_n[2] + 1)
        for sy in range(lo_n[1], hi_n[1] + 1)
        for sx in range(lo_n[0], hi_n[0] + 1)
    ]
    return tuple(sorted(subs))


def classify_interface(dd: DomainDecomposition, dirichlet_nodes=None) -> DomainDecomposition:
    """Find the interface nodes and split them into vertices, edges and faces.

    Nodes listed in ``dirichlet_nodes`` are dropped from the interface before
    grouping.  Nodes with the same sharing set are grouped and each group is
    split into connected parts along mesh edges.  Components are ordered by
    their smallest node index.
    """
    mesh = dd.mesh
    lo, hi = node_sharing(dd)
    count = np.prod(hi - lo + 1, axis=1)
    on_gamma = count >= 2
    if dirichlet_nodes is not None:
        excluded = np.asarray(list(dirichlet_nodes) if not isinstance(dirichlet_nodes, np.ndarray)
                              else dirichlet_nodes, dtype=np.int64)
        on_gamma[excluded] = False
    gamma = np.flatnonzero(on_gamma)
    dd.interface_nodes = gamma
    if gamma.size == 0:
        dd.components = []
        return dd

    key = np.concatenate([lo, hi], axis=1)
    nx, ny, nz = mesh.node_shape
    ijk = mesh.node_ijk()
    rows, cols = [], []
    for d, stride in enumerate((1, nx, nx * ny)):
        a = gamma[ijk[gamma, d] < mesh.node_shape[d] - 1]
        b = a + stride
        keep = on_gamma[b] & np.all(key[a] == key[b], axis=1)
        rows.append(a[keep])
        cols.append(b[keep])
    local_of = np.full(mesh.n_nodes, -1, dtype=np.int64)
    local_of[gamma] = np.arange(gamma.size)
    r = local_of[np.concatenate(rows)]
    c = local_of[np.concatenate(cols)]
    graph = sp.coo_matrix((np.ones(r.size), (r, c)), shape=(gamma.size, gamma.size))
    n_comp, labels = connected_components(graph, directed=False)

    order = np.argsort(labels, kind="stable")
    splits = np.flatnonzero(np.diff(labels[order])) + 1
    groups = [gamma[g] for g in np.split(order, splits)]
    groups.sort(key=lambda g: int(g.min()))

    comps = []
    for nodes in groups:
        nodes = np.sort(nodes)
        sharing = _sharing_set(dd, lo[nodes[0]], hi[nodes[0]])
        dim = int(np.sum(np.ptp(ijk[nodes], axis=0) > 0))
        if len(sharing) == 2 or dim >= 2:
            kind = "face"
        elif dim == 1:
            kind = "edge"
        else:
            kind = "vertex"
        comps.append(InterfaceComponent(kind, nodes, sharing))
    dd.components = comps
    logger.debug("classified %d interface nodes into %d components", gamma.size, len(comps))
    return dd


def count_components(grid: Sequence[int]) -> int:
    """Closed-form component count of a box partition with no Dirichlet exclusions.

    Assumes at least two elements per subdomain side, so every face and edge
    owns nodes of its own.
    """
    gx, gy, gz = grid
    faces = (gx - 1) * gy * gz + gx * (gy - 1) * gz + gx * gy * (gz - 1)
    edges = gx * (gy - 1) * (gz - 1) + (gx - 1) * gy * (gz - 1) + (gx - 1) * (gy - 1) * gz
    vertices = (gx - 1) * (gy - 1) * (gz - 1)
    return faces + edges + vertices


def dof(node, fld):
    """Global DoF index of field ``fld`` (0..3) at ``node``."""
    return DOFS_PER_NODE * np.asarray(node) + np.asarray(fld)


def node_dofs(nodes: np.ndarray) -> np.ndarray:
    """All four DoFs of each node, node-blocked and in node order."""
    nodes = np.asarray(nodes, dtype=np.int64)
    return (DOFS_PER_NODE * nodes[:, None] + np.arange(DOFS_PER_NODE)[None, :]).ravel()


def build_restrictions(dd: DomainDecomposition) -> list[np.ndarray]:
    """Monolithic restriction index lists, one per overlapping subdomain."""
    if dd.overlapping_nodes is None:
        raise ValueError("overlap not built; call set_overlap first")
    return [node_dofs(np.sort(nodes)) for nodes in dd.overlapping_nodes]


@dataclass(frozen=True)
class DofMap:
    """Interior / interface / constrained split of the global DoFs."""

    n_dofs: int
    interior: np.ndarray
    interface: np.ndarray
    constrained: np.ndarray
    constrained_values: np.ndarray

    @classmethod
    def build(cls, dd: DomainDecomposition, constrained: np.ndarray,
              values: np.ndarray | None = None) -> "DofMap":
        n = dd.mesh.n_dofs
        constrained = np.unique(np.asarray(constrained, dtype=np.int64))
        if values is None:
            values = np.zeros(constrained.size)
        is_con = np.zeros(n, dtype=bool)
        is_con[constrained] = True
        is_gamma = np.zeros(n, dtype=bool)
        if dd.interface_nodes is not None and dd.interface_nodes.size:
            is_gamma[node_dofs(dd.interface_nodes)] = True
        is_gamma &= ~is_con
        interior = np.flatnonzero(~is_gamma & ~is_con)
        return cls(n, interior, np.flatnonzero(is_gamma), constrained, np.asarray(values, float))
