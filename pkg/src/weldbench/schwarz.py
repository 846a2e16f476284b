"""One-level additive Schwarz and two-level GDSW / economic GDSW preconditioners.

All variants share the first level: exact solves with the overlapping
subdomain matrices ``K_i = R_i K R_i^T``, summed without weighting.  The
coarse level uses four interface functions per interface component (three
translations and the constant temperature), extended into the subdomain
interiors by solving with the interior block of either the full monolithic
matrix (``gdsw``) or its block-diagonal part without the displacement /
temperature coupling (``egdsw``).
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .linalg import GmresConfig, LuFactors, SingularMatrixError, gmres, lu_factor, submatrix
from .meshdd import DOFS_PER_NODE, FIELD_NAMES, DofMap, DomainDecomposition, node_sharing

logger = logging.getLogger(__name__)


class PrecKind(str, enum.Enum):
    NONE = "none"
    ONE_LEVEL = "one_level"
    GDSW = "gdsw"
    EGDSW = "egdsw"

    @property
    def two_level(self) -> bool:
        return self in (PrecKind.GDSW, PrecKind.EGDSW)


def theta_mask(n: int) -> np.ndarray:
    return np.arange(n) % DOFS_PER_NODE == 3


def decoupled(K: sp.csr_matrix) -> sp.csr_matrix:
    """Drop the displacement/temperature coupling blocks of ``K``."""
    K = K.tocoo()
    is_t = theta_mask(K.shape[0])
    keep = is_t[K.row] == is_t[K.col]
    return sp.csr_matrix((K.data[keep], (K.row[keep], K.col[keep])), shape=K.shape)


@dataclass
class OneLevelAS:
    restrictions: list[np.ndarray]
    factors: list[LuFactors] = field(repr=False)
    n: int = 0

    def apply(self, r: np.ndarray) -> np.ndarray:
        z = np.zeros(self.n)
        for idx, F in zip(self.restrictions, self.factors):
            z[idx] += F.solve(r[idx])
        return z

    __call__ = apply


def build_one_level(K: sp.csr_matrix, restrictions: list[np.ndarray]) -> OneLevelAS:
    K = sp.csr_matrix(K)
    factors = []
    for i, idx in enumerate(restrictions):
        try:
            factors.append(lu_factor(submatrix(K, idx)))
        except SingularMatrixError as exc:
            raise SingularMatrixError(f"subdomain {i}: local matrix is singular ({exc})") from exc
    return OneLevelAS(list(restrictions), factors, K.shape[0])


def apply_one_level(P: OneLevelAS, r: np.ndarray) -> np.ndarray:
    return P.apply(r)


@dataclass
class InterfaceValues:
    """Interface coarse values ``Phi_Gamma`` (rows over all DoFs) and column metadata."""

    Phi_gamma: sp.csc_matrix
    columns: list[tuple[int, int]]  # (component index, field 0..3)
    dropped: list[tuple[int, int]]


def build_interface_values(dd: DomainDecomposition, dofmap: DofMap) -> InterfaceValues:
    """Four columns per component; constrained DoFs get 0 and all-zero columns are dropped."""
    if dd.components is None:
        raise ValueError("interface not classified")
    n = dofmap.n_dofs
    is_con = np.zeros(n, dtype=bool)
    is_con[dofmap.constrained] = True
    rows, cols, meta, dropped = [], [], [], []
    for j, comp in enumerate(dd.components):
        for f in range(DOFS_PER_NODE):
            d = DOFS_PER_NODE * comp.nodes + f
            d = d[~is_con[d]]
            if d.size == 0:
                dropped.append((j, f))
                continue
            rows.append(d)
            cols.append(np.full(d.size, len(meta)))
            meta.append((j, f))
    if dropped:
        logger.info("dropped %d fully constrained coarse columns", len(dropped))
    if meta:
        r = np.concatenate(rows)
        c = np.concatenate(cols)
    else:
        r = c = np.zeros(0, dtype=np.int64)
    Phi = sp.csc_matrix((np.ones(r.size), (r, c)), shape=(n, len(meta)))
    return InterfaceValues(Phi, meta, dropped)


def interior_subdomains(dd: DomainDecomposition, dofmap: DofMap) -> list[np.ndarray]:
    """Interior DoFs grouped by the unique subdomain that contains their node."""
    lo, hi = node_sharing(dd)
    gx, gy, _ = dd.grid
    sub = lo[:, 0] + gx * (lo[:, 1] + gy * lo[:, 2])
    owner = sub[dofmap.interior // DOFS_PER_NODE]
    order = np.argsort(owner, kind="stable")
    splits = np.searchsorted(owner[order], np.arange(1, dd.n_subdomains))
    return [dofmap.interior[g] for g in np.split(order, splits)]


@dataclass
class CoarseSpace:
    mode: str
    Phi: sp.csc_matrix = field(repr=False)
    columns: list[tuple[int, int]]
    dropped: list[tuple[int, int]]
    K0: np.ndarray | sp.spmatrix = field(repr=False)
    K0_factors: LuFactors = field(repr=False)
    extension_residual: float = 0.0

    @property
    def dim(self) -> int:
        return self.Phi.shape[1]

    def coarse_correction(self, r: np.ndarray) -> np.ndarray:
        if self.dim == 0:
            return np.zeros_like(r)
        return self.Phi @ self.K0_factors.solve(self.Phi.T @ r)

    def metadata(self) -> list[str]:
        return [f"{k} component={j} kind={FIELD_NAMES[f]}" for k, (j, f) in enumerate(self.columns)]


def extend_basis(K_ext: sp.csr_matrix, iv: InterfaceValues, dd: DomainDecomposition,
                 dofmap: DofMap, remove_coupling: bool = True):
    """Extend the interface values into the interiors with ``K_II phi_I = -K_IG phi_G``.

    The interior block is block diagonal over subdomains, so each subdomain is
    factorized once and reused for all coarse columns touching it.  Returns the
    extended basis and the relative Frobenius residual of the extension
    equation measured before the coupling blocks are removed.
    """
    n = dofmap.n_dofs
    ncol = iv.Phi_gamma.shape[1]
    K_ext = sp.csr_matrix(K_ext)
    gamma = dofmap.interface
    K_IG_full = K_ext[:, gamma].tocsr()
    Phi_G = iv.Phi_gamma[gamma].tocsc()
    rows, cols, vals = [iv.Phi_gamma.tocoo().row], [iv.Phi_gamma.tocoo().col], [iv.Phi_gamma.tocoo().data]
    res_sq = 0.0
    rhs_sq = 0.0
    for s, idx in enumerate(interior_subdomains(dd, dofmap)):
        if idx.size == 0:
            continue
        B = (K_IG_full[idx] @ Phi_G).tocsc()
        nz_cols = np.flatnonzero(np.diff(B.indptr))
        if nz_cols.size == 0:
            continue
        rhs = -B[:, nz_cols].toarray()
        K_II = submatrix(K_ext, idx)
        try:
            F = lu_factor(K_II)
        except SingularMatrixError as exc:
            raise SingularMatrixError(f"interior block of subdomain {s} is singular ({exc})") from exc
        X = F.solve(rhs)
        res_sq += float(np.sum((K_II @ X - rhs) ** 2))
        rhs_sq += float(np.sum(rhs ** 2))
        r_local, c_local = np.nonzero(X)
        rows.append(idx[r_local])
        cols.append(nz_cols[c_local])
        vals.append(X[r_local, c_local])
    Phi = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(n, ncol)).tocsc()
    if remove_coupling and ncol:
        col_is_t = np.array([f == 3 for _, f in iv.columns])
        Phi = Phi.tocoo()
        keep = theta_mask(n)[Phi.row] == col_is_t[Phi.col]
        Phi = sp.csc_matrix((Phi.data[keep], (Phi.row[keep], Phi.col[keep])), shape=(n, ncol))
    rel = np.sqrt(res_sq / rhs_sq) if rhs_sq > 0 else 0.0
    return Phi, rel


def build_coarse_operator(Phi: sp.spmatrix, K: sp.spmatrix):
    K0 = (Phi.T @ (K @ Phi)).tocsc()
    if K0.shape[0] < 2000:
        K0 = K0.toarray()
    try:
        F = lu_factor(K0)
    except SingularMatrixError as exc:
        raise SingularMatrixError(f"coarse operator singular; {_near_null_report(K0)}") from exc
    return K0, F


def _near_null_report(K0) -> str:
    A = K0.toarray() if sp.issparse(K0) else np.asarray(K0)
    if A.shape[0] > 3000:
        return "coarse operator too large for a null-space report"
    _, s, vt = np.linalg.svd(A)
    tol = s[0] * A.shape[0] * np.finfo(float).eps
    null = vt[s <= tol]
    cols = sorted({int(i) for v in null for i in np.flatnonzero(np.abs(v) > 0.1)})
    return f"{len(null)} near-null vectors supported on coarse columns {cols[:20]}"


def build_coarse_space(K: sp.csr_matrix, dd: DomainDecomposition, dofmap: DofMap,
                       mode: str = "gdsw") -> CoarseSpace:
    if mode not in ("gdsw", "egdsw"):
        raise ValueError(f"unknown coarse mode {mode!r}")
    iv = build_interface_values(dd, dofmap)
    K_ext = K if mode == "gdsw" else decoupled(K)
    Phi, rel = extend_basis(K_ext, iv, dd, dofmap, remove_coupling=True)
    K0, F = build_coarse_operator(Phi, K_ext)
    logger.debug("%s coarse space: %d columns, %d dropped, extension residual %.2e",
                 mode, Phi.shape[1], len(iv.dropped), rel)
    return CoarseSpace(mode, Phi, iv.columns, iv.dropped, K0, F, rel)


@dataclass
class TwoLevelSchwarz:
    first: OneLevelAS
    coarse: CoarseSpace

    def apply(self, r: np.ndarray) -> np.ndarray:
        return self.coarse.coarse_correction(r) + self.first.apply(r)

    __call__ = apply


def apply_two_level(P: TwoLevelSchwarz, r: np.ndarray) -> np.ndarray:
    return P.apply(r)


def build_preconditioner(kind, K: sp.csr_matrix, restrictions, dd: DomainDecomposition | None = None,
                         dofmap: DofMap | None = None):
    """Preconditioner action ``r -> B^{-1} r`` for ``kind``; ``None`` for no preconditioning."""
    kind = PrecKind(kind)
    if kind is PrecKind.NONE:
        return None
    first = build_one_level(K, restrictions)
    if kind is PrecKind.ONE_LEVEL:
        return first
    if dd is None or dofmap is None:
        raise ValueError("two-level preconditioners need the decomposition and DoF map")
    return TwoLevelSchwarz(first, build_coarse_space(K, dd, dofmap, kind.value))


class SchwarzSolver:
    """Linear solver for Newton: rebuild the preconditioner for each ``K`` and run GMRES.

    With ``reuse=True`` the preconditioner of the first call is kept for all
    later systems (experimental; the default rebuilds every time).
    """

    def __init__(self, kind, dd: DomainDecomposition, restrictions,
                 gmres_config: GmresConfig | None = None, reuse: bool = False):
        self.kind = PrecKind(kind)
        self.dd = dd
        self.restrictions = restrictions
        self.config = gmres_config or GmresConfig()
        self.reuse = reuse
        self.last_prec = None
        self.n_builds = 0
        self.coarse_dims: list[int] = []
        self.dropped: list[int] = []

    def __call__(self, system):
        if self.reuse and self.n_builds:
            M = self.last_prec
        else:
            dofmap = DofMap.build(self.dd, system.constrained)
            M = build_preconditioner(self.kind, system.K, self.restrictions, self.dd, dofmap)
            self.last_prec = M
            self.n_builds += 1
            if isinstance(M, TwoLevelSchwarz):
                self.coarse_dims.append(M.coarse.dim)
                self.dropped.append(len(M.coarse.dropped))
                if logger.isEnabledFor(logging.DEBUG):
                    logger.debug("coarse columns:\n%s", "\n".join(M.coarse.metadata()))
        x, stats = gmres(system.K, M, system.R, self.config)
        logger.info("gmres[%s]: %d iterations, residual %.2e", self.kind.value,
                    stats.iterations, stats.residual)
        return x, stats


class DirectSolver:
    def __call__(self, system):
        x = lu_factor(system.K).solve(system.R)
        return x, None
