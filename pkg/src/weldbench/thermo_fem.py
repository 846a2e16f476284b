"""Q1-Q1 thermoelastic element kernels, assembly and Newton / Backward Euler drivers.

Units are N, mm, s, K.  The residual and tangent follow the sign convention
``K d = R`` with ``R = -F(d)`` and ``K = dF/dd``, so a Newton update adds the
linear solution to the current iterate.  The thermal equation carries a
negative sign throughout, which makes the monolithic matrix an indefinite
saddle point system.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .meshdd import CORNERS, DOFS_PER_NODE, HexMesh, node_dofs

logger = logging.getLogger(__name__)

GAUSS_1D = np.array([-1.0, 1.0]) / math.sqrt(3.0)
GAUSS_POINTS = np.array([[x, y, z] for z in GAUSS_1D for y in GAUSS_1D for x in GAUSS_1D])
GAUSS_WEIGHTS = np.ones(8)

# element DoF positions in node-blocked order (u_x, u_y, u_z, theta) per node
U_DOFS = np.array([4 * a + c for a in range(8) for c in range(3)])
T_DOFS = np.arange(8) * 4 + 3


class DegenerateElement(ValueError):
    pass


@dataclass(frozen=True)
class MaterialParams:
    """Constant material data.

    ``rho`` is given in kg/m^3, ``c_rho`` in J/(kg K) and ``lambda_cond`` in
    W/(m K); the derived volumetric capacity is converted to N/(mm^2 K).  The
    conductivity needs no conversion: W/(m K) equals N/(s K).
    """

    E: float = 198000.0
    nu: float = 0.276
    alpha_T: float = 1.6e-5
    rho: float = 7919.0
    c_rho: float = 468.0
    lambda_cond: float = 14.4
    theta_ref: float = 20.0

    def __post_init__(self):
        if not (-1.0 < self.nu < 0.5):
            raise ValueError(f"Poisson ratio must lie in (-1, 0.5), got {self.nu}")
        if self.E <= 0:
            raise ValueError("Young's modulus must be positive")

    @property
    def mu(self) -> float:
        return self.E / (2.0 * (1.0 + self.nu))

    @property
    def lambda_lame(self) -> float:
        return self.E * self.nu / ((1.0 + self.nu) * (1.0 - 2.0 * self.nu))

    @property
    def kappa(self) -> float:
        return self.lambda_lame + 2.0 * self.mu / 3.0

    @property
    def gamma(self) -> float:
        return 3.0 * self.alpha_T * self.kappa

    @property
    def c_vol(self) -> float:
        return self.rho * self.c_rho * 1e-6

    def elasticity_voigt(self) -> np.ndarray:
        """Isotropic stiffness in Voigt notation (xx, yy, zz, xy, yz, xz), engineering shear."""
        lam, mu = self.lambda_lame, self.mu
        D = np.zeros((6, 6))
        D[:3, :3] = lam
        D[np.arange(3), np.arange(3)] += 2.0 * mu
        D[np.arange(3, 6), np.arange(3, 6)] = mu
        return D


def shape_q1(xi):
    """Trilinear shape functions and reference gradients at ``xi``.

    Returns ``N`` of shape (..., 8) and ``dN`` of shape (..., 8, 3).
    """
    xi = np.asarray(xi, dtype=float)
    t = 1.0 + xi[..., None, :] * CORNERS  # (..., 8, 3)
    N = 0.125 * np.prod(t, axis=-1)
    dN = np.empty(t.shape)
    dN[..., 0] = 0.125 * CORNERS[:, 0] * t[..., 1] * t[..., 2]
    dN[..., 1] = 0.125 * CORNERS[:, 1] * t[..., 0] * t[..., 2]
    dN[..., 2] = 0.125 * CORNERS[:, 2] * t[..., 0] * t[..., 1]
    return N, dN


_N_GP, _DN_GP = shape_q1(GAUSS_POINTS)  # (8 gp, 8), (8 gp, 8, 3)


def _geometry(coords):
    """Physical gradients (ne, gp, 8, 3) and weighted Jacobians (ne, gp)."""
    J = np.einsum("eai,gaj->egij", coords, _DN_GP, optimize=True)
    det = np.linalg.det(J)
    if np.any(det <= 0.0):
        bad = np.flatnonzero(np.any(det <= 0.0, axis=1))
        raise DegenerateElement(f"non-positive Jacobian determinant in element(s) {bad[:10].tolist()}")
    Jinv = np.linalg.inv(J)
    G = np.einsum("gaj,egji->egai", _DN_GP, Jinv, optimize=True)
    return G, det * GAUSS_WEIGHTS


def _strain_operator(G):
    """Voigt strain-displacement matrices, shape (ne, gp, 6, 24)."""
    ne, ng = G.shape[:2]
    B = np.zeros((ne, ng, 6, 24))
    gx, gy, gz = G[..., 0], G[..., 1], G[..., 2]
    B[..., 0, 0::3] = gx
    B[..., 1, 1::3] = gy
    B[..., 2, 2::3] = gz
    B[..., 3, 0::3] = gy
    B[..., 3, 1::3] = gx
    B[..., 4, 1::3] = gz
    B[..., 4, 2::3] = gy
    B[..., 5, 0::3] = gz
    B[..., 5, 2::3] = gx
    return B


@dataclass
class ElementKernelOutput:
    ke: np.ndarray | None
    re: np.ndarray | None


def element_kernel(coords, u_e, theta_e, u_e_old, theta_e_old, mat: MaterialParams, dt: float,
                   tangent: bool = True, residual: bool = True) -> ElementKernelOutput:
    """Element tangents and residuals for a batch of elements.

    Shapes: ``coords``, ``u_e`` and ``u_e_old`` are (ne, 8, 3); temperatures
    are (ne, 8).  ``ke`` is (ne, 32, 32) and ``re`` is (ne, 32), node-blocked.
    The strain rate and temperature rate are Backward Euler difference
    quotients; the temperature entering the coupling terms is the current
    iterate at each Gauss point.
    """
    if dt <= 0:
        raise ValueError(f"time step must be positive, got {dt}")
    coords = np.asarray(coords, dtype=float)
    if coords.ndim == 2:
        out = element_kernel(coords[None], np.asarray(u_e)[None], np.asarray(theta_e)[None],
                             np.asarray(u_e_old)[None], np.asarray(theta_e_old)[None],
                             mat, dt, tangent, residual)
        return ElementKernelOutput(None if out.ke is None else out.ke[0],
                                   None if out.re is None else out.re[0])
    ne = coords.shape[0]
    G, wdet = _geometry(coords)
    B = _strain_operator(G)
    div = G.reshape(ne, G.shape[1], 24)  # divergence row: d N_a / d x_c at u-dof (a, c)
    D = mat.elasticity_voigt()
    gam, k_c, c_v = mat.gamma, mat.lambda_cond, mat.c_vol

    u_flat = np.asarray(u_e, dtype=float).reshape(ne, 24)
    du = u_flat - np.asarray(u_e_old, dtype=float).reshape(ne, 24)
    theta_e = np.asarray(theta_e, dtype=float)
    theta_gp = theta_e @ _N_GP.T  # (ne, gp)
    tr_rate = np.einsum("egi,ei->eg", div, du) / dt

    ke = re = None
    if tangent:
        ke = np.zeros((ne, 32, 32))
        ng = B.shape[1]
        DB = (D @ B).reshape(ne, ng * 6, 24)
        Bw = (B * wdet[:, :, None, None]).reshape(ne, ng * 6, 24)
        kuu = np.matmul(Bw.transpose(0, 2, 1), DB)
        kut = -gam * np.einsum("eg,egi,ga->eia", wdet, div, _N_GP, optimize=True)
        ktu = -(gam / dt) * np.einsum("eg,ga,egi->eai", wdet * theta_gp, _N_GP, div,
                                      optimize=True)
        kdiff = k_c * np.einsum("eg,egai,egbi->eab", wdet, G, G, optimize=True)
        kmass = np.einsum("eg,ga,gb->eab", wdet * (gam * tr_rate + c_v / dt), _N_GP, _N_GP,
                          optimize=True)
        ke[:, U_DOFS[:, None], U_DOFS[None, :]] = kuu
        ke[:, U_DOFS[:, None], T_DOFS[None, :]] = kut
        ke[:, T_DOFS[:, None], U_DOFS[None, :]] = ktu
        ke[:, T_DOFS[:, None], T_DOFS[None, :]] = -kdiff - kmass
    if residual:
        re = np.zeros((ne, 32))
        strain = np.einsum("egij,ej->egi", B, u_flat, optimize=True)
        stress = strain @ D.T
        stress[..., :3] -= (gam * (theta_gp - mat.theta_ref))[..., None]
        f_u = np.einsum("eg,egij,egi->ej", wdet, B, stress, optimize=True)
        grad_t = np.einsum("egai,ea->egi", G, theta_e, optimize=True)
        theta_old_gp = np.asarray(theta_e_old, dtype=float) @ _N_GP.T
        source = gam * tr_rate * theta_gp + c_v * (theta_gp - theta_old_gp) / dt
        f_t = -(np.einsum("eg,egai,egi->ea", wdet, G, grad_t, optimize=True) * k_c
                + np.einsum("eg,eg,ga->ea", wdet, source, _N_GP, optimize=True))
        re[:, U_DOFS] = -f_u
        re[:, T_DOFS] = -f_t
    return ElementKernelOutput(ke, re)


def element_tangent(coords, u_e, theta_e, theta_e_old, u_e_old, mat, dt):
    return element_kernel(coords, u_e, theta_e, u_e_old, theta_e_old, mat, dt, residual=False).ke


def element_residual(coords, u_e, theta_e, u_e_old, theta_e_old, mat, dt):
    return element_kernel(coords, u_e, theta_e, u_e_old, theta_e_old, mat, dt, tangent=False).re


@dataclass
class SimulationState:
    """Nodal fields at the previous time level and the current Newton iterate."""

    u_n: np.ndarray
    theta_n: np.ndarray
    u: np.ndarray
    theta: np.ndarray
    dt: float
    time: float = 0.0

    @classmethod
    def initial(cls, mesh: HexMesh, dt: float, theta0: float = 20.0) -> "SimulationState":
        n = mesh.n_nodes
        return cls(np.zeros((n, 3)), np.full(n, theta0), np.zeros((n, 3)), np.full(n, theta0), dt)

    def copy(self) -> "SimulationState":
        return replace(self, u_n=self.u_n.copy(), theta_n=self.theta_n.copy(),
                       u=self.u.copy(), theta=self.theta.copy())

    def dof_vector(self) -> np.ndarray:
        return np.column_stack([self.u, self.theta]).ravel()

    def set_dofs(self, d: np.ndarray) -> None:
        d = d.reshape(-1, DOFS_PER_NODE)
        self.u = d[:, :3].copy()
        self.theta = d[:, 3].copy()

    def add_update(self, dd: np.ndarray) -> None:
        dd = dd.reshape(-1, DOFS_PER_NODE)
        self.u += dd[:, :3]
        self.theta += dd[:, 3]

    def advance(self, dt: float | None = None) -> None:
        """Accept the current iterate as the new previous time level."""
        self.u_n = self.u.copy()
        self.theta_n = self.theta.copy()
        if dt is not None:
            self.dt = dt
        self.time += self.dt


@dataclass
class Constraints:
    """Dirichlet DoFs and their prescribed values."""

    dofs: np.ndarray
    values: np.ndarray

    @classmethod
    def empty(cls) -> "Constraints":
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0))

    def impose(self, state: SimulationState) -> None:
        d = state.dof_vector()
        d[self.dofs] = self.values
        state.set_dofs(d)


@dataclass
class BlockSystem:
    """Monolithic tangent ``K`` and residual ``R`` over node-blocked DoFs."""

    K: sp.csr_matrix
    R: np.ndarray
    constrained: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def n_dofs(self) -> int:
        return self.R.size

    @property
    def theta_mask(self) -> np.ndarray:
        return np.arange(self.n_dofs) % DOFS_PER_NODE == 3

    def field_dofs(self, fld: str) -> np.ndarray:
        mask = self.theta_mask if fld == "theta" else ~self.theta_mask
        return np.flatnonzero(mask)

    def block(self, name: str) -> sp.csr_matrix:
        """One of the four field blocks ``uu``, ``ut``, ``tu``, ``tt``."""
        rows = self.field_dofs("theta" if name[0] == "t" else "u")
        cols = self.field_dofs("theta" if name[1] == "t" else "u")
        return self.K[rows][:, cols].tocsr()

    def residual_parts(self):
        return self.R[~self.theta_mask], self.R[self.theta_mask]


class Assembler:
    """Assembler bound to one mesh; the sparsity pattern and scatter map are built once."""

    def __init__(self, mesh: HexMesh, chunk: int = 2048):
        self.mesh = mesh
        self.chunk = chunk
        n = mesh.n_dofs
        edofs = (DOFS_PER_NODE * mesh.elem_conn[:, :, None] + np.arange(4)).reshape(-1, 32)
        self.edofs = edofs
        rows = np.repeat(edofs, 32, axis=1).ravel()
        cols = np.tile(edofs, (1, 32)).ravel()
        keys = rows * n + cols
        uniq, inv = np.unique(keys, return_inverse=True)
        del keys, rows, cols
        self.scatter = inv.astype(np.int64 if uniq.size >= 2**31 else np.int32).reshape(-1, 1024)
        self.indices = (uniq % n).astype(np.int32)
        row_of = uniq // n
        self.indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(row_of, minlength=n), out=self.indptr[1:])
        self.row_of = row_of.astype(np.int32)
        diag = np.flatnonzero(row_of == self.indices)
        self.diag_pos = np.empty(n, dtype=np.int64)
        self.diag_pos[row_of[diag]] = diag
        self.nnz = uniq.size

    def _fields(self, state):
        conn = self.mesh.elem_conn
        return (state.u[conn], state.theta[conn], state.u_n[conn], state.theta_n[conn])

    def assemble(self, state: SimulationState, mat: MaterialParams,
                 constraints: Constraints | None = None, tangent: bool = True) -> BlockSystem:
        mesh = self.mesh
        n = mesh.n_dofs
        data = np.zeros(self.nnz) if tangent else None
        R = np.zeros(n)
        coords_all = mesh.node_coords[mesh.elem_conn]
        u_e, t_e, u_old, t_old = self._fields(state)
        for start in range(0, mesh.n_elements, self.chunk):
            sl = slice(start, start + self.chunk)
            try:
                out = element_kernel(coords_all[sl], u_e[sl], t_e[sl], u_old[sl], t_old[sl],
                                     mat, state.dt, tangent=tangent)
            except DegenerateElement as exc:
                raise DegenerateElement(f"elements from {start}: {exc}") from exc
            if tangent:
                data += np.bincount(self.scatter[sl].ravel(), weights=out.ke.ravel(),
                                    minlength=self.nnz)
            R += np.bincount(self.edofs[sl].ravel(), weights=out.re.ravel(), minlength=n)
        cons = constraints.dofs if constraints is not None else np.zeros(0, dtype=np.int64)
        if tangent:
            if cons.size:
                is_con = np.zeros(n, dtype=bool)
                is_con[cons] = True
                data[is_con[self.row_of] | is_con[self.indices]] = 0.0
                data[self.diag_pos[cons]] = 1.0
            K = sp.csr_matrix((data, self.indices, self.indptr), shape=(n, n))
        else:
            K = None
        # prescribed values are imposed on the iterate, so the eliminated
        # columns carry zero increments and contribute nothing to R
        R[cons] = 0.0
        return BlockSystem(K, R, np.asarray(cons, dtype=np.int64))


def assemble(mesh: HexMesh, state: SimulationState, mat: MaterialParams,
             constraints: Constraints | None = None) -> BlockSystem:
    return Assembler(mesh).assemble(state, mat, constraints)


class LinearSolveFailure(RuntimeError):
    def __init__(self, msg, newton_iter, stats):
        super().__init__(msg)
        self.newton_iter = newton_iter
        self.stats = stats


@dataclass
class NewtonResult:
    state: SimulationState
    linear_stats: list
    newton_iters: int
    converged: bool
    residuals: list[float]


def newton_solve(state: SimulationState,
                 assemble_fn: Callable[[SimulationState], BlockSystem],
                 solve_fn: Callable[[BlockSystem], tuple],
                 abs_tol: float = 1e-8, max_newton: int = 10) -> NewtonResult:
    """Plain Newton iteration with unit step on ``K dd = R``.

    ``solve_fn(system)`` returns ``(dd, stats)``; a preconditioner is expected
    to be rebuilt inside it on every call.  A linear solve that does not
    converge raises :class:`LinearSolveFailure`.
    """
    stats, residuals = [], []
    it = 0
    while True:
        system = assemble_fn(state)
        rnorm = float(np.linalg.norm(system.R))
        residuals.append(rnorm)
        logger.info("newton %d: |R| = %.3e", it, rnorm)
        if not np.isfinite(rnorm):
            raise FloatingPointError(f"non-finite residual at Newton iteration {it}")
        if rnorm <= abs_tol:
            return NewtonResult(state, stats, it, True, residuals)
        if it >= max_newton:
            return NewtonResult(state, stats, it, False, residuals)
        dd, st = solve_fn(system)
        stats.append(st)
        if st is not None and not getattr(st, "converged", True):
            raise LinearSolveFailure(
                f"linear solver did not converge in Newton iteration {it + 1}", it + 1, stats)
        state.add_update(dd)
        it += 1


def rounded_mean(total: float, count: int) -> int:
    """Round half up; ``count == 0`` gives 0."""
    return int(math.floor(total / count + 0.5)) if count else 0


@dataclass
class StepStats:
    step: int
    time: float
    gmres_iters: list[int]
    newton_iters: int
    converged: bool
    residuals: list[float]
    n_pool_nodes: int = 0
    failure: str | None = None

    @property
    def it_tot(self) -> int:
        return int(sum(self.gmres_iters))

    @property
    def it_avg(self) -> int:
        return rounded_mean(self.it_tot, len(self.gmres_iters))


@dataclass
class TimeSeries:
    states: list[SimulationState]
    steps: list[StepStats]
    failed: bool = False

    @property
    def converged(self) -> bool:
        return not self.failed and all(s.converged for s in self.steps)


def time_loop(state: SimulationState, n_steps: int, dt: float,
              constraints_at: Callable[[int, float], Constraints],
              assemble_fn: Callable[[SimulationState, Constraints], BlockSystem],
              solve_fn: Callable[[BlockSystem], tuple],
              abs_tol: float = 1e-8, max_newton: int = 10,
              keep_states: bool = False, on_step=None) -> TimeSeries:
    """Backward Euler time stepping with one Newton solve per step.

    ``constraints_at(step, t)`` rebuilds the Dirichlet data for the new time
    level.  A step whose linear solve fails ends the series; results of the
    completed steps are kept.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    series = TimeSeries([], [])
    for step in range(1, n_steps + 1):
        state.advance(dt)
        cons = constraints_at(step, state.time)
        cons.impose(state)
        try:
            res = newton_solve(state, lambda s: assemble_fn(s, cons), solve_fn, abs_tol, max_newton)
        except LinearSolveFailure as exc:
            iters = [st.iterations for st in exc.stats]
            series.steps.append(StepStats(step, state.time, iters, exc.newton_iter, False, [],
                                          failure=str(exc)))
            series.failed = True
            break
        iters = [st.iterations for st in res.linear_stats if st is not None]
        series.steps.append(StepStats(step, state.time, iters, res.newton_iters,
                                      res.converged, res.residuals))
        if keep_states:
            series.states.append(state.copy())
        if on_step is not None:
            on_step(step, state, series.steps[-1])
    return series
