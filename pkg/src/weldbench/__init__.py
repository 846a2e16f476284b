"""Thermoelastic laser beam welding with overlapping Schwarz preconditioned GMRES."""

from .linalg import GmresConfig, GmresStats, gmres, lu_factor, lu_solve
from .meshdd import build_hex_mesh, classify_interface, partition, set_overlap
from .schwarz import PrecKind, build_preconditioner
from .thermo_fem import MaterialParams, SimulationState

__version__ = "0.1.0"
