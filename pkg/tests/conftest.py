import numpy as np
import pytest

from weldbench.laser_bc import Ellipsoid, MeltPool, PoolSchedule
from weldbench.meshdd import build_hex_mesh, build_restrictions, classify_interface, partition, set_overlap
from weldbench.thermo_fem import Assembler, MaterialParams, SimulationState


class WeldProblem:
    """A small assembled welding system after the first time step's BC setup."""

    def __init__(self, extent, n_elems, grid, overlap=1, pool=None, dt=0.05):
        self.mesh = build_hex_mesh(extent, n_elems)
        self.dd = classify_interface(set_overlap(partition(self.mesh, grid), overlap))
        self.restrictions = build_restrictions(self.dd)
        self.mat = MaterialParams()
        self.assembler = Assembler(self.mesh)
        self.pool = pool or MeltPool(Ellipsoid(2.0, 1.5, 1.0), position_0=extent[0] / 3,
                                     y_center=extent[1] / 2, speed=10.0, top=extent[2])
        self.schedule = PoolSchedule(self.mesh, self.pool)
        self.state = SimulationState.initial(self.mesh, dt)
        self.state.advance(dt)
        self.constraints = self.schedule.at(1, self.state.time)
        self.constraints.impose(self.state)
        self.system = self.assembler.assemble(self.state, self.mat, self.constraints)


@pytest.fixture(scope="session")
def toy_problem():
    return WeldProblem((12.0, 8.0, 1.0), (4, 4, 2), (2, 2, 1))


@pytest.fixture(scope="session")
def small_problem():
    return WeldProblem((12.0, 8.0, 1.0), (8, 8, 4), (4, 4, 1))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
