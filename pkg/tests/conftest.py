import numpy as np
import pytest

from app.services.collision import CollisionOperator, spatial_matrix
from app.services.geometry import VelocityTuples, build_dvm_table, sphere_quadrature
from app.services.kernels import CollisionKernel, SpatialKernel
from app.services.state import Density, PhaseGrid


def make_dvm_operator(grid: PhaseGrid, kernel: CollisionKernel = None, **options) -> CollisionOperator:
    kernel = kernel or CollisionKernel()
    tuples = VelocityTuples.from_dvm(build_dvm_table(grid, kernel), grid)
    return CollisionOperator(grid, spatial_matrix(grid, SpatialKernel()), tuples, kernel=kernel, **options)


def make_quadrature_operator(grid: PhaseGrid, n_omega: int = 8, **options) -> CollisionOperator:
    kernel = CollisionKernel()
    tuples = VelocityTuples.from_quadrature(grid, kernel, sphere_quadrature(grid.d, n_omega))
    return CollisionOperator(grid, spatial_matrix(grid, SpatialKernel()), tuples, kernel=kernel, **options)


def random_density(grid: PhaseGrid, rng: np.random.Generator, uniform: bool = False) -> Density:
    if uniform:
        values = np.broadcast_to(rng.uniform(0.5, 1.5, grid.n_velocity), grid.shape)
    else:
        values = rng.uniform(0.5, 1.5, grid.shape)
    return Density.normalized(values, grid)


@pytest.fixture
def tiny_grid() -> PhaseGrid:
    """2 x 2 cells, velocities {-1, 0, 1}^2"""
    return PhaseGrid(d=2, torus_side=2.0, nx=2, vmax=1.5, nv=3)


@pytest.fixture
def small_grid() -> PhaseGrid:
    """4 x 4 cells, velocities {-1.5, -0.5, 0.5, 1.5}^2"""
    return PhaseGrid(d=2, torus_side=4.0, nx=4, vmax=2.0, nv=4)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_dvm(tiny_grid) -> CollisionOperator:
    return make_dvm_operator(tiny_grid)


@pytest.fixture
def small_dvm(small_grid) -> CollisionOperator:
    return make_dvm_operator(small_grid)


@pytest.fixture
def tiny_quadrature(tiny_grid) -> CollisionOperator:
    return make_quadrature_operator(tiny_grid)
