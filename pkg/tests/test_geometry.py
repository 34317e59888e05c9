import numpy as np
import pytest

from app.errors import GeometryError
from app.models import Backend
from app.services.geometry import (
    DVMTable,
    VelocityTuples,
    build_dvm_table,
    collide,
    sphere_quadrature,
)
from app.services.kernels import CollisionKernel
from app.services.state import PhaseGrid


def test_collide_conserves_momentum_and_energy(rng):
    v = rng.normal(size=(50, 3))
    v_star = rng.normal(size=(50, 3))
    omega = rng.normal(size=(50, 3))
    omega /= np.linalg.norm(omega, axis=-1, keepdims=True)
    vp, vsp = collide(v, v_star, omega)
    assert np.allclose(vp + vsp, v + v_star, atol=1e-13)
    energy = np.sum(v**2 + v_star**2, axis=-1)
    assert np.allclose(np.sum(vp**2 + vsp**2, axis=-1), energy, rtol=1e-13)


def test_sphere_quadrature():
    circle = sphere_quadrature(2, 8)
    assert circle.weights.sum() == pytest.approx(2 * np.pi, abs=1e-12)
    assert circle.integrate(lambda w: w[:, 0]) == pytest.approx(0.0, abs=1e-12)

    sphere = sphere_quadrature(3, 8)
    assert sphere.dimension == 3
    assert sphere.integrate(lambda w: w[:, 2] ** 2) == pytest.approx(4 * np.pi / 3, rel=1e-12)


@pytest.mark.parametrize("d, n", [(2, 7), (2, 2), (4, 8)])
def test_sphere_quadrature_rejects_bad_input(d, n):
    with pytest.raises(GeometryError):
        sphere_quadrature(d, n)


def test_dvm_table_is_conserving_and_swap_closed(tiny_grid):
    table = build_dvm_table(tiny_grid, CollisionKernel())
    assert len(table) > 0
    assert table.conservation_violations(tiny_grid) == 0
    assert table.swap_closed()


def test_dvm_table_save_and_load(tmp_path, tiny_grid, small_grid):
    table = build_dvm_table(tiny_grid, CollisionKernel(mu=0.5))
    path = table.save(tmp_path / "dvm" / "table.txt")
    loaded = DVMTable.load(path, tiny_grid)
    assert np.array_equal(loaded.quadruples, table.quadruples)
    assert np.array_equal(loaded.weights, table.weights)
    assert loaded.swap_closed()
    with pytest.raises(GeometryError):
        DVMTable.load(path, small_grid)
    with pytest.raises(GeometryError):
        DVMTable.load(tmp_path / "missing.txt")


def test_empty_dvm_table_is_rejected():
    with pytest.raises(GeometryError):
        DVMTable(d=2, nv=3, vmax=1.5, quadruples=np.zeros((0, 4), dtype=np.int64), weights=np.zeros(0))


def test_dvm_tuples_have_symmetric_pair_weights(tiny_grid, small_grid):
    table = build_dvm_table(tiny_grid, CollisionKernel())
    tuples = VelocityTuples.from_dvm(table, tiny_grid)
    assert tuples.backend == Backend.DVM
    assert np.allclose(tuples.pair_weights, tuples.pair_weights.T)
    with pytest.raises(GeometryError):
        VelocityTuples.from_dvm(table, small_grid)


def test_quadrature_tuples_stay_inside_the_box(small_grid):
    tuples = VelocityTuples.from_quadrature(small_grid, CollisionKernel(), sphere_quadrature(2, 8))
    assert tuples.backend == Backend.QUADRATURE
    assert len(tuples) > 0
    assert tuples.dropped > 0
    # interpolation rows are convex combinations
    assert np.allclose(np.asarray(tuples.pp.sum(axis=1)).ravel(), 1.0)
    assert np.allclose(np.asarray(tuples.pps.sum(axis=1)).ravel(), 1.0)


def test_quadrature_tuples_reject_dimension_mismatch():
    grid = PhaseGrid(d=3, torus_side=2.0, nx=2, vmax=1.5, nv=3)
    with pytest.raises(GeometryError):
        VelocityTuples.from_quadrature(grid, CollisionKernel(), sphere_quadrature(2, 8))


def test_head_on_pair_scatters_to_the_perpendicular_pair(tiny_grid):
    nodes = tiny_grid.v_nodes()

    def index(v):
        return int(np.flatnonzero(np.all(np.isclose(nodes, v), axis=1))[0])

    table = build_dvm_table(tiny_grid, CollisionKernel())
    quadruples = {tuple(int(i) for i in q) for q in table.quadruples}
    assert (index([1, 0]), index([-1, 0]), index([0, 1]), index([0, -1])) in quadruples

    # every quadruple of the 9-point lattice, enumerated by hand
    lattice = nodes.round().astype(int)
    expected = {
        (j, l, jp, lp)
        for j in range(9)
        for l in range(9)
        for jp in range(9)
        for lp in range(9)
        if (j, l) != (jp, lp)
        and np.array_equal(lattice[j] + lattice[l], lattice[jp] + lattice[lp])
        and lattice[j] @ lattice[j] + lattice[l] @ lattice[l] == lattice[jp] @ lattice[jp] + lattice[lp] @ lattice[lp]
    }
    assert quadruples == expected
