import numpy as np
import pytest

from app.errors import CollisionError
from app.services.collision import DenseFlux, ProductFlux, ZeroFlux, is_uniform, spatial_matrix
from app.services.dissipation import entropy_dissipation_D
from app.services.geometry import build_dvm_table
from app.services.kernels import CollisionKernel, SpatialKernel
from tests.conftest import make_dvm_operator, make_quadrature_operator, random_density


@pytest.fixture(params=["dvm", "quadrature"])
def operator(request, small_grid):
    if request.param == "dvm":
        return make_dvm_operator(small_grid)
    return make_quadrature_operator(small_grid)


def test_weak_form_matches_collision_operator(operator, rng):
    f = random_density(operator.grid, rng)
    phi = rng.normal(size=operator.grid.shape)
    expected = float(np.sum(phi * operator.apply_Q(f))) * operator.grid.cell_volume
    assert operator.weak_form(f, phi) == pytest.approx(expected, rel=1e-10, abs=1e-14)


def test_collision_conserves_mass_and_momentum(operator, rng):
    f = random_density(operator.grid, rng)
    q = operator.apply_Q(f)
    cv = operator.grid.cell_volume
    v = operator.grid.v_nodes()
    scale = float(np.sum(np.abs(q))) * cv
    assert abs(np.sum(q) * cv) <= 1e-12 * scale
    assert np.allclose(np.sum(q, axis=0) @ v * cv, 0.0, atol=1e-12 * scale)


def test_dvm_collision_conserves_energy(small_dvm, rng):
    f = random_density(small_dvm.grid, rng)
    q = small_dvm.apply_Q(f)
    scale = float(np.sum(np.abs(q)))
    assert abs(float(np.sum(q * small_dvm.grid.v_squared()[None, :]))) <= 1e-12 * scale


def test_divergence_of_dense_flux_matches_product_flux(small_dvm, rng):
    f = random_density(small_dvm.grid, rng)
    s, t = small_dvm.tuple_products(f)
    dense = small_dvm.divergence_bar(DenseFlux(s - t))
    assert np.allclose(dense, small_dvm.divergence_bar(small_dvm.true_flux(f)), rtol=1e-10, atol=1e-14)


def test_uniform_fast_path_matches_full_sum(tiny_dvm, rng):
    f = random_density(tiny_dvm.grid, rng, uniform=True)
    phi = np.broadcast_to(rng.normal(size=tiny_dvm.grid.n_velocity), tiny_dvm.grid.shape)
    assert is_uniform(f.values) and is_uniform(phi)
    s, t = tiny_dvm.tuple_products(f)
    full = float(np.sum(tiny_dvm.gradbar(phi) * (s - t) * tiny_dvm.tuple_weights()))
    assert tiny_dvm.pair(phi, tiny_dvm.true_flux(f)) == pytest.approx(full, rel=1e-12, abs=1e-15)

    dense = tiny_dvm.divergence_bar(DenseFlux(s - t))
    assert np.allclose(tiny_dvm.apply_Q(f), -dense, rtol=1e-12, atol=1e-15)


def test_parallel_evaluation_is_deterministic(small_grid, rng):
    serial = make_dvm_operator(small_grid, tile_size=32)
    parallel = make_dvm_operator(small_grid, tile_size=32, workers=4)
    f = random_density(small_grid, rng)
    phi = rng.normal(size=small_grid.shape)
    assert np.array_equal(serial.apply_Q(f), parallel.apply_Q(f))
    assert serial.pair(phi, serial.true_flux(f)) == parallel.pair(phi, parallel.true_flux(f))
    assert serial.tuple_sum(np.subtract, f) == parallel.tuple_sum(np.subtract, f)


def test_loss_rate_is_bounded_by_kernel_constant(operator, rng):
    f = random_density(operator.grid, rng)
    nu = operator.loss_rate(f)
    assert np.all(nu >= 0)
    assert np.max(nu) <= operator.kernel_bound() * f.mass * (1 + 1e-12)


def test_tuple_sum_counts_infinite_and_skipped_terms(tiny_dvm, rng):
    f = random_density(tiny_dvm.grid, rng)
    live = int(np.sum(tiny_dvm.tuple_weights() > 0))
    skipped = tiny_dvm.tuple_sum(lambda s, t: np.full_like(s, np.nan), f)
    assert skipped.value == 0.0
    assert skipped.n_skipped == live
    infinite = tiny_dvm.tuple_sum(lambda s, t: np.full_like(s, np.inf), f)
    assert infinite.value == np.inf
    assert infinite.n_infinite == live


def test_flux_variants(tiny_dvm, rng):
    f = random_density(tiny_dvm.grid, rng)
    assert tiny_dvm.total_variation(ZeroFlux()) == 0.0
    assert np.array_equal(tiny_dvm.divergence_bar(ZeroFlux()), np.zeros(tiny_dvm.grid.shape))
    flux = ProductFlux(f, 2.0)
    assert flux.product_scale(f) == 2.0
    assert flux.scaled(0.5).product_scale(f) == 1.0
    assert np.allclose(tiny_dvm.divergence_bar(flux), 2.0 * tiny_dvm.divergence_bar(tiny_dvm.true_flux(f)))


def test_operator_rejects_bad_input(tiny_dvm, small_grid):
    with pytest.raises(CollisionError):
        tiny_dvm.apply_Q(np.ones(small_grid.shape))
    with pytest.raises(CollisionError):
        DenseFlux(np.full((2, 2, 2), np.nan))
    with pytest.raises(CollisionError):
        tiny_dvm.divergence_bar(DenseFlux(np.zeros((4, 4, 1))))


def direct_sums(grid, f):
    """Q and D by a plain loop over (x_i, x_k, quadruple), without the tiled sparse assembly"""
    kernel = CollisionKernel()
    table = build_dvm_table(grid, kernel)
    k_matrix = spatial_matrix(grid, SpatialKernel())
    weights = table.weights * grid.velocity_cell**2
    q = np.zeros(grid.shape)
    d = 0.0
    for (j, l, jp, lp), weight in zip(table.quadruples, weights):
        for i in range(grid.n_space):
            for k in range(grid.n_space):
                w = k_matrix[i, k] * weight
                s = f[i, j] * f[k, l]
                t = f[i, jp] * f[k, lp]
                u = w * (s - t)
                q[i, jp] += u
                q[i, j] -= u
                q[k, lp] += u
                q[k, l] -= u
                d += 0.25 * w * (t - s) * (np.log(t) - np.log(s))
    return 0.25 * q / grid.cell_volume, d


def test_collision_operator_matches_direct_sums(tiny_grid, rng):
    operator = make_dvm_operator(tiny_grid, tile_size=7)
    f = random_density(tiny_grid, rng)
    q, d = direct_sums(tiny_grid, f.values)
    assert np.allclose(operator.apply_Q(f), q, rtol=1e-12, atol=1e-13 * np.max(np.abs(q)))
    assert entropy_dissipation_D(operator, f) == pytest.approx(d, rel=1e-12)
