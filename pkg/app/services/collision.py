from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterator, List, NamedTuple, Optional, Sequence, Tuple, Union
import numpy as np
import logging

from app.errors import CollisionError
from app.models import Backend
from app.services.geometry import DVMTable, VelocityTuples, build_dvm_table, sphere_quadrature
from app.services.kernels import CollisionKernel, SpatialKernel
from app.services.state import Density, PhaseGrid

logger = logging.getLogger(__name__)

SPATIAL_CUTOFF = 1e-14


def is_uniform(values: np.ndarray) -> bool:
    """True when every spatial row of a grid function is bitwise identical"""
    return bool(np.all(values == values[:1]))


def spatial_matrix(grid: PhaseGrid, kernel: SpatialKernel) -> np.ndarray:
    """K[i, k] = folded k(x_i - x_k) dX^2, zero where the kernel drops below 1e-14 k(0)"""
    x = grid.x_nodes()
    folded = kernel.folded(x[:, None, :] - x[None, :, :], grid.torus_side)
    folded = np.where(folded < SPATIAL_CUTOFF * kernel.value(np.zeros(grid.d)), 0.0, folded)
    matrix = folded * grid.spatial_cell**2
    return 0.5 * (matrix + matrix.T)


class TupleSum(NamedTuple):
    value: float
    n_infinite: int = 0
    n_skipped: int = 0


class TupleTile:
    """Rows `index` of the velocity tuple set with the slot matrices sliced accordingly"""

    def __init__(self, tuples: VelocityTuples, index: slice, scatter: bool = True):
        self.index = index
        self.p = tuples.p[index]
        self.ps = tuples.ps[index]
        self.pp = tuples.pp[index]
        self.pps = tuples.pps[index]
        self.weights = tuples.weights[index]
        if scatter:
            self.scatter_first = (self.pp - self.p).T.tocsr()
            self.scatter_second = (self.pps - self.ps).T.tocsr()

    def slots(self, phi: np.ndarray, transform: Optional[Callable] = None) -> Tuple[np.ndarray, ...]:
        """phi at (v, v_*, v', v'_*), each of shape (tile, rows)"""
        values = tuple(np.asarray(m @ phi.T) for m in (self.p, self.ps, self.pp, self.pps))
        if transform is not None:
            values = tuple(transform(v) for v in values)
        return values


class Spatial(NamedTuple):
    """Spatial kernel in use: the full matrix, or its row sum for spatially uniform data"""

    kmat: np.ndarray
    multiplicity: int

    def rows(self, values: np.ndarray) -> np.ndarray:
        return values[: self.kmat.shape[0]]


class TupleFunction:
    """A real function on collision tuples (i, k, q), evaluated one velocity tile at a time"""

    def uniform(self) -> bool:
        return False

    def dense(self, operator: "CollisionOperator", tile: TupleTile, spatial: Spatial) -> np.ndarray:
        """Values of shape (tile, rows, rows) indexed [q, i, k]"""
        raise NotImplementedError


class GradbarFunction(TupleFunction):
    """scale * (phi' + phi'_* - phi - phi_*)"""

    def __init__(self, phi: np.ndarray, scale: float = 1.0, transform: Optional[Callable] = None):
        self.phi = np.asarray(phi, dtype=float)
        self.scale = scale
        self.transform = transform

    def uniform(self) -> bool:
        return is_uniform(self.phi)

    def parts(self, tile: TupleTile, spatial: Spatial) -> Tuple[np.ndarray, np.ndarray]:
        a, a_s, a_p, a_ps = tile.slots(spatial.rows(self.phi), self.transform)
        return self.scale * (a_p - a), self.scale * (a_ps - a_s)

    def dense(self, operator, tile, spatial):
        first, second = self.parts(tile, spatial)
        return first[:, :, None] + second[:, None, :]


class CollisionFlux(TupleFunction):
    """Flux U on the collision tuples; Sigma_k U w and Sigma_i U w are available per tile"""

    def marginals(self, operator, tile: TupleTile, spatial: Spatial) -> Tuple[np.ndarray, np.ndarray]:
        rows = spatial.kmat.shape[0]
        first = np.empty((len(tile.weights), rows))
        second = np.empty((len(tile.weights), rows))
        for sub in operator.chunks(tile.index):
            sub_tile = TupleTile(operator.tuples, sub, scatter=False)
            weighted = self.dense(operator, sub_tile, spatial) * spatial.kmat[None] * sub_tile.weights[:, None, None]
            local = slice(sub.start - tile.index.start, sub.stop - tile.index.start)
            first[local] = weighted.sum(axis=2)
            second[local] = weighted.sum(axis=1)
        return first, second

    def product_scale(self, f: Density) -> Optional[float]:
        """alpha when this flux equals alpha * (f f_* - f' f'_*) for the given density"""
        return None

    def scaled(self, alpha: float) -> "CollisionFlux":
        raise NotImplementedError


class ZeroFlux(CollisionFlux):
    def uniform(self) -> bool:
        return True

    def dense(self, operator, tile, spatial):
        rows = spatial.kmat.shape[0]
        return np.zeros((len(tile.weights), rows, rows))

    def marginals(self, operator, tile, spatial):
        rows = spatial.kmat.shape[0]
        return np.zeros((len(tile.weights), rows)), np.zeros((len(tile.weights), rows))

    def product_scale(self, f):
        return 0.0

    def scaled(self, alpha):
        return self


class DenseFlux(CollisionFlux):
    """Flux stored per tuple, values of shape (Nx, Nx, Nq) indexed [i, k, q]"""

    def __init__(self, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        if values.ndim != 3 or not np.all(np.isfinite(values)):
            raise CollisionError("DenseFlux needs finite values of shape (Nx, Nx, Nq)")
        self.values = values

    def dense(self, operator, tile, spatial):
        if self.values.shape != (operator.grid.n_space, operator.grid.n_space, len(operator.tuples)):
            raise CollisionError(f"DenseFlux of shape {self.values.shape} does not fit the tuple set")
        return np.transpose(self.values[:, :, tile.index], (2, 0, 1))

    def scaled(self, alpha):
        return DenseFlux(alpha * self.values)


class ProductFlux(CollisionFlux):
    """U = scale * (g g_* - g' g'_*) for a density g (or any nonnegative grid function)"""

    def __init__(self, density: Union[Density, np.ndarray], scale: float = 1.0):
        self.density = density if isinstance(density, Density) else None
        self.values = density.values if isinstance(density, Density) else np.asarray(density, dtype=float)
        self.scale = float(scale)

    def uniform(self) -> bool:
        return is_uniform(self.values)

    def _slots(self, tile, spatial):
        return tile.slots(spatial.rows(self.values))

    def dense(self, operator, tile, spatial):
        g, g_s, g_p, g_ps = self._slots(tile, spatial)
        return self.scale * (g[:, :, None] * g_s[:, None, :] - g_p[:, :, None] * g_ps[:, None, :])

    def marginals(self, operator, tile, spatial):
        g, g_s, g_p, g_ps = self._slots(tile, spatial)
        k = spatial.kmat
        w = self.scale * tile.weights[:, None]
        first = w * (g * (g_s @ k) - g_p * (g_ps @ k))
        second = w * (g_s * (g @ k) - g_ps * (g_p @ k))
        return first, second

    def product_scale(self, f):
        if self.density is f or np.array_equal(self.values, f.values):
            return self.scale
        return None

    def scaled(self, alpha):
        return ProductFlux(self.density if self.density is not None else self.values, alpha * self.scale)


class CollisionOperator:
    """
    Discrete fuzzy collision operator on a phase grid

    Tuples are (i, k, q): spatial cells of the two particles and a velocity tuple q with slots
    (v, v_*, v', v'_*). Weights factor as w = K[i, k] * W[q] with the cell volumes absorbed,
    so every sum that is a product of one-particle factors runs through K without building
    the Nx^2 Nq tuple array. Other sums run over fixed q-tiles, reduced in tile order.
    """

    def __init__(
        self,
        grid: PhaseGrid,
        kmat: np.ndarray,
        tuples: VelocityTuples,
        tile_size: int = 4096,
        workers: int = 1,
        kernel: Optional[CollisionKernel] = None,
    ):
        kmat = np.asarray(kmat, dtype=float)
        if kmat.shape != (grid.n_space, grid.n_space) or not np.array_equal(kmat, kmat.T):
            raise CollisionError("Spatial kernel matrix must be symmetric of shape (Nx, Nx)")
        if tuples.p.shape[1] != grid.n_velocity:
            raise CollisionError("Velocity tuples were built for another velocity grid")
        self.grid = grid
        self.kmat = kmat
        self.tuples = tuples
        self.backend = tuples.backend
        self.kernel = kernel
        self.workers = workers
        self.tile_size = tile_size
        n = len(tuples)
        self.tiles = [TupleTile(tuples, slice(start, min(start + tile_size, n))) for start in range(0, n, tile_size)]
        self.chunk_size = max(1, tile_size // grid.n_space)
        self._dense_bounds = list(self.chunks(slice(0, n)))
        self._kernel_bound: Optional[float] = None
        logger.info(
            f"Collision operator: backend={self.backend.value}, {n} velocity tuples, "
            f"{len(self.tiles)} tiles, {workers} workers"
        )

    @classmethod
    def from_config(cls, config, grid: Optional[PhaseGrid] = None) -> "CollisionOperator":
        """Assemble from a RunConfig: grid, kernels, geometry and solver sections"""
        grid = grid or PhaseGrid(**config.grid.model_dump())
        kernel = CollisionKernel(
            mu=config.kernels.mu, b0=config.kernels.b0, cap=config.solver.truncation_level
        )
        spatial = SpatialKernel(
            gamma=config.kernels.gamma, c=config.kernels.c, periodization_images=config.kernels.images
        )
        if config.solver.backend == Backend.DVM:
            if config.geometry.dvm_table:
                table = DVMTable.load(config.geometry.dvm_table, grid)
            else:
                table = build_dvm_table(grid, kernel)
            tuples = VelocityTuples.from_dvm(table, grid)
        else:
            sphere = sphere_quadrature(grid.d, config.geometry.n_omega)
            tuples = VelocityTuples.from_quadrature(grid, kernel, sphere)
        return cls(
            grid,
            spatial_matrix(grid, spatial),
            tuples,
            tile_size=config.solver.tile_size,
            workers=config.workers,
            kernel=kernel,
        )

    def chunks(self, index: slice) -> Iterator[slice]:
        """Split a tuple range into the fixed chunks used for dense (rows, rows, chunk) evaluation"""
        for start in range(index.start, index.stop, self.chunk_size):
            yield slice(start, min(start + self.chunk_size, index.stop))

    @property
    def n_tuples(self) -> int:
        return self.grid.n_space**2 * len(self.tuples)

    def _map(self, func: Callable, items: Sequence) -> List:
        if self.workers > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                return list(pool.map(func, items))
        return [func(item) for item in items]

    def _spatial(self, *parts: TupleFunction, values: Optional[np.ndarray] = None) -> Spatial:
        uniform = all(p.uniform() for p in parts) and (values is None or is_uniform(values))
        if uniform:
            return Spatial(np.array([[float(np.sum(self.kmat[0]))]]), self.grid.n_space)
        return Spatial(self.kmat, 1)

    def _check_grid(self, values: Union[Density, np.ndarray]) -> np.ndarray:
        if isinstance(values, Density):
            values = values.values
        values = np.asarray(values, dtype=float)
        if values.shape != self.grid.shape:
            raise CollisionError(f"Grid function has shape {values.shape}, expected {self.grid.shape}")
        return values

    def _scatter(self, flux: CollisionFlux) -> np.ndarray:
        """nabla-bar transpose of U w, shape (Nx, Nv)"""
        spatial = self._spatial(flux)

        def scatter_tile(tile: TupleTile) -> np.ndarray:
            first, second = flux.marginals(self, tile, spatial)
            return tile.scatter_first @ first + tile.scatter_second @ second

        out = np.zeros((self.grid.n_velocity, spatial.kmat.shape[0]))
        for part in self._map(scatter_tile, self.tiles):
            out += part
        return np.ascontiguousarray(np.broadcast_to(out.T, self.grid.shape))

    def true_flux(self, f: Union[Density, np.ndarray]) -> ProductFlux:
        """U = f f_* - f' f'_*"""
        return ProductFlux(f if isinstance(f, Density) else self._check_grid(f), 1.0)

    def divergence_bar(self, flux: CollisionFlux) -> np.ndarray:
        """
        Discrete collision divergence, adjoint to nabla-bar:
        sum phi (div U) cellvol = -1/4 sum (nabla-bar phi) U w
        """
        return -0.25 * self._scatter(flux) / self.grid.cell_volume

    def apply_Q(self, f: Union[Density, np.ndarray]) -> np.ndarray:
        """Q(f) = -div(f f_* - f' f'_*); sums to zero over the grid"""
        return -self.divergence_bar(self.true_flux(f))

    def pair(self, phi: np.ndarray, flux: CollisionFlux, transform: Optional[Callable] = None) -> float:
        """sum over tuples of (nabla-bar phi) U w; with `transform`, phi's slot values are mapped first"""
        phi = self._check_grid(phi)
        gradient = GradbarFunction(phi, transform=transform)
        spatial = self._spatial(gradient, flux)

        def pair_tile(tile: TupleTile) -> float:
            first, second = flux.marginals(self, tile, spatial)
            a_first, a_second = gradient.parts(tile, spatial)
            return float(np.sum(a_first * first) + np.sum(a_second * second))

        return spatial.multiplicity * float(sum(self._map(pair_tile, self.tiles)))

    def weak_form(self, f: Density, phi: np.ndarray) -> float:
        """-1/4 sum (nabla-bar phi)(f' f'_* - f f_*) w, equal to sum phi Q(f) cellvol"""
        return 0.25 * self.pair(phi, self.true_flux(f))

    def gradbar(self, phi: np.ndarray) -> np.ndarray:
        """nabla-bar phi on every tuple, dense (Nx, Nx, Nq); for small grids"""
        phi = self._check_grid(phi)
        full = Spatial(self.kmat, 1)
        parts = [GradbarFunction(phi).dense(self, tile, full) for tile in self.tiles]
        return np.transpose(np.concatenate(parts, axis=0), (1, 2, 0))

    def gradbar_function(self, phi: np.ndarray, scale: float = 1.0, transform: Optional[Callable] = None) -> GradbarFunction:
        return GradbarFunction(self._check_grid(phi), scale=scale, transform=transform)

    def tuple_weights(self) -> np.ndarray:
        """w = K[i, k] W[q], dense (Nx, Nx, Nq); for small grids"""
        return self.kmat[:, :, None] * self.tuples.weights[None, None, :]

    def tuple_products(self, f: Union[Density, np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
        """(s, t) = (f f_*, f' f'_*) on every tuple, dense (Nx, Nx, Nq); for small grids"""
        values = self._check_grid(f)
        f_v, f_s, f_p, f_ps = (np.asarray(m @ values.T) for m in (self.tuples.p, self.tuples.ps, self.tuples.pp, self.tuples.pps))
        s = f_v.T[:, None, :] * f_s.T[None, :, :]
        t = f_p.T[:, None, :] * f_ps.T[None, :, :]
        return s, t

    def tuple_sum(self, func: Callable, f: Optional[Union[Density, np.ndarray]], *fields: TupleFunction) -> TupleSum:
        """
        sum over tuples of func(s, t, *field values) * w

        +inf entries make the sum +inf and are counted; NaN entries are skipped and counted.
        Tuples of zero weight are ignored.
        """
        values = self._check_grid(f) if f is not None else None
        spatial = self._spatial(*fields, values=values)
        weights = self.tuples.weights

        def sum_chunk(index: slice) -> Tuple[float, int, int]:
            tile = TupleTile(self.tuples, index, scatter=False)
            w = spatial.kmat[None] * weights[index][:, None, None]
            args = []
            if values is not None:
                g, g_s, g_p, g_ps = tile.slots(spatial.rows(values))
                args += [g[:, :, None] * g_s[:, None, :], g_p[:, :, None] * g_ps[:, None, :]]
            args += [field.dense(self, tile, spatial) for field in fields]
            terms = np.asarray(func(*args), dtype=float)
            live = w > 0
            infinite = live & np.isposinf(terms)
            skipped = live & np.isnan(terms)
            finite = live & ~infinite & ~skipped
            return float(np.sum(terms[finite] * w[finite])), int(infinite.sum()), int(skipped.sum())

        total, n_inf, n_skip = 0.0, 0, 0
        for part, inf_count, skip_count in self._map(sum_chunk, self._dense_bounds):
            total += part
            n_inf += inf_count
            n_skip += skip_count
        value = np.inf if n_inf else spatial.multiplicity * total
        return TupleSum(value, spatial.multiplicity * n_inf, spatial.multiplicity * n_skip)

    def total_variation(self, flux: CollisionFlux) -> float:
        """sum |U| w"""
        return self.tuple_sum(np.abs, None, flux).value

    def loss_rate(self, f: Union[Density, np.ndarray]) -> np.ndarray:
        """nu[i, j] = sum over tuples with (x_i, v_j) in the first slot of w f_* / cellvol"""
        values = self._check_grid(f)
        spatial = self._spatial(values=values)

        def rate_tile(tile: TupleTile) -> np.ndarray:
            _, g_s, _, _ = tile.slots(spatial.rows(values))
            return tile.p.T @ (tile.weights[:, None] * (g_s @ spatial.kmat))

        out = np.zeros((self.grid.n_velocity, spatial.kmat.shape[0]))
        for part in self._map(rate_tile, self.tiles):
            out += part
        return np.ascontiguousarray(np.broadcast_to(out.T, self.grid.shape)) / self.grid.cell_volume

    def kernel_bound(self) -> float:
        """C_B of the discrete operator: loss_rate(f) <= C_B * mass(f) for every f >= 0"""
        if self._kernel_bound is None:
            pair_max = float(np.max(self.tuples.pair_weights))
            self._kernel_bound = float(np.max(self.kmat)) * pair_max / self.grid.cell_volume**2
        return self._kernel_bound
