from pydantic import BaseModel, ConfigDict, Field
from typing import Optional, Sequence, Tuple, Union, Literal
from pathlib import Path
from scipy import optimize, special
import numpy as np
import logging

from app.errors import StateError
from app.models import MomentReport, SnapshotFormat
from app.services.kernels import bracket

logger = logging.getLogger(__name__)

MASS_TOLERANCE = 1e-12
TRUNCATION_TOLERANCE = 1e-8
BINARY_HEADER_BYTES = 64


class PhaseGrid(BaseModel):
    """
    Torus [-L/2, L/2)^d times velocity box [-vmax, vmax]^d, both cell-centred

    Grid functions are stored as arrays of shape (nx^d, nv^d): spatial cells along the
    first axis, velocity nodes along the second, each flattened in C order.
    """

    model_config = ConfigDict(frozen=True)

    d: Literal[2, 3] = 2
    torus_side: float = Field(4.0, gt=0)
    nx: int = Field(8, ge=1)
    vmax: float = Field(4.0, gt=0)
    nv: int = Field(16, ge=2)

    @property
    def dx(self) -> float:
        return self.torus_side / self.nx

    @property
    def dv(self) -> float:
        return 2.0 * self.vmax / self.nv

    @property
    def spatial_cell(self) -> float:
        return self.dx**self.d

    @property
    def velocity_cell(self) -> float:
        return self.dv**self.d

    @property
    def cell_volume(self) -> float:
        return self.spatial_cell * self.velocity_cell

    @property
    def phase_volume(self) -> float:
        return (self.torus_side * 2.0 * self.vmax) ** self.d

    @property
    def n_space(self) -> int:
        return self.nx**self.d

    @property
    def n_velocity(self) -> int:
        return self.nv**self.d

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.n_space, self.n_velocity)

    @property
    def full_shape(self) -> Tuple[int, ...]:
        return (self.nx,) * self.d + (self.nv,) * self.d

    def x_axis(self) -> np.ndarray:
        return -0.5 * self.torus_side + self.dx * (np.arange(self.nx) + 0.5)

    def v_axis(self) -> np.ndarray:
        return -self.vmax + self.dv * (np.arange(self.nv) + 0.5)

    def v_lattice(self) -> np.ndarray:
        """Integer lattice coordinates m with v = m * dv / 2 (all m share the parity of nv - 1)"""
        axis = 2 * np.arange(self.nv) - (self.nv - 1)
        grids = np.meshgrid(*[axis] * self.d, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1).astype(np.int64)

    def x_nodes(self) -> np.ndarray:
        grids = np.meshgrid(*[self.x_axis()] * self.d, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    def v_nodes(self) -> np.ndarray:
        return self.v_lattice() * (0.5 * self.dv)

    def v_squared(self) -> np.ndarray:
        return np.sum(self.v_lattice() ** 2, axis=-1) * (0.5 * self.dv) ** 2

    def integrate(self, values: np.ndarray) -> float:
        return float(np.sum(values) * self.cell_volume)


class Density:
    """Nonnegative, unit-mass, piecewise-constant phase-space density (immutable)"""

    def __init__(self, values, grid: PhaseGrid, time: float = 0.0):
        arr = np.array(values, dtype=float)
        if arr.size != grid.n_space * grid.n_velocity:
            raise StateError(f"Density has {arr.size} values, grid expects {grid.shape}")
        arr = arr.reshape(grid.shape)
        if not np.all(np.isfinite(arr)):
            raise StateError("Density contains non-finite values")
        if np.any(arr < 0):
            raise StateError(f"Density is negative somewhere (min {arr.min():.3e})")
        mass = grid.integrate(arr)
        if abs(mass - 1.0) > MASS_TOLERANCE:
            raise StateError(f"Density mass {mass!r} differs from 1 by more than {MASS_TOLERANCE}")
        arr.setflags(write=False)
        self._values = arr
        self.grid = grid
        self.time = time

    @classmethod
    def normalized(cls, values, grid: PhaseGrid, time: float = 0.0) -> "Density":
        arr = np.array(values, dtype=float).reshape(grid.shape)
        mass = grid.integrate(arr)
        if not mass > 0:
            raise StateError("Cannot normalise a density with zero mass")
        return cls(arr / mass, grid, time)

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def mass(self) -> float:
        return self.grid.integrate(self._values)

    def at(self, time: float) -> "Density":
        return Density(self._values, self.grid, time)

    def __repr__(self) -> str:
        return f"Density(grid={self.grid!r}, time={self.time})"


def _gaussian_profile(grid: PhaseGrid, mean_velocity: Sequence[float], temperature: float) -> np.ndarray:
    u = np.asarray(mean_velocity, dtype=float)
    if u.shape != (grid.d,):
        raise StateError(f"mean_velocity must have {grid.d} components, got {u.shape}")
    diff = grid.v_nodes() - u
    return np.exp(-np.sum(diff * diff, axis=-1) / (2.0 * temperature))


def truncated_mass(grid: PhaseGrid, mean_velocity: Sequence[float], temperature: float) -> float:
    """Gaussian mass of the continuous Maxwellian outside the velocity box"""
    u = np.asarray(mean_velocity, dtype=float)
    scale = np.sqrt(2.0 * temperature)
    inside = 0.5 * (special.erf((grid.vmax - u) / scale) - special.erf((-grid.vmax - u) / scale))
    return float(1.0 - np.prod(inside))


def maxwellian(grid: PhaseGrid, mean_velocity: Sequence[float], temperature: float) -> Density:
    if temperature <= 0:
        raise StateError(f"temperature must be positive, got {temperature}")
    lost = truncated_mass(grid, mean_velocity, temperature)
    if lost > TRUNCATION_TOLERANCE:
        raise StateError(f"Velocity box truncates {lost:.3e} of the Maxwellian mass")
    profile = _gaussian_profile(grid, mean_velocity, temperature)
    return Density.normalized(np.broadcast_to(profile, grid.shape), grid)


def two_bump(
    grid: PhaseGrid,
    bump_velocity: float = 1.0,
    temperature: float = 0.25,
    spatial_amplitude: float = 0.0,
) -> Density:
    """Two Maxwellians at +-bump_velocity along v_1, optionally modulated by 1 + a sin(2 pi x_1 / L)"""
    shift = np.zeros(grid.d)
    shift[0] = bump_velocity
    for u in (shift, -shift):
        lost = truncated_mass(grid, u, temperature)
        if lost > TRUNCATION_TOLERANCE:
            raise StateError(f"Velocity box truncates {lost:.3e} of a bump's mass")
    profile = _gaussian_profile(grid, shift, temperature) + _gaussian_profile(grid, -shift, temperature)
    modulation = 1.0 + spatial_amplitude * np.sin(2 * np.pi * grid.x_nodes()[:, 0] / grid.torus_side)
    return Density.normalized(modulation[:, None] * profile[None, :], grid)


def matched_maxwellian(f: Density) -> Density:
    """
    Spatially uniform lattice Maxwellian exp(a + b.v - c|v|^2) with the mass, momentum and
    energy of f

    (b, c) minimize the convex dual logsumexp(b.v - c|v|^2) - b.m + c e, whose gradient
    vanishes exactly when the lattice moments match (m, e).
    """
    grid = f.grid
    v = grid.v_nodes()
    v_sq = grid.v_squared()
    velocity_marginal = f.values.sum(axis=0)
    if velocity_marginal.sum() <= 0:
        raise StateError("Matching Maxwellian of a density with zero mass")
    velocity_marginal = velocity_marginal / velocity_marginal.sum()
    features = np.column_stack([v, -v_sq])
    targets = velocity_marginal @ features

    def lattice_weights(params: np.ndarray) -> np.ndarray:
        exponent = features @ params
        return np.exp(exponent - special.logsumexp(exponent))

    def dual(params: np.ndarray) -> float:
        return float(special.logsumexp(features @ params) - params @ targets)

    def gradient(params: np.ndarray) -> np.ndarray:
        return lattice_weights(params) @ features - targets

    def hessian(params: np.ndarray) -> np.ndarray:
        weights = lattice_weights(params)
        centred = features - weights @ features
        return (centred * weights[:, None]).T @ centred

    spread = max((-targets[-1] - targets[:-1] @ targets[:-1]) / grid.d, 1e-3)
    start = np.concatenate([targets[:-1] / spread, [0.5 / spread]])
    solution = optimize.minimize(
        dual, start, jac=gradient, hess=hessian, method="trust-exact", options={"gtol": 1e-13, "maxiter": 500}
    )
    residual = float(np.max(np.abs(gradient(solution.x))))
    if residual > 1e-9:
        raise StateError(f"Matching Maxwellian did not converge: {solution.message} (moment residual {residual:.3e})")
    exponent = features @ solution.x
    profile = np.exp(exponent - exponent.max())
    return Density.normalized(np.broadcast_to(profile, grid.shape), grid, f.time)


def entropy(f: Density) -> float:
    """H(f) = sum f log f * cellvol, with 0 log 0 = 0"""
    return float(np.sum(special.xlogy(f.values, f.values)) * f.grid.cell_volume)


def relative_entropy(f: Density, g: Union[Density, np.ndarray]) -> float:
    """
    H(f|g) = sum f log(f/g) * cellvol; `g` may be a Density or a positive array of
    reference values on the same grid
    """
    reference = g.values if isinstance(g, Density) else np.asarray(g, dtype=float).reshape(f.grid.shape)
    if np.any((f.values > 0) & (reference <= 0)):
        raise StateError("relative_entropy: f charges cells where the reference vanishes")
    return float(np.sum(special.rel_entr(f.values, reference)) * f.grid.cell_volume)


def moments(f: Density, p: float = 2.0, q: float = 2.0) -> MomentReport:
    grid = f.grid
    cv = grid.cell_volume
    values = f.values
    spatial_marginal = values.sum(axis=1)
    velocity_marginal = values.sum(axis=0)
    x_weight = bracket(grid.x_nodes()) ** p
    v_weight = bracket(grid.v_nodes()) ** q
    return MomentReport(
        mass=float(np.sum(values) * cv),
        momentum=[float(m) for m in (velocity_marginal @ grid.v_nodes()) * cv],
        kinetic_energy=float(0.5 * (velocity_marginal @ grid.v_squared()) * cv),
        e_pq=float((spatial_marginal @ x_weight + velocity_marginal @ v_weight) * cv),
        entropy=entropy(f),
    )


def _header(grid: PhaseGrid, time: float) -> str:
    return f"d={grid.d} L={grid.torus_side!r} nx={grid.nx} vmax={grid.vmax!r} nv={grid.nv} time={time!r}"


def _parse_header(line: str) -> Tuple[PhaseGrid, float]:
    try:
        fields = dict(item.split("=", 1) for item in line.strip().lstrip("#").split())
        grid = PhaseGrid(
            d=int(fields["d"]),
            torus_side=float(fields["L"]),
            nx=int(fields["nx"]),
            vmax=float(fields["vmax"]),
            nv=int(fields["nv"]),
        )
        return grid, float(fields["time"])
    except (KeyError, ValueError) as e:
        raise StateError(f"Malformed snapshot header '{line.strip()}': {e}") from e


def write_snapshot(path: Path, f: Density, fmt: SnapshotFormat = SnapshotFormat.CSV) -> Path:
    """
    Snapshot formats:
      csv:    '# d=.. L=.. nx=.. vmax=.. nv=.. time=..' then one value per line
      binary: the same header as ASCII padded to 64 bytes, then little-endian float64 values
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = _header(f.grid, f.time)
    if fmt == SnapshotFormat.CSV:
        np.savetxt(path, f.values.ravel(), fmt="%.17g", header=header)
    else:
        encoded = header.encode("ascii")
        if len(encoded) > BINARY_HEADER_BYTES:
            raise StateError("Snapshot header exceeds 64 bytes")
        with path.open("wb") as handle:
            handle.write(encoded.ljust(BINARY_HEADER_BYTES, b" "))
            handle.write(f.values.astype("<f8").tobytes())
    return path


def read_snapshot(path: Path, fmt: Optional[SnapshotFormat] = None) -> Density:
    path = Path(path)
    if fmt is None:
        fmt = SnapshotFormat.CSV if path.suffix in (".csv", ".txt") else SnapshotFormat.BINARY
    if fmt == SnapshotFormat.CSV:
        with path.open() as handle:
            first = handle.readline()
        grid, time = _parse_header(first)
        values = np.loadtxt(path, comments="#", ndmin=1)
    else:
        raw = path.read_bytes()
        grid, time = _parse_header(raw[:BINARY_HEADER_BYTES].decode("ascii"))
        values = np.frombuffer(raw[BINARY_HEADER_BYTES:], dtype="<f8")
    return Density(values, grid, time)
