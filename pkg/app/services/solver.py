from typing import List, NamedTuple, Optional, Tuple
from pathlib import Path
import numpy as np
import logging

from app.config import OutputSettings, SolverConfig
from app.errors import KernelError, SolverError, StateError
from app.models import CollisionScheme, ContractionReport, ExistenceReport, SnapshotFormat, Stepper
from app.services.collision import CollisionOperator, ProductFlux
from app.services.diagnostics import DiagnosticsWriter, build_record
from app.services.dissipation import DissipationStructure
from app.services.kernels import CollisionKernel
from app.services.state import Density, PhaseGrid, matched_maxwellian, write_snapshot
from app.services.variational import Trajectory

logger = logging.getLogger(__name__)

SHIFT_SNAP = 1e-12
MONOTONICITY_TOLERANCE = 1e-12
SERIES_THRESHOLD = 1e-4
DEFAULT_EXTRA_ITERATIONS = 100


def shift_periodic(values: np.ndarray, shift: float, axis: int) -> np.ndarray:
    """values(x - shift * dx) on the periodic grid, by linear interpolation between cells"""
    n = int(np.floor(shift))
    frac = shift - n
    if frac < SHIFT_SNAP:
        frac = 0.0
    elif 1.0 - frac < SHIFT_SNAP:
        n, frac = n + 1, 0.0
    g = np.roll(values, n, axis=axis)
    if frac == 0.0:
        return g
    return g + frac * (np.roll(g, 1, axis=axis) - g)


def advect(values: np.ndarray, grid: PhaseGrid, dt: float) -> np.ndarray:
    """Semi-Lagrangian transport x -> x - v dt, one spatial axis at a time"""
    full = np.array(values, dtype=float).reshape(grid.full_shape)
    for axis in range(grid.d):
        for m, speed in enumerate(grid.v_axis()):
            index = [slice(None)] * full.ndim
            index[grid.d + axis] = m
            index = tuple(index)
            full[index] = shift_periodic(full[index], speed * dt / grid.dx, axis)
    return full.reshape(grid.shape)


def phi1(rate: float, dt: float) -> float:
    """(1 - exp(-rate dt)) / rate, equal to dt at rate 0"""
    if rate == 0.0:
        return dt
    return float(-np.expm1(-rate * dt) / rate)


def trapezoid_weights(rate: float, dt: float) -> Tuple[float, float]:
    """
    Weights (a, b) with int_0^dt exp(-rate (dt - s)) q(s) ds ~ a q(0) + b q(dt) for q linear in s

    a + b = phi1(rate, dt) and both are nonnegative.
    """
    x = rate * dt
    if x < SERIES_THRESHOLD:
        a = dt * (0.5 - x / 3.0 + x * x / 8.0)
    else:
        a = float(-np.expm1(-x) - x * np.exp(-x)) / (rate * x)
    return a, phi1(rate, dt) - a


def truncate_kernel(kernel: CollisionKernel, m: float) -> CollisionKernel:
    """B^m = min(B, m); an existing cap is kept if it is lower"""
    if not m > 0:
        raise KernelError(f"Truncation level must be positive, got {m!r}")
    cap = m if kernel.cap is None else min(kernel.cap, m)
    return kernel.model_copy(update={"cap": cap})


class ExistenceResult(NamedTuple):
    limit: Trajectory
    report: ExistenceReport
    iterates: List[np.ndarray]


class Solver:
    """
    Splitting integrator for d_t f + v . grad_x f = alpha Q(f)

    alpha is `flux_scale`; the recorded flux is alpha times the collision flux of the
    density the collision sub-step acts on, so (f, U) solves the rate equation exactly
    for the Lie steppers and to third order per step for Heun.
    """

    def __init__(
        self,
        operator: CollisionOperator,
        config: SolverConfig,
        structure: Optional[DissipationStructure] = None,
        output: Optional[OutputSettings] = None,
        out_dir: Optional[Path] = None,
    ):
        self.operator = operator
        self.grid = operator.grid
        self.config = config
        self.structure = structure or DissipationStructure()
        self.output = output or OutputSettings()
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.alpha = config.flux_scale

    def _rhs(self, values: np.ndarray) -> np.ndarray:
        return self.alpha * self.operator.apply_Q(values)

    def _guard(self, values: np.ndarray, dt: float) -> None:
        if not self.config.positivity_guard:
            return
        rate = self.alpha * float(np.max(self.operator.loss_rate(values)))
        if dt * rate > 1.0:
            raise SolverError(
                f"dt={dt!r} violates the positivity guard dt * max loss rate <= 1; admissible dt <= {1.0 / rate!r}"
            )

    def transport_step(self, f: Density, dt: float) -> Density:
        return Density(advect(f.values, self.grid, dt), self.grid, f.time + dt)

    def _collide(self, f: Density, dt: float, scheme: CollisionScheme) -> Tuple[np.ndarray, ProductFlux]:
        values = f.values
        if scheme == CollisionScheme.EULER:
            self._guard(values, dt)
            return values + dt * self._rhs(values), ProductFlux(f, self.alpha)

        if scheme == CollisionScheme.HEUN:
            self._guard(values, dt)
            first = values + dt * self._rhs(values)
            self._guard(first, dt)
            second = first + dt * self._rhs(first)
            new = 0.5 * (values + second)
            return new, ProductFlux(0.5 * (values + new), self.alpha)

        c0 = 2.0 * self.alpha * self.operator.kernel_bound() * f.mass
        effective = phi1(c0, dt)
        damped = np.exp(-c0 * dt) * values
        new = damped + effective * (self._rhs(values) + c0 * values)
        return new, ProductFlux(f, self.alpha * effective / dt)

    def _scheme(self) -> CollisionScheme:
        if self.config.stepper == Stepper.EULER:
            return CollisionScheme.EULER
        if self.config.stepper == Stepper.DUHAMEL:
            return CollisionScheme.DUHAMEL
        return self.config.collision_scheme

    def collision_step(self, f: Density, dt: float) -> Density:
        new, _ = self._collide(f, dt, self._scheme())
        return Density(new, self.grid, f.time + dt)

    def strang_step(self, f: Density, dt: float) -> Density:
        return self.advance(f, dt, Stepper.STRANG)[0]

    def advance(self, f: Density, dt: float, stepper: Optional[Stepper] = None) -> Tuple[Density, ProductFlux]:
        """One full step and the collision flux it applied"""
        stepper = stepper or self.config.stepper
        if stepper == Stepper.STRANG:
            half = Density(advect(f.values, self.grid, 0.5 * dt), self.grid, f.time)
            collided, flux = self._collide(half, dt, self.config.collision_scheme)
            values = advect(collided, self.grid, 0.5 * dt)
        else:
            scheme = CollisionScheme.EULER if stepper == Stepper.EULER else CollisionScheme.DUHAMEL
            collided, flux = self._collide(f, dt, scheme)
            values = advect(collided, self.grid, dt)
        if not np.all(np.isfinite(values)):
            raise SolverError("Non-finite values after the step")
        return Density(values, self.grid, f.time + dt), flux

    def _checkpoint(self, f: Density, step: int) -> None:
        every = self.output.checkpoint_every
        if not every or self.out_dir is None or step % every:
            return
        suffix = "csv" if self.output.snapshot_format == SnapshotFormat.CSV else "bin"
        path = self.out_dir / "checkpoints" / f"step_{step:06d}.{suffix}"
        write_snapshot(path, f, self.output.snapshot_format)
        logger.debug(f"Checkpoint written: {path}")

    def _equilibrium(self, f0: Density) -> Optional[Density]:
        try:
            return matched_maxwellian(f0)
        except StateError as e:
            logger.warning(f"No matched equilibrium for the relative entropy column: {e}")
            return None

    def run(self, f0: Density, writer: Optional[DiagnosticsWriter] = None, keep_history: bool = True) -> Trajectory:
        """
        Integrate from f0 up to t_end

        Args:
            f0: initial density
            writer: diagnostics stream, one record per stored time
            keep_history: keep every density; otherwise only the endpoints

        Returns:
            Trajectory with the recorded fluxes when `record_flux` is set
        """
        config = self.config
        dt = config.dt
        n_steps = config.n_steps
        reference = self._equilibrium(f0) if writer is not None else None
        record_flux = config.record_flux and keep_history
        diagnose = dict(structure=self.structure, reference=reference, degeneracy=config.diagnose_degeneracy)
        if writer is not None:
            writer.write(build_record(self.operator, f0, 0, **diagnose))

        logger.info(
            f"Run: stepper={config.stepper.value}, scheme={config.collision_scheme.value}, "
            f"dt={dt}, steps={n_steps}, flux_scale={self.alpha}"
        )
        densities = [f0]
        fluxes = []
        f = f0
        for step in range(1, n_steps + 1):
            try:
                f, flux = self.advance(f, dt)
            except SolverError as e:
                raise SolverError(f"step {step}: {e}", step) from e
            except StateError as e:
                raise SolverError(f"step {step}: {e}", step) from e
            f = f.at(f0.time + step * dt)
            if keep_history:
                densities.append(f)
            if record_flux:
                fluxes.append(flux)
            if writer is not None:
                if config.diagnose_flux_rate:
                    density = flux.density if flux.density is not None else Density(flux.values, self.grid, f.time - 0.5 * dt)
                    record = build_record(self.operator, f, step, flux=flux, flux_density=density, **diagnose)
                else:
                    record = build_record(self.operator, f, step, **diagnose)
                writer.write(record)
            self._checkpoint(f, step)
            logger.debug(f"step {step}/{n_steps}: t={f.time:.6g}")
        if not keep_history:
            densities.append(f)
        logger.info(f"Run finished at t={f.time:.6g}, mass drift {abs(f.mass - f0.mass):.3e}")
        return Trajectory(densities, fluxes or None)

    def existence_iteration(
        self,
        f0: Density,
        n_max: Optional[int] = None,
        tol: float = 1e-13,
        keep_iterates: bool = False,
        trapezoid: bool = True,
    ) -> ExistenceResult:
        """
        Monotone iteration F^{m+1} built from F^m along characteristics, starting at F^1 = 0

        F^{m+1}_0 = f0 and, with S_dt the transport over one step,
        F^{m+1}_{n+1} = S_dt[e^{-c0 dt} F^{m+1}_n + a Qbar(F^m_n)] + b Qbar(F^m_{n+1})
        where Qbar(g) = alpha Q(g) + c mass(g) g, c = 2 alpha C_B and c0 = c mass(f0).
        (a, b) are the trapezoid weights of the Duhamel integral, or (phi1(c0, dt), 0) for the
        left-point rule whose limit is the Duhamel Lie splitting. Both pairs are nonnegative, so
        each iterate must be nonnegative, must not lose ground on its predecessor, and must not
        exceed the initial mass.
        """
        kernel = self.operator.kernel
        if kernel is not None and kernel.mu > 0 and kernel.cap is None:
            raise SolverError("existence iteration needs mu <= 0 or a truncation level")
        grid = self.grid
        cv = grid.cell_volume
        dt = self.config.dt
        n_steps = self.config.n_steps
        if n_max is None:
            n_max = n_steps + 5 if not trapezoid else n_steps + DEFAULT_EXTRA_ITERATIONS
        c = 2.0 * self.alpha * self.operator.kernel_bound()
        mass0 = f0.mass
        c0 = c * mass0
        damping = float(np.exp(-c0 * dt))
        left, right = trapezoid_weights(c0, dt) if trapezoid else (phi1(c0, dt), 0.0)

        def qbar(g: np.ndarray) -> np.ndarray:
            return self._rhs(g) + c * grid.integrate(g) * g

        previous = np.zeros((n_steps + 1,) + grid.shape)
        increments: List[float] = []
        iterates: List[np.ndarray] = []
        max_mass = 0.0
        min_value = 0.0
        converged = False
        iteration = 0
        for iteration in range(1, n_max + 1):
            gains = np.array([qbar(g) for g in previous])
            current = np.empty_like(previous)
            current[0] = f0.values
            for n in range(n_steps):
                current[n + 1] = advect(damping * current[n] + left * gains[n], grid, dt)
                if right:
                    current[n + 1] += right * gains[n + 1]

            min_value = float(current.min())
            masses = current.sum(axis=(1, 2)) * cv
            max_mass = max(max_mass, float(masses.max()))
            if min_value < -MONOTONICITY_TOLERANCE:
                raise SolverError(f"iterate {iteration} is negative (min {min_value:.3e})", iteration)
            if np.any(current < previous - MONOTONICITY_TOLERANCE):
                drop = float(np.max(previous - current))
                raise SolverError(
                    f"iterate {iteration} decreased by {drop:.3e}; c must be at least 2 C_B", iteration
                )
            if masses.max() > mass0 + MONOTONICITY_TOLERANCE:
                raise SolverError(f"iterate {iteration} has mass {masses.max()!r} above {mass0!r}", iteration)

            increment = float(np.max(np.sum(np.abs(current - previous), axis=(1, 2)) * cv))
            increments.append(increment)
            if keep_iterates:
                iterates.append(current)
            previous = current
            logger.debug(f"existence iteration {iteration}: L1 increment {increment:.3e}")
            if increment < tol:
                converged = True
                break

        logger.info(f"Existence iteration: {iteration} iterates, converged={converged}")
        times = f0.time + dt * np.arange(n_steps + 1)
        limit = Trajectory([Density(previous[n], grid, float(times[n])) for n in range(n_steps + 1)])
        report = ExistenceReport(
            iterations=iteration,
            converged=converged,
            increments=increments,
            max_mass=max_mass,
            min_value=min_value,
        )
        return ExistenceResult(limit, report, iterates)


def l1_divergence_rate(solver: Solver, f0: Density, g0: Density) -> ContractionReport:
    """
    Growth rate of the L1 distance between two solutions, next to the bound 2 C_B ||f0||
    """
    first = solver.run(f0)
    second = solver.run(g0)
    cv = solver.grid.cell_volume
    distances = np.array(
        [np.sum(np.abs(a.values - b.values)) * cv for a, b in zip(first.densities, second.densities)]
    )
    times = first.times
    if distances[0] > 0 and distances[-1] > 0:
        rate = float(np.log(distances[-1] / distances[0]) / (times[-1] - times[0]))
    else:
        rate = 0.0
    bound = 2.0 * solver.alpha * solver.operator.kernel_bound() * f0.mass
    logger.info(f"L1 distance growth rate {rate:.3e} (bound {bound:.3e})")
    return ContractionReport(
        times=[float(t) for t in times], distances=[float(x) for x in distances], rate=rate, bound=bound
    )
