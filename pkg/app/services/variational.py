from typing import List, Optional, Sequence
from pathlib import Path
import numpy as np
import logging

from app.errors import AuditError
from app.models import AuditReport, Provenance, SnapshotFormat
from app.services.collision import CollisionFlux, CollisionOperator, ProductFlux, ZeroFlux
from app.services.dissipation import DissipationStructure, big_R, d_psi_star, entropy_dissipation_D
from app.services.generic import x_derivative
from app.services.state import Density, entropy, read_snapshot

logger = logging.getLogger(__name__)

NUMERICAL_FLOOR = 1e-10


class Trajectory:
    """
    Densities f_0..f_N at increasing times and one flux per interval

    The flux of interval n acts between f_n and f_{n+1}. A ProductFlux is evaluated at its own
    density; any other flux at the interval midpoint (f_n + f_{n+1}) / 2. Without fluxes the
    trajectory carries U = 0.
    """

    def __init__(
        self,
        densities: Sequence[Density],
        fluxes: Optional[Sequence[CollisionFlux]] = None,
        provenance: Provenance = Provenance.SOLVER,
    ):
        if len(densities) < 2:
            raise AuditError("A trajectory needs at least two densities")
        grid = densities[0].grid
        if any(f.grid != grid for f in densities):
            raise AuditError("Trajectory densities live on different grids")
        times = np.array([f.time for f in densities])
        if np.any(np.diff(times) <= 0):
            raise AuditError("Trajectory times must increase strictly")
        fluxes = list(fluxes) if fluxes else [ZeroFlux() for _ in range(len(densities) - 1)]
        if len(fluxes) != len(densities) - 1:
            raise AuditError(f"Trajectory has {len(densities)} densities but {len(fluxes)} fluxes")
        self.densities: List[Density] = list(densities)
        self.fluxes: List[CollisionFlux] = fluxes
        self.provenance = provenance
        self.grid = grid
        self.times = times

    def __len__(self) -> int:
        return len(self.densities)

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.times)

    def midpoint(self, n: int) -> Density:
        values = 0.5 * (self.densities[n].values + self.densities[n + 1].values)
        return Density(values, self.grid, 0.5 * (self.times[n] + self.times[n + 1]))

    def flux_density(self, n: int) -> Density:
        flux = self.fluxes[n]
        if isinstance(flux, ProductFlux):
            if flux.density is not None:
                return flux.density
            return Density(flux.values, self.grid, 0.5 * (self.times[n] + self.times[n + 1]))
        return self.midpoint(n)

    def with_fluxes(self, fluxes: Sequence[CollisionFlux]) -> "Trajectory":
        return Trajectory(self.densities, fluxes, self.provenance)

    def scaled(self, alpha: float) -> "Trajectory":
        return self.with_fluxes([flux.scaled(alpha) for flux in self.fluxes])

    @classmethod
    def stationary(cls, f: Density, times: Sequence[float]) -> "Trajectory":
        """f at every time with U = 0"""
        return cls([f.at(float(t)) for t in times], provenance=Provenance.EXTERNAL)

    @classmethod
    def load(
        cls, paths: Sequence[Path], fmt: Optional[SnapshotFormat] = None, fluxes: Optional[Sequence[CollisionFlux]] = None
    ) -> "Trajectory":
        """Externally produced trajectory from snapshot files, audited like a solver run"""
        densities = [read_snapshot(Path(p), fmt) for p in paths]
        return cls(densities, fluxes, Provenance.EXTERNAL)


def tcre_residual(
    traj: Trajectory, operator: CollisionOperator, test_functions: Optional[Sequence[np.ndarray]] = None
) -> float:
    """
    max over test functions and intervals of
    |int phi df - dt (int v . grad_x phi dmu_mid + 1/4 sum (nabla-bar phi) U w)|
    """
    grid = traj.grid
    if grid != operator.grid:
        raise AuditError("Trajectory and collision operator use different grids")
    if test_functions is None:
        test_functions = default_test_functions(operator)
    cv = grid.cell_volume
    v = grid.v_nodes()
    worst = 0.0
    for phi in test_functions:
        phi = np.asarray(phi, dtype=float).reshape(grid.shape)
        streaming = sum(v[None, :, a] * x_derivative(phi, grid, a) for a in range(grid.d))
        for n, dt in enumerate(traj.steps):
            change = np.sum(phi * (traj.densities[n + 1].values - traj.densities[n].values)) * cv
            transport = np.sum(streaming * traj.midpoint(n).values) * cv
            collision = 0.25 * operator.pair(phi, traj.fluxes[n])
            worst = max(worst, abs(change - dt * (transport + collision)))
    return float(worst)


def default_test_functions(operator: CollisionOperator) -> List[np.ndarray]:
    """1, v_1 and |v|^2 as grid functions"""
    grid = operator.grid
    shape = grid.shape
    return [
        np.ones(shape),
        np.broadcast_to(grid.v_nodes()[:, 0], shape).copy(),
        np.broadcast_to(grid.v_squared(), shape).copy(),
    ]


def entropy_rate(operator: CollisionOperator, f: Density, flux: CollisionFlux) -> float:
    """1/4 sum over tuples with theta(f) > 0 of (nabla-bar log f) U w"""
    if np.all(f.values > 0):
        return 0.25 * operator.pair(f.values, flux, transform=np.log)

    def integrand(s, t, u):
        out = np.zeros(s.shape)
        pos = (s > 0) & (t > 0)
        out[pos] = (np.log(t[pos]) - np.log(s[pos])) * u[pos]
        out[~pos & (u != 0)] = np.nan
        return out

    total = operator.tuple_sum(integrand, f, flux)
    if total.n_skipped:
        logger.warning(f"Flux charges {total.n_skipped} tuples with theta(f) = 0")
    return 0.25 * total.value


def chain_rule_residuals(traj: Trajectory, operator: CollisionOperator) -> np.ndarray:
    """Signed dH_n - dt * 1/4 sum_{theta > 0} (nabla-bar log f) U w per interval, f at the flux density"""
    entropies = np.array([entropy(f) for f in traj.densities])
    rates = np.array(
        [entropy_rate(operator, traj.flux_density(n), traj.fluxes[n]) for n in range(len(traj.steps))]
    )
    return np.diff(entropies) - traj.steps * rates


def chain_rule_defect(traj: Trajectory, operator: CollisionOperator) -> float:
    """max over intervals of |dH - dt * 1/4 sum_{theta > 0} (nabla-bar log f) U w|"""
    residuals = chain_rule_residuals(traj, operator)
    return float(np.max(np.abs(residuals))) if residuals.size else 0.0


def entropy_identity_defect(traj: Trajectory, operator: CollisionOperator) -> float:
    """max over stored times of |H(f_n) - H(f_0) + trapezoid integral of D up to t_n|"""
    entropies = np.array([entropy(f) for f in traj.densities])
    dissipation = np.array([entropy_dissipation_D(operator, f) for f in traj.densities])
    cumulative = np.concatenate([[0.0], np.cumsum(0.5 * (dissipation[1:] + dissipation[:-1]) * traj.steps)])
    return float(np.max(np.abs(entropies - entropies[0] + cumulative)))


def l_functional(
    traj: Trajectory, operator: CollisionOperator, structure: DissipationStructure
) -> AuditReport:
    """
    L_T = H(f_T) - H(f_0) + int D_Psi*(f_t) dt + int R(f_t, U_t) dt

    Both integrands are evaluated at the flux density of each interval, so per interval
    D_Psi* + R >= -(entropy rate) holds exactly and L_T is bounded below by the summed
    chain-rule residuals. The reported tolerance is the sum of their absolute values plus 1e-10.
    """
    if traj.grid != operator.grid:
        raise AuditError("Trajectory and collision operator use different grids")
    delta_entropy = entropy(traj.densities[-1]) - entropy(traj.densities[0])

    rate_integral = 0.0
    dissipation_integral = 0.0
    infinite_at: Optional[int] = None
    for n, dt in enumerate(traj.steps):
        g = traj.flux_density(n)
        rate = big_R(operator, g, traj.fluxes[n], structure)
        if not np.isfinite(rate) and infinite_at is None:
            infinite_at = n
            logger.warning(f"R(f, U) = +inf on interval {n} (t = {traj.times[n]:.6g})")
        rate_integral += dt * rate
        dissipation_integral += dt * d_psi_star(operator, g, structure)

    residuals = chain_rule_residuals(traj, operator)
    tolerance = float(np.sum(np.abs(residuals))) + NUMERICAL_FLOOR
    l_value = delta_entropy + dissipation_integral + rate_integral
    report = AuditReport(
        structure=structure.name,
        tcre_residual_max=tcre_residual(traj, operator),
        chain_rule_defect=float(np.max(np.abs(residuals))) if residuals.size else 0.0,
        l_value=float(l_value),
        entropy_identity_defect=(
            entropy_identity_defect(traj, operator) if traj.provenance == Provenance.SOLVER else None
        ),
        delta_entropy=float(delta_entropy),
        dissipation_integral=float(dissipation_integral),
        rate_integral=float(rate_integral),
        tolerance=float(tolerance),
        infinite_at=infinite_at,
    )
    if np.isfinite(l_value) and l_value < -tolerance:
        logger.warning(f"L_T = {l_value:.3e} is below its tolerance {-tolerance:.3e}")
    logger.info(f"L_T[{structure.name}] = {l_value:.6e} (tolerance {tolerance:.3e})")
    return report
