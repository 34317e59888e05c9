from pathlib import Path
from typing import List
import numpy as np
import logging

from app.config import RunConfig
from app.models import CriterionResult, ExitCode, ScenarioReport
from app.scenarios.common import at_least, at_most, scenario, write_json
from app.services.collision import CollisionOperator, ProductFlux
from app.services.dissipation import DissipationStructure, compatibility_defect, entropy_dissipation_D
from app.services.generic import GenericOperators, apply_poisson
from app.services.kernels import CollisionKernel, SampleBox, SpatialKernel, check_mollifier_domination
from app.services.state import Density, PhaseGrid

logger = logging.getLogger(__name__)

PRODUCT_GRID = np.logspace(-2, 1, 50)
# resolved on the refined velocity grids, negligible at the box edge
REFINEMENT_TEMPERATURE = 0.5
REFINEMENT_AMPLITUDE = 0.1
REFINEMENT_DV = 0.25
# log(1 + 0.1 sin) is resolved to round-off by 16 spectral modes
REFINEMENT_NX = 16


def _relative(a: float, b: float) -> float:
    scale = max(abs(a), abs(b))
    return abs(a - b) / scale if scale > 0 else 0.0


def random_density(grid: PhaseGrid, rng: np.random.Generator) -> Density:
    """Positive density varying in both x and v"""
    return Density.normalized(rng.uniform(0.5, 1.5, grid.shape), grid)


def local_maxwellian(grid: PhaseGrid, temperature: float, amplitude: float = 0.5) -> Density:
    """rho(x) M(v) with rho = 1 + a sin(2 pi x_1 / L)"""
    rho = 1.0 + amplitude * np.sin(2 * np.pi * grid.x_nodes()[:, 0] / grid.torus_side)
    m = np.exp(-grid.v_squared() / (2.0 * temperature))
    return Density.normalized(rho[:, None] * m[None, :], grid)


def structure_config(config: RunConfig) -> RunConfig:
    """The run configuration on the (smaller) structure-check grid"""
    limits = config.criteria
    update = {}
    if limits.structure_nx is not None:
        update["nx"] = limits.structure_nx
    if limits.structure_nv is not None:
        update["nv"] = limits.structure_nv
    if config.grid.model_copy(update=update) == config.grid:
        return config
    if config.geometry.dvm_table is not None:
        logger.info("A DVM table file is configured; the structure check keeps the run grid")
        return config
    logger.info(f"Structure check on nx={update.get('nx', config.grid.nx)}, nv={update.get('nv', config.grid.nv)}")
    return config.model_copy(update={"grid": config.grid.model_copy(update=update)})


def pointwise_criteria(config: RunConfig) -> List[CriterionResult]:
    """Closed-form cosh G_Psi* and the compatibility identity on a 50 x 50 product grid"""
    tol = config.criteria.identity_tolerance
    s, t = np.meshgrid(PRODUCT_GRID, PRODUCT_GRID, indexing="ij")
    cosh = DissipationStructure.cosh()
    direct = 0.25 * cosh.psi_star(np.log(t) - np.log(s)) * cosh.theta_value(s, t)
    closed = cosh.g_psi_star(s, t)
    criteria = [
        at_most(
            "cosh_g_psi_star",
            float(np.max(np.abs(closed - direct) / np.maximum(1.0, np.abs(direct)))),
            tol,
            ExitCode.STRUCTURE_IDENTITY,
        )
    ]
    for structure in (DissipationStructure.quadratic(), cosh):
        defect = compatibility_defect(structure, s, t) / np.maximum(1.0, np.abs(s - t))
        criteria.append(
            at_most(f"compatibility_{structure.name}", float(np.max(np.abs(defect))), tol, ExitCode.STRUCTURE_IDENTITY)
        )
    return criteria


def dissipation_criteria(operator: CollisionOperator, densities: List[Density], config: RunConfig) -> List[CriterionResult]:
    """D_Psi* = D / 2 for the quadratic pair, summed tuple by tuple"""
    quadratic = DissipationStructure.quadratic()
    worst = 0.0
    for f in densities:
        direct = operator.tuple_sum(lambda s, t: quadratic.g_psi_star(s, t), f).value
        worst = max(worst, _relative(direct, 0.5 * entropy_dissipation_D(operator, f)))
    return [at_most("d_psi_star_half_d", worst, config.criteria.identity_tolerance, ExitCode.STRUCTURE_IDENTITY)]


def generic_criteria(operator: CollisionOperator, densities: List[Density], config: RunConfig, rng) -> List[CriterionResult]:
    limits = config.criteria
    grid = operator.grid
    norm_m_de = 0.0
    production = 0.0
    sym_defect = 0.0
    psd_value = np.inf
    for f in densities:
        generic = GenericOperators(operator, f)
        report = generic.degeneracy_report()
        norm_m_de = max(norm_m_de, report.norm_m_de)
        ds = generic.d_entropy()
        production = max(production, _relative(generic.inner(ds, generic.apply_M(ds)), entropy_dissipation_D(operator, f)))
        g1, g2 = rng.normal(size=grid.shape), rng.normal(size=grid.shape)
        checks = generic.bilinear_form_checks(g1, g2)
        sym_defect = max(sym_defect, checks.sym_defect)
        psd_value = min(psd_value, checks.psd_value)

    antisym = 0.0
    for _ in range(limits.n_random):
        f = random_density(grid, rng)
        g1, g2 = rng.normal(size=grid.shape), rng.normal(size=grid.shape)
        generic = GenericOperators(operator, f)
        antisym = max(antisym, abs(generic.inner(g1, generic.apply_L(g2)) + generic.inner(g2, generic.apply_L(g1))))

    return [
        at_most("norm_m_de", norm_m_de, limits.degeneracy_tolerance, ExitCode.DEGENERACY),
        at_most("ds_m_ds_equals_d", production, limits.dissipation_relative, ExitCode.DEGENERACY),
        at_most("m_symmetry", sym_defect, limits.identity_tolerance, ExitCode.ADJOINTNESS),
        at_least("m_psd", psd_value, -limits.psd_tolerance, ExitCode.ADJOINTNESS),
        at_most("l_antisymmetry", antisym, limits.antisym_tolerance, ExitCode.ADJOINTNESS),
    ]


def refinement_grids(grid: PhaseGrid) -> List[PhaseGrid]:
    """
    Coarse and twice refined velocity grids for the L dS study: d = 2, 16 spatial cells and a
    coarse velocity step of at most 0.25 on the configured box

    rho(x_1) M(v) only couples x_1 with v_1, the other axes carry M as a factor.
    """
    nv = grid.nv
    while 2 * grid.vmax / nv > REFINEMENT_DV:
        nv *= 2
    coarse = PhaseGrid(d=2, torus_side=grid.torus_side, nx=REFINEMENT_NX, vmax=grid.vmax, nv=nv)
    return [coarse, coarse.model_copy(update={"nv": 2 * nv})]


def poisson_refinement_ratio(grid: PhaseGrid, temperature: float = REFINEMENT_TEMPERATURE) -> float:
    """||L dS|| for rho(x) M(v) on the coarse study grid over the same under 2x velocity refinement"""
    norms = []
    for study in refinement_grids(grid):
        f = local_maxwellian(study, temperature, REFINEMENT_AMPLITUDE)
        ds = -(np.log(f.values) + 1.0)
        norms.append(float(np.max(np.abs(apply_poisson(study, f.values, ds)))))
    logger.info(f"||L dS||: {norms[0]:.3e} -> {norms[1]:.3e} under refinement")
    return norms[0] / norms[1] if norms[1] > 0 else np.inf


def refinement_criteria(config: RunConfig) -> List[CriterionResult]:
    ratio = poisson_refinement_ratio(PhaseGrid(**config.grid.model_dump()))
    return [at_least("l_ds_refinement_ratio", ratio, config.criteria.refinement_ratio, ExitCode.DEGENERACY)]


def adjointness_criteria(config: RunConfig, rng) -> List[CriterionResult]:
    """sum phi div(U) cellvol = -1/4 sum (nabla-bar phi) U w for random phi and U"""
    criteria = []
    for backend in config.criteria.adjointness_backends:
        backend_config = config.model_copy(update={"solver": config.solver.model_copy(update={"backend": backend})})
        operator = CollisionOperator.from_config(backend_config)
        grid = operator.grid
        worst = 0.0
        for _ in range(10 * config.criteria.n_random):
            phi = rng.normal(size=grid.shape)
            flux = ProductFlux(rng.uniform(0.0, 1.0, grid.shape), scale=rng.normal())
            lhs = float(np.sum(phi * operator.divergence_bar(flux)) * grid.cell_volume)
            rhs = -0.25 * operator.pair(phi, flux)
            worst = max(worst, _relative(lhs, rhs))
        criteria.append(at_most(f"adjointness_{backend.value}", worst, config.criteria.identity_tolerance, ExitCode.ADJOINTNESS))
    return criteria


def domination_criteria(config: RunConfig) -> List[CriterionResult]:
    kernel = CollisionKernel(mu=config.kernels.mu, b0=config.kernels.b0)
    spatial = SpatialKernel(gamma=config.kernels.gamma, c=config.kernels.c)
    box = SampleBox(half_width=config.grid.vmax, dimension=config.grid.d)
    criteria = []
    for beta in config.criteria.domination_betas:
        report = check_mollifier_domination(kernel, beta, box, spatial, constant=config.criteria.domination_constant)
        criteria.append(
            CriterionResult(
                name=f"mollifier_domination_beta_{beta:g}",
                passed=report.passed,
                value=max(report.max_ratio, report.refined_max_ratio),
                threshold=report.constant,
                exit_code=ExitCode.STRUCTURE_IDENTITY,
            )
        )
    return criteria


@scenario("structure_check")
def run_structure_check(config: RunConfig, out_dir: Path) -> ScenarioReport:
    """Dissipation identities, GENERIC degeneracies, adjointness and kernel domination"""
    rng = np.random.default_rng(config.seed)
    check_config = structure_config(config)
    operator = CollisionOperator.from_config(check_config)
    densities = [random_density(operator.grid, rng) for _ in range(config.criteria.n_random)]

    criteria = pointwise_criteria(config)
    criteria += dissipation_criteria(operator, densities, config)
    criteria += generic_criteria(operator, densities, config, rng)
    criteria += refinement_criteria(config)
    criteria += adjointness_criteria(check_config, rng)
    criteria += domination_criteria(config)

    report = ScenarioReport(scenario="structure_check", criteria=criteria)
    write_json(report, out_dir / "structure_check.json")
    return report
