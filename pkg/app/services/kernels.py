from pydantic import BaseModel, ConfigDict, Field
from typing import Callable, Optional, Tuple, Dict
from numpy.polynomial.hermite_e import hermegauss
import numpy as np
import logging

from app.errors import KernelError
from app.models import DominationReport

logger = logging.getLogger(__name__)

UNIT_TOLERANCE = 1e-12


def bracket(z) -> np.ndarray:
    """Japanese bracket <z> = sqrt(1 + |z|^2) over the last axis"""
    arr = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise KernelError(f"bracket received non-finite input: {z!r}")
    if arr.ndim == 0:
        arr = arr[None]
    out = np.sqrt(1.0 + np.sum(arr * arr, axis=-1))
    return float(out) if np.ndim(out) == 0 else out


def check_unit(omega: np.ndarray) -> np.ndarray:
    omega = np.asarray(omega, dtype=float)
    norms = np.linalg.norm(omega, axis=-1)
    if not np.all(np.abs(norms - 1.0) <= UNIT_TOLERANCE):
        raise KernelError(f"omega must be a unit vector, got norm(s) {norms}")
    return omega


class CollisionKernel(BaseModel):
    """
    B(v - v_*, omega) = b0 * <v - v_*>^mu * profile(|cos angle|), optionally capped at `cap`

    The kernel depends on v - v_* only through |v - v_*| and the unsigned cosine with
    omega, so it is invariant under v_rel -> -v_rel and under the collision reflection.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    mu: float = Field(0.0, le=1.0)
    b0: float = Field(1.0, gt=0)
    angular_profile: Optional[Callable[[np.ndarray], np.ndarray]] = None
    profile_bounds: Tuple[float, float] = (1.0, 1.0)
    cap: Optional[float] = Field(None, gt=0)

    def profile(self, cos_abs: np.ndarray) -> np.ndarray:
        if self.angular_profile is None:
            return np.ones_like(cos_abs, dtype=float)
        return np.asarray(self.angular_profile(cos_abs), dtype=float)

    def from_invariants(self, rel_sq: np.ndarray, cos_abs: np.ndarray) -> np.ndarray:
        """Evaluate from |v_rel|^2 and |<v_rel/|v_rel|, omega>|"""
        rel_sq = np.asarray(rel_sq, dtype=float)
        values = self.b0 * (1.0 + rel_sq) ** (0.5 * self.mu) * self.profile(np.asarray(cos_abs, dtype=float))
        if self.cap is not None:
            values = np.minimum(values, self.cap)
        return values

    def value(self, v_rel, omega) -> np.ndarray:
        v_rel = np.asarray(v_rel, dtype=float)
        omega = check_unit(omega)
        if not np.all(np.isfinite(v_rel)):
            raise KernelError("v_rel must be finite")
        rel_sq = np.sum(v_rel * v_rel, axis=-1)
        speed = np.sqrt(rel_sq)
        dot = np.abs(np.sum(v_rel * omega, axis=-1))
        cos_abs = np.divide(dot, speed, out=np.zeros_like(dot), where=speed > 0)
        return self.from_invariants(rel_sq, cos_abs)

    def sup_on_box(self, vrel_max: float) -> float:
        """Supremum of B over relative speeds up to vrel_max"""
        top = self.b0 * max(1.0, (1.0 + vrel_max**2) ** (0.5 * self.mu)) * self.profile_bounds[1]
        return min(top, self.cap) if self.cap is not None else top

    def bound_constant(self, vrel_max: Optional[float] = None) -> float:
        """
        C_B with C_B^-1 <v>^mu <= B <= C_B <v>^mu

        Without a cap the bound holds on all of R^d. With a cap and mu > 0 it only holds on
        a bounded set of relative speeds, which must then be given.
        """
        lo, hi = self.profile_bounds
        constant = max(self.b0 * hi, 1.0 / (self.b0 * lo))
        if self.cap is None:
            return constant
        if self.mu > 0:
            if vrel_max is None:
                raise KernelError("a capped kernel with mu > 0 needs a bounded velocity set")
            constant = max(constant, bracket(vrel_max) ** self.mu / self.cap)
        else:
            constant = max(constant, 1.0 / self.cap)
        return constant


def eval_B(kernel: CollisionKernel, v_rel, omega) -> np.ndarray:
    return kernel.value(v_rel, omega)


class SpatialKernel(BaseModel):
    """k(z) = c * exp(-gamma <z>), folded onto the torus by image sums"""

    model_config = ConfigDict(frozen=True)

    gamma: float = Field(1.0, gt=0)
    c: float = Field(1.0, gt=0)
    periodization_images: int = Field(1, ge=0)

    def value(self, z) -> np.ndarray:
        return self.c * np.exp(-self.gamma * bracket(z))

    def folded(self, x_rel, torus_side: float) -> np.ndarray:
        x_rel = np.asarray(x_rel, dtype=float)
        if x_rel.ndim == 0:
            x_rel = x_rel[None]
        if torus_side <= 0:
            raise KernelError(f"torus_side must be positive, got {torus_side}")
        # np.round is odd-symmetric and images are added in (m, -m) pairs: folded(-x) == folded(x) bitwise
        reduced = x_rel - torus_side * np.round(x_rel / torus_side)
        d = reduced.shape[-1]
        n = self.periodization_images
        offsets = np.stack(
            np.meshgrid(*[np.arange(-n, n + 1)] * d, indexing="ij"), axis=-1
        ).reshape(-1, d)
        leading = offsets[np.arange(len(offsets)), np.argmax(offsets != 0, axis=1)]
        half = torus_side * offsets[leading > 0]
        pairs = self.value(reduced[..., None, :] + half) + self.value(reduced[..., None, :] - half)
        total = self.value(reduced) + np.sum(pairs, axis=-1)
        return float(total) if np.ndim(total) == 0 else total


def eval_k_torus(kernel: SpatialKernel, x_rel, torus_side: float) -> np.ndarray:
    return kernel.folded(x_rel, torus_side)


class Mollifier(BaseModel):
    model_config = ConfigDict(frozen=True)

    variance: float = Field(..., gt=0)
    dimension: int = Field(2, ge=1)

    def density(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        beta = self.variance
        return (2 * np.pi * beta) ** (-0.5 * self.dimension) * np.exp(-np.sum(z * z, axis=-1) / (2 * beta))

    def mass_in_box(self, half_width: float, points_per_axis: int = 200) -> float:
        """Midpoint-rule mass of M_beta on [-half_width, half_width]^d"""
        h = 2 * half_width / points_per_axis
        axis = -half_width + h * (np.arange(points_per_axis) + 0.5)
        one_d = np.sum((2 * np.pi * self.variance) ** -0.5 * np.exp(-axis**2 / (2 * self.variance))) * h
        return float(one_d**self.dimension)

    def nodes(self, per_axis: int) -> Tuple[np.ndarray, np.ndarray]:
        """Tensor Gauss-Hermite nodes/weights for expectations against M_beta"""
        x, w = hermegauss(per_axis)
        w = w / np.sqrt(2 * np.pi)
        grids = np.meshgrid(*[x] * self.dimension, indexing="ij")
        weights = np.ones_like(grids[0])
        for g in np.meshgrid(*[w] * self.dimension, indexing="ij"):
            weights = weights * g
        points = np.stack([g.ravel() for g in grids], axis=-1) * np.sqrt(self.variance)
        return points, weights.ravel()

    def convolve(self, func: Callable[[np.ndarray], np.ndarray], points: np.ndarray, per_axis: int) -> np.ndarray:
        nodes, weights = self.nodes(per_axis)
        values = func(points[:, None, :] + nodes[None, :, :])
        return values @ weights


class SampleBox(BaseModel):
    model_config = ConfigDict(frozen=True)

    half_width: float = Field(5.0, gt=0)
    points_per_axis: int = Field(21, ge=1)
    dimension: int = Field(2, ge=1)

    def points(self) -> np.ndarray:
        axis = np.linspace(-self.half_width, self.half_width, self.points_per_axis)
        grids = np.meshgrid(*[axis] * self.dimension, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)


def check_mollifier_domination(
    kernel: CollisionKernel,
    beta: float,
    sample_grid: SampleBox,
    spatial: Optional[SpatialKernel] = None,
    constant: float = 10.0,
    nodes_per_axis: int = 16,
    omega: Optional[np.ndarray] = None,
) -> DominationReport:
    """
    Sampled check of B*M_beta <= C B and B^-1*M_beta <= C B^-1 (and the same for k)

    Ratios are computed at every sample with tensor Gauss-Hermite quadrature at
    `nodes_per_axis` and again at twice that; a relative disagreement above 5% flags the
    quadrature as too coarse.
    """
    if not 0 < beta < 1:
        raise KernelError(f"beta must lie in (0, 1), got {beta}")
    d = sample_grid.dimension
    if omega is None:
        omega = np.eye(d)[0]
    omega = check_unit(omega)
    spatial = spatial or SpatialKernel()
    mollifier = Mollifier(variance=beta, dimension=d)
    points = sample_grid.points()

    def b(v):
        return kernel.value(v, np.broadcast_to(omega, v.shape))

    functions: Dict[str, Callable[[np.ndarray], np.ndarray]] = {
        "B": b,
        "B_inverse": lambda v: 1.0 / b(v),
        "k": spatial.value,
        "k_inverse": lambda z: 1.0 / spatial.value(z),
    }

    def ratios(per_axis: int) -> Dict[str, np.ndarray]:
        return {
            name: mollifier.convolve(func, points, per_axis) / func(points)
            for name, func in functions.items()
        }

    coarse_ratios = ratios(nodes_per_axis)
    fine_ratios = ratios(2 * nodes_per_axis)
    disagreement = max(
        float(np.max(np.abs(fine_ratios[name] - coarse_ratios[name]) / np.abs(fine_ratios[name])))
        for name in functions
    )
    maxima = {name: float(np.max(values)) for name, values in coarse_ratios.items()}
    max_ratio = max(maxima.values())
    refined = max(float(np.max(values)) for values in fine_ratios.values())
    coarse = disagreement > 0.05
    if coarse:
        logger.warning(f"Mollifier quadrature too coarse: refinement disagreement {disagreement:.3g}")

    report = DominationReport(
        beta=beta,
        constant=constant,
        max_ratio=max_ratio,
        ratios=maxima,
        refined_max_ratio=refined,
        quadrature_nodes=nodes_per_axis,
        coarse=coarse,
        passed=(not coarse) and max(max_ratio, refined) <= constant,
    )
    logger.info(f"Mollifier domination beta={beta}: max ratio {max_ratio:.6g} (C={constant})")
    return report
