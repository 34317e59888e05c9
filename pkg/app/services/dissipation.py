from pydantic import BaseModel, ConfigDict, model_validator
from typing import Any, Dict, Tuple, TYPE_CHECKING
import numpy as np
import logging

from app.errors import DissipationError
from app.models import PsiPair, ThetaKind

if TYPE_CHECKING:
    from app.services.collision import CollisionFlux, CollisionOperator, TupleFunction
    from app.services.state import Density

logger = logging.getLogger(__name__)

SERIES_THRESHOLD = 1e-4

VALID_PAIRINGS: Dict[PsiPair, ThetaKind] = {
    PsiPair.QUADRATIC: ThetaKind.LOGARITHMIC_MEAN,
    PsiPair.COSH: ThetaKind.GEOMETRIC_MEAN,
}

GROWTH_CONSTANTS: Dict[PsiPair, Tuple[float, float]] = {
    PsiPair.QUADRATIC: (1.0, 1.0),
    PsiPair.COSH: (4.0, 0.5),
}


def _validated(*values) -> Tuple[np.ndarray, ...]:
    arrays = tuple(np.asarray(v, dtype=float) for v in values)
    for arr in arrays:
        if np.any(arr < 0) or np.any(np.isnan(arr)):
            raise DissipationError(f"Products must be nonnegative, got min {np.nanmin(arr)!r}")
    return arrays


def _result(out: np.ndarray, *inputs):
    if all(np.ndim(v) == 0 for v in inputs):
        return float(out)
    return out


def log_mean(s, t):
    """Logarithmic mean (s - t) / (log s - log t); s on the diagonal, 0 if either argument is 0"""
    s_arr, t_arr = _validated(s, t)
    s_b, t_b = np.broadcast_arrays(s_arr, t_arr)
    out = np.zeros(s_b.shape)
    pos = (s_b > 0) & (t_b > 0)
    sp, tp = s_b[pos], t_b[pos]
    u = np.log(sp) - np.log(tp)
    values = np.empty_like(sp)
    near = np.abs(u) < SERIES_THRESHOLD
    # sinh(x)/x with x = u/2, so that sqrt(st) * sinh(x)/x equals the mean
    x2 = (0.5 * u[near]) ** 2
    values[near] = np.sqrt(sp[near] * tp[near]) * (1.0 + x2 / 6.0 + x2**2 / 120.0 + x2**3 / 5040.0)
    values[~near] = (sp[~near] - tp[~near]) / u[~near]
    values[sp == tp] = sp[sp == tp]
    out[pos] = values
    return _result(out, s, t)


def geo_mean(s, t):
    s_arr, t_arr = _validated(s, t)
    return _result(np.sqrt(s_arr * t_arr), s, t)


class DissipationStructure(BaseModel):
    """
    A flux-density map theta together with a dissipation pair (Psi, Psi*)

    Only two pairings satisfy (Psi*)'(log s - log t) theta(s, t) = s - t:
    logarithmic mean with the quadratic pair, geometric mean with the cosh pair.
    Giving only `psi_pair` selects the matching theta.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    theta: ThetaKind = ThetaKind.LOGARITHMIC_MEAN
    psi_pair: PsiPair = PsiPair.QUADRATIC

    @model_validator(mode="before")
    @classmethod
    def _default_theta(cls, data: Any) -> Any:
        if isinstance(data, dict) and "theta" not in data and "psi_pair" in data:
            data = dict(data)
            data["theta"] = VALID_PAIRINGS[PsiPair(data["psi_pair"])]
        return data

    @model_validator(mode="after")
    def _check_pairing(self) -> "DissipationStructure":
        if VALID_PAIRINGS[self.psi_pair] != self.theta:
            raise ValueError(
                f"theta={self.theta.value} is not compatible with psi_pair={self.psi_pair.value}"
            )
        return self

    @classmethod
    def quadratic(cls) -> "DissipationStructure":
        return cls(psi_pair=PsiPair.QUADRATIC)

    @classmethod
    def cosh(cls) -> "DissipationStructure":
        return cls(psi_pair=PsiPair.COSH)

    @property
    def name(self) -> str:
        return self.psi_pair.value

    def theta_value(self, s, t):
        if self.theta == ThetaKind.LOGARITHMIC_MEAN:
            return log_mean(s, t)
        return geo_mean(s, t)

    def psi(self, r):
        r = np.asarray(r, dtype=float)
        if self.psi_pair == PsiPair.QUADRATIC:
            return 0.5 * r * r
        # Legendre conjugate of 4(cosh(xi/2) - 1); log((r + sqrt(r^2+4))/2) = asinh(r/2)
        return 2.0 * r * np.arcsinh(0.5 * r) - 2.0 * np.sqrt(r * r + 4.0) + 4.0

    def psi_star(self, r):
        r = np.asarray(r, dtype=float)
        if self.psi_pair == PsiPair.QUADRATIC:
            return 0.5 * r * r
        return 4.0 * (np.cosh(0.5 * r) - 1.0)

    def psi_star_prime(self, r):
        r = np.asarray(r, dtype=float)
        if self.psi_pair == PsiPair.QUADRATIC:
            return r
        return 2.0 * np.sinh(0.5 * r)

    def g_psi_star(self, s, t):
        """G_Psi*(s, t) = 1/4 Psi*(log t - log s) theta(s, t), in closed form"""
        s_arr, t_arr = _validated(s, t)
        s_b, t_b = np.broadcast_arrays(s_arr, t_arr)
        if self.psi_pair == PsiPair.COSH:
            return _result(0.5 * (np.sqrt(s_b) - np.sqrt(t_b)) ** 2, s, t)
        out = np.zeros(s_b.shape)
        pos = (s_b > 0) & (t_b > 0)
        out[pos] = 0.125 * (s_b[pos] - t_b[pos]) * (np.log(s_b[pos]) - np.log(t_b[pos]))
        out[(s_b > 0) != (t_b > 0)] = np.inf
        return _result(out, s, t)

    def g_psi(self, s, t, u):
        """G_Psi(s, t, u) = 1/4 Psi(u / theta) theta; 0 if theta = u = 0, +inf if theta = 0 < |u|"""
        s_arr, t_arr = _validated(s, t)
        u_arr = np.asarray(u, dtype=float)
        s_b, t_b, u_b = np.broadcast_arrays(s_arr, t_arr, u_arr)
        theta = np.asarray(self.theta_value(s_b, t_b), dtype=float)
        out = np.zeros(s_b.shape)
        pos = theta > 0
        out[pos] = 0.25 * self.psi(u_b[pos] / theta[pos]) * theta[pos]
        out[~pos & (u_b != 0)] = np.inf
        return _result(out, s, t, u)


def theta(structure: DissipationStructure, s, t):
    return structure.theta_value(s, t)


def g_psi_star(structure: DissipationStructure, s, t):
    return structure.g_psi_star(s, t)


def g_psi(structure: DissipationStructure, s, t, u):
    return structure.g_psi(s, t, u)


def psi_pair_eval(structure: DissipationStructure, r) -> Tuple[Any, Any, Any]:
    """(Psi(r), Psi*(r), (Psi*)'(r))"""
    r_arr = np.asarray(r, dtype=float)
    if not np.all(np.isfinite(r_arr)):
        raise DissipationError(f"psi_pair_eval needs finite r, got {r!r}")
    values = (structure.psi(r_arr), structure.psi_star(r_arr), structure.psi_star_prime(r_arr))
    if np.ndim(r) == 0:
        return tuple(float(v) for v in values)
    return values


def compatibility_defect(structure: DissipationStructure, s, t):
    """(Psi*)'(log s - log t) theta(s, t) - (s - t), for strictly positive s, t"""
    s_arr, t_arr = _validated(s, t)
    xi = np.log(s_arr) - np.log(t_arr)
    return _result(structure.psi_star_prime(xi) * structure.theta_value(s_arr, t_arr) - (s_arr - t_arr), s, t)


def duality_gap(structure: DissipationStructure, s, t, w):
    """
    G_Psi(s, t, w) + G_Psi*(s, t) - 1/4 (log s - log t) w

    Nonnegative by Fenchel-Young, and zero exactly when w = s - t.
    """
    s_arr, t_arr = _validated(s, t)
    if np.any(s_arr <= 0) or np.any(t_arr <= 0):
        raise DissipationError("duality_gap needs strictly positive s and t")
    xi = np.log(s_arr) - np.log(t_arr)
    gap = structure.g_psi(s_arr, t_arr, w) + structure.g_psi_star(s_arr, t_arr) - 0.25 * xi * np.asarray(w, dtype=float)
    return _result(np.asarray(gap), s, t, w)


def upper_bound_gap(structure: DissipationStructure, s, t):
    """(log s - log t)(s - t) - Psi*(log s - log t) theta(s, t), nonnegative"""
    s_arr, t_arr = _validated(s, t)
    if np.any(s_arr <= 0) or np.any(t_arr <= 0):
        raise DissipationError("upper_bound_gap needs strictly positive s and t")
    xi = np.log(s_arr) - np.log(t_arr)
    gap = xi * (s_arr - t_arr) - structure.psi_star(xi) * structure.theta_value(s_arr, t_arr)
    return _result(np.asarray(gap), s, t)


def growth_constants(structure: DissipationStructure) -> Tuple[float, float]:
    """(c1, c2) with Psi*(r) <= c1 exp(c2 |r|)"""
    return GROWTH_CONSTANTS[structure.psi_pair]


def entropy_dissipation_D(operator: "CollisionOperator", f: "Density") -> float:
    """
    D(f) = 1/4 sum (t - s)(log t - log s) w over collision tuples

    Tuples where exactly one of s, t vanishes are skipped and counted.
    """
    if np.all(f.values > 0):
        return max(0.0, -0.25 * operator.pair(f.values, operator.true_flux(f), transform=np.log))

    def integrand(s, t):
        out = np.zeros(s.shape)
        pos = (s > 0) & (t > 0)
        out[pos] = 0.25 * (t[pos] - s[pos]) * (np.log(t[pos]) - np.log(s[pos]))
        out[(s > 0) != (t > 0)] = np.nan
        return out

    total = operator.tuple_sum(integrand, f)
    if total.n_skipped:
        logger.warning(f"D(f): skipped {total.n_skipped} tuples with a single vanishing product")
    return total.value


def d_psi_star(operator: "CollisionOperator", f: "Density", structure: DissipationStructure) -> float:
    """D_Psi*(f) = sum G_Psi*(s, t) w; +inf for the quadratic pair when a single product vanishes"""
    if structure.psi_pair == PsiPair.QUADRATIC and np.all(f.values > 0):
        return 0.5 * entropy_dissipation_D(operator, f)
    total = operator.tuple_sum(lambda s, t: structure.g_psi_star(s, t), f)
    if total.n_infinite:
        logger.warning(f"D_Psi*(f) = +inf: {total.n_infinite} tuples with a single vanishing product")
    return total.value


def big_R(
    operator: "CollisionOperator", f: "Density", flux: "CollisionFlux", structure: DissipationStructure
) -> float:
    """R(f, U) = sum G_Psi(s, t, U) w; +inf when U charges a tuple with theta(s, t) = 0"""
    scale = flux.product_scale(f)
    if scale is not None and structure.psi_pair == PsiPair.QUADRATIC and np.all(f.values > 0):
        return scale**2 * 0.5 * entropy_dissipation_D(operator, f)
    total = operator.tuple_sum(lambda s, t, u: structure.g_psi(s, t, u), f, flux)
    if total.n_infinite:
        logger.warning(f"R(f, U) = +inf: flux on {total.n_infinite} tuples with theta = 0")
    return total.value


def big_R_star(
    operator: "CollisionOperator", f: "Density", xi: "TupleFunction", structure: DissipationStructure
) -> float:
    """R*(f, xi) = 1/4 sum Psi*(xi) theta(s, t) w over tuples with theta > 0"""

    def integrand(s, t, x):
        theta_st = np.asarray(structure.theta_value(s, t), dtype=float)
        out = np.zeros(s.shape)
        pos = theta_st > 0
        out[pos] = 0.25 * structure.psi_star(x[pos]) * theta_st[pos]
        return out

    return operator.tuple_sum(integrand, f, xi).value
