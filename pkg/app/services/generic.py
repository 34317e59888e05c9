from typing import Union
import numpy as np
import logging

from app.errors import StateError
from app.models import BilinearReport, DegeneracyReport
from app.services.collision import CollisionFlux, CollisionOperator, GradbarFunction, is_uniform
from app.services.dissipation import log_mean
from app.services.state import Density, PhaseGrid, entropy

logger = logging.getLogger(__name__)


def _split(values: np.ndarray, grid: PhaseGrid) -> np.ndarray:
    return np.asarray(values, dtype=float).reshape(grid.full_shape)


def x_derivative(values: np.ndarray, grid: PhaseGrid, axis: int) -> np.ndarray:
    """Spectral derivative along spatial axis `axis` on the torus; the Nyquist mode is dropped"""
    full = _split(values, grid)
    wavenumbers = 2 * np.pi * np.fft.fftfreq(grid.nx, d=grid.dx)
    if grid.nx % 2 == 0:
        wavenumbers[grid.nx // 2] = 0.0
    shape = [1] * full.ndim
    shape[axis] = grid.nx
    spectrum = np.fft.fft(full, axis=axis) * (1j * wavenumbers.reshape(shape))
    return np.real(np.fft.ifft(spectrum, axis=axis)).reshape(grid.shape)


def v_derivative(values: np.ndarray, grid: PhaseGrid, axis: int) -> np.ndarray:
    """Centered difference along velocity axis `axis`, zero beyond the box (a skew-symmetric matrix)"""
    full = _split(values, grid)
    position = grid.d + axis
    padded = np.pad(full, [(1, 1) if a == position else (0, 0) for a in range(full.ndim)])
    upper = np.take(padded, np.arange(2, grid.nv + 2), axis=position)
    lower = np.take(padded, np.arange(0, grid.nv), axis=position)
    return ((upper - lower) / (2 * grid.dv)).reshape(grid.shape)


def apply_poisson(grid: PhaseGrid, f_values: np.ndarray, g: np.ndarray) -> np.ndarray:
    """L(f) g = -div_x(f grad_v g) + div_v(f grad_x g); needs only the phase grid"""
    g = np.asarray(g, dtype=float).reshape(grid.shape)
    f = np.asarray(f_values, dtype=float).reshape(grid.shape)
    out = np.zeros(grid.shape)
    for axis in range(grid.d):
        out -= x_derivative(f * v_derivative(g, grid, axis), grid, axis)
        out += v_derivative(f * x_derivative(g, grid, axis), grid, axis)
    return out


class MobilityFlux(CollisionFlux):
    """U = Lambda(f f_*, f' f'_*) * nabla-bar g, the flux whose divergence gives M(f) g"""

    def __init__(self, f_values: np.ndarray, g_values: np.ndarray):
        self.f_values = f_values
        self.gradient = GradbarFunction(g_values)

    def uniform(self) -> bool:
        return is_uniform(self.f_values) and self.gradient.uniform()

    def dense(self, operator, tile, spatial):
        f, f_s, f_p, f_ps = tile.slots(spatial.rows(self.f_values))
        s = f[:, :, None] * f_s[:, None, :]
        t = f_p[:, :, None] * f_ps[:, None, :]
        return log_mean(s, t) * self.gradient.dense(operator, tile, spatial)


class GenericOperators:
    """
    Energy, entropy, Poisson operator L(f) and Onsager operator M(f) at a fixed density

    Inner products are sum a b cellvol. D_x is the spectral derivative, D_v the centered
    difference with zero extension; both are skew, which makes L exactly antisymmetric.
    """

    def __init__(self, operator: CollisionOperator, f: Union[Density, np.ndarray]):
        self.operator = operator
        self.grid = operator.grid
        self.f = f if isinstance(f, Density) else Density(f, operator.grid)

    def inner(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(np.sum(a * b) * self.grid.cell_volume)

    def energy(self) -> float:
        return energy_E(self.f)

    def entropy(self) -> float:
        return entropy_S(self.f)

    def d_energy(self) -> np.ndarray:
        return np.broadcast_to(0.5 * self.grid.v_squared(), self.grid.shape).copy()

    def d_entropy(self) -> np.ndarray:
        if np.any(self.f.values <= 0):
            raise StateError("dS = -(log f + 1) needs a strictly positive density")
        return -(np.log(self.f.values) + 1.0)

    def apply_L(self, g: np.ndarray) -> np.ndarray:
        return apply_poisson(self.grid, self.f.values, g)

    def apply_M(self, g: np.ndarray) -> np.ndarray:
        """M(f) g = 1/4 nabla-bar^T(Lambda(f) w nabla-bar g) / cellvol"""
        g = np.asarray(g, dtype=float).reshape(self.grid.shape)
        return -self.operator.divergence_bar(MobilityFlux(self.f.values, g))

    def degeneracy_report(self) -> DegeneracyReport:
        return DegeneracyReport(
            norm_l_ds=float(np.max(np.abs(self.apply_L(self.d_entropy())))),
            norm_m_de=float(np.max(np.abs(self.apply_M(self.d_energy())))),
        )

    def bilinear_form_checks(self, g1: np.ndarray, g2: np.ndarray) -> BilinearReport:
        l_12 = self.inner(g1, self.apply_L(g2))
        l_21 = self.inner(g2, self.apply_L(g1))
        m_g2 = self.apply_M(g2)
        m_g1 = self.apply_M(g1)
        return BilinearReport(
            antisym_defect=abs(l_12 + l_21),
            sym_defect=abs(self.inner(g1, m_g2) - self.inner(g2, m_g1)),
            psd_value=self.inner(g1, m_g1),
        )


def energy_E(f: Density) -> float:
    """E(f) = 1/2 sum |v|^2 f cellvol"""
    return float(np.sum(f.values @ f.grid.v_squared()) * 0.5 * f.grid.cell_volume)


def entropy_S(f: Density) -> float:
    return -entropy(f)


def apply_L(operator: CollisionOperator, f: Density, g: np.ndarray) -> np.ndarray:
    return GenericOperators(operator, f).apply_L(g)


def apply_M(operator: CollisionOperator, f: Density, g: np.ndarray) -> np.ndarray:
    return GenericOperators(operator, f).apply_M(g)


def degeneracy_report(operator: CollisionOperator, f: Density) -> DegeneracyReport:
    return GenericOperators(operator, f).degeneracy_report()


def bilinear_form_checks(operator: CollisionOperator, f: Density, g1: np.ndarray, g2: np.ndarray) -> BilinearReport:
    return GenericOperators(operator, f).bilinear_form_checks(g1, g2)
