from pydantic import BaseModel, ConfigDict
from typing import Optional, Tuple, Dict
from pathlib import Path
from numpy.polynomial.legendre import leggauss
from scipy import sparse
import numpy as np
import logging

from app.errors import GeometryError
from app.models import Backend
from app.services.kernels import CollisionKernel, check_unit
from app.services.state import PhaseGrid

logger = logging.getLogger(__name__)

SPHERE_AREA: Dict[int, float] = {2: 2 * np.pi, 3: 4 * np.pi}


def collide(v, v_star, omega) -> Tuple[np.ndarray, np.ndarray]:
    """v' = v - <v - v_*, w> w, v'_* = v_* + <v - v_*, w> w"""
    v = np.asarray(v, dtype=float)
    v_star = np.asarray(v_star, dtype=float)
    omega = check_unit(omega)
    dot = np.sum((v - v_star) * omega, axis=-1, keepdims=True)
    return v - dot * omega, v_star + dot * omega


class SphereQuadrature(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    nodes: np.ndarray
    weights: np.ndarray

    def __init__(self, **data):
        super().__init__(**data)
        self._check()

    def _check(self) -> None:
        d = self.nodes.shape[-1]
        if d not in SPHERE_AREA:
            raise GeometryError(f"Unsupported sphere dimension {d}")
        if self.nodes.shape[0] != self.weights.shape[0] or np.any(self.weights <= 0):
            raise GeometryError("Sphere quadrature needs one positive weight per node")
        check_unit(self.nodes)
        if abs(self.weights.sum() - SPHERE_AREA[d]) > 1e-12:
            raise GeometryError(f"Sphere weights sum to {self.weights.sum()!r}, expected {SPHERE_AREA[d]!r}")

    @property
    def dimension(self) -> int:
        return self.nodes.shape[-1]

    def integrate(self, func) -> float:
        return float(np.asarray(func(self.nodes)) @ self.weights)


def sphere_quadrature(d: int, n: int) -> SphereQuadrature:
    """
    d = 2: n equispaced angles, weight 2 pi / n each
    d = 3: n/2 Gauss-Legendre nodes in cos(polar angle) times n equispaced azimuths

    n must be even so that the node set is antipodally symmetric.
    """
    if d not in SPHERE_AREA:
        raise GeometryError(f"Sphere quadrature supports d = 2 or 3, got d = {d}")
    if n < 4 or n % 2:
        raise GeometryError(f"Sphere quadrature needs an even node count >= 4, got {n}")
    phi = 2 * np.pi * np.arange(n) / n
    if d == 2:
        nodes = np.stack([np.cos(phi), np.sin(phi)], axis=-1)
        weights = np.full(n, 2 * np.pi / n)
    else:
        z, w = leggauss(n // 2)
        zz, pp = np.meshgrid(z, phi, indexing="ij")
        ww = np.repeat(w, n) * (2 * np.pi / n)
        rho = np.sqrt(1.0 - zz**2)
        nodes = np.stack([rho * np.cos(pp), rho * np.sin(pp), zz], axis=-1).reshape(-1, 3)
        nodes = nodes / np.linalg.norm(nodes, axis=-1, keepdims=True)
        weights = ww * (4 * np.pi / ww.sum())
    return SphereQuadrature(nodes=nodes, weights=weights)


class DVMTable(BaseModel):
    """
    Conserving collision quadruples (j, l, j', l') of a velocity lattice and their weights

    Weights absorb B and the angular measure but not the velocity cell volumes.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    d: int
    nv: int
    vmax: float
    quadruples: np.ndarray
    weights: np.ndarray

    def __init__(self, **data):
        super().__init__(**data)
        self._check()

    def _check(self) -> None:
        if self.quadruples.ndim != 2 or self.quadruples.shape[1] != 4:
            raise GeometryError("DVM quadruples must be an (n, 4) index array")
        if self.quadruples.shape[0] == 0:
            raise GeometryError("DVM table is empty: the lattice holds no conserving quadruple")
        if self.weights.shape != (self.quadruples.shape[0],) or np.any(self.weights <= 0):
            raise GeometryError("DVM table needs one positive weight per quadruple")

    def __len__(self) -> int:
        return int(self.quadruples.shape[0])

    def matches(self, grid: PhaseGrid) -> bool:
        return self.d == grid.d and self.nv == grid.nv and self.vmax == grid.vmax

    def conservation_violations(self, grid: PhaseGrid) -> int:
        """Quadruples failing exact momentum/energy conservation in integer lattice arithmetic"""
        m = grid.v_lattice()
        j, l, jp, lp = self.quadruples.T
        momentum = np.any(m[j] + m[l] != m[jp] + m[lp], axis=-1)
        energy = (m[j] ** 2).sum(-1) + (m[l] ** 2).sum(-1) != (m[jp] ** 2).sum(-1) + (m[lp] ** 2).sum(-1)
        return int(np.sum(momentum | energy))

    def swap_closed(self) -> bool:
        """Every (j, l, j', l') has its reverse (j', l', j, l) with a bitwise-equal weight"""
        forward = {tuple(q): w for q, w in zip(self.quadruples.tolist(), self.weights.tolist())}
        return all(forward.get((jp, lp, j, l)) == w for (j, l, jp, lp), w in forward.items())

    def save(self, path: Path) -> Path:
        """Text format: '# dvm d=.. nv=.. vmax=..' then rows 'j l jp lp weight'"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        rows = np.column_stack([self.quadruples.astype(float), self.weights])
        np.savetxt(
            path,
            rows,
            fmt=["%d", "%d", "%d", "%d", "%.17g"],
            header=f"dvm d={self.d} nv={self.nv} vmax={self.vmax!r}",
        )
        logger.info(f"Wrote DVM table with {len(self)} quadruples to {path}")
        return path

    @classmethod
    def load(cls, path: Path, grid: Optional[PhaseGrid] = None) -> "DVMTable":
        path = Path(path)
        if not path.exists():
            raise GeometryError(f"DVM table not found: {path}")
        with path.open() as handle:
            header = handle.readline().strip().lstrip("#").split()
        try:
            fields = dict(item.split("=", 1) for item in header[1:])
            d, nv, vmax = int(fields["d"]), int(fields["nv"]), float(fields["vmax"])
        except (KeyError, ValueError, IndexError) as e:
            raise GeometryError(f"Malformed DVM table header in {path}: {e}") from e
        rows = np.loadtxt(path, comments="#", ndmin=2)
        table = cls(
            d=d,
            nv=nv,
            vmax=vmax,
            quadruples=rows[:, :4].astype(np.int64),
            weights=rows[:, 4],
        )
        if grid is not None and not table.matches(grid):
            raise GeometryError(f"DVM table {path} was built for d={d}, nv={nv}, vmax={vmax}")
        return table


def build_dvm_table(grid: PhaseGrid, kernel: CollisionKernel) -> DVMTable:
    """
    Enumerate every ordered pair of lattice velocities, group the pairs by total momentum and
    energy, and connect each pair to every other pair of its group

    A pair in a group of g pairs has g - 1 admissible outcomes, each weighted by
    |S^{d-1}| B(v - v_*, w) / (g - 1) with w the unit vector along v - v'. All invariants are
    integers in lattice units, so reversed quadruples get bitwise-equal weights.
    """
    m = grid.v_lattice()
    n = grid.n_velocity
    a, b = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    a, b = a.ravel(), b.ravel()
    keep = a != b
    a, b = a[keep], b[keep]
    keys = np.column_stack([m[a] + m[b], (m[a] ** 2).sum(-1) + (m[b] ** 2).sum(-1)])
    _, group, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    group = group.ravel()
    order = np.argsort(group, kind="stable")
    sizes = counts[group[order]]

    pieces = []
    for g in np.unique(sizes):
        if g < 2:
            continue
        members = order[sizes == g].reshape(-1, g)
        x, y = np.meshgrid(np.arange(g), np.arange(g), indexing="ij")
        off = x != y
        first = members[:, x[off]].ravel()
        second = members[:, y[off]].ravel()
        pieces.append(np.column_stack([a[first], b[first], a[second], b[second], np.full(first.size, g)]))
    if not pieces:
        raise GeometryError(f"No conserving quadruple on the {grid.nv}^{grid.d} lattice")
    table = np.concatenate(pieces)
    j, l, jp, lp, g = table.T

    rel = m[j] - m[l]
    kick = m[j] - m[jp]
    rel_sq = (rel**2).sum(-1)
    kick_sq = (kick**2).sum(-1)
    dot = np.abs((rel * kick).sum(-1))
    cos_abs = dot / np.sqrt(rel_sq.astype(float) * kick_sq.astype(float))
    speed_unit = (0.5 * grid.dv) ** 2
    weights = SPHERE_AREA[grid.d] * kernel.from_invariants(rel_sq * speed_unit, cos_abs) / (g - 1)

    quadruples = np.column_stack([j, l, jp, lp]).astype(np.int64)
    logger.info(f"Built DVM table: {len(quadruples)} quadruples on a {grid.nv}^{grid.d} lattice")
    return DVMTable(d=grid.d, nv=grid.nv, vmax=grid.vmax, quadruples=quadruples, weights=weights)


def selection_matrix(index: np.ndarray, n: int) -> sparse.csr_matrix:
    rows = np.arange(index.size)
    return sparse.csr_matrix((np.ones(index.size), (rows, index)), shape=(index.size, n))


def interpolation_matrix(grid: PhaseGrid, points: np.ndarray) -> sparse.csr_matrix:
    """Multilinear interpolation from velocity nodes to `points` (inside the node hull)"""
    d = grid.d
    position = (points + grid.vmax) / grid.dv - 0.5
    base = np.clip(np.floor(position).astype(np.int64), 0, grid.nv - 2)
    frac = position - base
    rows, cols, vals = [], [], []
    strides = grid.nv ** np.arange(d - 1, -1, -1)
    for corner in np.ndindex(*(2,) * d):
        corner = np.asarray(corner)
        weight = np.prod(np.where(corner == 1, frac, 1.0 - frac), axis=-1)
        cols.append(((base + corner) * strides).sum(-1))
        rows.append(np.arange(points.shape[0]))
        vals.append(weight)
    return sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(points.shape[0], grid.n_velocity),
    )


class VelocityTuples:
    """
    Velocity part of the collision tuple set

    Each tuple q maps the four slots (v, v_*, v', v'_*) to velocity nodes through the rows of
    sparse matrices; `weights` holds B times the angular weight times dV^2.
    """

    def __init__(
        self,
        backend: Backend,
        p: sparse.csr_matrix,
        ps: sparse.csr_matrix,
        pp: sparse.csr_matrix,
        pps: sparse.csr_matrix,
        weights: np.ndarray,
        dropped: int = 0,
    ):
        n = weights.shape[0]
        if any(m.shape[0] != n for m in (p, ps, pp, pps)):
            raise GeometryError("Slot matrices and weights disagree on the tuple count")
        self.backend = backend
        self.p, self.ps, self.pp, self.pps = p, ps, pp, pps
        self.weights = weights
        self.dropped = dropped

    def __len__(self) -> int:
        return int(self.weights.shape[0])

    @property
    def pair_weights(self) -> np.ndarray:
        """Total weight per ordered pre-collision pair (j, l), dense (Nv, Nv)"""
        return np.asarray((self.p.T @ sparse.diags(self.weights) @ self.ps).todense())

    @classmethod
    def from_dvm(cls, table: DVMTable, grid: PhaseGrid) -> "VelocityTuples":
        if not table.matches(grid):
            raise GeometryError("DVM table does not match the velocity grid")
        n = grid.n_velocity
        j, l, jp, lp = table.quadruples.T
        return cls(
            Backend.DVM,
            selection_matrix(j, n),
            selection_matrix(l, n),
            selection_matrix(jp, n),
            selection_matrix(lp, n),
            table.weights * grid.velocity_cell**2,
        )

    @classmethod
    def from_quadrature(
        cls, grid: PhaseGrid, kernel: CollisionKernel, sphere: SphereQuadrature
    ) -> "VelocityTuples":
        """
        All (v_j, v_l, w_m) with j != l; tuples with <v_j - v_l, w_m> = 0 carry no collision and
        are skipped, tuples whose v' or v'_* leaves the node hull are dropped and counted
        """
        if sphere.dimension != grid.d:
            raise GeometryError("Sphere quadrature dimension does not match the grid")
        v = grid.v_nodes()
        n = grid.n_velocity
        j, l = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        j, l = j.ravel(), l.ravel()
        keep = j != l
        j, l = j[keep], l[keep]
        mm = np.repeat(np.arange(sphere.nodes.shape[0])[None, :], j.size, axis=0).ravel()
        j = np.repeat(j, sphere.nodes.shape[0])
        l = np.repeat(l, sphere.nodes.shape[0])
        omega = sphere.nodes[mm]
        rel = v[j] - v[l]
        dot = np.sum(rel * omega, axis=-1)
        speed = np.linalg.norm(rel, axis=-1)
        moving = np.abs(dot) > 1e-12 * speed
        vp = v[j] - dot[:, None] * omega
        vsp = v[l] + dot[:, None] * omega
        lo, hi = grid.v_axis()[0], grid.v_axis()[-1]
        inside = np.all((vp >= lo) & (vp <= hi) & (vsp >= lo) & (vsp <= hi), axis=-1)
        dropped = int(np.sum(moving & ~inside))
        if dropped:
            logger.warning(f"Dropped {dropped} quadrature tuples whose post-collision velocities leave the box")
        keep = moving & inside
        if not np.any(keep):
            raise GeometryError("Quadrature tuple set is empty")
        j, l, mm, vp, vsp = j[keep], l[keep], mm[keep], vp[keep], vsp[keep]
        rel_sq = np.sum((v[j] - v[l]) ** 2, axis=-1)
        cos_abs = np.abs(dot[keep]) / np.sqrt(rel_sq)
        weights = kernel.from_invariants(rel_sq, cos_abs) * sphere.weights[mm] * grid.velocity_cell**2
        logger.info(f"Built {j.size} quadrature tuples ({dropped} dropped)")
        return cls(
            Backend.QUADRATURE,
            selection_matrix(j, n),
            selection_matrix(l, n),
            interpolation_matrix(grid, vp),
            interpolation_matrix(grid, vsp),
            weights,
            dropped,
        )
