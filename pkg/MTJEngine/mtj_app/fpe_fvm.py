"""
Finite-volume Fokker-Planck solver on the polar angle.

The unknowns are cell masses P_i of the probability mass per unit angle,
P(theta) = rho(theta) sin(theta), so that

    dP/dtau = -dJ/dtheta,    J = U_eff P - D dP/dtheta
    U_eff   = sin(theta) (i - h - cos(theta)) + cot(theta) / (2 Delta)
    D       = 1 / (2 Delta)

Interior faces use the Scharfetter-Gummel flux

    J = (D / h) [B(-Pe) q_L - B(Pe) q_R],    B(z) = z / (exp(z) - 1)

with q = P / width the cell density and Pe the drift potential drop between
the two neighbouring centres over D (U_eff averaged over the gap times h / D).
Both pole faces carry zero flux, so the assembled operator conserves mass
column by column. Time stepping is theta-weighted Crank-Nicolson with a
banded (Thomas) solve.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from .device import NormalizedDrive, boltzmann_cumulative
from .exceptions import BadGrading, NegativeMass, NotNormalized, PoleEvaluation, SolverSingular

logger = logging.getLogger(__name__)

Grading = Literal['uniform_theta', 'uniform_cos', 'tanh_refined']
GRADINGS = ('uniform_theta', 'uniform_cos', 'tanh_refined')

DEFAULT_TANH_STRETCH = 1.5
CLIP_TOLERANCE = 1e-12
NORMALIZATION_TOLERANCE = 1e-9
DTAU_CAP = 0.1
CFL_FRACTION = 0.25
BERNOULLI_SERIES_LIMIT = 1e-4


@dataclass(frozen=True)
class ThetaMesh:
    faces: np.ndarray
    grading: str = 'uniform_theta'
    centers: np.ndarray = field(init=False, repr=False, compare=False)
    widths: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        faces = np.asarray(self.faces, dtype=float)
        if faces.ndim != 1 or len(faces) < 3:
            raise BadGrading(f"mesh needs at least 2 cells, got {len(faces) - 1} faces")
        if faces[0] != 0.0 or faces[-1] != math.pi or np.any(np.diff(faces) <= 0):
            raise BadGrading("faces must increase strictly from 0 to pi")
        faces.setflags(write=False)
        centers = 0.5 * (faces[:-1] + faces[1:])
        widths = np.diff(faces)
        centers.setflags(write=False)
        widths.setflags(write=False)
        object.__setattr__(self, 'faces', faces)
        object.__setattr__(self, 'centers', centers)
        object.__setattr__(self, 'widths', widths)

    @property
    def size(self) -> int:
        return len(self.centers)

    @property
    def h_min(self) -> float:
        return float(self.widths.min())

    def __eq__(self, other):
        return isinstance(other, ThetaMesh) and np.array_equal(self.faces, other.faces)

    def __hash__(self):
        return hash(self.faces.tobytes())


def build_mesh(cells: int, grading: Grading = 'uniform_theta',
               stretch: float = DEFAULT_TANH_STRETCH) -> ThetaMesh:
    """Faces on [0, pi] for the requested grading.

    ``tanh_refined`` clusters cells at both poles; ``stretch`` sets how strongly.
    """
    if grading not in GRADINGS:
        raise BadGrading(f"unknown grading {grading!r}; expected one of {', '.join(GRADINGS)}")
    minimum = 8 if grading == 'tanh_refined' else 2
    if int(cells) != cells or cells < minimum:
        raise BadGrading(f"{grading} mesh needs at least {minimum} cells, got {cells!r}")
    s = np.linspace(0.0, 1.0, int(cells) + 1)

    if grading == 'uniform_theta':
        faces = math.pi * s
    elif grading == 'uniform_cos':
        faces = np.arccos(np.clip(1.0 - 2.0 * s, -1.0, 1.0))
    else:
        if not stretch > 0:
            raise BadGrading(f"tanh stretch must be > 0, got {stretch!r}")
        faces = 0.5 * math.pi * (1.0 + np.tanh(stretch * (2.0 * s - 1.0)) / math.tanh(stretch))
    faces[0], faces[-1] = 0.0, math.pi
    return ThetaMesh(faces, grading)


def drift_diffusion(theta, i: float, h: float, delta: float):
    """(U_eff, D) at interior angles theta."""
    theta = np.asarray(theta, dtype=float)
    if np.any(theta <= 0.0) or np.any(theta >= math.pi):
        raise PoleEvaluation(f"drift requested at a pole or outside (0, pi): {theta!r}")
    d = 1.0 / (2.0 * delta)
    u_eff = np.sin(theta) * (i - h - np.cos(theta)) + d / np.tan(theta)
    if u_eff.ndim == 0:
        return float(u_eff), d
    return u_eff, d


def drift_potential(theta, i: float, h: float, delta: float):
    """Phi with dPhi/dtheta = U_eff, defined on (0, pi)."""
    theta = np.asarray(theta, dtype=float)
    st = np.sin(theta)
    return -(i - h) * np.cos(theta) - 0.5 * st * st + np.log(st) / (2.0 * delta)


def bernoulli(z):
    """B(z) = z / (exp(z) - 1), with the series 1 - z/2 + z^2/12 near zero."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < BERNOULLI_SERIES_LIMIT
    safe = np.where(small, 1.0, z)
    with np.errstate(over='ignore'):
        out = safe / np.expm1(safe)
    out = np.where(small, 1.0 - 0.5 * z + z * z / 12.0, out)
    return float(out) if out.ndim == 0 else out


def sg_flux(q_left, q_right, peclet, d: float, h: float):
    """Scharfetter-Gummel face flux between two cell densities."""
    return (d / h) * (bernoulli(-peclet) * q_left - bernoulli(peclet) * q_right)


@dataclass(frozen=True)
class FvmOperator:
    """Tridiagonal generator dP/dtau = A P stored by diagonals."""
    mesh: ThetaMesh
    drive: NormalizedDrive
    lower: np.ndarray      # A[k+1, k]
    diag: np.ndarray       # A[k, k]
    upper: np.ndarray      # A[k, k+1]
    face_u_eff: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.diag)

    @property
    def positivity_bound(self) -> float:
        """Largest Crank-Nicolson dtau that keeps the explicit half non-negative."""
        worst = float(np.max(-self.diag))
        return math.inf if worst <= 0 else 2.0 / worst

    def matvec(self, p: np.ndarray) -> np.ndarray:
        out = self.diag * p
        out[1:] += self.lower * p[:-1]
        out[:-1] += self.upper * p[1:]
        return out

    def column_sums(self) -> np.ndarray:
        sums = self.diag.copy()
        sums[:-1] += self.lower
        sums[1:] += self.upper
        return sums

    def to_dense(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.lower, -1) + np.diag(self.upper, 1)

    def banded(self, scale: float = 1.0) -> np.ndarray:
        """(I - scale A) in scipy's (1, 1) banded layout."""
        ab = np.zeros((3, self.size))
        ab[0, 1:] = -scale * self.upper
        ab[1, :] = 1.0 - scale * self.diag
        ab[2, :-1] = -scale * self.lower
        return ab


def assemble(mesh: ThetaMesh, drive: NormalizedDrive) -> FvmOperator:
    """Operator for fixed (i, h, Delta) on ``mesh`` with zero-flux poles."""
    c = mesh.centers
    gaps = np.diff(c)
    d = 1.0 / (2.0 * drive.delta)
    phi = drift_potential(c, drive.i, drive.h, drive.delta)
    peclet = np.diff(phi) / d
    # J_f = a_f P_k - b_f P_{k+1}
    a = (d / gaps) * bernoulli(-peclet) / mesh.widths[:-1]
    b = (d / gaps) * bernoulli(peclet) / mesh.widths[1:]

    diag = np.zeros(mesh.size)
    diag[:-1] -= a
    diag[1:] -= b
    u_faces, _ = drift_diffusion(mesh.faces[1:-1], drive.i, drive.h, drive.delta)
    return FvmOperator(mesh, drive, lower=a, diag=diag, upper=b, face_u_eff=np.atleast_1d(u_faces))


def default_dtau(op: FvmOperator, cap: float = DTAU_CAP) -> float:
    """min(cap, 0.25 h_min / max|U_eff|, positivity bound)."""
    u_max = float(np.max(np.abs(op.face_u_eff))) if op.face_u_eff.size else 0.0
    cfl = CFL_FRACTION * op.mesh.h_min / u_max if u_max > 0 else math.inf
    return min(cap, cfl, op.positivity_bound)


@dataclass(frozen=True)
class GridDistribution:
    mesh: ThetaMesh
    p: np.ndarray
    tau: float = 0.0

    def __post_init__(self):
        p = np.array(self.p, dtype=float)
        if p.shape != (self.mesh.size,):
            raise ValueError(f"expected {self.mesh.size} cell masses, got shape {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("cell masses must be finite")
        if p.min(initial=0.0) < -CLIP_TOLERANCE:
            raise NegativeMass(float(p.min()), self.tau)
        total = math.fsum(p)
        if abs(total - 1.0) > NORMALIZATION_TOLERANCE:
            raise NotNormalized(total)
        p.setflags(write=False)
        object.__setattr__(self, 'p', p)

    @property
    def density(self) -> np.ndarray:
        """Mass per unit angle at cell centres."""
        return self.p / self.mesh.widths

    @property
    def rho(self) -> np.ndarray:
        """rho at cell centres, normalised as int rho sin(theta) dtheta = 1."""
        return self.density / np.sin(self.mesh.centers)

    def switched_fraction(self, target: str = 'antiparallel') -> float:
        return hemisphere_mass(self.mesh, self.p, upper=(target == 'antiparallel'))

    def total(self) -> float:
        return math.fsum(self.p)


def hemisphere_mass(mesh: ThetaMesh, p: np.ndarray, upper: bool = True) -> float:
    """Mass in theta > pi/2 (upper=True) or theta < pi/2; a straddling cell is split linearly."""
    half = 0.5 * math.pi
    left, right = mesh.faces[:-1], mesh.faces[1:]
    frac_upper = np.clip((right - half) / (right - left), 0.0, 1.0)
    weights = frac_upper if upper else 1.0 - frac_upper
    return float(np.dot(weights, p))


def boltzmann_masses(mesh: ThetaMesh, delta: float, well: Optional[str] = None) -> np.ndarray:
    """Exact cell masses of P ~ sin(theta) exp(Delta cos^2 theta).

    ``well`` restricts the density to one hemisphere ('parallel' is theta < pi/2).
    """
    x = np.cos(mesh.faces)
    x[0], x[-1] = 1.0, -1.0
    if well == 'parallel':
        x = np.clip(x, 0.0, 1.0)
    elif well == 'antiparallel':
        x = np.clip(x, -1.0, 0.0)
    elif well is not None:
        raise ValueError(f"unknown well {well!r}")
    cumulative = boltzmann_cumulative(x, delta)
    masses = np.maximum(cumulative[:-1] - cumulative[1:], 0.0)
    return masses / masses.sum()


def equilibrium_distribution(mesh: ThetaMesh, drive: NormalizedDrive) -> GridDistribution:
    """Discrete zero-flux stationary state of ``assemble(mesh, drive)``.

    Detailed balance across every face gives P_{k+1} / P_k = a_k / b_k.
    """
    op = assemble(mesh, drive)
    log_ratio = np.log(op.lower) - np.log(op.upper)
    log_p = np.concatenate([[0.0], np.cumsum(log_ratio)])
    p = np.exp(log_p - log_p.max())
    return GridDistribution(mesh, p / p.sum())


def _cn_masses(p: np.ndarray, op: FvmOperator, dtau: float, theta: float = 0.5,
               lhs: Optional[np.ndarray] = None, tau: float = 0.0) -> np.ndarray:
    rhs = p + (1.0 - theta) * dtau * op.matvec(p) if theta < 1.0 else p.copy()
    if lhs is None:
        lhs = op.banded(theta * dtau)
    try:
        out = linalg.solve_banded((1, 1), lhs, rhs, overwrite_b=True, check_finite=False)
    except (linalg.LinAlgError, ValueError) as exc:
        raise SolverSingular(dtau, op.size, str(exc), tau=tau) from exc
    if not np.all(np.isfinite(out)):
        raise SolverSingular(dtau, op.size, 'non-finite solution', tau=tau)
    return out


def _clip(p: np.ndarray, tau: float) -> np.ndarray:
    low = p.min()
    if low >= 0.0:
        return p
    if low < -CLIP_TOLERANCE:
        raise NegativeMass(float(low), tau)
    total = p.sum()
    p = np.maximum(p, 0.0)
    logger.debug("clipped %d cells (min %.3e) at tau=%.6g", int(np.sum(p == 0.0)), low, tau)
    return p * (total / p.sum())


def step_cn(dist: GridDistribution, op: FvmOperator, dtau: float, theta: float = 0.5) -> GridDistribution:
    """One theta-weighted Crank-Nicolson step (theta = 1/2 is classic CN)."""
    if not dtau > 0:
        raise ValueError(f"dtau must be > 0, got {dtau!r}")
    if not 0.5 <= theta <= 1.0:
        raise ValueError(f"theta weight must lie in [0.5, 1], got {theta!r}")
    if op.mesh != dist.mesh:
        raise ValueError("operator and distribution live on different meshes")
    tau = dist.tau + dtau
    p = _clip(_cn_masses(dist.p, op, dtau, theta, tau=tau), tau)
    return GridDistribution(dist.mesh, p, tau)


@dataclass(frozen=True)
class EvolutionResult:
    final: GridDistribution
    taus: np.ndarray
    switched: np.ndarray
    snapshots: Tuple[GridDistribution, ...] = ()
    steps: int = 0


def evolve(dist: GridDistribution, schedule: Sequence[Tuple[NormalizedDrive, float]],
           dtau: Optional[float] = None, theta: float = 0.5,
           sample_taus: Optional[Sequence[float]] = None, n_samples: int = 100,
           target: str = 'antiparallel', keep_snapshots: bool = False) -> EvolutionResult:
    """Evolve through piecewise-constant segments, sampling the switched fraction.

    ``sample_taus`` are elapsed times from the start of the schedule; steps are
    shortened so that every sample and segment boundary is hit exactly.
    """
    schedule = [(drive, float(duration)) for drive, duration in schedule]
    for _, duration in schedule:
        if not duration > 0:
            raise ValueError(f"schedule durations must be > 0, got {duration!r}")
    total = math.fsum(duration for _, duration in schedule)
    if not schedule:
        return EvolutionResult(dist, np.array([]), np.array([]))

    if sample_taus is None:
        sample_taus = np.linspace(0.0, total, n_samples + 1)[1:]
    sample_taus = np.asarray(sample_taus, dtype=float)
    if np.any(np.diff(sample_taus) <= 0) or np.any(sample_taus < 0):
        raise ValueError("sample_taus must be non-negative and strictly increasing")

    start = dist.tau
    p = np.array(dist.p)
    taus, switched, snapshots = [], [], []
    upper = target == 'antiparallel'
    steps = 0

    def record(elapsed, masses):
        taus.append(elapsed)
        switched.append(hemisphere_mass(dist.mesh, masses, upper))
        if keep_snapshots:
            snapshots.append(GridDistribution(dist.mesh, masses, start + elapsed))

    pending = list(sample_taus[sample_taus <= total * (1 + 1e-12)])
    while pending and pending[0] <= 0.0:
        record(pending.pop(0), p)

    elapsed = 0.0
    for drive, duration in schedule:
        op = assemble(dist.mesh, drive)
        seg_dtau = dtau if dtau is not None else default_dtau(op)
        seg_end = elapsed + duration
        logger.debug("segment i=%.4g h=%.4g for %.4g tau with dtau=%.3e", drive.i, drive.h, duration, seg_dtau)
        stops = [t for t in pending if t < seg_end] + [seg_end]
        for stop in stops:
            span = stop - elapsed
            if span > 0:
                n = max(1, int(math.ceil(span / seg_dtau - 1e-9)))
                step = span / n
                lhs = op.banded(theta * step)
                for k in range(n):
                    tau = start + elapsed + (k + 1) * step
                    p = _clip(_cn_masses(p, op, step, theta, lhs=lhs, tau=tau), tau)
                steps += n
                elapsed = stop
            while pending and pending[0] <= elapsed * (1 + 1e-12):
                record(pending.pop(0), p)
        elapsed = seg_end

    final = GridDistribution(dist.mesh, p, start + total)
    return EvolutionResult(final, np.asarray(taus), np.asarray(switched), tuple(snapshots), steps)
