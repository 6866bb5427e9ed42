"""
Legendre-spectral Fokker-Planck solver in x = cos(theta).

rho(x, tau) = sum_n r_n P_n(x) obeys dr/dtau = A r, where A is the Galerkin
projection of

    L[rho] = d/dx [ (1 - x^2) ((c - x) rho + D drho/dx) ],   c = i - h,  D = 1 / (2 Delta)

onto P_0..P_N (A[m, n] = (2m + 1)/2 int P_m L[P_n] dx). Integrating by parts and
using (1 - x^2) P_m' = m (m + 1) / (2m + 1) (P_{m-1} - P_{m+1}) and
x P_n = ((n + 1) P_{n+1} + n P_{n-1}) / (2n + 1) gives the pentadiagonal entries

    A[m, m-2] =  m (m + 1) (m - 1) / ((2m - 3) (2m - 1))
    A[m, m-1] = -c m (m + 1) / (2m - 1)
    A[m, m]   =  m (m + 1) / ((2m - 1) (2m + 3)) - m (m + 1) D
    A[m, m+1] =  c m (m + 1) / (2m + 3)
    A[m, m+2] = -m (m + 1) (m + 2) / ((2m + 3) (2m + 5))

Row 0 vanishes identically, so r_0 = 1/2 is conserved. Couplings to n > N are
dropped. galerkin_oracle() recomputes A by exact (Fraction) Legendre series
algebra, independently of the identities above.
"""

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.polynomial import legendre as npleg
from scipy import linalg

from .device import NormalizedDrive
from .exceptions import ExpmFailure, GeneratorMismatch, NotNormalized
from .fpe_fvm import GridDistribution, ThetaMesh

logger = logging.getLogger(__name__)

DEFAULT_ORDER = 200
MIN_QUADRATURE_NODES = 512
NORMALIZATION_TOLERANCE = 1e-6
RINGING_FLOOR = -1e-6
RINGING_GRID_POINTS = 1024
EIG_CONDITION_LIMIT = 1e10
ORACLE_RTOL = 1e-12
ROUNDOFF_ULPS = 64


@dataclass(frozen=True)
class LegendreState:
    r: np.ndarray
    tau: float = 0.0

    def __post_init__(self):
        r = np.array(self.r, dtype=float)
        if r.ndim != 1 or len(r) < 1:
            raise ValueError("coefficients must be a non-empty vector")
        if not np.all(np.isfinite(r)):
            raise ValueError("coefficients must be finite")
        if abs(2.0 * r[0] - 1.0) > NORMALIZATION_TOLERANCE:
            raise NotNormalized(2.0 * r[0])
        r[0] = 0.5
        r.setflags(write=False)
        object.__setattr__(self, 'r', r)

    @property
    def order(self) -> int:
        return len(self.r) - 1


@dataclass(frozen=True)
class GeneratorMatrix:
    a: np.ndarray
    drive: NormalizedDrive

    @property
    def order(self) -> int:
        return self.a.shape[0] - 1


def generator_entries(order: int, c: float, delta: float) -> np.ndarray:
    """Closed-form pentadiagonal generator for drift offset c = i - h."""
    if int(order) != order or order < 2:
        raise ValueError(f"expansion order must be an integer >= 2, got {order!r}")
    n = int(order)
    d = 1.0 / (2.0 * delta)
    a = np.zeros((n + 1, n + 1))
    for m in range(1, n + 1):
        mm = m * (m + 1.0)
        a[m, m] = mm / ((2 * m - 1) * (2 * m + 3)) - mm * d
        a[m, m - 1] = -c * mm / (2 * m - 1)
        if m >= 2:
            a[m, m - 2] = mm * (m - 1) / ((2 * m - 3) * (2 * m - 1))
        if m + 1 <= n:
            a[m, m + 1] = c * mm / (2 * m + 3)
        if m + 2 <= n:
            a[m, m + 2] = -mm * (m + 2) / ((2 * m + 3) * (2 * m + 5))
    return a


@lru_cache(maxsize=8)
def _galerkin_parts(order: int) -> np.ndarray:
    """Galerkin matrices of d/dx[(1 - x^2) f] for f = P_n, x P_n and P_n'.

    The series algebra runs on Fraction coefficients, so every entry is the
    exact projection (2m + 1)/2 int P_m (.) dx, rounded once to float.
    """
    size = order + 1
    one_minus_x2 = np.array([Fraction(2, 3), Fraction(0), Fraction(-2, 3)], dtype=object)
    x = np.array([Fraction(0), Fraction(1)], dtype=object)
    parts = np.zeros((3, size, size))
    for n in range(size):
        basis = np.array([Fraction(0)] * n + [Fraction(1)], dtype=object)
        for k, factor in enumerate((basis, npleg.legmul(x, basis), npleg.legder(basis))):
            image = npleg.legder(npleg.legmul(one_minus_x2, factor))[:size]
            parts[k, :len(image), n] = [float(v) for v in image]
    parts.setflags(write=False)
    return parts


def galerkin_oracle(order: int, drive: NormalizedDrive) -> np.ndarray:
    """A[m, n] = (2m + 1)/2 int P_m L[P_n] dx from exact Legendre series algebra."""
    drift, cubic, diffusion = _galerkin_parts(int(order))
    c, d = drive.drift_offset, 1.0 / (2.0 * drive.delta)
    return c * drift - cubic + d * diffusion


def verify_generator(gen: GeneratorMatrix, rtol: float = ORACLE_RTOL) -> None:
    """Raise GeneratorMismatch on the first entry disagreeing with the oracle.

    Diagonal entries are differences of two terms; the allowance for their
    rounding is a few ulps of the largest entry in the row.
    """
    oracle = galerkin_oracle(gen.order, gen.drive)
    floor = ROUNDOFF_ULPS * np.finfo(float).eps * np.max(np.abs(oracle), axis=1, keepdims=True)
    bad = np.abs(gen.a - oracle) > rtol * np.abs(oracle) + floor
    if np.any(bad):
        row, col = map(int, np.argwhere(bad)[0])
        raise GeneratorMismatch(row, col, float(gen.a[row, col]), float(oracle[row, col]))


def build_generator(order: int, drive: NormalizedDrive, verify: bool = False) -> GeneratorMatrix:
    a = generator_entries(order, drive.drift_offset, drive.delta)
    a.setflags(write=False)
    gen = GeneratorMatrix(a, drive)
    if verify:
        verify_generator(gen)
    return gen


@lru_cache(maxsize=16)
def _equator_weights(order: int) -> np.ndarray:
    p0 = npleg.legvander(np.array([0.0]), order + 1)[0]
    w = np.empty(order + 1)
    w[0] = 1.0
    n = np.arange(1, order + 1)
    w[1:] = (p0[n + 1] - p0[n - 1]) / (2.0 * n + 1.0)
    w.setflags(write=False)
    return w


def equator_weights(order: int) -> np.ndarray:
    """w_n = int_{-1}^{0} P_n dx."""
    return _equator_weights(int(order))


def switched_fraction(state: LegendreState, target: str = 'antiparallel') -> float:
    """Probability mass in x < 0 (or x > 0 for target='parallel')."""
    lower = float(np.dot(state.r, equator_weights(state.order)))
    return lower if target == 'antiparallel' else 1.0 - lower


def _antiderivative_table(x: np.ndarray, order: int) -> np.ndarray:
    """Q_n(x) with Q_n' = P_n: Q_0 = x, Q_n = (P_{n+1} - P_{n-1}) / (2n + 1)."""
    p = npleg.legvander(x, order + 1)
    q = np.empty((len(x), order + 1))
    q[:, 0] = x
    n = np.arange(1, order + 1)
    q[:, 1:] = (p[:, n + 1] - p[:, n - 1]) / (2.0 * n + 1.0)
    return q


def project(rho0: Union[Callable, GridDistribution], order: int = DEFAULT_ORDER,
            support: Optional[Tuple[float, float]] = None, tau: float = 0.0) -> LegendreState:
    """Legendre coefficients of rho0(x).

    A callable is integrated by Gauss-Legendre quadrature on ``support``
    (default [-1, 1]); a GridDistribution is treated as piecewise constant in x
    over each cell and integrated exactly.
    """
    order = int(order)
    if order < 0:
        raise ValueError(f"order must be >= 0, got {order}")

    if isinstance(rho0, GridDistribution):
        x_faces = np.cos(rho0.mesh.faces)
        x_faces[0], x_faces[-1] = 1.0, -1.0
        q = _antiderivative_table(x_faces, order)
        dens = rho0.p / (x_faces[:-1] - x_faces[1:])
        r = 0.5 * (2.0 * np.arange(order + 1) + 1.0) * (dens @ (q[:-1] - q[1:]))
        tau = rho0.tau
    else:
        lo, hi = support if support is not None else (-1.0, 1.0)
        if not -1.0 <= lo < hi <= 1.0:
            raise ValueError(f"support must lie inside [-1, 1], got {support!r}")
        nodes, weights = npleg.leggauss(max(2 * order, MIN_QUADRATURE_NODES))
        x = 0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)
        w = 0.5 * (hi - lo) * weights
        values = np.asarray(rho0(x), dtype=float)
        r = 0.5 * (2.0 * np.arange(order + 1) + 1.0) * (npleg.legvander(x, order).T @ (w * values))

    if abs(2.0 * r[0] - 1.0) > NORMALIZATION_TOLERANCE:
        raise NotNormalized(2.0 * r[0])
    return LegendreState(r, tau)


def reconstruct(state: LegendreState, x=None, theta=None):
    """rho(x) by Clenshaw recurrence; with ``theta`` returns P(theta) = rho sin(theta)."""
    if (x is None) == (theta is None):
        raise ValueError("pass exactly one of x or theta")
    if theta is not None:
        theta = np.asarray(theta, dtype=float)
        return npleg.legval(np.cos(theta), state.r) * np.sin(theta)
    return npleg.legval(np.asarray(x, dtype=float), state.r)


def to_grid(state: LegendreState, mesh: ThetaMesh) -> np.ndarray:
    """Exact cell masses int rho dx over every mesh cell."""
    x_faces = np.cos(mesh.faces)
    x_faces[0], x_faces[-1] = 1.0, -1.0
    q = _antiderivative_table(x_faces, state.order)
    return (q[:-1] - q[1:]) @ state.r


def check_ringing(state: LegendreState, floor: float = RINGING_FLOOR) -> float:
    """Minimum of the reconstruction on a uniform x grid; warns below ``floor``."""
    low = float(np.min(reconstruct(state, x=np.linspace(-1.0, 1.0, RINGING_GRID_POINTS))))
    if low < floor:
        logger.warning(
            "Legendre reconstruction dips to %.3e at tau=%.6g with N=%d; increase the order",
            low, state.tau, state.order,
        )
    return low


def _finish(r: np.ndarray, tau: float) -> LegendreState:
    if not np.all(np.isfinite(r)):
        raise ExpmFailure(tau, 'non-finite coefficients')
    if abs(r[0] - 0.5) > 1e-8:
        raise ExpmFailure(tau, f'r_0 drifted to {r[0]!r}')
    return LegendreState(r, tau)


def evolve(state: LegendreState, gen: GeneratorMatrix, tau: float, method: str = 'pade',
           ringing_check: bool = True) -> LegendreState:
    """r(tau) = expm(A tau) r(0)."""
    if not tau >= 0:
        raise ValueError(f"tau must be >= 0, got {tau!r}")
    if state.order != gen.order:
        raise ValueError(f"state order {state.order} does not match generator order {gen.order}")
    if tau == 0:
        return state

    if method == 'pade':
        try:
            r = linalg.expm(gen.a * tau) @ state.r
        except (ValueError, linalg.LinAlgError, OverflowError) as exc:
            raise ExpmFailure(state.tau + tau, str(exc)) from exc
    elif method == 'eig':
        r = SpectralPropagator(gen).coefficients(state, [tau])[0]
    else:
        raise ValueError(f"unknown expm method {method!r}")
    result = _finish(r, state.tau + tau)
    if ringing_check:
        check_ringing(result)
    return result


class SpectralPropagator:
    """Repeated evaluation of exp(A tau) r for many tau.

    Uses the eigendecomposition of A when its eigenvector matrix is well
    conditioned and falls back to Pade expm otherwise.
    """

    def __init__(self, gen: GeneratorMatrix, method: str = 'eig',
                 condition_limit: float = EIG_CONDITION_LIMIT):
        if method not in ('eig', 'pade'):
            raise ValueError(f"unknown expm method {method!r}")
        self.gen = gen
        self.eigenvalues = None
        self.vectors = None
        self.condition = math.inf
        if method == 'pade':
            return
        try:
            values, vectors = linalg.eig(gen.a)
            self.condition = float(np.linalg.cond(vectors))
        except (linalg.LinAlgError, ValueError) as exc:
            logger.debug("eigendecomposition failed (%s); using expm", exc)
            return
        if np.isfinite(self.condition) and self.condition <= condition_limit:
            self.eigenvalues, self.vectors = values, vectors
        else:
            logger.debug("eigenvector condition %.3e above %.1e; using expm", self.condition, condition_limit)

    @property
    def uses_eigen(self) -> bool:
        return self.eigenvalues is not None

    def coefficients(self, state: LegendreState, taus: Sequence[float]) -> np.ndarray:
        """Rows of r(tau) for each elapsed tau."""
        taus = np.asarray(taus, dtype=float)
        if np.any(taus < 0):
            raise ValueError("taus must be >= 0")
        if self.uses_eigen:
            modes = linalg.solve(self.vectors, state.r.astype(complex))
            growth = np.exp(np.outer(taus, self.eigenvalues))
            out = np.real((growth * modes) @ self.vectors.T)
        else:
            out = self._stepped(state.r, taus)
        if not np.all(np.isfinite(out)):
            raise ExpmFailure(state.tau + float(taus.max(initial=0.0)), 'non-finite propagation')
        out[:, 0] = 0.5
        return out

    def _stepped(self, r0: np.ndarray, taus: np.ndarray) -> np.ndarray:
        order = np.argsort(taus, kind='stable')
        out = np.empty((len(taus), len(r0)))
        cache = {}
        current, now = r0, 0.0
        for k in order:
            gap = taus[k] - now
            if gap > 0:
                key = round(gap, 12)
                if key not in cache:
                    cache[key] = linalg.expm(self.gen.a * gap)
                current = cache[key] @ current
                now = taus[k]
            out[k] = current
        return out

    def switched_fractions(self, state: LegendreState, taus: Sequence[float],
                           target: str = 'antiparallel') -> np.ndarray:
        lower = self.coefficients(state, taus) @ equator_weights(self.gen.order)
        return lower if target == 'antiparallel' else 1.0 - lower


def evolve_series(state: LegendreState, gen: GeneratorMatrix, taus: Sequence[float],
                  method: str = 'pade') -> list:
    """States at every elapsed tau in ``taus``."""
    rows = SpectralPropagator(gen, method).coefficients(state, taus)
    return [_finish(np.array(row), state.tau + float(t)) for row, t in zip(rows, taus)]
