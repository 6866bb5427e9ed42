"""
Error-rate layer: initial distributions, WER/RER curves, time-to-WER inversion
and Monte-Carlo cross-checks.

An error rate is the probability mass left in (WER) or moved to (RER) the
non-starting hemisphere at the end of the pulse, optionally after a
zero-current relaxation window. The start well follows the sign of the
current: i >= 0 starts in the parallel well (theta < pi/2).
"""

import bisect
import logging
import math
from dataclasses import dataclass, fields
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, optimize

from . import fpe_fvm, fpe_spectral, sllgs
from .device import DeviceParams, NormalizedDrive, boltzmann_cumulative, normalize
from .exceptions import InsufficientWalks, NoBracket, SolverDiverged
from .parallel import run_ordered

logger = logging.getLogger(__name__)

SOLVERS = ('spectral', 'fvm')
SOURCES = ('measured', 'computed')
KINDS = ('WER', 'RER')

SEARCH_TAU_MIN = 1e-3
SEARCH_TAU_MAX = 1000.0
TIME_RTOL = 5e-3
MIN_EXPECTED_EVENTS = 5


@dataclass(frozen=True)
class SolverSettings:
    """Numerical knobs shared by every error-rate computation."""
    solver: str = 'spectral'
    mesh_cells: int = 512
    grading: str = 'uniform_theta'
    tanh_stretch: float = fpe_fvm.DEFAULT_TANH_STRETCH
    n_coeffs: int = fpe_spectral.DEFAULT_ORDER
    dtau: Optional[float] = None
    theta_weight: float = 0.5
    expm_method: str = 'pade'
    verify_generator: bool = False
    relax_s: float = 0.0
    sllgs_dt: Optional[float] = None
    jobs: int = 1

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}, got {self.solver!r}")
        if self.expm_method not in ('eig', 'pade'):
            raise ValueError(f"expm_method must be 'eig' or 'pade', got {self.expm_method!r}")
        if self.relax_s < 0:
            raise ValueError(f"relax_s must be >= 0, got {self.relax_s!r}")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'SolverSettings':
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown solver setting {unknown[0]!r}")
        return cls(**data)

    def as_dict(self) -> Dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class ErrorRatePoint:
    current: float
    pulse_width: float
    temperature: float
    rate: float
    kind: str = 'WER'
    source: str = 'computed'
    solver: str = ''

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be WER or RER, got {self.kind!r}")
        if self.source not in SOURCES:
            raise ValueError(f"source must be measured or computed, got {self.source!r}")
        if not (math.isfinite(self.pulse_width) and self.pulse_width > 0):
            raise ValueError(f"pulse_width must be > 0, got {self.pulse_width!r}")
        if self.source == 'measured':
            if not 0.0 < self.rate < 1.0:
                raise ValueError(f"measured rate must lie in (0, 1), got {self.rate!r}")
        elif not 0.0 <= self.rate <= 1.0:
            raise ValueError(f"rate must lie in [0, 1], got {self.rate!r}")


@dataclass(frozen=True)
class ErrorRateCurve:
    points: Tuple[ErrorRatePoint, ...]
    kind: str
    axis: str                    # 'time' or 'current'
    solver: str
    device_id: str = ''

    def __post_init__(self):
        points = tuple(self.points)
        object.__setattr__(self, 'points', points)
        if self.axis not in ('time', 'current'):
            raise ValueError(f"axis must be 'time' or 'current', got {self.axis!r}")
        if any(p.kind != self.kind for p in points):
            raise ValueError("all points of a curve must share its kind")
        values = self.axis_values()
        if len(values) > 1 and not (np.all(np.diff(values) > 0) or np.all(np.diff(values) < 0)):
            raise ValueError(f"{self.axis} axis must be strictly monotone")

    def axis_values(self) -> np.ndarray:
        attr = 'pulse_width' if self.axis == 'time' else 'current'
        return np.array([getattr(p, attr) for p in self.points])

    def rates(self) -> np.ndarray:
        return np.array([p.rate for p in self.points])

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class McValidation:
    empirical_rate: float
    ci_low: float
    ci_high: float
    fpe_rate: float
    agrees: bool
    n_walks: int
    errors: int
    confidence: float


def start_well(current: float) -> str:
    return 'antiparallel' if current < 0 else 'parallel'


def _other(well: str) -> str:
    return 'parallel' if well == 'antiparallel' else 'antiparallel'


def boltzmann_init(delta: float, well: str = 'parallel', mesh: Optional[fpe_fvm.ThetaMesh] = None,
                   n_coeffs: Optional[int] = None):
    """Hemisphere-restricted density ~ exp(-Delta sin^2 theta).

    Returns a GridDistribution on ``mesh`` or a LegendreState of order
    ``n_coeffs``; exactly one of them must be given.
    """
    if not delta > 0:
        raise ValueError(f"delta must be > 0, got {delta!r}")
    if well not in ('parallel', 'antiparallel'):
        raise ValueError(f"unknown well {well!r}")
    if (mesh is None) == (n_coeffs is None):
        raise ValueError("pass exactly one of mesh or n_coeffs")

    if mesh is not None:
        return fpe_fvm.GridDistribution(mesh, fpe_fvm.boltzmann_masses(mesh, delta, well))

    z = float(boltzmann_cumulative(1.0, delta))

    def rho(x):
        return np.exp(delta * (x * x - 1.0)) / z

    support = (0.0, 1.0) if well == 'parallel' else (-1.0, 0.0)
    return fpe_spectral.project(rho, n_coeffs, support=support)


class _SpectralEngine:
    def __init__(self, drive: NormalizedDrive, relax: Optional[NormalizedDrive], relax_tau: float,
                 well: str, settings: SolverSettings):
        self.target = _other(well)
        gen = fpe_spectral.build_generator(settings.n_coeffs, drive, verify=settings.verify_generator)
        self.gen = gen
        self.state = boltzmann_init(drive.delta, well, n_coeffs=settings.n_coeffs)
        self.propagator = fpe_spectral.SpectralPropagator(gen, settings.expm_method)
        self.weights = fpe_spectral.equator_weights(settings.n_coeffs)
        self.relax_map = None
        if relax is not None and relax_tau > 0:
            relax_gen = fpe_spectral.build_generator(settings.n_coeffs, relax)
            self.relax_map = linalg.expm(relax_gen.a * relax_tau)

    def _fractions(self, rows: np.ndarray) -> np.ndarray:
        if self.relax_map is not None:
            rows = rows @ self.relax_map.T
        lower = rows @ self.weights
        out = lower if self.target == 'antiparallel' else 1.0 - lower
        if not np.all(np.isfinite(out)):
            raise SolverDiverged("spectral switched fraction is not finite")
        return out

    def switched(self, taus: Sequence[float]) -> np.ndarray:
        return self._fractions(self.propagator.coefficients(self.state, taus))

    def doubling_scan(self, tau0: float, count: int, wer_target: Optional[float] = None):
        """Switched fractions at tau0 * 2^k, k < count, by repeated squaring."""
        taus = tau0 * 2.0 ** np.arange(count)
        if self.propagator.uses_eigen:
            return taus, self.switched(taus)
        step = linalg.expm(self.gen.a * tau0)
        r = step @ self.state.r
        rows = [r]
        for _ in range(1, count):
            # the gap from tau0 2^(k-1) to tau0 2^k is tau0 2^(k-1)
            r = step @ r
            rows.append(r)
            step = step @ step
        rows = np.array(rows)
        rows[:, 0] = 0.5
        return taus, self._fractions(rows)


class _FvmEngine:
    def __init__(self, drive: NormalizedDrive, relax: Optional[NormalizedDrive], relax_tau: float,
                 well: str, settings: SolverSettings):
        self.target = _other(well)
        self.drive = drive
        self.relax = relax if relax_tau > 0 else None
        self.relax_tau = relax_tau
        self.settings = settings
        mesh = fpe_fvm.build_mesh(settings.mesh_cells, settings.grading, settings.tanh_stretch)
        start = boltzmann_init(drive.delta, well, mesh=mesh)
        self._taus: List[float] = [0.0]
        self._states: List[fpe_fvm.GridDistribution] = [start]

    def _advance(self, tau: float) -> fpe_fvm.GridDistribution:
        k = bisect.bisect_right(self._taus, tau) - 1
        if self._taus[k] == tau:
            return self._states[k]
        base = self._states[k]
        result = fpe_fvm.evolve(
            base, [(self.drive, tau - self._taus[k])], dtau=self.settings.dtau,
            theta=self.settings.theta_weight, sample_taus=[], target=self.target,
        )
        self._taus.insert(k + 1, tau)
        self._states.insert(k + 1, result.final)
        return result.final

    def _fraction(self, dist: fpe_fvm.GridDistribution) -> float:
        if self.relax is not None:
            dist = fpe_fvm.evolve(dist, [(self.relax, self.relax_tau)], dtau=self.settings.dtau,
                                  theta=self.settings.theta_weight, sample_taus=[]).final
        return dist.switched_fraction(self.target)

    def switched(self, taus: Sequence[float]) -> np.ndarray:
        return np.array([self._fraction(self._advance(float(t))) for t in taus])

    def doubling_scan(self, tau0: float, count: int, wer_target: Optional[float] = None):
        taus, switched = [], []
        for k in range(count):
            tau = tau0 * 2.0 ** k
            taus.append(tau)
            switched.append(self.switched([tau])[0])
            if wer_target is not None and 1.0 - switched[-1] <= wer_target:
                break
        return np.array(taus), np.array(switched)


def _engine(params: DeviceParams, current: float, settings: SolverSettings, h_ext_z: float,
            well: Optional[str]):
    drive = normalize(params, current, h_ext_z)
    relax = drive.with_current(0.0)
    relax_tau = settings.relax_s / drive.tau_d
    well = well or start_well(current)
    cls = _SpectralEngine if settings.solver == 'spectral' else _FvmEngine
    return drive, cls(drive, relax, relax_tau, well, settings)


def switching_probability(params: DeviceParams, current: float, times: Sequence[float],
                          settings: SolverSettings = SolverSettings(), h_ext_z: float = 0.0,
                          well: Optional[str] = None) -> np.ndarray:
    """Probability of having left the start well after pulses of the given lengths (s)."""
    times = np.asarray(times, dtype=float)
    if np.any(times < 0):
        raise ValueError("pulse widths must be >= 0")
    drive, engine = _engine(params, current, settings, h_ext_z, well)
    return np.clip(engine.switched(times / drive.tau_d), 0.0, 1.0)


@dataclass(frozen=True)
class SwitchingSeries:
    """Switched fraction sampled evenly over one pulse, with optional snapshots."""
    taus: np.ndarray
    times: np.ndarray
    switched: np.ndarray
    snapshots: Tuple[Any, ...]
    final: Any
    mesh: fpe_fvm.ThetaMesh
    solver: str


def switching_series(params: DeviceParams, current: float, duration: float,
                     settings: SolverSettings = SolverSettings(), n_samples: int = 100,
                     h_ext_z: float = 0.0, snapshot_count: int = 0,
                     well: Optional[str] = None) -> SwitchingSeries:
    if not duration > 0:
        raise ValueError(f"duration must be > 0, got {duration!r}")
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples!r}")
    drive = normalize(params, current, h_ext_z)
    well = well or start_well(current)
    target = _other(well)
    total = duration / drive.tau_d
    taus = np.linspace(0.0, total, n_samples + 1)[1:]
    # snapshots are taken at a subset of the sample times
    picks = np.unique(np.round(np.linspace(0, n_samples, min(snapshot_count, n_samples) + 1)[1:]).astype(int) - 1)
    picks = picks if snapshot_count else np.array([], dtype=int)
    mesh = fpe_fvm.build_mesh(settings.mesh_cells, settings.grading, settings.tanh_stretch)

    if settings.solver == 'fvm':
        start = boltzmann_init(drive.delta, well, mesh=mesh)
        result = fpe_fvm.evolve(start, [(drive, total)], dtau=settings.dtau, theta=settings.theta_weight,
                                sample_taus=taus, target=target, keep_snapshots=bool(snapshot_count))
        switched, final = result.switched, result.final
        snapshots = tuple(result.snapshots[k] for k in picks)
    else:
        gen = fpe_spectral.build_generator(settings.n_coeffs, drive, verify=settings.verify_generator)
        start = boltzmann_init(drive.delta, well, n_coeffs=settings.n_coeffs)
        states = fpe_spectral.evolve_series(start, gen, taus, settings.expm_method)
        switched = np.array([fpe_spectral.switched_fraction(s, target) for s in states])
        fpe_spectral.check_ringing(states[-1])
        final = states[-1]
        snapshots = tuple(states[k] for k in picks)
    if not np.all(np.isfinite(switched)):
        raise SolverDiverged(f"{settings.solver} switched fraction is not finite")
    return SwitchingSeries(taus, taus * drive.tau_d, np.asarray(switched), snapshots, final, mesh, settings.solver)


def wer_curve(params: DeviceParams, current: float, t_grid: Sequence[float],
              settings: SolverSettings = SolverSettings(), h_ext_z: float = 0.0,
              device_id: str = '') -> ErrorRateCurve:
    """WER(t) = 1 - switched fraction at each pulse width."""
    t_grid = np.asarray(t_grid, dtype=float)
    wer = 1.0 - switching_probability(params, current, t_grid, settings, h_ext_z)
    points = tuple(
        ErrorRatePoint(current, float(t), params.temperature, float(r), 'WER', 'computed', settings.solver)
        for t, r in zip(t_grid, wer)
    )
    return ErrorRateCurve(points, 'WER', 'time', settings.solver, device_id)


def _rer_point(params, current, t_read, settings, h_ext_z):
    return float(switching_probability(params, current, [t_read], settings, h_ext_z)[0])


def rer_curve(params: DeviceParams, read_currents: Sequence[float], t_read: float,
              settings: SolverSettings = SolverSettings(), h_ext_z: float = 0.0,
              device_id: str = '') -> ErrorRateCurve:
    """Read-disturb probability after a read pulse of ``t_read`` at every current."""
    if not t_read > 0:
        raise ValueError(f"t_read must be > 0, got {t_read!r}")
    read_currents = [float(c) for c in read_currents]
    rates = run_ordered(
        _rer_point, [(params, c, t_read, settings, h_ext_z) for c in read_currents], jobs=settings.jobs,
    )
    points = tuple(
        ErrorRatePoint(c, t_read, params.temperature, r, 'RER', 'computed', settings.solver)
        for c, r in zip(read_currents, rates)
    )
    return ErrorRateCurve(points, 'RER', 'current', settings.solver, device_id)


def time_to_wer(params: DeviceParams, current: float, target: float,
                settings: SolverSettings = SolverSettings(), h_ext_z: float = 0.0,
                tau_max: float = SEARCH_TAU_MAX) -> float:
    """Pulse width (s) at which WER falls to ``target``.

    A doubling scan from 1e-3 tau_d brackets the crossing, then Brent's method
    refines it in log time to 0.5% relative.
    """
    if not 0.0 < target < 1.0:
        raise ValueError(f"target must lie in (0, 1), got {target!r}")
    drive, engine = _engine(params, current, settings, h_ext_z, None)
    count = int(math.ceil(math.log2(tau_max / SEARCH_TAU_MIN))) + 1
    taus, switched = engine.doubling_scan(SEARCH_TAU_MIN, count, target)
    keep = taus <= tau_max * (1 + 1e-12)
    taus, wer = taus[keep], 1.0 - switched[keep]
    if taus[-1] < tau_max and not np.any(wer <= target):
        taus = np.append(taus, tau_max)
        wer = np.append(wer, 1.0 - engine.switched([tau_max])[0])

    hits = np.flatnonzero(wer <= target)
    if hits.size == 0:
        raise NoBracket(current, target, tau_max * drive.tau_d, float(wer[-1]))
    k = int(hits[0])
    if k == 0:
        return float(taus[0] * drive.tau_d)

    log_target = math.log(target)

    def gap(log_tau):
        w = 1.0 - float(engine.switched([math.exp(log_tau)])[0])
        return math.log(max(w, 1e-300)) - log_target

    lo, hi = math.log(taus[k - 1]), math.log(taus[k])
    if gap(hi) == 0.0:
        return float(taus[k] * drive.tau_d)
    root = optimize.brentq(gap, lo, hi, xtol=TIME_RTOL / 5.0, rtol=1e-10)
    return float(math.exp(root) * drive.tau_d)


def required_walks(rate: float) -> int:
    """Smallest ensemble expecting MIN_EXPECTED_EVENTS of the rarer outcome."""
    p = min(rate, 1.0 - rate)
    return int(math.ceil(MIN_EXPECTED_EVENTS / max(p, 1e-300)))


def mc_validate(params: DeviceParams, current: float, t: float, n_walks: int, seed: int = 0,
                settings: SolverSettings = SolverSettings(), confidence: float = sllgs.DEFAULT_CONFIDENCE,
                h_ext_z: float = 0.0) -> McValidation:
    """Compare the FPE WER with an s-LLGS ensemble at one (current, pulse width)."""
    fpe_rate = 1.0 - float(switching_probability(params, current, [t], settings, h_ext_z)[0])
    n_min = required_walks(fpe_rate)
    if n_walks < n_min:
        raise InsufficientWalks(n_walks, n_min, fpe_rate)

    waveform = sllgs.DriveWaveform.constant(current, t, (0.0, 0.0, h_ext_z))
    if settings.relax_s > 0:
        waveform = sllgs.DriveWaveform(waveform.segments + (sllgs.DriveSegment(0.0, settings.relax_s),))
    ensemble = sllgs.run_ensemble(
        params, waveform, dt=settings.sllgs_dt, n_walks=n_walks, base_seed=seed,
        sample_times=[waveform.total_duration], well=start_well(current),
        jobs=settings.jobs, confidence=confidence,
    )
    errors = n_walks - int(ensemble.switched_counts[-1])
    low, high = sllgs.binomial_interval(errors, n_walks, confidence)
    empirical = errors / n_walks
    agrees = low <= fpe_rate <= high
    logger.info("mc_validate: FPE %.4e, empirical %.4e [%.4e, %.4e] over %d walks",
                fpe_rate, empirical, low, high, n_walks)
    return McValidation(empirical, low, high, fpe_rate, agrees, n_walks, errors, confidence)
