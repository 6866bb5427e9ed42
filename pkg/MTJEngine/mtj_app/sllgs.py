"""
Stochastic macrospin integrator (s-LLGS).

The implicit Gilbert equation is integrated in explicit Landau-Lifshitz form.
With the spin torque T = beta [eps m x (m_p x m) - eps' m x m_p] folded in as
T + alpha m x T and gamma' = gamma mu0 / (1 + alpha^2):

    dm/dt = gamma' [ - m x H - alpha m x (m x H)
                     + beta (eps + alpha eps') m x (m_p x m)
                     + beta (alpha eps - eps') m x m_p ]

    H     = Hk_eff m_z z + h_ext + H_th (+ H_fth)
    beta  = -hbar I / (mu0 q Ms V)      (positive I drives P -> AP)
    eps   = P / 2

H_th components are sigma * N(0, 1) with sigma = sqrt(2 kB T alpha / (mu0 gamma' Ms V dt)).
The fictitious mode replaces H_th by c_f * sigma(tau_d / 1000) along the local
azimuthal direction, pointing away from the starting well.

Integration is stochastic Heun (Stratonovich) with the noise sample held
fixed across predictor and corrector, followed by renormalization. Batches of
walks are advanced together as (n, 3) arrays; walk k always draws from its own
Philox stream keyed by SeedSequence(base_seed, spawn_key=(k,)), so results do
not depend on batching or worker count.
"""

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
from numpy.random import Generator, Philox, SeedSequence
from scipy import stats as sps

from .device import (
    PHYS,
    DeviceParams,
    boltzmann_cumulative,
    boltzmann_theta0,
    characteristic_time,
    gamma_prime,
)
from .exceptions import NonFiniteState, StepRejected
from .parallel import run_ordered

logger = logging.getLogger(__name__)

TransientMode = Literal['stochastic', 'fictitious', 'deterministic']
Well = Literal['parallel', 'antiparallel']

MAX_STEP_ANGLE = 0.5            # rad per accepted step
DEFAULT_DT_FRACTION = 1e-3      # of tau_d
FICTITIOUS_DT_FRACTION = 1e-3   # reference step for H_fth, of tau_d
NOISE_CHUNK = 512               # steps of noise drawn at once per walk
BOLTZMANN_TABLE_POINTS = 8192
DEFAULT_CONFIDENCE = 0.99


@dataclass(frozen=True)
class MagnetizationState:
    m: Tuple[float, float, float]
    t: float = 0.0

    def __post_init__(self):
        m = tuple(float(c) for c in self.m)
        if len(m) != 3:
            raise ValueError(f"m must be a 3-vector, got {self.m!r}")
        norm = math.sqrt(m[0] * m[0] + m[1] * m[1] + m[2] * m[2])
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"m must be a unit vector, |m|={norm!r}")
        object.__setattr__(self, 'm', m)

    def as_array(self) -> np.ndarray:
        return np.array(self.m, dtype=float)

    @classmethod
    def from_angles(cls, theta: float, phi: float = 0.0, t: float = 0.0) -> 'MagnetizationState':
        st = math.sin(theta)
        m = np.array([st * math.cos(phi), st * math.sin(phi), math.cos(theta)])
        return cls(tuple(m / _norm(m)), t)


@dataclass(frozen=True)
class DriveSegment:
    current: float
    duration: float
    h_ext: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not (math.isfinite(self.duration) and self.duration > 0):
            raise ValueError(f"segment duration must be finite and > 0, got {self.duration!r}")
        if not math.isfinite(self.current):
            raise ValueError(f"segment current must be finite, got {self.current!r}")
        h = tuple(float(c) for c in self.h_ext)
        if len(h) != 3 or not all(math.isfinite(c) for c in h):
            raise ValueError(f"h_ext must be a finite 3-vector, got {self.h_ext!r}")
        object.__setattr__(self, 'h_ext', h)


@dataclass(frozen=True)
class DriveWaveform:
    """Piecewise-constant current and field drive."""
    segments: Tuple[DriveSegment, ...]

    def __post_init__(self):
        segments = tuple(self.segments)
        if not segments:
            raise ValueError("waveform needs at least one segment")
        object.__setattr__(self, 'segments', segments)

    @classmethod
    def constant(cls, current: float, duration: float,
                 h_ext: Sequence[float] = (0.0, 0.0, 0.0)) -> 'DriveWaveform':
        return cls((DriveSegment(current, duration, tuple(h_ext)),))

    @property
    def total_duration(self) -> float:
        return math.fsum(s.duration for s in self.segments)

    def discretize(self, dt: float):
        """Per-step (dt, current, h_ext) arrays; each segment is cut into equal steps <= dt."""
        if not (dt > 0 and math.isfinite(dt)):
            raise ValueError(f"dt must be finite and > 0, got {dt!r}")
        dts, currents, fields = [], [], []
        for segment in self.segments:
            n = max(1, int(math.ceil(segment.duration / dt - 1e-9)))
            dts.append(np.full(n, segment.duration / n))
            currents.append(np.full(n, segment.current))
            fields.append(np.tile(segment.h_ext, (n, 1)))
        return np.concatenate(dts), np.concatenate(currents), np.concatenate(fields)


@dataclass(frozen=True)
class TransientResult:
    final_state: MagnetizationState
    switch_time: Optional[float]
    times: Optional[np.ndarray] = field(default=None, compare=False)
    trajectory: Optional[np.ndarray] = field(default=None, compare=False)
    mode: str = 'stochastic'
    seed: Optional[int] = None

    @property
    def switched(self) -> bool:
        return self.switch_time is not None

    def rows(self):
        """(t, mx, my, mz) tuples of the recorded trajectory."""
        if self.trajectory is None:
            return []
        return [(float(t), *map(float, m)) for t, m in zip(self.times, self.trajectory)]


@dataclass(frozen=True)
class EnsembleResult:
    """Empirical switching CDF of an ensemble of walks."""
    times: np.ndarray
    switched_fraction: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    switch_times: np.ndarray
    final_mz: np.ndarray
    n_walks: int
    base_seed: int
    confidence: float = DEFAULT_CONFIDENCE

    @property
    def switched_counts(self) -> np.ndarray:
        return np.rint(self.switched_fraction * self.n_walks).astype(int)

    @property
    def final_fraction(self) -> float:
        return float(self.switched_fraction[-1])


def _norm(v: np.ndarray) -> np.ndarray:
    return np.sqrt(v[..., 0] * v[..., 0] + v[..., 1] * v[..., 1] + v[..., 2] * v[..., 2])


def _cross(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    out = np.empty(np.broadcast_shapes(u.shape, v.shape))
    out[..., 0] = u[..., 1] * v[..., 2] - u[..., 2] * v[..., 1]
    out[..., 1] = u[..., 2] * v[..., 0] - u[..., 0] * v[..., 2]
    out[..., 2] = u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]
    return out


def _dot(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return u[..., 0] * v[..., 0] + u[..., 1] * v[..., 1] + u[..., 2] * v[..., 2]


def effective_field(m, params: DeviceParams, h_ext=(0.0, 0.0, 0.0), thermal=(0.0, 0.0, 0.0)):
    """Hk_eff m_z z + h_ext + thermal, in A/m. Broadcasts over leading axes of m."""
    m = np.asarray(m, dtype=float)
    h = np.zeros(m.shape)
    h[..., 2] = params.h_k_eff * m[..., 2]
    return h + np.asarray(h_ext, dtype=float) + np.asarray(thermal, dtype=float)


def thermal_sigma(params: DeviceParams, dt: float) -> float:
    """Standard deviation of each thermal field component for step dt, in A/m."""
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt!r}")
    return math.sqrt(
        2.0 * PHYS.k_b * params.temperature * params.alpha
        / (PHYS.mu0 * gamma_prime(params) * params.m_s * params.volume * dt)
    )


def thermal_field(params: DeviceParams, dt: float, gaussian3) -> np.ndarray:
    return thermal_sigma(params, dt) * np.asarray(gaussian3, dtype=float)


def fictitious_amplitude(params: DeviceParams, c_f: float) -> float:
    """|H_fth| for coefficient c_f, using the device reference step."""
    return c_f * thermal_sigma(params, FICTITIOUS_DT_FRACTION * characteristic_time(params))


def fictitious_field(m, amplitude: float, push=1.0) -> np.ndarray:
    """amplitude * push * phi_hat(m); zero on the z axis."""
    m = np.asarray(m, dtype=float)
    rho = np.sqrt(m[..., 0] * m[..., 0] + m[..., 1] * m[..., 1])
    scale = np.divide(amplitude * np.asarray(push, dtype=float), rho,
                      out=np.zeros(rho.shape), where=rho > 0)
    h = np.zeros(m.shape)
    h[..., 0] = -m[..., 1] * scale
    h[..., 1] = m[..., 0] * scale
    return h


def llgs_rhs(m, params: DeviceParams, current: float = 0.0, h_ext=(0.0, 0.0, 0.0),
             thermal=(0.0, 0.0, 0.0)) -> np.ndarray:
    """dm/dt in s^-1 for unit m (any leading batch shape)."""
    m = np.asarray(m, dtype=float)
    h = effective_field(m, params, h_ext, thermal)
    alpha = params.alpha
    m_x_h = _cross(m, h)
    dm = -m_x_h - alpha * _cross(m, m_x_h)

    if current != 0.0:
        beta = -params.beta_per_ampere() * current
        eps, eps_p = params.epsilon, params.eps_prime
        m_p = np.asarray(params.m_p, dtype=float)
        # m x (m_p x m) = m_p - (m . m_p) m for unit m
        damping_like = m_p - _dot(m, m_p)[..., None] * m
        dm = dm + beta * (eps + alpha * eps_p) * damping_like
        dm = dm + beta * (alpha * eps - eps_p) * _cross(m, m_p)
    return gamma_prime(params) * dm


def _heun(m, dt, params, current, h_ext, h_noise, fict_amp, push):
    h0 = h_noise if fict_amp == 0.0 else h_noise + fictitious_field(m, fict_amp, push)
    f0 = llgs_rhs(m, params, current, h_ext, h0)
    m_pred = m + dt * f0
    h1 = h_noise if fict_amp == 0.0 else h_noise + fictitious_field(m_pred, fict_amp, push)
    f1 = llgs_rhs(m_pred, params, current, h_ext, h1)
    m_new = m + 0.5 * dt * (f0 + f1)
    return m_new / _norm(m_new)[..., None]


def _step_angle(m_old, m_new) -> np.ndarray:
    chord = _norm(m_new - m_old)
    return 2.0 * np.arcsin(np.minimum(1.0, 0.5 * chord))


def step_heun(state: MagnetizationState, params: DeviceParams, current: float, dt: float,
              rng: Optional[Generator] = None, h_ext=(0.0, 0.0, 0.0)) -> MagnetizationState:
    """One stochastic Heun step; rng=None (or T handled by caller) gives the deterministic step."""
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt!r}")
    m = state.as_array()
    noise = np.zeros(3) if rng is None else thermal_field(params, dt, rng.standard_normal(3))
    m_new = _heun(m, dt, params, current, np.asarray(h_ext, dtype=float), noise, 0.0, 1.0)
    if not np.all(np.isfinite(m_new)):
        raise NonFiniteState(state.t + dt)
    angle = float(_step_angle(m, m_new))
    if angle > MAX_STEP_ANGLE:
        raise StepRejected(angle, dt, state.t)
    return MagnetizationState(tuple(m_new), state.t + dt)


@lru_cache(maxsize=32)
def _boltzmann_table(delta: float):
    theta = np.linspace(0.0, 0.5 * math.pi, BOLTZMANN_TABLE_POINTS)
    # mass between 0 and theta is F(1) - F(cos theta) with F the barrier integral
    top = float(boltzmann_cumulative(1.0, delta))
    cdf = (top - boltzmann_cumulative(np.cos(theta), delta)) / top
    cdf[0], cdf[-1] = 0.0, 1.0
    return cdf, theta


def boltzmann_polar_angle(delta: float, u) -> np.ndarray:
    """Inverse-CDF map of uniforms u onto theta in [0, pi/2] with density sin(theta) exp(-Delta sin^2 theta)."""
    cdf, theta = _boltzmann_table(float(delta))
    return np.interp(np.asarray(u, dtype=float), cdf, theta)


def default_well(waveform: DriveWaveform) -> Well:
    """Positive write current starts from the parallel well, negative from the antiparallel one."""
    return 'antiparallel' if waveform.segments[0].current < 0 else 'parallel'


def walk_generator(base_seed: int, walk: int) -> Generator:
    return Generator(Philox(SeedSequence(base_seed, spawn_key=(walk,))))


def _initial_stochastic(delta: float, well: Well, rng: Generator) -> np.ndarray:
    u, v = rng.random(2)
    theta = float(boltzmann_polar_angle(delta, u))
    if well == 'antiparallel':
        theta = math.pi - theta
    phi = 2.0 * math.pi * v
    st = math.sin(theta)
    return np.array([st * math.cos(phi), st * math.sin(phi), math.cos(theta)])


def _initial_tilted(delta: float, well: Well) -> np.ndarray:
    theta = boltzmann_theta0(delta)
    if well == 'antiparallel':
        theta = math.pi - theta
    return np.array([math.sin(theta), 0.0, math.cos(theta)])


class _Integrator:
    """Advances a batch of walks over a discretized waveform."""

    def __init__(self, params: DeviceParams, waveform: DriveWaveform, dt: float):
        self.params = params
        self.dts, self.currents, self.fields = waveform.discretize(dt)
        self.ends = np.cumsum(self.dts)
        self.n_steps = len(self.dts)
        self.sigmas = np.array([thermal_sigma(params, d) for d in self.dts])

    def run(self, m: np.ndarray, push: np.ndarray, generators: Optional[List[Generator]] = None,
            fict_amp: float = 0.0, sample_steps: Optional[np.ndarray] = None,
            record_every: int = 0, stop_on_switch: bool = False, walk_offset: int = 0):
        n = m.shape[0]
        first_switch = np.full(n, np.nan)
        sampled, next_sample = None, None
        if sample_steps is not None:
            sampled = np.zeros((n, len(sample_steps)), dtype=bool)
            sample_iter = iter(enumerate(sample_steps))
            next_sample = next(sample_iter, None)
        times, trajectory = ([0.0], [m.copy()]) if record_every else (None, None)
        zero = np.zeros((n, 3))
        noise = None
        t = 0.0

        for k in range(self.n_steps):
            if generators is not None and k % NOISE_CHUNK == 0:
                size = min(NOISE_CHUNK, self.n_steps - k)
                noise = np.stack([g.standard_normal((size, 3)) for g in generators])
            dt = self.dts[k]
            h_noise = zero if generators is None else self.sigmas[k] * noise[:, k % NOISE_CHUNK, :]

            m_new = _heun(m, dt, self.params, self.currents[k], self.fields[k], h_noise, fict_amp, push)
            if not np.all(np.isfinite(m_new)):
                bad = int(np.flatnonzero(~np.all(np.isfinite(m_new), axis=1))[0])
                raise NonFiniteState(t + dt, walk_offset + bad if generators is not None else None)
            angle = _step_angle(m, m_new)
            if angle.max() > MAX_STEP_ANGLE:
                raise StepRejected(float(angle.max()), dt, t)

            z_old, z_new = push * m[:, 2], push * m_new[:, 2]
            crossing = np.isnan(first_switch) & (z_new < 0.0) & (z_old >= 0.0)
            if crossing.any():
                frac = z_old[crossing] / (z_old[crossing] - z_new[crossing])
                first_switch[crossing] = t + frac * dt
            m = m_new
            t = float(self.ends[k])

            while next_sample is not None and next_sample[1] == k:
                sampled[:, next_sample[0]] = z_new < 0.0
                next_sample = next(sample_iter, None)
            if record_every and ((k + 1) % record_every == 0 or k == self.n_steps - 1):
                times.append(t)
                trajectory.append(m.copy())
            if stop_on_switch and not np.isnan(first_switch).any():
                break

        if record_every:
            times = np.asarray(times)
            trajectory = np.stack(trajectory, axis=1)
        return m, t, first_switch, sampled, times, trajectory


def run_transient(params: DeviceParams, waveform: DriveWaveform, dt: Optional[float] = None,
                  seed: int = 0, mode: TransientMode = 'stochastic', c_f: float = 0.0,
                  m0: Optional[Sequence[float]] = None, well: Optional[Well] = None,
                  record_every: int = 0, stop_on_switch: bool = False) -> TransientResult:
    """Integrate a single macrospin over the waveform.

    Stochastic mode seeds the Boltzmann initial tilt and the noise from one
    Philox stream; the other modes start at the thermal-mean tilt (or m0) and
    are fully deterministic. ``record_every`` keeps every n-th step of m(t).
    """
    if mode not in ('stochastic', 'fictitious', 'deterministic'):
        raise ValueError(f"unknown transient mode {mode!r}")
    if dt is None:
        dt = DEFAULT_DT_FRACTION * characteristic_time(params)
    well = well or default_well(waveform)
    integrator = _Integrator(params, waveform, dt)

    generators = None
    if mode == 'stochastic':
        rng = walk_generator(seed, 0)
        start = _initial_stochastic(params.delta, well, rng)
        generators = [rng]
    else:
        start = _initial_tilted(params.delta, well)
    if m0 is not None:
        start = np.asarray(m0, dtype=float)
        start = start / _norm(start)

    push = np.array([1.0 if start[2] >= 0.0 else -1.0])
    fict_amp = fictitious_amplitude(params, c_f) if mode == 'fictitious' else 0.0
    m, t, first_switch, _, times, trajectory = integrator.run(
        start[None, :], push, generators, fict_amp,
        record_every=record_every, stop_on_switch=stop_on_switch,
    )
    switch_time = None if np.isnan(first_switch[0]) else float(first_switch[0])
    return TransientResult(
        final_state=MagnetizationState(tuple(m[0]), t),
        switch_time=switch_time,
        times=times,
        trajectory=None if trajectory is None else trajectory[0],
        mode=mode,
        seed=seed if mode == 'stochastic' else None,
    )


def _ensemble_batch(params: DeviceParams, waveform: DriveWaveform, dt: float, base_seed: int,
                    start: int, stop: int, sample_steps: np.ndarray, well: Well):
    integrator = _Integrator(params, waveform, dt)
    generators = [walk_generator(base_seed, k) for k in range(start, stop)]
    m0 = np.stack([_initial_stochastic(params.delta, well, g) for g in generators])
    push = np.where(m0[:, 2] >= 0.0, 1.0, -1.0)
    m, _, first_switch, sampled, _, _ = integrator.run(
        m0, push, generators, sample_steps=sample_steps, walk_offset=start,
    )
    return sampled, first_switch, m[:, 2]


def binomial_interval(successes: int, trials: int, confidence: float = DEFAULT_CONFIDENCE):
    """Exact (Clopper-Pearson) interval for a binomial proportion."""
    ci = sps.binomtest(int(successes), int(trials)).proportion_ci(confidence, method='exact')
    return float(ci.low), float(ci.high)


def run_ensemble(params: DeviceParams, waveform: DriveWaveform, dt: Optional[float] = None,
                 n_walks: int = 1000, base_seed: int = 0,
                 sample_times: Optional[Sequence[float]] = None, n_samples: int = 100,
                 well: Optional[Well] = None, jobs: int = 1, batch_size: int = 500,
                 confidence: float = DEFAULT_CONFIDENCE) -> EnsembleResult:
    """Switched fraction versus time over ``n_walks`` stochastic walks."""
    if n_walks < 1:
        raise ValueError(f"n_walks must be >= 1, got {n_walks!r}")
    if dt is None:
        dt = DEFAULT_DT_FRACTION * characteristic_time(params)
    well = well or default_well(waveform)

    dts, _, _ = waveform.discretize(dt)
    ends = np.cumsum(dts)
    if sample_times is None:
        sample_times = np.linspace(0.0, waveform.total_duration, n_samples + 1)[1:]
    sample_times = np.asarray(sample_times, dtype=float)
    if np.any(sample_times <= 0) or np.any(np.diff(sample_times) <= 0):
        raise ValueError("sample_times must be positive and strictly increasing")
    # a sample is read at the end of the first step reaching it
    sample_steps = np.minimum(np.searchsorted(ends, sample_times * (1 - 1e-12)), len(ends) - 1)
    sample_times = ends[sample_steps]

    bounds = [(lo, min(lo + batch_size, n_walks)) for lo in range(0, n_walks, batch_size)]
    tasks = [(params, waveform, dt, base_seed, lo, hi, sample_steps, well) for lo, hi in bounds]
    logger.info("ensemble: %d walks in %d batches, %d steps each, jobs=%d",
                n_walks, len(tasks), len(dts), jobs)
    results = run_ordered(_ensemble_batch, tasks, jobs=jobs)

    sampled = np.concatenate([r[0] for r in results], axis=0)
    switch_times = np.concatenate([r[1] for r in results])
    final_mz = np.concatenate([r[2] for r in results])
    counts = sampled.sum(axis=0)
    intervals = np.array([binomial_interval(c, n_walks, confidence) for c in counts])
    return EnsembleResult(
        times=sample_times,
        switched_fraction=counts / n_walks,
        ci_low=intervals[:, 0],
        ci_high=intervals[:, 1],
        switch_times=switch_times,
        final_mz=final_mz,
        n_walks=n_walks,
        base_seed=base_seed,
        confidence=confidence,
    )
