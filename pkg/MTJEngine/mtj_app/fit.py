"""
Regression of device parameters against measured error-rate points and
calibration of the fictitious-field coefficients c_f per WER target.

The loss is a weighted sum of squared log10 ratios between model and measured
pulse widths. Free parameters live in unit-scaled coordinates (linear or log),
the global search is scipy's basin hopping with a bounded Gaussian step and the
local phase is L-BFGS-B with central-difference gradients.
"""

import hashlib
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from . import __version__, sllgs
from .device import DeviceParams
from .exceptions import (
    BudgetExhausted,
    CalibrationNoCross,
    IncompleteCalibration,
    MTJModelError,
    NoBracket,
)
from .parallel import run_ordered
from .stats import ErrorRatePoint, SolverSettings, time_to_wer

logger = logging.getLogger(__name__)

FAILURE_PENALTY = 1e3
GRADIENT_STEP = 1e-4
DEFAULT_FREE = ('m_s', 'h_k_eff', 'alpha', 'volume', 'polarization_p')
FITTABLE = ('m_s', 'volume', 'alpha', 'h_k_eff', 'temperature', 'polarization_p', 'eps_prime')
DEFAULT_LOG_SCALED = ('m_s', 'h_k_eff', 'alpha', 'volume')
CALIBRATION_BRACKET = (0.0, 20.0)
CALIBRATION_RTOL = 0.01
NO_SWITCH_FACTOR = 10.0

DECK_DEVICE_KEYS = (
    ('msat_a_per_m', 'm_s'),
    ('volume_m3', 'volume'),
    ('alpha', 'alpha'),
    ('hk_eff_a_per_m', 'h_k_eff'),
    ('delta', 'delta'),
    ('temp_k', 'temperature'),
    ('pol_p', 'polarization_p'),
    ('eps_prime', 'eps_prime'),
)
DECK_MP_KEYS = ('mp_x', 'mp_y', 'mp_z')
CF_PREFIX = 'cf_wer_'
PROVENANCE_ESCAPES = (('\\', '\\\\'), ('\n', '\\n'), ('\r', '\\r'))


# Parameter space -------------------------------------------------------------

@dataclass(frozen=True)
class FitParameter:
    name: str
    lower: float
    upper: float
    scale: str = 'linear'
    frozen: bool = False

    def __post_init__(self):
        if self.name not in FITTABLE:
            raise ValueError(f"{self.name!r} is not a fittable device field")
        if not (math.isfinite(self.lower) and math.isfinite(self.upper) and self.lower < self.upper):
            raise ValueError(f"{self.name}: bounds must be finite with lower < upper")
        if self.scale not in ('linear', 'log'):
            raise ValueError(f"{self.name}: scale must be 'linear' or 'log', got {self.scale!r}")
        if self.scale == 'log' and self.lower <= 0:
            raise ValueError(f"{self.name}: log-scaled bounds must be > 0")

    def to_unit(self, value: float) -> float:
        if self.scale == 'log':
            return (math.log(value) - math.log(self.lower)) / (math.log(self.upper) - math.log(self.lower))
        return (value - self.lower) / (self.upper - self.lower)

    def from_unit(self, u: float) -> float:
        u = min(1.0, max(0.0, float(u)))
        if self.scale == 'log':
            return math.exp(math.log(self.lower) + u * (math.log(self.upper) - math.log(self.lower)))
        return self.lower + u * (self.upper - self.lower)


@dataclass(frozen=True)
class FitSpace:
    """Bounded search space around a base device; Delta is re-derived at every point."""
    base: DeviceParams
    parameters: Tuple[FitParameter, ...]

    def __post_init__(self):
        parameters = tuple(self.parameters)
        names = [p.name for p in parameters]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter in fit space")
        object.__setattr__(self, 'parameters', parameters)

    @classmethod
    def around(cls, base: DeviceParams, free: Sequence[str] = DEFAULT_FREE, spread: float = 2.0,
               bounds: Optional[Mapping[str, Tuple[float, float]]] = None,
               scales: Optional[Mapping[str, str]] = None) -> 'FitSpace':
        """Space with every free field bounded by base/spread .. base*spread unless overridden."""
        bounds, scales = dict(bounds or {}), dict(scales or {})
        parameters = []
        for name in free:
            value = getattr(base, name)
            scale = scales.get(name, 'log' if name in DEFAULT_LOG_SCALED else 'linear')
            if name in bounds:
                lower, upper = bounds[name]
            elif name == 'polarization_p':
                lower, upper = max(1e-3, value / spread), min(1.0, value * spread)
            elif name == 'eps_prime':
                # signed ratio, often exactly zero
                lower, upper = value - 0.5 * spread, value + 0.5 * spread
            else:
                lower, upper = value / spread, value * spread
            parameters.append(FitParameter(name, float(lower), float(upper), scale))
        return cls(base, tuple(parameters))

    @property
    def free(self) -> Tuple[FitParameter, ...]:
        return tuple(p for p in self.parameters if not p.frozen)

    def initial_unit(self) -> np.ndarray:
        return np.array([min(1.0, max(0.0, p.to_unit(getattr(self.base, p.name)))) for p in self.free])

    def params_at(self, u: Sequence[float]) -> DeviceParams:
        changes = {p.name: p.from_unit(x) for p, x in zip(self.free, u)}
        return self.base.replace(delta=None, **changes)


@dataclass(frozen=True)
class FitTraceEntry:
    hop: int
    loss: float
    accepted: bool
    evaluations: int
    point: Tuple[float, ...]


@dataclass(frozen=True)
class FitResult:
    best: DeviceParams
    loss: float
    residuals: np.ndarray = field(compare=False)
    model_times: np.ndarray = field(compare=False)
    trace: Tuple[FitTraceEntry, ...] = ()
    status: str = 'converged'
    evaluations: int = 0
    initial_loss: float = math.nan
    seed: int = 0

    @property
    def improved(self) -> bool:
        return self.loss < self.initial_loss


# Loss ----------------------------------------------------------------------

def uniform_weights(dataset: Sequence[ErrorRatePoint]) -> np.ndarray:
    return np.ones(len(dataset))


def high_current_weights(dataset: Sequence[ErrorRatePoint]) -> np.ndarray:
    """Weights ~ 1 / t_meas normalised to mean one; short pulses are the high-current points."""
    w = 1.0 / np.array([p.pulse_width for p in dataset])
    return w * (len(w) / w.sum())


WEIGHT_PRESETS = {'uniform': uniform_weights, 'high_current': high_current_weights}


def resolve_weights(dataset, weights) -> np.ndarray:
    if weights is None:
        weights = 'uniform'
    if isinstance(weights, str):
        try:
            return WEIGHT_PRESETS[weights](dataset)
        except KeyError:
            raise ValueError(f"unknown weight preset {weights!r}") from None
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (len(dataset),):
        raise ValueError("one weight per dataset point is required")
    return weights


def _point_residual(params: DeviceParams, point: ErrorRatePoint, settings: SolverSettings):
    """(log10 ratio, model time) for one point; failures become finite penalties."""
    try:
        t_model = time_to_wer(params, point.current, point.rate, settings)
    except NoBracket as exc:
        deficit = math.log10(max(exc.rate_at_max, point.rate) / point.rate)
        return math.log10(exc.t_max / point.pulse_width) + deficit, math.nan
    except (MTJModelError, ValueError, ArithmeticError) as exc:
        logger.debug("loss point failed at I=%.4e: %s", point.current, exc)
        return math.sqrt(FAILURE_PENALTY), math.nan
    return math.log10(t_model / point.pulse_width), t_model


def residuals(params: DeviceParams, dataset: Sequence[ErrorRatePoint],
              settings: SolverSettings = SolverSettings(), jobs: int = 1):
    """Per-point log10(t_model / t_meas) and model times."""
    rows = run_ordered(_point_residual, [(params, p, settings) for p in dataset], jobs=jobs)
    return np.array([r[0] for r in rows]), np.array([r[1] for r in rows])


def loss(params: DeviceParams, dataset: Sequence[ErrorRatePoint], weights=None,
         settings: SolverSettings = SolverSettings(), jobs: int = 1) -> float:
    """sum w (log10 t_model - log10 t_meas)^2; never raises on solver failures."""
    if not dataset:
        raise ValueError("dataset must not be empty")
    res, _ = residuals(params, dataset, settings, jobs)
    return float(np.sum(resolve_weights(dataset, weights) * res * res))


# Optimizer -----------------------------------------------------------------

class _BudgetStop(Exception):
    pass


class _Objective:
    """Counts evaluations, caches by point and tracks the best point seen."""

    def __init__(self, space: FitSpace, dataset, weights, settings, max_evaluations, jobs):
        self.space = space
        self.dataset = tuple(dataset)
        self.weights = resolve_weights(self.dataset, weights)
        self.settings = settings
        self.max_evaluations = max_evaluations
        self.jobs = jobs
        self.evaluations = 0
        self.cache: Dict[Tuple[float, ...], float] = {}
        self.best_u: Optional[np.ndarray] = None
        self.best_loss = math.inf
        self.best_detail = None

    def __call__(self, u) -> float:
        key = tuple(float(x) for x in np.clip(u, 0.0, 1.0))
        if key in self.cache:
            return self.cache[key]
        if self.max_evaluations is not None and self.evaluations >= self.max_evaluations:
            raise _BudgetStop()
        self.evaluations += 1
        params = self.space.params_at(key)
        res, times = residuals(params, self.dataset, self.settings, self.jobs)
        value = float(np.sum(self.weights * res * res))
        self.cache[key] = value
        if value < self.best_loss:
            self.best_loss, self.best_u, self.best_detail = value, np.array(key), (params, res, times)
        return value

    def gradient(self, u) -> np.ndarray:
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        grad = np.zeros_like(u)
        for j in range(len(u)):
            up, down = u.copy(), u.copy()
            up[j] = min(1.0, u[j] + GRADIENT_STEP)
            down[j] = max(0.0, u[j] - GRADIENT_STEP)
            grad[j] = (self(up) - self(down)) / (up[j] - down[j])
        return grad


class _BoundedGaussianStep:
    """Gaussian displacement of fixed sigma, reflected back into the unit box."""

    def __init__(self, sigma: float, seed: int):
        self.sigma = sigma
        self.rng = np.random.default_rng(seed)

    def __call__(self, u):
        u = np.asarray(u, dtype=float) + self.rng.normal(0.0, self.sigma, size=len(u))
        u = np.abs(u)
        u = np.where(u > 1.0, 2.0 - u, u)
        return np.clip(u, 0.0, 1.0)


def fit_parameters(dataset: Sequence[ErrorRatePoint], space: FitSpace, hops: int = 50,
                   seed: int = 0, settings: SolverSettings = SolverSettings(), weights=None,
                   max_evaluations: Optional[int] = None, step_sigma: float = 0.1,
                   temperature: float = 1.0, local_maxiter: int = 30, jobs: int = 1,
                   strict: bool = False) -> FitResult:
    """Basin hopping over the free parameters of ``space``.

    With ``strict`` a budget overrun raises BudgetExhausted carrying the
    best-so-far result; otherwise that result is returned with
    status 'budget_exhausted'.
    """
    if hops < 1:
        raise ValueError(f"hops must be >= 1, got {hops!r}")
    if max_evaluations is not None and max_evaluations < 1:
        raise ValueError(f"max_evaluations must be >= 1, got {max_evaluations!r}")
    if not dataset:
        raise ValueError("dataset must not be empty")
    objective = _Objective(space, dataset, weights, settings, max_evaluations, jobs)
    u0 = space.initial_unit()

    if not space.free:
        res, times = residuals(space.base, dataset, settings, jobs)
        value = float(np.sum(objective.weights * res * res))
        entry = FitTraceEntry(0, value, True, 1, ())
        return FitResult(space.base, value, res, times, (entry,), 'frozen', 1, value, seed)

    initial_loss = objective(u0)
    trace: List[FitTraceEntry] = [FitTraceEntry(0, initial_loss, True, objective.evaluations, tuple(u0))]
    logger.info("fit start: %d free parameters, initial loss %.6g", len(u0), initial_loss)

    def callback(x, f, accept):
        hop = len(trace)
        trace.append(FitTraceEntry(hop, float(f), bool(accept), objective.evaluations, tuple(map(float, x))))
        logger.info("hop %d: loss %.6g (%s), best %.6g, %d evaluations",
                    hop, f, 'accepted' if accept else 'rejected', objective.best_loss, objective.evaluations)

    status = 'converged'
    try:
        optimize.basinhopping(
            objective, u0, niter=hops, T=temperature,
            take_step=_BoundedGaussianStep(step_sigma, seed),
            minimizer_kwargs={
                'method': 'L-BFGS-B',
                'jac': objective.gradient,
                'bounds': [(0.0, 1.0)] * len(u0),
                'options': {'maxiter': local_maxiter},
            },
            callback=callback,
            seed=seed,
        )
    except _BudgetStop:
        status = 'budget_exhausted'
        logger.warning("fit stopped after %d evaluations (budget)", objective.evaluations)

    params, res, times = objective.best_detail
    result = FitResult(params, objective.best_loss, res, times, tuple(trace), status,
                       objective.evaluations, initial_loss, seed)
    if strict and status == 'budget_exhausted':
        raise BudgetExhausted(objective.evaluations, result)
    return result


def synthesize_dataset(params: DeviceParams, currents: Sequence[float], wer_levels: Sequence[float],
                       settings: SolverSettings = SolverSettings(), jobs: int = 1) -> Tuple[ErrorRatePoint, ...]:
    """Pulse widths reaching each WER level at each current, tagged as measured."""
    tasks = [(params, float(c), float(level), settings) for c in currents for level in wer_levels]
    times = run_ordered(time_to_wer, tasks, jobs=jobs)
    return tuple(
        ErrorRatePoint(c, t, params.temperature, level, 'WER', 'measured', 'measured')
        for (_, c, level, _), t in zip(tasks, times)
    )


def dataset_hash(dataset: Sequence[ErrorRatePoint]) -> str:
    text = '\n'.join(
        f"{p.current:.17g},{p.pulse_width:.17g},{p.temperature:.17g},{p.rate:.17g},{p.kind}"
        for p in dataset
    )
    return hashlib.sha256(text.encode('utf-8')).hexdigest()


# Fictitious-field calibration ----------------------------------------------

def fictitious_switch_time(params: DeviceParams, c_f: float, current: float, horizon: float,
                           dt: Optional[float] = None, h_ext_z: float = 0.0) -> Optional[float]:
    waveform = sllgs.DriveWaveform.constant(current, horizon, (0.0, 0.0, h_ext_z))
    result = sllgs.run_transient(params, waveform, dt=dt, mode='fictitious', c_f=c_f, stop_on_switch=True)
    return result.switch_time


def calibrate_cf(params: DeviceParams, wer_target: float, current: float,
                 settings: SolverSettings = SolverSettings(), t_star: Optional[float] = None,
                 dt: Optional[float] = None, bracket: Tuple[float, float] = CALIBRATION_BRACKET,
                 max_expansions: int = 4, h_ext_z: float = 0.0) -> float:
    """c_f whose fictitious-mode transient switches at the FPE time for ``wer_target``.

    ``h_ext_z`` must match the field the deck is later replayed under.
    """
    if t_star is None:
        t_star = time_to_wer(params, current, wer_target, settings, h_ext_z)
    dt = dt if dt is not None else settings.sllgs_dt
    horizon = NO_SWITCH_FACTOR * t_star

    def mismatch(c_f):
        t_sw = fictitious_switch_time(params, c_f, current, horizon, dt, h_ext_z)
        return (horizon if t_sw is None else t_sw) - t_star

    lo, hi = map(float, bracket)
    f_lo, f_hi = mismatch(lo), mismatch(hi)
    for _ in range(max_expansions):
        if f_lo >= 0 >= f_hi:
            break
        width = hi - lo
        if f_hi > 0:
            # still too slow at the top of the bracket
            lo, f_lo = hi, f_hi
            hi = hi + 2.0 * width
            f_hi = mismatch(hi)
        else:
            lo, hi, f_hi = lo - 2.0 * width, lo, f_lo
            f_lo = mismatch(lo)
        logger.info("c_f bracket expanded to [%g, %g] for WER %g", lo, hi, wer_target)
    if not (f_lo >= 0 >= f_hi):
        raise CalibrationNoCross(wer_target, t_star, (lo, hi))
    if f_lo == 0:
        return lo
    if f_hi == 0:
        return hi

    c_f = optimize.brentq(mismatch, lo, hi, xtol=1e-6, rtol=1e-8)
    achieved = mismatch(c_f) + t_star
    if abs(achieved - t_star) > CALIBRATION_RTOL * t_star:
        logger.warning("c_f=%.6g switches at %.4e s, target %.4e s", c_f, achieved, t_star)
    return float(c_f)


# Model card ----------------------------------------------------------------

def cf_key(target: float) -> str:
    return f"{CF_PREFIX}{float(target)!r}"


def escape_provenance(text: str) -> str:
    for raw, escaped in PROVENANCE_ESCAPES:
        text = text.replace(raw, escaped)
    return text


def unescape_provenance(text: str) -> str:
    out, chars = [], iter(text)
    for ch in chars:
        if ch == '\\':
            nxt = next(chars, '')
            out.append({'n': '\n', 'r': '\r', '\\': '\\'}.get(nxt, '\\' + nxt))
        else:
            out.append(ch)
    return ''.join(out)


def _check_provenance_key(key: str) -> str:
    if not key or '=' in key or any(ch in key for ch in '\r\n'):
        raise ValueError(f"provenance key {key!r} must be non-empty without '=' or line breaks")
    return key


@dataclass(frozen=True)
class ModelCard:
    params: DeviceParams
    cf_map: Dict[float, float]
    provenance: Dict[str, str] = field(default_factory=dict)

    def targets(self) -> Tuple[float, ...]:
        return tuple(sorted(self.cf_map, reverse=True))

    def to_deck(self) -> str:
        """One ``name = value`` line per entry; provenance values are backslash-escaped."""
        lines = [f"# {_check_provenance_key(key.strip())} = {escape_provenance(str(value))}"
                 for key, value in self.provenance.items()]
        for key, attr in DECK_DEVICE_KEYS:
            lines.append(f"{key} = {float(getattr(self.params, attr)):.17g}")
        for key, component in zip(DECK_MP_KEYS, self.params.m_p):
            lines.append(f"{key} = {float(component):.17g}")
        for target in self.targets():
            lines.append(f"{cf_key(target)} = {float(self.cf_map[target]):.17g}")
        return '\n'.join(lines) + '\n'


def emit_model_card(params: DeviceParams, cf_map: Mapping[float, Optional[float]],
                    metadata: Optional[Mapping[str, object]] = None,
                    targets: Optional[Sequence[float]] = None) -> ModelCard:
    """Model card for the calibrated targets; every requested target needs a c_f."""
    targets = [float(t) for t in (targets if targets is not None else cf_map)]
    cleaned = {float(k): v for k, v in cf_map.items()}
    missing = [t for t in targets if cleaned.get(t) is None or not math.isfinite(cleaned[t])]
    if missing:
        raise IncompleteCalibration(missing)
    provenance = {'tool_version': __version__}
    provenance.update({_check_provenance_key(str(k).strip()): str(v) for k, v in (metadata or {}).items()})
    return ModelCard(params, {t: float(cleaned[t]) for t in targets}, provenance)


def load_model_card(text: str) -> ModelCard:
    """Parse a deck written by ModelCard.to_deck."""
    values: Dict[str, float] = {}
    provenance: Dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith('#'):
            key, sep, value = line[1:].partition('=')
            if sep:
                provenance[key.strip()] = unescape_provenance(value.strip())
            continue
        key, sep, value = line.partition('=')
        if not sep:
            raise ValueError(f"deck line {number}: expected 'name = value'")
        try:
            values[key.strip()] = float(value)
        except ValueError:
            raise ValueError(f"deck line {number}: {value.strip()!r} is not a number") from None

    device = {}
    for key, attr in DECK_DEVICE_KEYS:
        if key not in values:
            raise ValueError(f"deck is missing {key}")
        device[attr] = values.pop(key)
    present = [key for key in DECK_MP_KEYS if key in values]
    if present and len(present) != len(DECK_MP_KEYS):
        raise ValueError(f"deck gives only {', '.join(present)} of {', '.join(DECK_MP_KEYS)}")
    if present:
        device['m_p'] = tuple(values.pop(key) for key in DECK_MP_KEYS)
    cf_map = {}
    for key in list(values):
        if not key.startswith(CF_PREFIX):
            raise ValueError(f"unknown deck key {key!r}")
        cf_map[float(key[len(CF_PREFIX):])] = values.pop(key)
    return ModelCard(DeviceParams(**device), cf_map, provenance)


def deck_cf(card: ModelCard, target: float) -> float:
    try:
        return card.cf_map[float(target)]
    except KeyError:
        raise IncompleteCalibration([target]) from None
