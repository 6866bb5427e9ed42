"""
Device description and normalization layer.

Houses the physical MTJ parameters, the fixed physical constants and the
conversion from lab quantities (A, s, A/m) to the dimensionless Fokker-Planck
inputs (i, h, Delta, tau).

Adopted relations:
    gamma'        = gamma * mu0 / (1 + alpha^2)                  [m A^-1 s^-1]
    Delta         = mu0 * Ms * Hk_eff * V / (2 kB T)             (unless supplied)
    eps * beta/I  = P * hbar / (2 * mu0 * q * Ms * V)            [A/m per A]
                    (eps = P/2, beta = hbar I / (mu0 q Ms V))
    I_c           = alpha * Hk_eff / (eps * beta/I)               [A]
    tau_d         = 1 / (alpha * gamma' * Hk_eff)                 [s]

SI units at every public boundary; dimensionless numbers only live inside
NormalizedDrive.
"""

import logging
import math
from dataclasses import dataclass, field, fields, replace
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy import special

from .exceptions import InvalidDeviceParams, ZeroCriticalCurrent

logger = logging.getLogger(__name__)

# Relative deviation between a supplied and a computed Delta that triggers a warning.
DELTA_CONSISTENCY_TOLERANCE = 0.20


@dataclass(frozen=True)
class PhysConstants:
    """Physical constants, compiled in."""
    gamma: float = 1.760859644e11       # rad s^-1 T^-1
    mu0: float = 4.0 * math.pi * 1e-7   # T m / A
    k_b: float = 1.380649e-23           # J / K
    hbar: float = 1.054571817e-34       # J s
    q: float = 1.602176634e-19          # C


PHYS = PhysConstants()


@dataclass(frozen=True)
class DeviceParams:
    """Physical description of a monodomain free layer with PMA along z."""
    m_s: float
    volume: float
    alpha: float
    h_k_eff: float
    temperature: float
    polarization_p: float = 0.7
    eps_prime: float = 0.0
    m_p: Tuple[float, float, float] = (0.0, 0.0, 1.0)
    delta: Optional[float] = None
    delta_supplied: bool = field(default=False, compare=False, repr=False)
    warnings: Tuple[str, ...] = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        for name in ('m_s', 'volume', 'h_k_eff', 'temperature'):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise InvalidDeviceParams(name, value, 'must be finite and > 0')
        # alpha = 0 is the undamped limit; tau_d and I_c reject it
        if not (isinstance(self.alpha, (int, float)) and math.isfinite(self.alpha) and self.alpha >= 0):
            raise InvalidDeviceParams('alpha', self.alpha, 'must be finite and >= 0')
        if not (0.0 < self.polarization_p <= 1.0):
            raise InvalidDeviceParams('polarization_p', self.polarization_p, 'must lie in (0, 1]')
        if not math.isfinite(self.eps_prime):
            raise InvalidDeviceParams('eps_prime', self.eps_prime, 'must be finite')

        m_p = tuple(float(c) for c in self.m_p)
        if len(m_p) != 3:
            raise InvalidDeviceParams('m_p', self.m_p, 'must be a 3-vector')
        norm = math.sqrt(sum(c * c for c in m_p))
        if abs(norm - 1.0) > 1e-12:
            raise InvalidDeviceParams('m_p', self.m_p, f'must have unit norm (|m_p|={norm!r})')
        object.__setattr__(self, 'm_p', m_p)

        computed = self.computed_delta()
        if self.delta is None:
            object.__setattr__(self, 'delta', computed)
            object.__setattr__(self, 'delta_supplied', False)
            return

        if not (math.isfinite(self.delta) and self.delta > 0):
            raise InvalidDeviceParams('delta', self.delta, 'must be finite and > 0')
        object.__setattr__(self, 'delta_supplied', True)
        deviation = abs(self.delta - computed) / computed
        if deviation > DELTA_CONSISTENCY_TOLERANCE:
            message = (
                f"supplied delta={self.delta:.4g} deviates {deviation:.0%} from "
                f"mu0*Ms*Hk*V/(2kT)={computed:.4g}"
            )
            object.__setattr__(self, 'warnings', self.warnings + (message,))
            logger.warning(message)

    def computed_delta(self) -> float:
        """Energy-barrier form of the thermal stability factor."""
        return (PHYS.mu0 * self.m_s * self.h_k_eff * self.volume
                / (2.0 * PHYS.k_b * self.temperature))

    def stt_prefactor(self) -> float:
        """Combined eps*beta per ampere, in A/m per A."""
        return (self.polarization_p * PHYS.hbar
                / (2.0 * PHYS.mu0 * PHYS.q * self.m_s * self.volume))

    def beta_per_ampere(self) -> float:
        """beta/I = hbar / (mu0 q Ms V), in A/m per A."""
        return PHYS.hbar / (PHYS.mu0 * PHYS.q * self.m_s * self.volume)

    @property
    def epsilon(self) -> float:
        return 0.5 * self.polarization_p

    def replace(self, **changes) -> 'DeviceParams':
        """Copy with changes; a derived Delta is recomputed from the new fields."""
        if 'delta' not in changes and not self.delta_supplied:
            changes['delta'] = None
        changes.setdefault('warnings', ())
        return replace(self, **changes)

    def as_dict(self) -> Dict[str, Any]:
        return {
            'm_s': self.m_s,
            'volume': self.volume,
            'alpha': self.alpha,
            'h_k_eff': self.h_k_eff,
            'delta': self.delta if self.delta_supplied else None,
            'temperature': self.temperature,
            'polarization_p': self.polarization_p,
            'eps_prime': self.eps_prime,
            'm_p': list(self.m_p),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'DeviceParams':
        """Build from a mapping of field names; unknown keys are rejected."""
        allowed = {f.name for f in fields(cls) if f.init and f.name not in ('delta_supplied', 'warnings')}
        unknown = set(data) - allowed
        if unknown:
            raise InvalidDeviceParams(sorted(unknown)[0], data[sorted(unknown)[0]], 'unknown device field')
        kwargs = dict(data)
        if kwargs.get('m_p') is not None:
            kwargs['m_p'] = tuple(kwargs['m_p'])
        else:
            kwargs.pop('m_p', None)
        return cls(**kwargs)


@dataclass(frozen=True)
class NormalizedDrive:
    """Dimensionless FPE inputs plus the constants that produced them."""
    i: float
    h: float
    delta: float
    i_c: float
    tau_d: float

    def __post_init__(self):
        if not self.tau_d > 0:
            raise ValueError(f"tau_d must be > 0, got {self.tau_d!r}")
        if not self.i_c > 0:
            raise ValueError(f"i_c must be > 0, got {self.i_c!r}")
        if not self.delta > 0:
            raise ValueError(f"delta must be > 0, got {self.delta!r}")

    @property
    def drift_offset(self) -> float:
        """i - h, the constant part of the polar drift."""
        return self.i - self.h

    def with_current(self, i: float) -> 'NormalizedDrive':
        return replace(self, i=i)


def gamma_prime(params: DeviceParams) -> float:
    """gamma * mu0 / (1 + alpha^2) in m A^-1 s^-1."""
    return PHYS.gamma * PHYS.mu0 / (1.0 + params.alpha * params.alpha)


def characteristic_time(params: DeviceParams) -> float:
    """tau_d = 1 / (alpha gamma' Hk_eff) in seconds."""
    if params.alpha == 0:
        raise InvalidDeviceParams('alpha', params.alpha, 'must be > 0 to define tau_d')
    return 1.0 / (params.alpha * gamma_prime(params) * params.h_k_eff)


def critical_current(params: DeviceParams, beta_eps: Optional[float] = None) -> float:
    """I_c = alpha Hk_eff / (eps beta per ampere) in amperes."""
    if beta_eps is None:
        beta_eps = params.stt_prefactor()
    if not (math.isfinite(beta_eps) and abs(beta_eps) > 1e-300):
        raise ZeroCriticalCurrent(
            beta_eps,
            m_s=params.m_s, volume=params.volume, polarization_p=params.polarization_p,
        )
    i_c = params.alpha * params.h_k_eff / abs(beta_eps)
    if not (math.isfinite(i_c) and i_c > 0):
        raise ZeroCriticalCurrent(beta_eps, alpha=params.alpha, h_k_eff=params.h_k_eff)
    return i_c


def normalize(params: DeviceParams, current: float, h_ext_z: float = 0.0,
              beta_eps: Optional[float] = None) -> NormalizedDrive:
    """Convert a lab drive (A, A/m) into the dimensionless FPE drive."""
    i_c = critical_current(params, beta_eps)
    return NormalizedDrive(
        i=current / i_c,
        h=h_ext_z / params.h_k_eff,
        delta=params.delta,
        i_c=i_c,
        tau_d=characteristic_time(params),
    )


def time_to_tau(t: float, drive: NormalizedDrive) -> float:
    return t / drive.tau_d


def tau_to_time(tau: float, drive: NormalizedDrive) -> float:
    return tau * drive.tau_d


def boltzmann_cumulative(x, delta: float):
    """Integral of exp(Delta (s^2 - 1)) ds from 0 to x, without overflow.

    exp(Delta s^2) integrates to exp(Delta x^2) D(sqrt(Delta) x) / sqrt(Delta) with
    D the Dawson function; the exp(-Delta) factor keeps the result bounded.
    """
    root = math.sqrt(delta)
    x = np.asarray(x, dtype=float)
    return np.exp(delta * (x * x - 1.0)) * special.dawsn(root * x) / root


def boltzmann_theta0(delta: float) -> float:
    """Thermal-mean tilt arcsin(sqrt(1 / (2 Delta))) used to seed deterministic runs."""
    return math.asin(min(1.0, math.sqrt(1.0 / (2.0 * delta))))


def reference_device(**overrides) -> DeviceParams:
    """The 50 nm / 1 nm PMA device used for solver cross-checks.

    Hk_eff = 177415 A/m, Delta = 63, alpha = 0.01, Ms = 1.2e6 A/m.
    """
    values = dict(
        m_s=1.2e6,
        volume=math.pi / 4.0 * 50e-9 * 50e-9 * 1.0e-9,
        alpha=0.01,
        h_k_eff=177415.0,
        delta=63.0,
        temperature=300.0,
        polarization_p=0.7,
        eps_prime=0.0,
    )
    values.update(overrides)
    return DeviceParams(**values)
