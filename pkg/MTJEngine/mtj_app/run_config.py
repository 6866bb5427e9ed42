"""
Run configuration shared by the management commands.

A run is described by five sections (device, solver, sweep, fit, output).
Values are resolved as command flags > JSON config file > settings defaults;
any key not present in the defaults is rejected with its dotted path.
"""

import copy
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Sequence

from django.conf import settings

from .device import DeviceParams
from .exceptions import ConfigError, DeviceError
from .fpe_fvm import GRADINGS
from .fit import FITTABLE, FitSpace, WEIGHT_PRESETS
from .stats import SolverSettings

logger = logging.getLogger(__name__)

REQUIRED_DEVICE_FIELDS = ('m_s', 'volume', 'alpha', 'h_k_eff')
DEFAULT_SETTINGS = {
    'device': 'MTJ_DEVICE_DEFAULTS',
    'solver': 'MTJ_SOLVER_DEFAULTS',
    'sweep': 'MTJ_SWEEP_DEFAULTS',
    'fit': 'MTJ_FIT_DEFAULTS',
    'output': 'MTJ_OUTPUT_DEFAULTS',
}


def defaults() -> Dict[str, Dict[str, Any]]:
    """Deep copy of the settings defaults, one dict per section."""
    out = {}
    for section, name in DEFAULT_SETTINGS.items():
        out[section] = copy.deepcopy(dict(getattr(settings, name, {})))
    for key in REQUIRED_DEVICE_FIELDS:
        out['device'].setdefault(key, None)
    return out


def merge(base: Dict[str, Dict[str, Any]], data: Mapping[str, Any], origin: str = '') -> None:
    """Overlay ``data`` on ``base`` in place, rejecting unknown sections and keys."""
    if not isinstance(data, Mapping):
        raise ConfigError(origin or '<root>', 'expected an object of sections')
    for section, values in data.items():
        if section not in base:
            raise ConfigError(section, 'unknown section')
        if not isinstance(values, Mapping):
            raise ConfigError(section, 'expected an object')
        for key, value in values.items():
            if key not in base[section]:
                raise ConfigError(f'{section}.{key}', 'unknown key')
            base[section][key] = value


def apply_overrides(base: Dict[str, Dict[str, Any]], overrides: Mapping[str, Any]) -> None:
    """Apply dotted-path overrides (``solver.jobs``); None leaves the value alone."""
    for path, value in overrides.items():
        if value is None:
            continue
        section, _, key = path.partition('.')
        if section not in base or key not in base[section]:
            raise ConfigError(path, 'unknown key')
        base[section][key] = value


def _number_list(path: str, values) -> list:
    if not isinstance(values, (list, tuple)):
        raise ConfigError(path, 'expected a list of numbers')
    out = []
    for k, value in enumerate(values):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(f'{path}[{k}]', f'{value!r} is not a finite number')
        out.append(float(value))
    return out


def _device(values: Dict[str, Any]) -> DeviceParams:
    missing = [k for k in REQUIRED_DEVICE_FIELDS if values.get(k) is None]
    if missing:
        raise ConfigError(f'device.{missing[0]}', 'required field is missing')
    try:
        return DeviceParams.from_dict(values)
    except DeviceError as exc:
        raise ConfigError(f'device.{getattr(exc, "field", "")}'.rstrip('.'), str(exc)) from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError('device', str(exc)) from exc


def _solver(values: Dict[str, Any]) -> SolverSettings:
    if values.get('grading') not in GRADINGS:
        raise ConfigError('solver.grading', f"must be one of {', '.join(GRADINGS)}")
    for key, low in (('mesh_cells', 2), ('n_coeffs', 1), ('jobs', 0)):
        value = values.get(key)
        if isinstance(value, bool) or not isinstance(value, int) or value < low:
            raise ConfigError(f'solver.{key}', f'must be an integer >= {low}')
    try:
        return SolverSettings.from_dict(values)
    except (TypeError, ValueError) as exc:
        raise ConfigError('solver', str(exc)) from exc


def _sweep(values: Dict[str, Any]) -> Dict[str, Any]:
    out = dict(values)
    for key in ('currents_a', 'times_s', 'read_currents_a'):
        out[key] = _number_list(f'sweep.{key}', values[key])
    if any(t <= 0 for t in out['times_s']):
        raise ConfigError('sweep.times_s', 'pulse widths must be > 0')
    if out['t_read_s'] is not None:
        if not (isinstance(out['t_read_s'], (int, float)) and out['t_read_s'] > 0):
            raise ConfigError('sweep.t_read_s', 'must be a number > 0')
        out['t_read_s'] = float(out['t_read_s'])
    out['h_ext_z'] = _number_list('sweep.h_ext_z', [out['h_ext_z']])[0]
    if not (isinstance(out['n_samples'], int) and out['n_samples'] >= 1):
        raise ConfigError('sweep.n_samples', 'must be an integer >= 1')
    return out


def _fit(values: Dict[str, Any]) -> Dict[str, Any]:
    out = dict(values, bounds=dict(values['bounds']), scales=dict(values['scales']))
    out['free'] = list(out['free'])
    for k, name in enumerate(out['free']):
        if name not in FITTABLE:
            raise ConfigError(f'fit.free[{k}]', f'{name!r} is not one of {", ".join(FITTABLE)}')
    for name, pair in out['bounds'].items():
        if name not in FITTABLE:
            raise ConfigError(f'fit.bounds.{name}', 'not a fittable device field')
        out['bounds'][name] = tuple(_number_list(f'fit.bounds.{name}', pair))
        if len(out['bounds'][name]) != 2:
            raise ConfigError(f'fit.bounds.{name}', 'expected [lower, upper]')
    for name, scale in out['scales'].items():
        if scale not in ('linear', 'log'):
            raise ConfigError(f'fit.scales.{name}', "must be 'linear' or 'log'")
    if out['weights'] not in WEIGHT_PRESETS:
        raise ConfigError('fit.weights', f'must be one of {", ".join(WEIGHT_PRESETS)}')
    if not (isinstance(out['hops'], int) and out['hops'] >= 1):
        raise ConfigError('fit.hops', 'must be an integer >= 1')
    out['wer_targets'] = _number_list('fit.wer_targets', out['wer_targets'])
    for k, target in enumerate(out['wer_targets']):
        if not 0.0 < target < 1.0:
            raise ConfigError(f'fit.wer_targets[{k}]', 'must lie in (0, 1)')
    return out


def _output(values: Dict[str, Any]) -> Dict[str, Any]:
    out = dict(values)
    if not (isinstance(out['decimation'], int) and out['decimation'] >= 1):
        raise ConfigError('output.decimation', 'must be an integer >= 1')
    if not (isinstance(out['snapshots'], int) and out['snapshots'] >= 0):
        raise ConfigError('output.snapshots', 'must be an integer >= 0')
    return out


@dataclass(frozen=True)
class RunConfig:
    device: Optional[DeviceParams]
    solver: SolverSettings
    sweep: Dict[str, Any] = field(default_factory=dict)
    fit: Dict[str, Any] = field(default_factory=dict)
    output: Dict[str, Any] = field(default_factory=dict)
    source: str = ''

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any], overrides: Optional[Mapping[str, Any]] = None,
                     source: str = '', require_device: bool = True) -> 'RunConfig':
        resolved = defaults()
        if require_device and 'device' not in data:
            raise ConfigError('device', 'missing section')
        merge(resolved, data, source)
        apply_overrides(resolved, overrides or {})

        device = None
        if require_device or any(resolved['device'].get(k) is not None for k in REQUIRED_DEVICE_FIELDS):
            device = _device(resolved['device'])
        return cls(
            device=device,
            solver=_solver(resolved['solver']),
            sweep=_sweep(resolved['sweep']),
            fit=_fit(resolved['fit']),
            output=_output(resolved['output']),
            source=source,
        )

    @classmethod
    def load(cls, path, overrides: Optional[Mapping[str, Any]] = None,
             require_device: bool = True) -> 'RunConfig':
        """Read a JSON config file; ``path=None`` resolves defaults and overrides only."""
        if path is None:
            return cls.from_mapping({}, overrides, '', require_device)
        path = Path(path)
        try:
            text = path.read_text(encoding='utf-8')
        except OSError as exc:
            raise ConfigError(str(path), f'cannot read config ({exc.strerror or exc})') from exc
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(str(path), f'invalid JSON at line {exc.lineno} column {exc.colno}') from exc
        logger.debug("loaded run config from %s", path)
        return cls.from_mapping(data, overrides, str(path), require_device)

    def with_device(self, params: DeviceParams) -> 'RunConfig':
        return RunConfig(params, self.solver, self.sweep, self.fit, self.output, self.source)

    def fit_settings(self) -> SolverSettings:
        """Solver settings used inside the loss, honouring fit.n_coeffs."""
        n_coeffs = self.fit.get('n_coeffs')
        if n_coeffs is None:
            return self.solver
        return SolverSettings.from_dict({**self.solver.as_dict(), 'n_coeffs': int(n_coeffs)})

    def fit_space(self, base: Optional[DeviceParams] = None) -> FitSpace:
        base = base or self.device
        try:
            return FitSpace.around(
                base, free=self.fit['free'], spread=float(self.fit['spread']),
                bounds=self.fit['bounds'], scales=self.fit['scales'],
            )
        except ValueError as exc:
            raise ConfigError('fit', str(exc)) from exc

    def as_dict(self) -> Dict[str, Any]:
        """JSON-ready nested dict that loads back to an equal RunConfig."""
        fit = dict(self.fit)
        fit['bounds'] = {k: list(v) for k, v in fit['bounds'].items()}
        return {
            'device': self.device.as_dict() if self.device is not None else {},
            'solver': self.solver.as_dict(),
            'sweep': dict(self.sweep),
            'fit': fit,
            'output': dict(self.output),
        }

    def currents(self, flag: Optional[Sequence[float]] = None) -> list:
        values = list(flag) if flag else self.sweep['currents_a']
        if not values:
            raise ConfigError('sweep.currents_a', 'no write current given')
        return [float(v) for v in values]

    def times(self, flag: Optional[Sequence[float]] = None) -> list:
        values = list(flag) if flag else self.sweep['times_s']
        if not values:
            raise ConfigError('sweep.times_s', 'no pulse widths given')
        return [float(v) for v in values]
