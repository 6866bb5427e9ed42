"""
Shared plumbing for the mtj_app management commands.

Exit codes:
    0  success
    2  configuration or input error
    3  solver error
    4  fit error
    5  calibration error
"""

import logging
import time
from typing import Any, Dict, List, Optional

from django.core.management.base import BaseCommand, CommandError

from ...exceptions import (
    CalibrationError,
    ConfigError,
    FitError,
    IntegrationError,
    MTJModelError,
    SolverError,
    StatisticsError,
)
from ...run_config import RunConfig

logger = logging.getLogger(__name__)

EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_FIT = 4
EXIT_CALIBRATION = 5


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, CalibrationError):
        return EXIT_CALIBRATION
    if isinstance(exc, FitError):
        return EXIT_FIT
    if isinstance(exc, (SolverError, IntegrationError, StatisticsError)):
        return EXIT_SOLVER
    return EXIT_CONFIG


def float_list(text: str) -> List[float]:
    """Parse '1e-4,2e-4' into floats; used as an argparse ``type``."""
    try:
        return [float(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise ValueError(f"expected comma-separated numbers, got {text!r}") from None


class MTJCommand(BaseCommand):
    """Base for every solver command: config loading, error mapping, timing."""

    requires_system_checks = []
    require_device = True

    def add_arguments(self, parser):
        parser.add_argument(
            '--config',
            type=str,
            help='JSON run configuration (sections: device, solver, sweep, fit, output)',
        )
        parser.add_argument(
            '--out',
            type=str,
            help="Output path; '-' streams to standard output (default: output.path)",
        )
        parser.add_argument(
            '--jobs',
            type=int,
            help='Worker processes for sweeps and ensembles (0 = one per CPU)',
        )
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def overrides(self, options: Dict[str, Any]) -> Dict[str, Any]:
        """Dotted-path config overrides taken from command flags."""
        return {}

    def handle(self, *args, **options):
        name = self.__class__.__module__.rsplit('.', 1)[-1]
        started = time.perf_counter()
        logger.info("%s: start", name)
        try:
            overrides = {
                'output.path': options.get('out'),
                'solver.jobs': options.get('jobs'),
                **self.overrides(options),
            }
            config = RunConfig.load(options.get('config'), overrides, self.require_device)
            self.run(config, options)
        except CommandError:
            raise
        except MTJModelError as exc:
            raise CommandError(str(exc), returncode=exit_code(exc)) from exc
        except ValueError as exc:
            raise CommandError(str(exc), returncode=EXIT_CONFIG) from exc
        finally:
            logger.info("%s: finished in %.2f s", name, time.perf_counter() - started)

    def run(self, config: RunConfig, options: Dict[str, Any]) -> None:
        raise NotImplementedError

    # Output helpers --------------------------------------------------------

    def target(self, config: RunConfig):
        """Where data goes: a path, or this command's stdout for '-'."""
        path = config.output['path']
        return self.stdout if path == '-' else path

    def notice(self, config: RunConfig, message: str, style: Optional[str] = 'SUCCESS') -> None:
        """Human-readable message that never lands inside a data stream."""
        if config.output['path'] == '-':
            self.stderr.write(message)
        else:
            styler = getattr(self.style, style) if style else str
            self.stdout.write(styler(message))

    @staticmethod
    def fail(message: str, code: int = EXIT_CONFIG):
        raise CommandError(message, returncode=code)

    @staticmethod
    def single_current(config: RunConfig, flag: Optional[float]) -> float:
        if flag is not None:
            return float(flag)
        return config.currents()[0]

    @staticmethod
    def pulse_length(config: RunConfig, flag: Optional[float]) -> float:
        if flag is not None:
            if not flag > 0:
                raise ConfigError('--duration', 'must be > 0')
            return float(flag)
        return max(config.times())
