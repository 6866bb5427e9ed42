"""
Exception hierarchy for the MTJ switching toolbox.

Every error raised by the solvers derives from MTJModelError so the management
commands can translate a whole family into one exit code.
"""

from typing import Iterable, Optional


class MTJModelError(Exception):
    """Root of all domain errors."""


# Device description ---------------------------------------------------------

class DeviceError(MTJModelError):
    """Problems with the physical device description."""


class InvalidDeviceParams(DeviceError, ValueError):
    """A DeviceParams field violates its physical range."""

    def __init__(self, field: str, value, reason: str):
        self.field = field
        self.value = value
        super().__init__(f"{field}={value!r}: {reason}")


class ZeroCriticalCurrent(DeviceError):
    """The STT prefactor underflows, so I_c is undefined."""

    def __init__(self, beta_eps: float, **offending):
        self.beta_eps = beta_eps
        self.offending = offending
        details = ', '.join(f'{k}={v!r}' for k, v in offending.items())
        super().__init__(
            f"STT prefactor eps*beta={beta_eps!r} per ampere gives no critical current ({details})"
        )


# s-LLGS integration -----------------------------------------------------------

class IntegrationError(MTJModelError):
    """Failures of the macrospin integrator."""


class StepRejected(IntegrationError):
    """A single Heun step rotated m by more than the allowed angle."""

    def __init__(self, angle: float, dt: float, t: float):
        self.angle = angle
        self.dt = dt
        self.t = t
        super().__init__(
            f"step at t={t:.6e} s rotated m by {angle:.3f} rad with dt={dt:.3e} s; reduce dt"
        )


class NonFiniteState(IntegrationError):
    """The magnetization diverged to NaN/inf."""

    def __init__(self, time: float, walk_index: Optional[int] = None):
        self.time = time
        self.walk_index = walk_index
        where = f" in walk {walk_index}" if walk_index is not None else ""
        super().__init__(f"non-finite magnetization at t={time:.6e} s{where}")


# FPE solvers ------------------------------------------------------------------

class SolverError(MTJModelError):
    """Failures inside the Fokker-Planck solvers."""


class BadGrading(SolverError, ValueError):
    """Mesh request that cannot produce a valid ThetaMesh."""


class PoleEvaluation(SolverError, ValueError):
    """Drift/diffusion requested exactly on a pole."""


class SolverSingular(SolverError):
    """The Crank-Nicolson system could not be solved."""

    def __init__(self, dtau: float, cells: int, detail: str = '', tau: Optional[float] = None):
        self.dtau = dtau
        self.cells = cells
        self.tau = tau
        at = f" at tau={tau:.6g}" if tau is not None else ""
        super().__init__(f"singular CN system (dtau={dtau:.3e}, M={cells}){at} {detail}".rstrip())


class NegativeMass(SolverError):
    """A cell mass went below the clipping tolerance."""

    def __init__(self, minimum: float, tau: float):
        self.minimum = minimum
        self.tau = tau
        super().__init__(f"cell mass {minimum:.3e} below tolerance at tau={tau:.6g}")


class NotNormalized(SolverError, ValueError):
    """Initial density does not integrate to one."""

    def __init__(self, total: float):
        self.total = total
        super().__init__(f"initial density integrates to {total:.12g}, expected 1")


class ExpmFailure(SolverError):
    """Matrix exponential produced an unusable result."""

    def __init__(self, tau: float, detail: str):
        self.tau = tau
        super().__init__(f"matrix exponential failed at tau={tau:.6g}: {detail}")


class GeneratorMismatch(SolverError):
    """Closed-form generator entries disagree with the quadrature oracle."""

    def __init__(self, row: int, col: int, closed_form: float, oracle: float):
        self.row = row
        self.col = col
        super().__init__(
            f"A[{row},{col}] closed form {closed_form!r} != quadrature {oracle!r}"
        )


class SolverDiverged(SolverError):
    """A solver produced a non-finite or unphysical distribution."""


# Error-rate layer -------------------------------------------------------------

class StatisticsError(MTJModelError):
    """Failures computing or inverting error rates."""


class NoBracket(StatisticsError):
    """WER never reaches the target inside the search window."""

    def __init__(self, current: float, target: float, t_max: float, rate_at_max: float):
        self.current = current
        self.target = target
        self.t_max = t_max
        self.rate_at_max = rate_at_max
        super().__init__(
            f"WER stays at {rate_at_max:.3e} > target {target:.3e} up to {t_max:.3e} s "
            f"at I={current:.4e} A; current too small for this target"
        )


class InsufficientWalks(StatisticsError, ValueError):
    """Monte-Carlo ensemble too small to resolve the predicted rate."""

    def __init__(self, n_walks: int, n_min: int, rate: float):
        self.n_walks = n_walks
        self.n_min = n_min
        self.rate = rate
        super().__init__(
            f"{n_walks} walks expect fewer than 5 events at rate {rate:.3e}; need at least {n_min}"
        )


# Regression and calibration ---------------------------------------------------

class FitError(MTJModelError):
    """Failures of the parameter regression."""


class BudgetExhausted(FitError):
    """The optimizer ran out of loss evaluations."""

    def __init__(self, evaluations: int, result=None):
        self.evaluations = evaluations
        self.result = result
        super().__init__(f"evaluation budget exhausted after {evaluations} loss evaluations")


class CalibrationError(MTJModelError):
    """Failures calibrating fictitious-field coefficients."""


class CalibrationNoCross(CalibrationError):
    """No c_f in the searched bracket switches in time."""

    def __init__(self, wer_target: float, t_star: float, bracket):
        self.wer_target = wer_target
        self.t_star = t_star
        self.bracket = tuple(bracket)
        super().__init__(
            f"no c_f in [{self.bracket[0]:g}, {self.bracket[1]:g}] reproduces t*={t_star:.4e} s "
            f"for WER target {wer_target:g}"
        )


class IncompleteCalibration(CalibrationError):
    """A model card was requested for targets without c_f values."""

    def __init__(self, missing: Iterable[float]):
        self.missing = tuple(missing)
        super().__init__(
            "missing c_f for WER targets: " + ', '.join(repr(float(t)) for t in self.missing)
        )


# Configuration ----------------------------------------------------------------

class ConfigError(MTJModelError, ValueError):
    """Malformed run configuration; message starts with the key path."""

    def __init__(self, path: str, reason: str):
        self.path = path
        super().__init__(f"{path}: {reason}")
