"""Error hierarchy for sepmflow.

Every error class carries a distinct process exit code so that CLI runs can be
triaged from shell scripts, and a stable name used in service error payloads.
"""


class SepmflowError(Exception):
    """Base class; subclasses define a unique exit_code."""

    exit_code = 1

    @property
    def name(self) -> str:
        return type(self).__name__


class NoConvergence(SepmflowError):
    """Magnetic-circuit root finder exhausted its iteration budget."""

    exit_code = 10

    def __init__(self, message, last_residual=None):
        super().__init__(message)
        self.last_residual = last_residual


class UnstableStep(SepmflowError):
    """Explicit integrator step exceeds the stability bound."""

    exit_code = 11


class NeverSettles(SepmflowError):
    """Trace never enters (and stays inside) the requested band."""

    exit_code = 12


class OcclusionFailed(SepmflowError):
    """Valve could not establish a seal within its retry budget."""

    exit_code = 13

    def __init__(self, message, valve_id=None, line_pressure=None,
                 pulses_used=0, energy=0.0, timestamp=None):
        super().__init__(message)
        self.valve_id = valve_id
        self.line_pressure = line_pressure
        self.pulses_used = pulses_used
        self.energy = energy
        self.timestamp = timestamp


class NotOccluded(SepmflowError):
    """Hold-pressure query on a valve that has no established seal."""

    exit_code = 14


class AddressOutOfRange(SepmflowError):
    """Decoder address outside [0, 2^depth)."""

    exit_code = 15


class InvalidPort(SepmflowError):
    """Port id is not a valid output for the requested routing mode."""

    exit_code = 16


class DontCarePresent(SepmflowError):
    """Concrete state vector required but don't-care entries remain."""

    exit_code = 17


class IntentInvalid(SepmflowError):
    """Program step intent cannot be realized on the topology."""

    exit_code = 18

    def __init__(self, message, step_index=None):
        super().__init__(message)
        self.step_index = step_index


class CorruptRegistry(SepmflowError):
    """Valve registry file is unreadable or inconsistent."""

    exit_code = 19

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class CalibrationInfeasible(SepmflowError):
    """Calibration could not meet its targets within the budget."""

    exit_code = 20

    def __init__(self, message, unmet=()):
        super().__init__(message)
        self.unmet = list(unmet)


class ScenarioError(SepmflowError):
    """Scenario document failed to parse or validate."""

    exit_code = 21


ERROR_CLASSES = (
    NoConvergence,
    UnstableStep,
    NeverSettles,
    OcclusionFailed,
    NotOccluded,
    AddressOutOfRange,
    InvalidPort,
    DontCarePresent,
    IntentInvalid,
    CorruptRegistry,
    CalibrationInfeasible,
    ScenarioError,
)

ERRORS_BY_NAME = {cls.__name__: cls for cls in ERROR_CLASSES}
