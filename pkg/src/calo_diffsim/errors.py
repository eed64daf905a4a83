"""
Exception hierarchy for calo-diffsim.

Every failure the toolkit raises on purpose derives from ``CaloSimError`` so the
command line can report it and exit non-zero without a traceback.
"""

__all__ = [
    "CaloSimError",
    "ConfigError",
    "BoundsError",
    "OutOfAcceptanceError",
    "AcceptanceError",
    "ContractError",
    "CapacityError",
    "DomainError",
    "FormatError",
    "CorruptionError",
    "NumericError",
    "DivergenceError",
    "ScheduleError",
    "MissingInputError",
]


class CaloSimError(Exception):
    """Base class for all calo-diffsim errors."""


class ConfigError(CaloSimError, ValueError):
    """Malformed or invalid configuration file."""


class BoundsError(CaloSimError, IndexError):
    """Cell index outside the lattice."""


class OutOfAcceptanceError(CaloSimError, ValueError):
    """Spatial position outside the lattice extent."""


class AcceptanceError(CaloSimError, ValueError):
    """Incident particle whose shower axis leaves the lattice."""


class ContractError(CaloSimError, ValueError):
    """A precondition of an operation was violated by the caller."""


class CapacityError(CaloSimError, ValueError):
    """More hits than the fixed point-cloud capacity."""


class DomainError(CaloSimError, ValueError):
    """Value outside the mathematical domain of a transform."""


class FormatError(CaloSimError):
    """Dataset or checkpoint file with the wrong magic, version or geometry."""


class CorruptionError(CaloSimError):
    """Truncated or otherwise unreadable file payload."""


class NumericError(CaloSimError, ArithmeticError):
    """NaN or Inf produced during training or sampling."""

    def __init__(self, message: str, diagnostics: dict = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class DivergenceError(NumericError):
    """Training loss became non-finite; carries the last good state."""

    def __init__(self, message: str, step: int, last_good_state: dict = None,
                 diagnostics: dict = None):
        super().__init__(message, diagnostics)
        self.step = step
        self.last_good_state = last_good_state


class ScheduleError(CaloSimError, ValueError):
    """Diffusion time outside [0, 1], singular time, or misordered step."""


class MissingInputError(CaloSimError, FileNotFoundError):
    """An input file named on the command line does not exist."""

