"""Exception hierarchy.

Configuration-type errors map to CLI exit code 2, numerical failures to 3.
"""


class CbnError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(CbnError, ValueError):
    exit_code = 2


class MaterialError(ConfigError):
    pass


class PlacementError(ConfigError):
    """Bridge-node policy cannot be realised on the local fine grid."""


class DomainError(CbnError, ValueError):
    """Evaluation point outside (or ambiguous within) an element."""

    exit_code = 2


class AssemblyError(CbnError):
    exit_code = 3


class NumericalError(CbnError, ArithmeticError):
    exit_code = 3


class SolverError(NumericalError):
    pass


class CapExceededError(ConfigError):
    """Refusal of a dense boundary-map computation that exceeds its column cap."""


class SuiteFailure(NumericalError):
    """A canned experiment violated one of its asserted orderings/thresholds."""
