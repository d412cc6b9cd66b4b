"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes, so each class carries one.
"""


class LabError(Exception):
    exit_code = 1


class ValidationError(LabError, ValueError):
    """Bad input: wrong shape, out-of-range parameter, non-finite value."""

    exit_code = 1


class CapacityError(ValidationError):
    """Exhaustive subset enumeration requested beyond the supported size."""


class ConfigurationError(ValidationError):
    """Inconsistent run or experiment configuration."""


class ConstructionError(LabError):
    """An adversarial construction cannot be built for the given parameters."""

    exit_code = 3


class AttackInfeasibleError(ConstructionError):
    """The tailored Byzantine search found no value that SMEA would select."""


class PropertyViolation(LabError, AssertionError):
    """A checked inequality or invariant failed on a concrete input."""

    exit_code = 2

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class CounterexampleNotFoundError(PropertyViolation):
    pass
