"""Exception hierarchy shared by every module.

Each class carries the process exit code the command line front-end uses
when the error escapes a run.
"""


class LsmcPdeError(Exception):
    exit_code = 1


class ParameterError(LsmcPdeError, ValueError):
    """A model, option or numerical parameter violates its invariants."""

    exit_code = 4


class ConfigurationError(LsmcPdeError, ValueError):
    """Inconsistent combination of otherwise valid settings."""

    exit_code = 5


class NumericError(LsmcPdeError, ArithmeticError):
    """Non-finite values, failed quadrature or an unstable scheme."""

    exit_code = 6


class DegenerateDesignError(LsmcPdeError, ArithmeticError):
    """Regression design matrix is rank deficient or badly conditioned."""

    exit_code = 7


class SchemaError(LsmcPdeError, ValueError):
    """Run configuration failed validation."""

    exit_code = 3
