"""Exception taxonomy shared across the package.

The split mirrors how callers are expected to react: ``InputError`` and
``ConfigError`` are caller mistakes (CLI exit code 2), everything else is a
runtime failure (exit code 1).
"""


class MaskpathError(Exception):
    """Base class for all package errors."""


class InputError(MaskpathError):
    """Arguments violate an operation's preconditions."""


class ContractViolation(MaskpathError):
    """An internal contract was violated (e.g. querying a complete state)."""


class ConfigError(MaskpathError):
    """A config file / model spec / CLI combination is invalid."""


class BudgetExceeded(MaskpathError):
    """An exact oracle refused an input larger than its enumeration caps."""


class DegeneratePopulation(MaskpathError):
    """Every particle weight collapsed to -inf; the search cannot continue."""
