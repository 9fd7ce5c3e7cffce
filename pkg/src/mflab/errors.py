"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes (config 2, numerical 3,
contract 4), so library code should raise the most specific one.
"""


class MflabError(Exception):
    """Base class for all package-specific errors."""


class GridMismatchError(MflabError, ValueError):
    """Two fields or operators living on different grids were combined."""


class ConfigError(MflabError, ValueError):
    """A run configuration is malformed or inconsistent."""


class NumericalFailure(MflabError, RuntimeError):
    """An integrator or solver lost accuracy beyond repair (NaN, stagnation)."""


class ContractViolation(MflabError, RuntimeError):
    """A mathematical invariant that is supposed to hold exactly was violated."""
