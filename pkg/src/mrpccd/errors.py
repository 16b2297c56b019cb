"""Exception hierarchy shared across the package."""


class MrpError(Exception):
    """Base class for all package errors."""


class ConfigError(MrpError, ValueError):
    """Invalid configuration or parameter value."""


class DataError(MrpError, ValueError):
    """Malformed, missing or inconsistent market data."""


class SolverError(MrpError, RuntimeError):
    """Numerical failure inside an optimisation or linear-algebra routine.

    ``diagnostics`` carries whatever partial record the failing routine
    had accumulated (beta path, sweep counts, ...).
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


class ConvergenceError(SolverError):
    """Iteration limit reached before the stopping rule was met."""
