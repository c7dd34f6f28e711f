"""
Exceptions Module

Error hierarchy shared by the laboratory modules.
"""


class ViscowaveError(Exception):
    """Base class for all laboratory errors."""


class ConfigError(ViscowaveError, ValueError):
    """Configuration file or parameter violates the schema or a range rule."""


class PreconditionError(ViscowaveError, ValueError):
    """An operation was called with inputs outside its precondition."""


class DegenerateFieldError(ViscowaveError, ValueError):
    """Field has no finite Nehari scaling (zero weighted source integral)."""


class InfeasibleError(ViscowaveError, RuntimeError):
    """Requested construction or bound has an empty feasible set."""
