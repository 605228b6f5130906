"""Exception hierarchy.

Everything raised on purpose derives from :class:`VBxError`, so callers
(and the CLI) can map failures to exit codes without string matching.
"""


class VBxError(Exception):
    """Base class for all errors raised by this package."""


class InputError(VBxError, ValueError):
    """Malformed or inconsistent input (bad shapes, bad files, bad labels)."""


class DegenerateInputError(InputError):
    """Input that is well-formed but unusable, e.g. an all-zero vector."""


class EmptyInputError(InputError):
    """An operation received zero items where at least one is required."""


class EstimationError(VBxError):
    """Not enough data to estimate a model."""


class ModelError(VBxError):
    """A model violates its invariants (e.g. a non-SPD covariance)."""


class NumericalError(VBxError, FloatingPointError):
    """Non-finite values appeared during inference."""


class UndefinedMetricError(VBxError):
    """The requested metric is undefined for the given input."""


class InstanceTooLargeError(VBxError):
    """Exhaustive enumeration was requested on a problem that is too big."""
