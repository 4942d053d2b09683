"""Exception hierarchy shared by all pipeline stages.

The CLI maps these to process exit codes: format/argument problems
exit with 2, shape problems with 3, numerical problems with 4.
"""


class SegapipeError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(SegapipeError):
    """A file or byte stream does not follow its declared layout."""

    exit_code = 2


class ArgumentError(SegapipeError):
    """A parameter violates an operation's precondition."""

    exit_code = 2


class ShapeError(SegapipeError):
    """Array or volume dimensions are incompatible with an operation."""

    exit_code = 3


class NumericalError(SegapipeError):
    """A computation produced non-finite or otherwise invalid numbers."""

    exit_code = 4


class MetricUndefinedError(NumericalError):
    """A metric has no defined value for the given inputs (e.g. empty mask)."""


class TopologyError(SegapipeError):
    """A mesh has connectivity that an operation cannot handle."""

    exit_code = 4
