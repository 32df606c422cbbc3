"""Exception hierarchy shared across the toolkit.

Every error raised on purpose derives from ToolkitError so callers (and the
CLI) can distinguish deliberate rejections from plain bugs.
"""


class ToolkitError(Exception):
    """Base class for all deliberate errors raised by this package."""


class ShapeError(ToolkitError):
    """Operands with incompatible shapes."""


class NumericError(ToolkitError):
    """Non-finite values or numerically invalid inputs."""


class DegenerateInputError(NumericError):
    """Input that is formally valid but numerically unusable (e.g. zero norm)."""


class DivergenceError(NumericError):
    """Training loss exceeded the divergence threshold."""


class ContractError(ToolkitError):
    """A documented precondition was violated by the caller."""


class ConfigError(ToolkitError):
    """Invalid configuration value or file."""


class DataError(ToolkitError):
    """Problems with interaction data."""


class ParseError(DataError):
    """Malformed input line; message carries the line number."""


class EmptyDatasetError(DataError):
    """No usable events after parsing/filtering."""


class SplitError(DataError):
    """Too few users to split."""


class SamplingError(DataError):
    """Negative sampling cannot satisfy the request."""


class IdLookupError(ToolkitError):
    """Embedding lookup with an out-of-range id."""


class CheckpointError(ToolkitError):
    """Unreadable or inconsistent checkpoint."""


class StateMismatchError(ToolkitError):
    """Checkpoint and dataset disagree (vocabulary hash, dimensions)."""
