"""Exception hierarchy shared across the package."""


class SiltError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(SiltError):
    """Operands have incompatible shapes; the message reports both."""


class ConfigError(SiltError):
    """Invalid configuration value or mismatched config/checkpoint."""


class NumericError(SiltError):
    """NaN or Inf encountered where only finite values are allowed."""


class GradientStateError(SiltError):
    """Backward called twice, or stale gradients were not reset."""


class ContractError(SiltError):
    """An operation was called outside its contract (e.g. non-scalar loss)."""


class EmptySequenceError(SiltError):
    """Pooling over a fully masked sequence."""


class LabelError(SiltError):
    """Class index or label string outside the three-class set."""


class StoreError(SiltError):
    """Embedding-store write violation (duplicate id, writer misuse)."""


class StoreLookupError(SiltError):
    """Requested sentence id is not present in the store."""


class StoreFormatError(SiltError):
    """Corrupt or incompatible on-disk store/checkpoint data."""


class DataError(SiltError):
    """Malformed corpus input; the message names the offending row."""


class AlignmentError(DataError):
    """Parallel corpus files disagree on which pairs they contain."""


class GroupingError(SiltError):
    """A requested report grouping key is missing from example metadata."""
