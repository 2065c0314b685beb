"""Exception hierarchy shared across the package.

Every error raised on purpose derives from PgnLabError so the CLI can map
failures onto its two exit classes (usage vs. runtime).
"""


class PgnLabError(Exception):
    """Base class for all deliberate errors."""

    code = "error"


class UsageError(PgnLabError):
    """Caller passed invalid arguments or an invalid configuration."""

    code = "usage-error"


class ShapeError(PgnLabError):
    """Tensor dimensions are incompatible with the requested operation."""

    code = "shape-error"

    def __init__(self, message, expected=None, actual=None):
        if expected is not None or actual is not None:
            message = f"{message} (expected {expected}, got {actual})"
        super().__init__(message)
        self.expected = expected
        self.actual = actual


class NumericError(PgnLabError):
    """A forward pass produced a non-finite activation."""

    code = "numeric-error"

    def __init__(self, message, layer_index=None):
        if layer_index is not None:
            message = f"{message} (layer {layer_index})"
        super().__init__(message)
        self.layer_index = layer_index


class FormatError(PgnLabError):
    """A binary file does not match its declared format."""

    code = "format-error"


class LengthError(FormatError):
    """A binary payload is shorter than its header promises."""

    code = "length-error"


class ConsistencyError(PgnLabError):
    """Two parts of one artifact disagree (e.g. image/label counts)."""

    code = "consistency-error"


class TrainingError(PgnLabError):
    """Training diverged."""

    code = "training-error"

    def __init__(self, message, epoch=None):
        if epoch is not None:
            message = f"{message} (epoch {epoch})"
        super().__init__(message)
        self.epoch = epoch
