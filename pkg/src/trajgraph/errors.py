"""Exception types shared across the package.

The CLI maps these onto exit codes: usage errors exit 1, data/validation
errors exit 2, numeric failures exit 3.
"""


class DimensionError(ValueError):
    """Tensor shapes incompatible for the requested operation."""


class TapeError(RuntimeError):
    """Computation tape misuse (e.g. second backward on the same tape)."""


class ParseError(ValueError):
    """Malformed scenario record; message carries the line number."""


class ValidationError(ValueError):
    """Well-formed record violating a data-model invariant."""


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class CheckpointError(ValueError):
    """Checkpoint file does not match the expected parameter set."""


class LookupError_(KeyError):
    """Unknown scene id or parameter path."""


class NumericError(RuntimeError):
    """Non-finite value encountered where the math must stay finite."""
