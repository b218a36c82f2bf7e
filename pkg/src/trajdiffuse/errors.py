"""Exception types shared across the package.

The CLI maps these onto process exit codes: configuration errors exit
with 2, numeric errors with 3, degenerate-input errors with 4.
"""


class TrajDiffuseError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(TrajDiffuseError):
    """Invalid parameter, flag, config file or input file."""


class ShapeError(ConfigurationError):
    """Array arguments with incompatible shapes or lengths."""


class NumericError(TrajDiffuseError):
    """Non-finite values or other numeric breakdown during computation."""


class TrainingError(NumericError):
    """Training diverged (NaN/inf loss)."""


class DegenerateInputError(TrajDiffuseError):
    """Input that makes the requested operation undefined.

    Examples: an all-zero attention-mask row in additive mode, or a
    constant vector passed to the Pearson correlation.
    """
