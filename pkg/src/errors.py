"""Exception hierarchy. The CLI maps UsageError -> exit 2, NumericalError -> exit 3."""


class BrainAlignError(Exception):
    """Base class for every error raised by the package."""

    exit_code = 1


# --- usage / input problems (exit 2) ---

class UsageError(BrainAlignError):
    exit_code = 2


class ConfigError(UsageError):
    """Invalid run configuration. `field` names the offending setting."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class DataError(UsageError):
    """Problem with an input file. `code` is a stable machine-readable tag."""

    code = "data_error"

    def __init__(self, message: str, path=None):
        if path is not None:
            message = f"{path}: {message}"
        super().__init__(message)
        self.path = path


class MatrixFormatError(DataError):
    code = "matrix_format"


class BadMagicError(MatrixFormatError):
    code = "bad_magic"


class TruncatedMatrixError(MatrixFormatError):
    code = "truncated"


class SizeMismatchError(MatrixFormatError):
    code = "size_mismatch"


class DimOverflowError(MatrixFormatError):
    code = "dim_overflow"


class ManifestError(DataError):
    code = "manifest"


class StimulusAlignmentError(DataError):
    code = "alignment"


# --- numerical problems (exit 3) ---

class NumericalError(BrainAlignError):
    exit_code = 3


class DegenerateInputError(NumericalError):
    """Input too small or too degenerate for the requested computation."""


class UndefinedCorrelationError(NumericalError):
    """Correlation with a constant vector."""


class NonFiniteError(NumericalError):
    """NaN or inf where finite values are required."""
