"""
Exceptions raised by levitrap.
Provides semantic exception classes with stable process exit codes.
"""

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


class LevitrapError(Exception):
    """Base class for all package errors."""

    exit_code = EXIT_NUMERICAL

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


# Validation family (exit code 2)

class ValidationError(LevitrapError):
    """Raised when an input violates a documented invariant."""

    exit_code = EXIT_VALIDATION

    def __init__(self, field: str, value, requirement: str):
        super().__init__(f"{field}={value!r} violates: {requirement}")
        self.field = field
        self.value = value


class ConfigParseError(LevitrapError):
    """Raised when a configuration file cannot be read or parsed."""

    exit_code = EXIT_VALIDATION

    def __init__(self, source: str, detail: str, line: int | None = None):
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"Cannot parse config {where}: {detail}")
        self.line = line


class InvalidSampleRateError(LevitrapError):
    """Raised when a sample rate cannot resolve the fastest motion."""

    exit_code = EXIT_VALIDATION

    def __init__(self, sample_rate: float, minimum: float):
        super().__init__(
            f"sample_rate={sample_rate:g} Hz is below the required minimum of {minimum:g} Hz"
        )


class SegmentTooLongError(LevitrapError):
    """Raised when a PSD segment exceeds the trace length."""

    exit_code = EXIT_VALIDATION

    def __init__(self, segment_length: int, trace_length: int):
        super().__init__(
            f"segment_length={segment_length} exceeds trace length {trace_length}"
        )


class UnphysicalScanError(LevitrapError):
    """Raised when a fitted scan would leave the stability region."""

    exit_code = EXIT_VALIDATION

    def __init__(self, detail: str):
        super().__init__(detail)


# Numerical family (exit code 3)

class DomainError(LevitrapError):
    """Raised when a function is evaluated outside its domain."""

    def __init__(self, function: str, detail: str):
        super().__init__(f"{function}: {detail}")


class NonConvergenceError(LevitrapError):
    """Raised when an iterative solver fails to converge."""

    def __init__(self, solver: str, detail: str):
        super().__init__(f"{solver} did not converge: {detail}")


class FitError(LevitrapError):
    """Raised when a least-squares fit fails."""

    def __init__(self, detail: str):
        super().__init__(f"Fit failed: {detail}")


class DegenerateFitError(FitError):
    """Raised when scan data cannot constrain the fit parameters."""

    def __init__(self, detail: str):
        super().__init__(f"degenerate data, {detail}")


class MultiplePeaksError(FitError):
    """Raised when a fit window contains more than one resonance."""

    def __init__(self, primary_hz: float, second_peak_hz: float):
        super().__init__(
            f"window contains a second peak at {second_peak_hz:.6g} Hz "
            f"besides the resonance at {primary_hz:.6g} Hz"
        )
        self.primary_hz = primary_hz
        self.second_peak_hz = second_peak_hz


class ModeNotFoundError(LevitrapError):
    """Raised when no resonance is found in a frequency window."""

    def __init__(self, window: tuple[float, float]):
        super().__init__(f"No mode found in window {window[0]:g}-{window[1]:g} Hz")
