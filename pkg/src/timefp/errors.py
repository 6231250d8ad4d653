"""Exception hierarchy. Everything raised on bad input derives from TimefpError."""


class TimefpError(Exception):
    """Base class for validation failures (CLI exit code 1)."""


class TraceFormatError(TimefpError):
    """Malformed CSV row or capture file."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class EmptyTraceError(TimefpError):
    pass


class TraceValidationError(TimefpError):
    """A trace violates an invariant; ``index`` is 1-based."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class SizeGuardError(TimefpError):
    pass


class InsufficientDataError(TimefpError):
    pass


class FitError(TimefpError):
    pass


class CalibrationError(TimefpError):
    pass


class StreamError(TimefpError):
    pass
