from typing import Optional


class DrowsinetError(Exception):
    """Base class for every error raised by the drowsinet library."""
    code = "error"


class FrameParseError(DrowsinetError):
    """A frame CSV row could not be parsed."""
    code = "parse"

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class FrameValidationError(FrameParseError):
    """A tracked frame carries a channel value outside its declared range."""
    code = "validation"


class DegenerateWindowError(DrowsinetError):
    code = "degenerate-window"


class ConfigurationError(DrowsinetError):
    code = "config"


class ShapeError(DrowsinetError):
    code = "shape"


class NotFittedError(DrowsinetError):
    code = "not-fitted"


class NonFiniteError(DrowsinetError):
    """A loss or gradient became NaN or infinite."""
    code = "non-finite"


class UndefinedMetricError(DrowsinetError):
    code = "undefined-metric"


class ContractViolationError(DrowsinetError):
    code = "contract"


class UnknownModelError(DrowsinetError):
    code = "unknown-model"
