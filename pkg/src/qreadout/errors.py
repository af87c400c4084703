class ReadoutError(Exception):
    """Domain error: degenerate data, range violations, malformed files."""


class ConfigError(ReadoutError):
    pass


class DegenerateWeightsError(ReadoutError):
    pass


class SingularCovarianceError(ReadoutError):
    def __init__(self, message: str, condition: float = float("inf")):
        super().__init__(message)
        self.condition = condition


class FixedPointRangeError(ReadoutError):
    pass


class ScaleOverflowError(ReadoutError):
    pass


class QuantizationError(ReadoutError):
    pass


class BankFormatError(ReadoutError):
    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")
        self.offset = offset
