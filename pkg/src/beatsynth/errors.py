"""Exception hierarchy; the CLI maps each family to an exit code."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration (exit code 2)."""


class DataError(ValueError):
    """Malformed or insufficient input data (exit code 3)."""


class NumericError(RuntimeError):
    """Non-finite values during training or sampling (exit code 4)."""


class Format212Error(DataError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class AnnotationFormatError(DataError):
    def __init__(self, message: str, row: int):
        super().__init__(f"row {row}: {message}")
        self.row = row
