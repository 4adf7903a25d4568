class DomainError(ValueError):
    """Input is well-formed but outside the domain an operation accepts."""


class CsvParseError(ValueError):
    """Malformed CSV input. ``row`` is the 1-based data row index (header excluded)."""

    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row
