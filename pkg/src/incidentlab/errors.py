from __future__ import annotations


class InputError(ValueError):
    """Bad input data or configuration (CLI exit code 2)."""


class SchemaError(InputError):
    def __init__(self, column: str, path: str | None = None):
        self.column = column
        self.path = path
        where = f" in {path}" if path else ""
        super().__init__(f"missing required column {column!r}{where}")


class EmptyInputError(InputError):
    pass


class DuplicateKeyError(InputError):
    pass


class ParseError(InputError):
    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        self.row = row
        self.column = column
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        super().__init__(f"{message} ({', '.join(loc)})" if loc else message)


class TooFewRowsError(InputError):
    pass


class TrainingError(RuntimeError):
    """Model fitting or evaluation failed (CLI exit code 3)."""
