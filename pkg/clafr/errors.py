from __future__ import annotations

from collections.abc import Sequence

from clafr._enums import ExitCode


class ClafrError(Exception):
    """Base class for every error the toolkit raises on purpose."""
    exit_code: ExitCode = ExitCode.INPUT


class ShapeError(ClafrError, ValueError):

    def __init__(
        self, message: str,
        expected: Sequence[int] | None = None,
        actual: Sequence[int] | None = None,
    ) -> None:
        self.expected = tuple(expected) if expected is not None else None
        self.actual = tuple(actual) if actual is not None else None
        if self.expected is not None or self.actual is not None:
            message = (
                f'{message} (expected {self.expected}, got {self.actual})'
            )
        super().__init__(message)


class FormatError(ClafrError, ValueError):

    def __init__(self, message: str, offset: int | None = None) -> None:
        self.offset = offset
        if offset is not None:
            message = f'{message} at byte offset {offset}'
        super().__init__(message)


class CsvParseError(FormatError):

    def __init__(self, message: str, row: int, column: int | None) -> None:
        self.row = row
        self.column = column
        where = f'row {row}' if column is None else f'row {row}, column {column}'
        super().__init__(f'{message} at {where}')


class ManifestError(ClafrError, ValueError):
    pass


class ConfigError(ClafrError, ValueError):
    pass


class MetricError(ClafrError, ValueError):
    pass


class NumericalError(ClafrError, ArithmeticError):
    exit_code = ExitCode.NUMERICAL

    def __init__(self, message: str, iterations: int | None = None) -> None:
        self.iterations = iterations
        if iterations is not None:
            message = f'{message} after {iterations} sweeps'
        super().__init__(message)


class DegenerateWeightsError(NumericalError):
    pass


class MisuseError(ClafrError):
    exit_code = ExitCode.MISUSE


class NonFiniteError(ClafrError, ValueError):
    pass
