"""Exception hierarchy shared by the checker, the CLI and the HTTP API."""
from __future__ import annotations

from typing import Optional, Sequence


class NCIError(Exception):
    """Root of every error raised by this package."""


class DomainError(NCIError, ArithmeticError):
    """A formula was evaluated outside its domain (the point is off the chart)."""


class UnboundVariable(NCIError, KeyError):
    def __init__(self, name: str):
        super().__init__(name)
        self.name = name

    def __str__(self) -> str:
        return f"unbound variable '{self.name}'"


class ExpressionSyntaxError(NCIError, ValueError):
    def __init__(self, message: str, line: int = 1, column: int = 1):
        super().__init__(message)
        self.message = message
        self.line = line
        self.column = column

    def __str__(self) -> str:
        return f"line {self.line}, column {self.column}: {self.message}"


class ValidationError(NCIError, ValueError):
    pass


class DegenerateForm(NCIError, ArithmeticError):
    pass


class SingularChart(NCIError, ArithmeticError):
    pass


class InvalidStructureConstants(NCIError, ValueError):
    pass


class IndexOutOfRange(NCIError, IndexError):
    pass


class MissingCasimirs(NCIError, ValueError):
    pass


class FixedPoint(NCIError, ArithmeticError):
    pass


class StepUnderflow(NCIError, ArithmeticError):
    def __init__(self, message: str, time: float):
        super().__init__(message)
        self.time = time


class FlowEscapedChart(NCIError, ArithmeticError):
    def __init__(self, message: str, time: float, state: Optional[Sequence[float]] = None):
        super().__init__(message)
        self.time = time
        self.state = list(state) if state is not None else None


INPUT_ERRORS = (
    ExpressionSyntaxError,
    ValidationError,
    UnboundVariable,
    InvalidStructureConstants,
    DegenerateForm,
    MissingCasimirs,
)

# off-chart input: start points, charts or Hamiltonians undefined where they are used
CHART_ERRORS = (
    DomainError,
    SingularChart,
    FlowEscapedChart,
)
