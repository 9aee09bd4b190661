"""Exception types and source locations shared by every module."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional


@dataclass(frozen=True)
class SourceSpan:
    file: str
    line: int
    column: int
    end_line: int
    end_column: int

    def __str__(self) -> str:
        return f"{self.file}:{self.line}:{self.column}"

    def contains(self, other: "SourceSpan") -> bool:
        start = (self.line, self.column)
        end = (self.end_line, self.end_column)
        return start <= (other.line, other.column) and (other.end_line, other.end_column) <= end


class TimedMTError(Exception):
    """Base class; carries an optional source location."""

    def __init__(self, message: str, span: Optional[SourceSpan] = None):
        super().__init__(message)
        self.message = message
        self.span = span

    def __str__(self) -> str:
        if self.span is not None:
            return f"{self.span}: {self.message}"
        return self.message


class SpecSyntaxError(TimedMTError):
    def __init__(self, message: str, span: Optional[SourceSpan] = None, expected=()):
        super().__init__(message, span)
        self.expected = tuple(expected)


class SpecSemanticError(TimedMTError):
    pass


class EvalError(TimedMTError):
    """Runtime evaluation failure (unbound object literal, kind mismatch)."""


class RuleApplicationError(TimedMTError):
    """A rule application produced a non-conforming model."""


class LivelockError(TimedMTError):
    def __init__(self, message: str, rules=()):
        super().__init__(message)
        self.rules = tuple(rules)


class BudgetExceeded(TimedMTError):
    def __init__(self, message: str, states: int = 0):
        super().__init__(message)
        self.states = states
