# symnum/errors.py
"""
Exception hierarchy shared by the symbolic layer, the numeric layer and the routines.

Errors caused by bad input (equation strings, declarations, case files) also derive
from ValueError so callers that already catch ValueError keep working.
"""

from __future__ import annotations
from typing import Iterable, Optional


class SymnumError(Exception):
    """Base class for every error raised by symnum."""


class ExprSyntaxError(SymnumError, ValueError):
    """Equation string could not be parsed."""

    def __init__(self, message: str, text: str = '', offset: int = 0):
        self.text = text
        self.offset = offset
        pointer = f"\n  {text}\n  {' ' * offset}^" if text else ''
        super().__init__(f"{message} at offset {offset}{pointer}")


class EvaluationError(SymnumError, ValueError):
    """Numeric evaluation of an expression failed or produced non-finite values."""

    def __init__(self, message: str, symbols: Iterable[str] = (), equation: Optional[str] = None):
        self.symbols = tuple(sorted(set(symbols)))
        self.equation = equation
        parts = [message]
        if equation:
            parts.append(f"in equation '{equation}'")
        if self.symbols:
            parts.append(f"(symbols: {', '.join(self.symbols)})")
        super().__init__(' '.join(parts))


class ModelDefinitionError(SymnumError, ValueError):
    """A model declaration is inconsistent: duplicate names, dangling references, cycles."""


class CacheError(SymnumError):
    """Compiled-model cache payload is corrupt, stale or from another format version."""


class CaseError(SymnumError, ValueError):
    """Case data could not be parsed or violates a model's parameter rules."""


class ConvergenceError(SymnumError):
    """An iterative routine did not converge."""

    def __init__(self, message: str, iterations: Optional[int] = None, time: Optional[float] = None):
        self.iterations = iterations
        self.time = time
        if time is not None:
            message = f"t={time:.6f}s: {message}"
        super().__init__(message)


class SingularMatrixError(ConvergenceError):
    """Sparse factorization hit a zero pivot."""

    def __init__(self, message: str, pivot: Optional[int] = None, **kwargs):
        self.pivot = pivot
        if pivot is not None:
            message = f"{message} (pivot {pivot})"
        super().__init__(message, **kwargs)


class EigenError(SymnumError):
    """Dense eigenvalue computation failed."""
