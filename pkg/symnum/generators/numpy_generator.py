# symnum/generators/numpy_generator.py
"""
Numpy Code Generator - vectorized Python source from symbolic expressions.

Each kernel becomes one function whose positional arguments are the sorted
symbols it reads; the function returns a tuple with one value per expression
(or the bare value for single-expression kernels). Values are numpy arrays or
Python floats when an expression is constant; callers broadcast.
"""

from __future__ import annotations
from dataclasses import dataclass
from typing import Callable, Dict, Sequence, Tuple

from symnum.expr import Expr, render, symbols
from symnum.generators.base import (
    GENERATED_HEADER,
    NUMPY_ALIAS,
    indent,
    qualify_calls,
    sanitize_identifier,
)


@dataclass(frozen=True)
class Kernel:
    """A named group of expressions compiled into one generated function."""
    name: str
    exprs: Tuple[Expr, ...]
    single: bool = False

    @property
    def args(self) -> Tuple[str, ...]:
        names = set()
        for e in self.exprs:
            names |= symbols(e)
        return tuple(sorted(names))


# ---------------------------------------------------------------------------
# Public API
# ---------------------------------------------------------------------------

def generate_numpy_code(model_name: str, kernels: Sequence[Kernel]) -> str:
    """Generate a Python module with one function per kernel."""
    lines = [
        GENERATED_HEADER,
        f'# Model: {model_name}',
        '',
        f'import numpy as {NUMPY_ALIAS}',
        '',
    ]
    for kernel in kernels:
        lines.append('')
        lines.extend(_kernel_source(kernel))
    return '\n'.join(lines) + '\n'


def load_kernels(source: str, model_name: str, names: Sequence[str]) -> Dict[str, Callable]:
    """Execute generated source and return the requested functions by name."""
    namespace: Dict[str, object] = {}
    code = compile(source, f'<symnum:{model_name}>', 'exec')
    exec(code, namespace)
    missing = [n for n in names if sanitize_identifier(n) not in namespace]
    if missing:
        raise KeyError(f"Generated source for {model_name} lacks functions: {', '.join(missing)}")
    return {n: namespace[sanitize_identifier(n)] for n in names}


# ---------------------------------------------------------------------------
# Emission
# ---------------------------------------------------------------------------

def _kernel_source(kernel: Kernel) -> list:
    fname = sanitize_identifier(kernel.name)
    body = [render(qualify_calls(e)) for e in kernel.exprs]
    lines = [f"def {fname}({', '.join(kernel.args)}):"]
    if kernel.single:
        lines.extend(indent([f'return {body[0]}']))
    elif not body:
        lines.extend(indent(['return ()']))
    else:
        lines.extend(indent(['return (']))
        lines.extend(indent([f'{b},' for b in body], 8))
        lines.extend(indent([')']))
    return lines
