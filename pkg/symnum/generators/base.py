# symnum/generators/base.py
"""
Shared utilities and constants for all generators.

Provides: numpy name mapping for generated source, identifier sanitizing,
markdown table helpers and labels for element properties.
"""

from __future__ import annotations
from typing import Iterable, List, Mapping, Optional, Sequence
import re

from symnum.expr import CALL, Expr


# ---------------------------------------------------------------------------
# Constants
# ---------------------------------------------------------------------------

GENERATED_HEADER = '# Generated by symnum. Edits are overwritten on recompile.'

NUMPY_ALIAS = '_np'

# Equation-string function name -> numpy callable used in generated source
NUMPY_FUNCTION_MAP = {
    'sin': f'{NUMPY_ALIAS}.sin',
    'cos': f'{NUMPY_ALIAS}.cos',
    'exp': f'{NUMPY_ALIAS}.exp',
    'log': f'{NUMPY_ALIAS}.log',
    'sqrt': f'{NUMPY_ALIAS}.sqrt',
    'abs': f'{NUMPY_ALIAS}.abs',
    'sign': f'{NUMPY_ALIAS}.sign',
}


POWER_BASE_LABELS = {
    'power': 'power',
    'inverse_power': 'ipower',
}


# ---------------------------------------------------------------------------
# Source helpers
# ---------------------------------------------------------------------------

def sanitize_identifier(name: str) -> str:
    """Turn an arbitrary label into a valid Python identifier.

    'LG lim' -> 'LG_lim'
    '2nd' -> '_2nd'
    """
    cleaned = re.sub(r'[^A-Za-z0-9_]', '_', name.strip())
    if not cleaned or cleaned[0].isdigit():
        cleaned = '_' + cleaned
    return cleaned


def qualify_calls(e: Expr) -> Expr:
    """Rewrite function calls to their numpy spelling for code emission."""
    if not e.children:
        return e
    children = tuple(qualify_calls(c) for c in e.children)
    name = NUMPY_FUNCTION_MAP.get(e.name, e.name) if e.kind == CALL else e.name
    return Expr(e.kind, children, e.value, name)


def indent(lines: Iterable[str], spaces: int = 4) -> List[str]:
    pad = ' ' * spaces
    return [pad + line if line else line for line in lines]


# ---------------------------------------------------------------------------
# Markdown helpers
# ---------------------------------------------------------------------------

def escape_cell(text: Optional[str]) -> str:
    """Make a value safe for a markdown table cell."""
    if text is None:
        return ''
    return str(text).replace('|', '\\|').replace('\n', ' ')


def math_cell(latex: str) -> str:
    return f'${latex}$' if latex else ''


def markdown_table(headers: Sequence[str], rows: Sequence[Sequence[str]]) -> List[str]:
    """Render a pipe table; an empty row list still emits the header."""
    lines = [
        '| ' + ' | '.join(headers) + ' |',
        '|' + '|'.join('-' * (len(h) + 2) for h in headers) + '|',
    ]
    for row in rows:
        lines.append('| ' + ' | '.join(escape_cell(c) for c in row) + ' |')
    return lines


def format_default(value: Optional[float]) -> str:
    if value is None:
        return ''
    if float(value) == int(value):
        return str(int(value))
    return repr(float(value))


def property_labels(flags: Mapping[str, bool], power_base: str = 'none') -> str:
    labels = [name for name, on in flags.items() if on]
    if power_base in POWER_BASE_LABELS:
        labels.append(POWER_BASE_LABELS[power_base])
    return ', '.join(labels)
