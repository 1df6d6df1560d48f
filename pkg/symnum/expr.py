# symnum/expr.py
"""
Expression language for equation strings.

Parses the infix equation strings used in model declarations into immutable
expression trees, differentiates and simplifies them, renames symbols, evaluates
them element-wise over numpy vectors and renders them back to plain text or LaTeX.

Grammar (EBNF):

    expr    = term , { ( "+" | "-" ) , term } ;
    term    = unary , { ( "*" | "/" ) , unary } ;
    unary   = ( "-" | "+" ) , unary | power ;
    power   = atom , [ ( "**" | "^" ) , unary ] ;
    atom    = number | identifier | identifier , "(" , expr , ")" | "(" , expr , ")" ;
    number  = digits , [ "." , [ digits ] ] , [ exponent ] | "." , digits , [ exponent ] ;

A minus sign directly in front of a number literal (and not followed by a power
operator) produces a negative constant; everywhere else it produces a negation node.
"""

from __future__ import annotations
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Dict, FrozenSet, List, Literal, Mapping, Optional, Tuple, Union
import math
import re

import numpy as np

from symnum.errors import EvaluationError, ExprSyntaxError


# ---------------------------------------------------------------------------
# Node kinds and constants
# ---------------------------------------------------------------------------

CONST = 'const'
SYMBOL = 'symbol'
NEG = 'neg'
SUM = 'sum'
PRODUCT = 'product'
QUOTIENT = 'quotient'
POWER = 'power'
CALL = 'call'

# `sign` is the derivative of `abs`; it is accepted in equation strings too
FUNCTIONS = ('sin', 'cos', 'exp', 'log', 'sqrt', 'abs', 'sign')

IDENTIFIER_RE = re.compile(r'[A-Za-z_][A-Za-z0-9_]*\Z')

GREEK_NAMES = frozenset({
    'alpha', 'beta', 'gamma', 'delta', 'epsilon', 'zeta', 'eta', 'theta', 'iota',
    'kappa', 'lambda', 'mu', 'nu', 'xi', 'pi', 'rho', 'sigma', 'tau', 'upsilon',
    'phi', 'chi', 'psi', 'omega', 'Gamma', 'Delta', 'Theta', 'Lambda', 'Xi', 'Pi',
    'Sigma', 'Phi', 'Psi', 'Omega',
})

RenderStyle = Literal['plain', 'latex']


# ---------------------------------------------------------------------------
# Data structure
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Expr:
    """Immutable expression tree node.

    `children` holds operands (n-ary for sums and products, two for quotients
    and powers, one for negation and calls). `value` is used by constants and
    `name` by symbols and calls.
    """
    kind: str
    children: Tuple['Expr', ...] = ()
    value: float = 0.0
    name: str = ''

    def __str__(self) -> str:
        return render(self)

    def __repr__(self) -> str:
        return f"Expr({render(self)!r})"

    @property
    def is_const(self) -> bool:
        return self.kind == CONST

    def is_number(self, value: float) -> bool:
        return self.kind == CONST and self.value == value


def const(value: float) -> Expr:
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"Constants must be finite, got {value}")
    return Expr(CONST, value=value)


def symbol(name: str) -> Expr:
    if not IDENTIFIER_RE.match(name):
        raise ValueError(f"Invalid identifier '{name}'")
    return Expr(SYMBOL, name=name)


ZERO = const(0.0)
ONE = const(1.0)


def neg(e: Expr) -> Expr:
    return Expr(NEG, (e,))


def add(*terms: Expr) -> Expr:
    if not terms:
        return ZERO
    if len(terms) == 1:
        return terms[0]
    return Expr(SUM, tuple(terms))


def mul(*factors: Expr) -> Expr:
    if not factors:
        return ONE
    if len(factors) == 1:
        return factors[0]
    return Expr(PRODUCT, tuple(factors))


def div(numerator: Expr, denominator: Expr) -> Expr:
    return Expr(QUOTIENT, (numerator, denominator))


def power(base: Expr, exponent: Expr) -> Expr:
    return Expr(POWER, (base, exponent))


def call(function: str, argument: Expr) -> Expr:
    if function not in FUNCTIONS:
        raise ValueError(f"Unknown function '{function}'")
    return Expr(CALL, (argument,), name=function)


@lru_cache(maxsize=None)
def symbols(e: Expr) -> FrozenSet[str]:
    """Names of all symbols appearing in `e`."""
    if e.kind == SYMBOL:
        return frozenset((e.name,))
    found: FrozenSet[str] = frozenset()
    for child in e.children:
        found = found | symbols(child)
    return found


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r'(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)'
    r'|(?P<name>[A-Za-z_][A-Za-z0-9_]*)'
    r'|(?P<op>\*\*|[-+*/^(),])'
)


def _byte_offset(text: str, char_pos: int) -> int:
    return len(text[:char_pos].encode('utf-8'))


def _tokenize(text: str) -> List[Tuple[str, str, int]]:
    tokens: List[Tuple[str, str, int]] = []
    pos = 0
    while pos < len(text):
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ExprSyntaxError(f"Unexpected character '{text[pos]}'", text, _byte_offset(text, pos))
        kind = m.lastgroup
        tok = m.group(kind)
        if kind == 'op' and tok == '^':
            tok = '**'
        tokens.append((kind, tok, _byte_offset(text, pos)))
        pos = m.end()
    return tokens


class _Parser:
    """Recursive-descent parser over the token list."""

    def __init__(self, text: str, tokens: List[Tuple[str, str, int]]):
        self.text = text
        self.tokens = tokens
        self.pos = 0

    def _peek(self, ahead: int = 0) -> Optional[Tuple[str, str, int]]:
        i = self.pos + ahead
        return self.tokens[i] if i < len(self.tokens) else None

    def _peek_op(self, ahead: int = 0) -> Optional[str]:
        tok = self._peek(ahead)
        return tok[1] if tok and tok[0] == 'op' else None

    def _next(self) -> Tuple[str, str, int]:
        tok = self._peek()
        if tok is None:
            raise ExprSyntaxError("Unexpected end of expression", self.text, len(self.text.encode('utf-8')))
        self.pos += 1
        return tok

    def _expect(self, op: str) -> None:
        tok = self._peek()
        if tok is None or tok[1] != op:
            offset = tok[2] if tok else len(self.text.encode('utf-8'))
            raise ExprSyntaxError(f"Expected '{op}'", self.text, offset)
        self.pos += 1

    def parse(self) -> Expr:
        e = self.expr()
        tok = self._peek()
        if tok is not None:
            raise ExprSyntaxError(f"Unexpected token '{tok[1]}'", self.text, tok[2])
        return e

    def expr(self) -> Expr:
        terms = [self.term()]
        while self._peek_op() in ('+', '-'):
            op = self._next()[1]
            t = self.term()
            terms.append(t if op == '+' else neg(t))
        return add(*terms)

    def term(self) -> Expr:
        factors = [self.unary()]
        while self._peek_op() in ('*', '/'):
            op = self._next()[1]
            rhs = self.unary()
            if op == '*':
                factors.append(rhs)
            else:
                factors = [div(mul(*factors), rhs)]
        return mul(*factors)

    def unary(self) -> Expr:
        op = self._peek_op()
        if op == '-':
            self._next()
            nxt = self._peek()
            if nxt is not None and nxt[0] == 'num' and self._peek_op(1) != '**':
                self._next()
                return const(-float(nxt[1]))
            return neg(self.unary())
        if op == '+':
            self._next()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self._peek_op() == '**':
            self._next()
            return power(base, self.unary())
        return base

    def atom(self) -> Expr:
        kind, tok, offset = self._next()
        if kind == 'num':
            return const(float(tok))
        if kind == 'name':
            if self._peek_op() == '(':
                if tok not in FUNCTIONS:
                    raise ExprSyntaxError(f"Unknown function '{tok}'", self.text, offset)
                self._next()
                arg = self.expr()
                self._expect(')')
                return call(tok, arg)
            return Expr(SYMBOL, name=tok)
        if tok == '(':
            e = self.expr()
            self._expect(')')
            return e
        raise ExprSyntaxError(f"Unexpected token '{tok}'", self.text, offset)


@lru_cache(maxsize=4096)
def parse(text: str) -> Expr:
    """Parse an equation string into an expression tree."""
    if not text or not text.strip():
        raise ExprSyntaxError("Empty equation string", text or '', 0)
    return _Parser(text, _tokenize(text)).parse()


# ---------------------------------------------------------------------------
# Differentiation
# ---------------------------------------------------------------------------

def differentiate(e: Expr, s: str) -> Expr:
    """Exact partial derivative of `e` with respect to symbol `s`, simplified."""
    return simplify(_diff(e, s))


def _diff(e: Expr, s: str) -> Expr:
    if s not in symbols(e):
        return ZERO
    k = e.kind
    if k == SYMBOL:
        return ONE
    if k == NEG:
        return neg(_diff(e.children[0], s))
    if k == SUM:
        return add(*(_diff(c, s) for c in e.children if s in symbols(c)))
    if k == PRODUCT:
        terms = []
        for i, c in enumerate(e.children):
            if s in symbols(c):
                terms.append(mul(*e.children[:i], _diff(c, s), *e.children[i + 1:]))
        return add(*terms)
    if k == QUOTIENT:
        u, v = e.children
        terms = []
        if s in symbols(u):
            terms.append(div(_diff(u, s), v))
        if s in symbols(v):
            terms.append(neg(div(mul(u, _diff(v, s)), power(v, const(2)))))
        return add(*terms)
    if k == POWER:
        b, x = e.children
        if s not in symbols(x):
            return mul(x, power(b, add(x, const(-1))), _diff(b, s))
        if s not in symbols(b):
            return mul(e, call('log', b), _diff(x, s))
        return mul(e, add(mul(_diff(x, s), call('log', b)), div(mul(x, _diff(b, s)), b)))
    if k == CALL:
        u = e.children[0]
        du = _diff(u, s)
        fn = e.name
        if fn == 'sin':
            outer = call('cos', u)
        elif fn == 'cos':
            outer = neg(call('sin', u))
        elif fn == 'exp':
            outer = e
        elif fn == 'log':
            outer = div(ONE, u)
        elif fn == 'sqrt':
            outer = div(ONE, mul(const(2), e))
        elif fn == 'abs':
            outer = call('sign', u)
        else:  # sign
            return ZERO
        return mul(outer, du)
    raise ValueError(f"Unknown expression kind '{k}'")


# ---------------------------------------------------------------------------
# Simplification
# ---------------------------------------------------------------------------

_MATH_FUNCTIONS: Dict[str, Callable[[float], float]] = {
    'sin': math.sin,
    'cos': math.cos,
    'exp': math.exp,
    'log': math.log,
    'sqrt': math.sqrt,
    'abs': abs,
    'sign': lambda v: float((v > 0) - (v < 0)),
}


def simplify(e: Expr) -> Expr:
    """Constant folding, identity removal and like-term collection.

    The result evaluates to the same values as `e`; products come out with
    their factors in a canonical order so equal monomials compare equal.
    """
    k = e.kind
    if k in (CONST, SYMBOL):
        return e
    children = tuple(simplify(c) for c in e.children)
    if k == NEG:
        return _negate(children[0])
    if k == SUM:
        return _simplify_sum(children)
    if k == PRODUCT:
        return _simplify_product(children)
    if k == QUOTIENT:
        return _simplify_quotient(*children)
    if k == POWER:
        return _simplify_power(*children)
    if k == CALL:
        arg = children[0]
        if arg.kind == CONST:
            folded = _try_fold(_MATH_FUNCTIONS[e.name], arg.value)
            if folded is not None:
                return folded
        return Expr(CALL, (arg,), name=e.name)
    raise ValueError(f"Unknown expression kind '{k}'")


def _try_fold(fn: Callable, *args: float) -> Optional[Expr]:
    try:
        value = fn(*args)
    except (ValueError, ZeroDivisionError, OverflowError):
        return None
    if isinstance(value, complex) or not math.isfinite(value):
        return None
    return const(value)


def _with_coefficient(coef: float, factors: List[Expr]) -> Expr:
    if coef == 0:
        return ZERO
    if not factors:
        return const(coef)
    body = mul(*factors)
    if coef == 1:
        return body
    if coef == -1:
        return neg(body)
    return Expr(PRODUCT, (const(coef),) + tuple(factors))


def _split_coefficient(t: Expr) -> Tuple[float, Expr]:
    if t.kind == NEG:
        coef, rest = _split_coefficient(t.children[0])
        return -coef, rest
    if t.kind == PRODUCT and t.children[0].kind == CONST:
        return t.children[0].value, mul(*t.children[1:])
    return 1.0, t


def _negate(e: Expr) -> Expr:
    if e.kind == CONST:
        return const(-e.value)
    if e.kind == NEG:
        return e.children[0]
    if e.kind == PRODUCT and e.children[0].kind == CONST:
        return _with_coefficient(-e.children[0].value, list(e.children[1:]))
    return neg(e)


def _simplify_sum(children: Tuple[Expr, ...]) -> Expr:
    flat: List[Expr] = []
    for c in children:
        if c.kind == SUM:
            flat.extend(c.children)
        else:
            flat.append(c)

    constant = 0.0
    collected: Dict[Expr, float] = {}
    for t in flat:
        if t.kind == CONST:
            constant += t.value
            continue
        coef, rest = _split_coefficient(t)
        collected[rest] = collected.get(rest, 0.0) + coef

    terms: List[Expr] = []
    for rest, coef in collected.items():
        if coef == 0:
            continue
        factors = list(rest.children) if rest.kind == PRODUCT else [rest]
        terms.append(_with_coefficient(coef, factors))
    if constant != 0:
        terms.append(const(constant))
    return add(*terms)


def _factor_key(f: Expr) -> Tuple[str, str]:
    if f.kind == POWER:
        return render(f.children[0]), render(f.children[1])
    return render(f), '1'


def _merged_exponents(exps: List[float]) -> List[float]:
    """Integer exponents of one sign add up; mixed signs and fractional exponents stay separate."""
    whole = [x for x in exps if float(x).is_integer()]
    merged = [sum(x for x in whole if x > 0), sum(x for x in whole if x < 0)]
    return [x for x in merged if x != 0] + [x for x in exps if not float(x).is_integer()]


def _simplify_product(children: Tuple[Expr, ...]) -> Expr:
    coef = 1.0
    exponents: Dict[Expr, List[float]] = {}
    others: List[Expr] = []
    work = list(children)
    while work:
        f = work.pop(0)
        if f.kind == CONST:
            coef *= f.value
        elif f.kind == NEG:
            coef = -coef
            work.insert(0, f.children[0])
        elif f.kind == PRODUCT:
            work[0:0] = list(f.children)
        elif f.kind == POWER and f.children[1].kind == CONST:
            exponents.setdefault(f.children[0], []).append(f.children[1].value)
        elif f.kind == POWER:
            others.append(f)
        else:
            exponents.setdefault(f, []).append(1.0)

    if coef == 0:
        return ZERO

    factors: List[Expr] = []
    for base, exps in exponents.items():
        for exp in _merged_exponents(exps):
            p = _simplify_power(base, const(exp))
            if p.kind == CONST:
                coef *= p.value
            else:
                factors.append(p)
    factors.extend(others)
    factors.sort(key=_factor_key)
    return _with_coefficient(coef, factors)


def _simplify_quotient(n: Expr, d: Expr) -> Expr:
    if d.kind == CONST and d.value != 0:
        return _simplify_product((const(1.0 / d.value), n))
    if n.kind == CONST and n.value == 0 and d.kind != CONST:
        return ZERO
    return div(n, d)


def _simplify_power(b: Expr, x: Expr) -> Expr:
    if x.kind == CONST:
        if x.value == 0:
            return ONE
        if x.value == 1:
            return b
        if b.kind == CONST:
            folded = _try_fold(math.pow, b.value, x.value)
            if folded is not None:
                return folded
    if b.kind == CONST and b.value == 1:
        return ONE
    return power(b, x)


# ---------------------------------------------------------------------------
# Substitution
# ---------------------------------------------------------------------------

def substitute_symbols(e: Expr, renames: Mapping[str, str]) -> Expr:
    """Rename symbols simultaneously; names not in `renames` are kept."""
    for target in renames.values():
        if not IDENTIFIER_RE.match(target):
            raise ValueError(f"Invalid identifier '{target}'")
    if not renames:
        return e
    return replace(e, {src: Expr(SYMBOL, name=dst) for src, dst in renames.items()})


def replace(e: Expr, mapping: Mapping[str, Expr]) -> Expr:
    """Replace symbols by whole expressions (simultaneous, single pass)."""
    if e.kind == SYMBOL:
        return mapping.get(e.name, e)
    if not e.children or not (symbols(e) & mapping.keys()):
        return e
    return Expr(e.kind, tuple(replace(c, mapping) for c in e.children), e.value, e.name)


# ---------------------------------------------------------------------------
# Numeric evaluation
# ---------------------------------------------------------------------------

_NUMPY_FUNCTIONS: Dict[str, Callable] = {
    'sin': np.sin,
    'cos': np.cos,
    'exp': np.exp,
    'log': np.log,
    'sqrt': np.sqrt,
    'abs': np.abs,
    'sign': np.sign,
}


def evaluate(
    e: Expr,
    bindings: Mapping[str, Union[float, np.ndarray]],
    n: Optional[int] = None,
    equation: Optional[str] = None,
) -> np.ndarray:
    """Evaluate `e` element-wise; scalars broadcast to length `n`."""
    names = symbols(e)
    values: Dict[str, Union[float, np.ndarray]] = {}
    for name in names:
        if name not in bindings:
            raise EvaluationError("Unbound symbol", (name,), equation)
        arr = np.asarray(bindings[name], dtype=float)
        if arr.ndim == 0:
            values[name] = float(arr)
            continue
        if n is None:
            n = arr.shape[0]
        if arr.shape != (n,):
            raise EvaluationError(f"Length mismatch: expected {n}, got {arr.shape[0]}", (name,), equation)
        values[name] = arr
    if n is None:
        n = 1

    def _eval(node: Expr):
        k = node.kind
        if k == CONST:
            return node.value
        if k == SYMBOL:
            return values[node.name]
        if k == NEG:
            return -_eval(node.children[0])
        if k == SUM:
            out = _eval(node.children[0])
            for c in node.children[1:]:
                out = out + _eval(c)
            return out
        if k == PRODUCT:
            out = _eval(node.children[0])
            for c in node.children[1:]:
                out = out * _eval(c)
            return out
        if k == QUOTIENT:
            num = _eval(node.children[0])
            den = _eval(node.children[1])
            if np.any(np.asarray(den) == 0):
                raise EvaluationError("Division by zero", symbols(node.children[1]), equation)
            return num / den
        if k == POWER:
            return np.power(_eval(node.children[0]), _eval(node.children[1]))
        if k == CALL:
            return _NUMPY_FUNCTIONS[node.name](_eval(node.children[0]))
        raise ValueError(f"Unknown expression kind '{k}'")

    with np.errstate(all='ignore'):
        result = np.broadcast_to(np.asarray(_eval(e), dtype=float), (n,)).copy()
    if not np.all(np.isfinite(result)):
        raise EvaluationError("Non-finite result", names, equation)
    return result


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def format_number(value: float) -> str:
    """Shortest text that parses back to exactly `value`."""
    if value == int(value) and abs(value) < 1e15:
        return str(int(value))
    return repr(float(value))


def _prec(e: Expr) -> int:
    k = e.kind
    if k == SUM:
        return 1
    if k in (PRODUCT, QUOTIENT):
        return 2
    if k == NEG or (k == CONST and e.value < 0):
        return 3
    if k == POWER:
        return 4
    return 5


def _paren(text: str, ok: bool) -> str:
    return text if ok else f"({text})"


def _plain(e: Expr) -> str:
    k = e.kind
    if k == CONST:
        return format_number(e.value)
    if k == SYMBOL:
        return e.name
    if k == CALL:
        return f"{e.name}({_plain(e.children[0])})"
    if k == NEG:
        c = e.children[0]
        if c.kind == CONST:
            return f"-({_plain(c)})"
        return '-' + _paren(_plain(c), _prec(c) >= 3)
    if k == SUM:
        parts = []
        for i, c in enumerate(e.children):
            if i == 0:
                parts.append(_paren(_plain(c), _prec(c) >= 2))
            elif c.kind == NEG:
                inner = c.children[0]
                parts.append(' - ' + _paren(_plain(inner), _prec(inner) >= 2))
            else:
                parts.append(' + ' + _paren(_plain(c), _prec(c) >= 2))
        return ''.join(parts)
    if k == PRODUCT:
        parts = []
        for i, c in enumerate(e.children):
            ok = _prec(c) >= 3 or (i == 0 and c.kind == QUOTIENT)
            parts.append(_paren(_plain(c), ok))
        return '*'.join(parts)
    if k == QUOTIENT:
        n, d = e.children
        n_ok = n.kind in (QUOTIENT, PRODUCT) or _prec(n) >= 3
        return f"{_paren(_plain(n), n_ok)}/{_paren(_plain(d), _prec(d) >= 3)}"
    if k == POWER:
        b, x = e.children
        return f"{_paren(_plain(b), _prec(b) >= 5)}**{_paren(_plain(x), _prec(x) >= 3)}"
    raise ValueError(f"Unknown expression kind '{k}'")


def latex_symbol(name: str, tex_names: Optional[Mapping[str, str]] = None) -> str:
    """LaTeX form of a symbol; `tex_names` overrides the default conversion."""
    tex = tex_names.get(name) if tex_names else None
    if tex is None:
        if name in GREEK_NAMES:
            return '\\' + name
        if '_' in name and not name.startswith('_'):
            head, tail = name.split('_', 1)
            return f"{latex_symbol(head)}_{{{tail}}}"
        return name
    if '_' in tex and '{' not in tex:
        head, tail = tex.split('_', 1)
        return f"{head}_{{{tail}}}"
    return tex


def _degree(f: Expr) -> float:
    if f.kind == POWER and f.children[1].kind == CONST:
        return f.children[1].value
    return 1.0


def _latex(e: Expr, tex: Optional[Mapping[str, str]]) -> str:
    k = e.kind
    if k == CONST:
        return format_number(e.value)
    if k == SYMBOL:
        return latex_symbol(e.name, tex)
    if k == CALL:
        arg = _latex(e.children[0], tex)
        if e.name == 'sqrt':
            return f"\\sqrt{{{arg}}}"
        if e.name == 'abs':
            return f"\\left|{{{arg}}}\\right|"
        if e.name == 'exp':
            return f"e^{{{arg}}}"
        if e.name == 'sign':
            return f"\\operatorname{{sign}}{{\\left({arg} \\right)}}"
        return f"\\{e.name}{{\\left({arg} \\right)}}"
    if k == NEG:
        c = e.children[0]
        return '- ' + _latex_wrap(c, tex, _prec(c) >= 2 and c.kind != CONST)
    if k == SUM:
        parts = []
        for i, c in enumerate(e.children):
            if i > 0 and c.kind == NEG:
                inner = c.children[0]
                parts.append(' - ' + _latex_wrap(inner, tex, _prec(inner) >= 2))
            elif i > 0 and c.kind == CONST and c.value < 0:
                parts.append(' - ' + format_number(-c.value))
            else:
                parts.append((' + ' if i else '') + _latex_wrap(c, tex, _prec(c) >= 2))
        return ''.join(parts)
    if k == PRODUCT:
        consts = [c for c in e.children if c.kind == CONST]
        rest = sorted((c for c in e.children if c.kind != CONST), key=lambda f: -_degree(f))
        parts = []
        for c in consts:
            if c.value == -1:
                parts.append('-')
            else:
                parts.append(format_number(c.value))
        for c in rest:
            parts.append(_latex_wrap(c, tex, _prec(c) >= 3 or c.kind == QUOTIENT))
        return ' '.join(parts).replace('- ', '-', 1) if parts and parts[0] == '-' else ' '.join(parts)
    if k == QUOTIENT:
        n, d = e.children
        return f"\\frac{{{_latex(n, tex)}}}{{{_latex(d, tex)}}}"
    if k == POWER:
        b, x = e.children
        base_ok = b.kind in (SYMBOL,) or (b.kind == CONST and b.value >= 0)
        return f"{_latex_wrap(b, tex, base_ok)}^{{{_latex(x, tex)}}}"
    raise ValueError(f"Unknown expression kind '{k}'")


def _latex_wrap(e: Expr, tex: Optional[Mapping[str, str]], ok: bool) -> str:
    text = _latex(e, tex)
    return text if ok else f"\\left({text}\\right)"


def render(e: Expr, style: RenderStyle = 'plain', tex_names: Optional[Mapping[str, str]] = None) -> str:
    """Render an expression.

    Plain style re-parses to a structurally equal tree; latex style uses
    fractions, superscripts and `tex_names` for symbol spelling.
    """
    if style == 'plain':
        return _plain(e)
    if style == 'latex':
        return _latex(e, tex_names)
    raise ValueError(f"Unknown render style '{style}'")
