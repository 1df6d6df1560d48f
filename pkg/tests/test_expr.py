"""Tests for the expression language: parsing, derivatives, simplification, evaluation, rendering."""
import math

import numpy as np
import pytest

from symnum.errors import EvaluationError, ExprSyntaxError
from symnum.expr import (
    PRODUCT,
    QUOTIENT,
    SUM,
    SYMBOL,
    const,
    differentiate,
    evaluate,
    parse,
    render,
    simplify,
    substitute_symbols,
    symbol,
    symbols,
)

LEAVES = ('x', 'y', 'z', '0.5', '2', '3', '1.5')
TEMPLATES = (
    '({a} + {b})',
    '({a} - {b})',
    '({a})*({b})',
    '({a})/(2 + ({b})**2)',
    '({a})**2',
    'sin({a})',
    'cos({a})',
    'exp(0.1*({a}))',
    '-({a})',
)


def random_text(rng, depth=3):
    if depth == 0 or rng.random() < 0.25:
        return LEAVES[rng.integers(len(LEAVES))]
    template = TEMPLATES[rng.integers(len(TEMPLATES))]
    return template.format(a=random_text(rng, depth - 1), b=random_text(rng, depth - 1))


def random_bindings(rng, n=1):
    return {name: rng.uniform(-1.0, 1.0, n) for name in ('x', 'y', 'z')}


class TestParse:
    """Grammar, precedence and error reporting."""

    def test_product_of_symbols(self):
        e = parse('g*v*v')
        assert e.kind == PRODUCT
        assert [c.name for c in e.children] == ['g', 'v', 'v']

    def test_atom(self):
        assert parse('x') == symbol('x')

    def test_lead_lag_output_renders_back(self):
        e = parse('T2/T3*(LG_y-LL_x)+LL_x-LL_y')
        assert e.kind == SUM
        assert render(e) == 'T2/T3*(LG_y - LL_x) + LL_x - LL_y'

    def test_quotient_is_left_associative(self):
        e = parse('a*b/c')
        assert e.kind == QUOTIENT
        assert e.children[0] == parse('a*b')

    def test_caret_is_power(self):
        assert parse('v^2') == parse('v**2')

    def test_power_binds_tighter_than_unary_minus(self):
        out = evaluate(parse('-x**2'), {'x': np.array([3.0])})
        assert out[0] == pytest.approx(-9.0)
        assert evaluate(parse('-2**2'), {}, n=1)[0] == pytest.approx(-4.0)

    def test_negative_literal_folds_into_constant(self):
        assert parse('-2') == const(-2.0)

    def test_error_reports_byte_offset(self):
        with pytest.raises(ExprSyntaxError) as info:
            parse('a + * b')
        assert info.value.offset == 4

    def test_offset_counts_utf8_bytes(self):
        with pytest.raises(ExprSyntaxError) as info:
            parse('x + θ')
        assert info.value.offset == 4

    def test_unknown_function(self):
        with pytest.raises(ExprSyntaxError, match='Unknown function'):
            parse('tanh(x)')

    def test_empty_string(self):
        with pytest.raises(ExprSyntaxError):
            parse('   ')

    def test_unbalanced_parenthesis(self):
        with pytest.raises(ExprSyntaxError, match="Expected '\\)'"):
            parse('(a + b')


class TestDifferentiate:
    """Exact derivatives, checked structurally and against finite differences."""

    def test_shunt_active_power(self):
        assert render(differentiate(parse('g*v*v'), 'v')) == '2*g*v'

    def test_shunt_reactive_power(self):
        assert render(differentiate(parse('-b*v*v'), 'v')) == '-2*b*v'

    def test_constant(self):
        assert differentiate(parse('5'), 'x') == const(0.0)

    def test_absent_symbol(self):
        assert differentiate(parse('a*b'), 'x') == const(0.0)

    def test_sin_against_central_difference(self):
        d = differentiate(parse('sin(2*x)'), 'x')
        h = 1e-6
        fd = (math.sin(2 * (0.3 + h)) - math.sin(2 * (0.3 - h))) / (2 * h)
        value = evaluate(d, {'x': np.array([0.3])})[0]
        assert abs(value - fd) / abs(value) < 1e-7

    def test_abs_derivative_is_zero_at_origin(self):
        d = differentiate(parse('abs(x)'), 'x')
        np.testing.assert_array_equal(evaluate(d, {'x': np.array([-2.0, 0.0, 3.0])}), [-1.0, 0.0, 1.0])

    def test_quotient_rule(self):
        d = differentiate(parse('u/w'), 'w')
        out = evaluate(d, {'u': np.array([3.0]), 'w': np.array([2.0])})
        assert out[0] == pytest.approx(-0.75)

    def test_sum_linearity(self):
        a, b = parse('x**3'), parse('sin(x)*y')
        lhs = differentiate(parse(f'{render(a)} + {render(b)}'), 'x')
        rhs = simplify(parse(f'{render(differentiate(a, "x"))} + {render(differentiate(b, "x"))}'))
        bindings = {'x': np.array([0.4, -0.7]), 'y': np.array([1.3, 0.2])}
        np.testing.assert_allclose(evaluate(lhs, bindings), evaluate(rhs, bindings), rtol=1e-14)

    def test_random_expressions_match_finite_differences(self):
        rng = np.random.default_rng(7)
        h = 1e-6
        for _ in range(1000):
            e = parse(random_text(rng))
            point = random_bindings(rng)
            for s in ('x', 'y', 'z'):
                d = evaluate(differentiate(e, s), point)[0]
                up = dict(point, **{s: point[s] + h})
                down = dict(point, **{s: point[s] - h})
                fd = (evaluate(e, up)[0] - evaluate(e, down)[0]) / (2 * h)
                assert abs(d - fd) / max(1.0, abs(d)) < 1e-6, render(e)


class TestSimplify:
    """Identities and constant folding."""

    def test_annihilator(self):
        assert simplify(parse('0*2*v*b + 0')) == const(0.0)

    def test_multiplicative_identity(self):
        assert simplify(parse('1*(2*v*g)')) == simplify(parse('2*v*g'))

    def test_constant_folding(self):
        assert render(simplify(parse('(3+4)*x'))) == '7*x'

    def test_identities(self):
        assert simplify(parse('x + 0')) == symbol('x')
        assert simplify(parse('x**1')) == symbol('x')
        assert simplify(parse('x**0')) == const(1.0)
        assert simplify(parse('-(-x)')) == symbol('x')

    def test_like_terms_cancel(self):
        assert simplify(parse('v**2*b - v*b*v')) == const(0.0)

    def test_integer_powers_merge(self):
        assert render(simplify(parse('x*x**2'))) == 'x**3'
        assert render(simplify(parse('x**-1*x**-2'))) == 'x**-3'

    @pytest.mark.parametrize('text, point', [('x**0.5*x**0.5', -4.0), ('x*x**-1', 0.0), ('x**2*x**-1', 0.0)])
    def test_unsafe_powers_kept_apart(self, text, point):
        e = simplify(parse(text))
        assert e.kind == PRODUCT
        with pytest.raises(EvaluationError, match='Non-finite'):
            evaluate(e, {'x': np.array([point])})
        np.testing.assert_allclose(evaluate(e, {'x': np.array([2.0])}), evaluate(parse(text), {'x': np.array([2.0])}))

    def test_random_expressions_keep_their_value(self):
        rng = np.random.default_rng(11)
        for _ in range(300):
            e = parse(random_text(rng))
            point = random_bindings(rng, n=4)
            np.testing.assert_allclose(evaluate(simplify(e), point), evaluate(e, point), rtol=1e-12, atol=1e-12)


class TestSubstitute:
    """Simultaneous symbol renaming."""

    def test_block_placeholders(self):
        e = substitute_symbols(parse('(K*u - y)/T'), {'u': 'GA_y', 'y': 'LG_y'})
        assert e == parse('(K*GA_y - LG_y)/T')

    def test_empty_map(self):
        e = parse('x')
        assert substitute_symbols(e, {}) is e

    def test_nested_call(self):
        assert substitute_symbols(parse('sin(u) + u'), {'u': 'w'}) == parse('sin(w) + w')

    def test_swap_is_simultaneous(self):
        assert substitute_symbols(parse('a - b'), {'a': 'b', 'b': 'a'}) == parse('b - a')

    def test_rejects_invalid_target(self):
        with pytest.raises(ValueError):
            substitute_symbols(parse('x'), {'x': '2x'})


class TestEvaluate:
    """Vectorized evaluation and its error paths."""

    def test_shunt_jacobian_values(self):
        out = evaluate(parse('2*v*g'), {'v': np.ones(3), 'g': np.full(3, 0.001)})
        np.testing.assert_allclose(out, [0.002, 0.002, 0.002])

    def test_constant_broadcasts(self):
        np.testing.assert_array_equal(evaluate(parse('5'), {}, n=3), [5.0, 5.0, 5.0])

    def test_scalar_binding_broadcasts(self):
        out = evaluate(parse('k*x'), {'k': 2.0, 'x': np.array([1.0, 2.0])})
        np.testing.assert_array_equal(out, [2.0, 4.0])

    def test_identity_is_zero(self):
        rng = np.random.default_rng(3)
        out = evaluate(parse('v**2*b - v*b*v'), {'v': rng.normal(size=8), 'b': rng.normal(size=8)})
        np.testing.assert_allclose(out, np.zeros(8), atol=1e-12)

    def test_unbound_symbol(self):
        with pytest.raises(EvaluationError) as info:
            evaluate(parse('a + b'), {'a': np.ones(2)})
        assert info.value.symbols == ('b',)

    def test_length_mismatch(self):
        with pytest.raises(EvaluationError, match='Length mismatch'):
            evaluate(parse('a + b'), {'a': np.ones(2), 'b': np.ones(3)}, n=2)

    def test_division_by_zero_names_equation(self):
        with pytest.raises(EvaluationError) as info:
            evaluate(parse('1/x'), {'x': np.array([1.0, 0.0])}, equation='Test.y')
        assert info.value.equation == 'Test.y'
        assert 'x' in info.value.symbols

    def test_non_finite_result(self):
        with pytest.raises(EvaluationError, match='Non-finite'):
            evaluate(parse('log(x)'), {'x': np.array([-1.0])})


class TestRender:
    """Plain round-trip and LaTeX output."""

    def test_symbol(self):
        assert render(symbol('x')) == 'x'

    def test_round_trip_lead_lag(self):
        e = parse('T2/T3*(LG_y - LL_x) + LL_x - LL_y')
        assert parse(render(e)) == e

    def test_round_trip_random(self):
        rng = np.random.default_rng(5)
        for _ in range(1000):
            s = simplify(parse(random_text(rng)))
            assert parse(render(s)) == s, render(s)

    def test_latex_fraction(self):
        assert render(parse('a/b'), 'latex') == r'\frac{a}{b}'

    def test_latex_power_and_product(self):
        assert render(simplify(parse('g*v*v')), 'latex') == 'v^{2} g'

    def test_latex_negated_product(self):
        assert render(simplify(parse('-b*v*v')), 'latex') == '- v^{2} b'

    def test_latex_tex_names(self):
        out = render(parse('omega - 1'), 'latex', {'omega': r'\omega'})
        assert out == r'\omega - 1'
        assert render(parse('T_1'), 'latex') == 'T_{1}'

    def test_unknown_style(self):
        with pytest.raises(ValueError):
            render(symbol('x'), 'html')

    def test_symbols_collects_names(self):
        assert symbols(parse('a*sin(b) + c/a')) == frozenset({'a', 'b', 'c'})
        assert parse('x').kind == SYMBOL
