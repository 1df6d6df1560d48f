# symnum/generators/docs_generator.py
"""
Docs Generator - model reference documents from compiled models.

Each document lists parameters, variables, initialization, residual equations,
services and discretes. Equations are simplified and rendered in LaTeX with the
elements' tex names; output is deterministic so documents can be golden-tested.
"""

from __future__ import annotations
from typing import TYPE_CHECKING, Dict, List, Sequence

from symnum.expr import Expr, latex_symbol, parse, render, simplify
from symnum.generators.base import (
    format_default,
    markdown_table,
    math_cell,
    property_labels,
)

if TYPE_CHECKING:
    from symnum.symbolic import CompiledModel, ModelSchema


# ---------------------------------------------------------------------------
# Public API
# ---------------------------------------------------------------------------

def generate_model_doc(compiled: 'CompiledModel') -> str:
    """Generate the markdown reference for one compiled model."""
    schema = compiled.schema
    tex = tex_names(schema)

    lines = [f'# {schema.name}', '']
    if schema.description:
        lines += [schema.description, '']
    routines = [label for on, label in ((schema.pflow, 'power flow'), (schema.tds, 'time domain')) if on]
    lines += [
        f"- Group: {schema.group or '-'}",
        f"- Routines: {', '.join(routines) or '-'}",
    ]
    if schema.replaces:
        lines.append(f'- Replaces the static device referenced by `{schema.replaces}` after power flow')
    lines.append('')

    lines += _parameters_section(schema, tex)
    lines += _variables_section(schema, tex)
    lines += _init_section(compiled, tex)
    lines += _equations_section('Differential equations', 'T x\' = f(x, y)', compiled.f, schema, tex)
    lines += _equations_section('Algebraic equations', '0 = g(x, y)', compiled.g, schema, tex)
    lines += _services_section(schema, tex)
    lines += _discretes_section(schema, tex)
    return '\n'.join(lines).rstrip('\n') + '\n'


def generate_index(names: Sequence[str]) -> str:
    """Index document linking every model reference."""
    lines = ['# Model reference', '']
    for name in names:
        lines.append(f'- [{name}]({name}.md)')
    return '\n'.join(lines).rstrip('\n') + '\n'


def tex_names(schema: 'ModelSchema') -> Dict[str, str]:
    """Symbol name -> LaTeX spelling for every element carrying a tex name."""
    from symnum.symbolic import DiscreteSpec

    out: Dict[str, str] = {}
    for el in schema.elements:
        if el.tex_name:
            out[el.name] = el.tex_name
        if isinstance(el, DiscreteSpec):
            label = el.tex_name or el.name
            for flag, k in zip(el.flags, ('i', 'l', 'u')):
                out[flag] = f'z_{{{k}}}^{{{label}}}'
    return out


def latex(e: Expr, tex: Dict[str, str]) -> str:
    return render(simplify(e), 'latex', tex)


# ---------------------------------------------------------------------------
# Sections
# ---------------------------------------------------------------------------

def _parameters_section(schema, tex) -> List[str]:
    rows = []
    for p in schema.params:
        flags = {'non_zero': p.non_zero, 'mandatory': p.mandatory}
        props = property_labels(flags, p.power_base)
        if p.kind == 'idx':
            props = ', '.join(x for x in (f'idx of {p.model}' if p.model else 'idx', props) if x)
        if p.from_system:
            props = ', '.join(x for x in (props, f'from system {p.from_system}') if x)
        rows.append([
            p.name, math_cell(latex_symbol(p.name, tex)), p.description,
            format_default(p.default), p.unit, props,
        ])
    return ['## Parameters', ''] + markdown_table(
        ['Name', 'Symbol', 'Description', 'Default', 'Unit', 'Properties'], rows) + ['']


def _variables_section(schema, tex) -> List[str]:
    rows = []
    for v in schema.variables:
        source = f'{v.model}.{v.src}[{v.indexer}]' if v.is_external else ''
        rows.append([v.name, math_cell(latex_symbol(v.name, tex)), v.decl_type, v.description, v.unit, source])
    return ['## Variables', ''] + markdown_table(
        ['Name', 'Symbol', 'Type', 'Description', 'Unit', 'Source'], rows) + ['']


def _init_section(compiled, tex) -> List[str]:
    plan = compiled.init_plan
    rows = []
    for step in plan.sequential:
        if step.kind != 'assign':
            continue
        v = compiled.var(step.target)
        rows.append([v.name, math_cell(latex_symbol(v.name, tex)), v.decl_type, math_cell(latex(step.expr, tex))])
    lines = ['## Initialization', ''] + markdown_table(['Name', 'Symbol', 'Type', 'Initial value'], rows) + ['']
    if plan.iterative:
        it_rows = [
            [it.var, math_cell(latex_symbol(it.var, tex)), math_cell(latex(it.residual, tex))]
            for it in plan.iterative
        ]
        lines += ['Solved iteratively:', ''] + markdown_table(['Name', 'Symbol', 'Residual'], it_rows) + ['']
    return lines


def _equations_section(title, form, equations, schema, tex) -> List[str]:
    rows = []
    for eq in equations:
        v = schema.element(eq.var)
        rows.append([eq.var, math_cell(latex_symbol(eq.var, tex)), v.decl_type, math_cell(latex(eq.expr, tex))])
    return [f'## {title}', '', f'Residual form ${form}$.', ''] + markdown_table(
        ['Name', 'Symbol', 'Type', 'Equation'], rows) + ['']


def _services_section(schema, tex) -> List[str]:
    if not schema.services:
        return []
    rows = []
    for s in schema.services:
        if s.kind == 'const':
            body = math_cell(latex(parse(s.v_str), tex))
        elif s.kind == 'external':
            body = f'{s.model}.{s.src}[{s.indexer}]'
        else:
            body = f'{s.kind} of {s.source} by {s.indexer}'
        rows.append([s.name, math_cell(latex_symbol(s.name, tex)), s.decl_type, body])
    return ['## Services', ''] + markdown_table(['Name', 'Symbol', 'Type', 'Value'], rows) + ['']


def _discretes_section(schema, tex) -> List[str]:
    if not schema.discretes:
        return []
    rows = []
    for d in schema.discretes:
        rows.append([
            d.name, d.decl_type, math_cell(latex_symbol(d.u, tex)),
            math_cell(latex(parse(d.lower), tex)), math_cell(latex(parse(d.upper), tex)),
            ', '.join(d.flags),
        ])
    return ['## Discretes', ''] + markdown_table(['Name', 'Type', 'Input', 'Lower', 'Upper', 'Flags'], rows) + ['']
