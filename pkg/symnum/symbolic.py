# symnum/symbolic.py
"""
Declarative model schemas and the symbolic compiler.

A model is declared once as an ordered list of elements (parameters, variables,
discretes, services, blocks) whose equations are written as strings. Compiling
a schema parses the strings, derives the Jacobians symbolically, builds the
initialization plan and emits vectorized numpy source. Nothing here reads case
data, so a compiled model is reused across every case and cached on disk.
"""

from __future__ import annotations
from dataclasses import asdict, dataclass, field, fields, replace as dc_replace
from pathlib import Path
from typing import Any, Callable, Dict, FrozenSet, Iterable, List, Literal, Mapping, NamedTuple, Optional, Sequence, Tuple, Union
import hashlib
import json
import keyword
import logging
import os

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from symnum import expr as ex
from symnum.errors import CacheError, ExprSyntaxError, ModelDefinitionError
from symnum.generators.numpy_generator import Kernel, generate_numpy_code, load_kernels

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Constants
# ---------------------------------------------------------------------------

FORMAT_VERSION = 1

INIT_TOL = 1e-10
INIT_MAX_ITER = 50

RESERVED_NAMES = frozenset({'_np'})

ParamKind = Literal['numeric', 'idx']
PowerBase = Literal['none', 'power', 'inverse_power']
VarKind = Literal['state', 'algeb']
DiscreteKind = Literal['hard_limiter', 'anti_windup']
ServiceKind = Literal['const', 'external', 'reduce', 'repeat']
BlockKind = Literal['gain', 'lag', 'lead_lag', 'lag_anti_windup']
JacobianBlock = Literal['fx', 'fy', 'gx', 'gy']

JACOBIAN_BLOCKS: Tuple[str, ...] = ('fx', 'fy', 'gx', 'gy')


# ---------------------------------------------------------------------------
# Element specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParamSpec:
    """Case-file input. `kind='idx'` holds device identifiers of `model` (a model or group)."""
    name: str
    kind: ParamKind = 'numeric'
    default: Optional[float] = None
    description: str = ''
    unit: str = ''
    non_zero: bool = False
    mandatory: bool = False
    power_base: PowerBase = 'none'
    model: Optional[str] = None
    tex_name: Optional[str] = None
    from_system: Optional[str] = None

    @property
    def decl_type(self) -> str:
        return 'IdxParam' if self.kind == 'idx' else 'NumParam'


@dataclass(frozen=True)
class VarSpec:
    """State or algebraic variable; with `model` set it is an external handle on another model's variable."""
    name: str
    kind: VarKind
    e_str: Optional[str] = None
    v_str: Optional[str] = None
    v_iter: Optional[str] = None
    description: str = ''
    unit: str = ''
    tex_name: Optional[str] = None
    diag_eps: float = 0.0
    model: Optional[str] = None
    src: Optional[str] = None
    indexer: Optional[str] = None
    v_setter: bool = False

    @property
    def is_external(self) -> bool:
        return self.model is not None

    @property
    def decl_type(self) -> str:
        base = 'State' if self.kind == 'state' else 'Algeb'
        return f'Ext{base}' if self.is_external else base


@dataclass(frozen=True)
class DiscreteSpec:
    """Limiter on variable `u` exporting the flags `<name>_zi`, `<name>_zl`, `<name>_zu`."""
    name: str
    kind: DiscreteKind
    u: str
    lower: str
    upper: str
    description: str = ''
    tex_name: Optional[str] = None

    @property
    def flags(self) -> Tuple[str, str, str]:
        return f'{self.name}_zi', f'{self.name}_zl', f'{self.name}_zu'

    @property
    def decl_type(self) -> str:
        return 'HardLimiter' if self.kind == 'hard_limiter' else 'AntiWindup'


@dataclass(frozen=True)
class ServiceSpec:
    """Helper value outside the DAE unknowns."""
    name: str
    kind: ServiceKind
    v_str: Optional[str] = None
    model: Optional[str] = None
    src: Optional[str] = None
    indexer: Optional[str] = None
    source: Optional[str] = None
    function: str = 'sum'
    description: str = ''
    unit: str = ''
    tex_name: Optional[str] = None

    @property
    def decl_type(self) -> str:
        return {
            'const': 'ConstService',
            'external': 'ExtService',
            'reduce': 'ReduceService',
            'repeat': 'RepeatService',
        }[self.kind]


@dataclass(frozen=True)
class BlockSpec:
    """Transfer-function block expanded into variables before compiling."""
    name: str
    kind: BlockKind
    u: str
    K: str = '1'
    T: Optional[str] = None
    T1: Optional[str] = None
    T2: Optional[str] = None
    lower: Optional[str] = None
    upper: Optional[str] = None
    description: str = ''
    tex_name: Optional[str] = None

    @property
    def exports(self) -> Tuple[str, ...]:
        n = self.name
        if self.kind == 'lead_lag':
            return f'{n}_x', f'{n}_y'
        if self.kind == 'lag_anti_windup':
            return (f'{n}_y', f'{n}_lim') + DiscreteSpec(f'{n}_lim', 'anti_windup', '', '', '').flags
        return (f'{n}_y',)

    @property
    def decl_type(self) -> str:
        return {'gain': 'Gain', 'lag': 'Lag', 'lead_lag': 'LeadLag', 'lag_anti_windup': 'LagAntiWindup'}[self.kind]


Element = Union[ParamSpec, VarSpec, DiscreteSpec, ServiceSpec, BlockSpec]


# ---------------------------------------------------------------------------
# Declaration helpers
# ---------------------------------------------------------------------------

def NumParam(name: str, default: Optional[float] = None, **kwargs) -> ParamSpec:
    return ParamSpec(name, 'numeric', default=default, **kwargs)


def IdxParam(name: str, model: Optional[str] = None, **kwargs) -> ParamSpec:
    return ParamSpec(name, 'idx', model=model, **kwargs)


def State(name: str, e_str: Optional[str] = None, **kwargs) -> VarSpec:
    return VarSpec(name, 'state', e_str=e_str, **kwargs)


def Algeb(name: str, e_str: Optional[str] = None, **kwargs) -> VarSpec:
    return VarSpec(name, 'algeb', e_str=e_str, **kwargs)


def ExtState(name: str, model: str, src: str, indexer: str, **kwargs) -> VarSpec:
    return VarSpec(name, 'state', model=model, src=src, indexer=indexer, **kwargs)


def ExtAlgeb(name: str, model: str, src: str, indexer: str, **kwargs) -> VarSpec:
    return VarSpec(name, 'algeb', model=model, src=src, indexer=indexer, **kwargs)


def ConstService(name: str, v_str: str, **kwargs) -> ServiceSpec:
    return ServiceSpec(name, 'const', v_str=v_str, **kwargs)


def ExtService(name: str, model: str, src: str, indexer: str, **kwargs) -> ServiceSpec:
    return ServiceSpec(name, 'external', model=model, src=src, indexer=indexer, **kwargs)


def ReduceService(name: str, source: str, indexer: str, **kwargs) -> ServiceSpec:
    return ServiceSpec(name, 'reduce', source=source, indexer=indexer, **kwargs)


def RepeatService(name: str, source: str, indexer: str, **kwargs) -> ServiceSpec:
    return ServiceSpec(name, 'repeat', source=source, indexer=indexer, **kwargs)


def HardLimiter(name: str, u: str, lower: str, upper: str, **kwargs) -> DiscreteSpec:
    return DiscreteSpec(name, 'hard_limiter', u, lower, upper, **kwargs)


def AntiWindup(name: str, u: str, lower: str, upper: str, **kwargs) -> DiscreteSpec:
    return DiscreteSpec(name, 'anti_windup', u, lower, upper, **kwargs)


def Gain(name: str, u: str, K: Union[str, float] = '1', **kwargs) -> BlockSpec:
    return BlockSpec(name, 'gain', u, K=_as_str(K), **kwargs)


def Lag(name: str, u: str, T: Union[str, float], K: Union[str, float] = '1', **kwargs) -> BlockSpec:
    return BlockSpec(name, 'lag', u, K=_as_str(K), T=_as_str(T), **kwargs)


def LeadLag(name: str, u: str, T1: Union[str, float], T2: Union[str, float], **kwargs) -> BlockSpec:
    return BlockSpec(name, 'lead_lag', u, T1=_as_str(T1), T2=_as_str(T2), **kwargs)


def LagAntiWindup(
    name: str,
    u: str,
    T: Union[str, float],
    lower: Union[str, float],
    upper: Union[str, float],
    K: Union[str, float] = '1',
    **kwargs,
) -> BlockSpec:
    return BlockSpec(
        name, 'lag_anti_windup', u, K=_as_str(K), T=_as_str(T),
        lower=_as_str(lower), upper=_as_str(upper), **kwargs,
    )


def _as_str(value: Union[str, float, None]) -> Optional[str]:
    if value is None or isinstance(value, str):
        return value
    return ex.format_number(float(value))


# ---------------------------------------------------------------------------
# Schema
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelSchema:
    """Ordered, validated declaration of one model type."""
    name: str
    elements: Tuple[Element, ...] = ()
    group: Optional[str] = None
    pflow: bool = False
    tds: bool = True
    replaces: Optional[str] = None
    description: str = ''
    init_hooks: Tuple[Callable, ...] = field(default=(), compare=False, repr=False)
    residual_hooks: Tuple[Callable, ...] = field(default=(), compare=False, repr=False)

    def _of(self, cls) -> Tuple:
        return tuple(e for e in self.elements if isinstance(e, cls))

    @property
    def params(self) -> Tuple[ParamSpec, ...]:
        return self._of(ParamSpec)

    @property
    def variables(self) -> Tuple[VarSpec, ...]:
        return self._of(VarSpec)

    @property
    def states(self) -> Tuple[VarSpec, ...]:
        return tuple(v for v in self.variables if v.kind == 'state')

    @property
    def algebs(self) -> Tuple[VarSpec, ...]:
        return tuple(v for v in self.variables if v.kind == 'algeb')

    @property
    def discretes(self) -> Tuple[DiscreteSpec, ...]:
        return self._of(DiscreteSpec)

    @property
    def services(self) -> Tuple[ServiceSpec, ...]:
        return self._of(ServiceSpec)

    @property
    def blocks(self) -> Tuple[BlockSpec, ...]:
        return self._of(BlockSpec)

    @property
    def flags(self) -> Tuple[str, ...]:
        return tuple(f for d in self.discretes for f in d.flags)

    def element(self, name: str) -> Element:
        for e in self.elements:
            if e.name == name:
                return e
        raise KeyError(f"{self.name} has no element '{name}'")

    @property
    def has_hooks(self) -> bool:
        return bool(self.init_hooks or self.residual_hooks)


def _parse_checked(model: str, element: str, attr: str, text: str) -> ex.Expr:
    try:
        return ex.parse(text)
    except ExprSyntaxError as e:
        raise ModelDefinitionError(f"{model}.{element}: cannot parse {attr} '{text}': {e}") from e


def _element_strings(el: Element) -> List[Tuple[str, str]]:
    """(attribute, equation string) pairs an element carries."""
    attrs: Tuple[str, ...] = ()
    if isinstance(el, VarSpec):
        attrs = ('e_str', 'v_str', 'v_iter')
    elif isinstance(el, ServiceSpec):
        attrs = ('v_str',)
    elif isinstance(el, DiscreteSpec):
        attrs = ('lower', 'upper')
    elif isinstance(el, BlockSpec):
        attrs = ('u', 'K', 'T', 'T1', 'T2', 'lower', 'upper')
    return [(a, getattr(el, a)) for a in attrs if getattr(el, a) is not None]


def _declared_names(elements: Sequence[Element]) -> List[str]:
    names: List[str] = []
    for el in elements:
        names.append(el.name)
        if isinstance(el, DiscreteSpec):
            names.extend(el.flags)
        elif isinstance(el, BlockSpec):
            names.extend(el.exports)
    return names


def build_schema(
    name: str,
    elements: Sequence[Element],
    *,
    group: Optional[str] = None,
    pflow: bool = False,
    tds: bool = True,
    replaces: Optional[str] = None,
    description: str = '',
    init_hooks: Sequence[Callable] = (),
    residual_hooks: Sequence[Callable] = (),
) -> ModelSchema:
    """Validate an ordered element list and freeze it into a ModelSchema.

    Equation strings may reference elements declared later; every symbol must
    resolve to some element, discrete flag or block export of this model.
    """
    if not ex.IDENTIFIER_RE.match(name):
        raise ModelDefinitionError(f"Invalid model name '{name}'")

    declared = _declared_names(elements)
    seen = set()
    for n in declared:
        if not ex.IDENTIFIER_RE.match(n) or keyword.iskeyword(n) or n in RESERVED_NAMES:
            raise ModelDefinitionError(f"{name}: invalid element name '{n}'")
        if n in seen:
            raise ModelDefinitionError(f"{name}: duplicate element name '{n}'")
        seen.add(n)

    known = set(declared)
    params = {p.name: p for p in elements if isinstance(p, ParamSpec)}
    idx_params = {n for n, p in params.items() if p.kind == 'idx'}
    var_names = {v.name for v in elements if isinstance(v, VarSpec)}
    for b in elements:
        if isinstance(b, BlockSpec):
            var_names.update(x for x in b.exports if x.endswith(('_x', '_y')))

    for el in elements:
        for attr, text in _element_strings(el):
            e = _parse_checked(name, el.name, attr, text)
            dangling = sorted(ex.symbols(e) - known)
            if dangling:
                raise ModelDefinitionError(
                    f"{name}.{el.name}: dangling reference {', '.join(repr(d) for d in dangling)} in {attr}"
                )
        _validate_element(name, el, idx_params, var_names, elements)

    if replaces is not None and replaces not in idx_params:
        raise ModelDefinitionError(f"{name}: 'replaces' must name an idx parameter, got '{replaces}'")

    return ModelSchema(
        name=name,
        elements=tuple(elements),
        group=group,
        pflow=pflow,
        tds=tds,
        replaces=replaces,
        description=description,
        init_hooks=tuple(init_hooks),
        residual_hooks=tuple(residual_hooks),
    )


def _validate_element(model: str, el: Element, idx_params: set, var_names: set, elements: Sequence[Element]) -> None:
    where = f"{model}.{el.name}"
    if isinstance(el, ParamSpec):
        if el.kind == 'idx' and el.default is not None:
            raise ModelDefinitionError(f"{where}: idx parameters take no numeric default")
        if el.from_system not in (None, 'freq', 'baseMVA'):
            raise ModelDefinitionError(f"{where}: unknown system attribute '{el.from_system}'")
    elif isinstance(el, VarSpec):
        if el.is_external:
            if not el.src or el.indexer not in idx_params:
                raise ModelDefinitionError(f"{where}: external variable needs src and an idx parameter as indexer")
        elif el.kind == 'state' and el.e_str is None:
            raise ModelDefinitionError(f"{where}: state variable needs an e_str")
        if el.diag_eps < 0:
            raise ModelDefinitionError(f"{where}: diag_eps must be non-negative")
    elif isinstance(el, DiscreteSpec):
        if el.u not in var_names:
            raise ModelDefinitionError(f"{where}: input '{el.u}' is not a variable")
    elif isinstance(el, ServiceSpec):
        if el.kind == 'const' and el.v_str is None:
            raise ModelDefinitionError(f"{where}: constant service needs v_str")
        if el.kind == 'external' and (not el.model or not el.src or el.indexer not in idx_params):
            raise ModelDefinitionError(f"{where}: external service needs model, src and an idx indexer")
        if el.kind in ('reduce', 'repeat'):
            if el.indexer not in idx_params:
                raise ModelDefinitionError(f"{where}: {el.kind} service needs an idx parameter as indexer")
            sources = {e.name: e for e in elements if isinstance(e, (ParamSpec, ServiceSpec))}
            if el.source not in sources:
                raise ModelDefinitionError(f"{where}: dangling reference '{el.source}' in source")
            src = sources[el.source]
            if el.kind == 'repeat' and not (isinstance(src, ServiceSpec) and src.kind == 'reduce'):
                raise ModelDefinitionError(f"{where}: repeat source must be a reduce service")
            if el.kind == 'reduce' and el.function != 'sum':
                raise ModelDefinitionError(f"{where}: unsupported reduce function '{el.function}'")
    elif isinstance(el, BlockSpec):
        required = {
            'gain': ('K',),
            'lag': ('K', 'T'),
            'lead_lag': ('T1', 'T2'),
            'lag_anti_windup': ('K', 'T', 'lower', 'upper'),
        }[el.kind]
        missing = [a for a in required if getattr(el, a) is None]
        if missing:
            raise ModelDefinitionError(f"{where}: {el.decl_type} block needs {', '.join(missing)}")


# ---------------------------------------------------------------------------
# Block expansion
# ---------------------------------------------------------------------------

def _instantiate(template: str, mapping: Mapping[str, ex.Expr]) -> str:
    return ex.render(ex.replace(ex.parse(template), mapping))


def _expand_block(b: BlockSpec) -> List[Element]:
    n = b.name
    sym = {'u': ex.parse(b.u), 'K': ex.parse(b.K)}
    for attr in ('T', 'T1', 'T2'):
        if getattr(b, attr) is not None:
            sym[attr] = ex.parse(getattr(b, attr))
    y = f'{n}_y'
    sym['y'] = ex.symbol(y)
    tex = b.tex_name or n

    if b.kind == 'gain':
        return [Algeb(y, _instantiate('K*(u) - y', sym), v_str=_instantiate('K*u', sym),
                      description=f'{n} gain output', tex_name=f'y_{tex}')]
    if b.kind == 'lag':
        return [State(y, _instantiate('(K*u - y)/T', sym), v_str=_instantiate('K*u', sym),
                      description=f'{n} lag output', tex_name=f'y_{tex}')]
    if b.kind == 'lead_lag':
        x = f'{n}_x'
        sym['x'] = ex.symbol(x)
        return [
            State(x, _instantiate('(u - x)/T2', sym), v_str=_instantiate('u', sym),
                  description=f'{n} lead-lag internal state', tex_name=f'x_{tex}'),
            Algeb(y, _instantiate('T1/T2*(u - x) + x - y', sym), v_str=_instantiate('u', sym),
                  description=f'{n} lead-lag output', tex_name=f'y_{tex}'),
        ]
    lim = f'{n}_lim'
    sym['zi'] = ex.symbol(f'{lim}_zi')
    return [
        State(y, _instantiate('zi*(K*u - y)/T', sym), v_str=_instantiate('K*u', sym),
              description=f'{n} lag output', tex_name=f'y_{tex}'),
        AntiWindup(lim, y, b.lower, b.upper, description=f'{n} anti-windup limiter'),
    ]


def expand_blocks(s: ModelSchema) -> ModelSchema:
    """Replace every block by its element template, in place of the block."""
    if not s.blocks:
        return s
    taken = {el.name for el in s.elements if not isinstance(el, BlockSpec)}
    for el in s.elements:
        if isinstance(el, DiscreteSpec):
            taken.update(el.flags)

    expanded: List[Element] = []
    for el in s.elements:
        if not isinstance(el, BlockSpec):
            expanded.append(el)
            continue
        for new in _expand_block(el):
            names = [new.name] + (list(new.flags) if isinstance(new, DiscreteSpec) else [])
            clash = [n for n in names if n in taken]
            if clash:
                raise ModelDefinitionError(f"{s.name}.{el.name}: exported name '{clash[0]}' already declared")
            taken.update(names)
            expanded.append(new)
        logger.debug("Expanded block %s.%s (%s)", s.name, el.name, el.kind)
    return dc_replace(s, elements=tuple(expanded))


# ---------------------------------------------------------------------------
# Compiled model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Equation:
    """Residual of variable `var`, stored at local row `row` of f or g."""
    var: str
    row: int
    expr: ex.Expr


@dataclass(frozen=True)
class Triplet:
    row: int
    col: int
    value: ex.Expr


@dataclass(frozen=True)
class InitStep:
    """`assign` evaluates `expr` into `target`; `discrete` refreshes the limiter named `target`."""
    kind: Literal['assign', 'discrete']
    target: str
    expr: Optional[ex.Expr] = None


@dataclass(frozen=True)
class IterativeInit:
    var: str
    residual: ex.Expr
    start: Optional[ex.Expr] = None


@dataclass(frozen=True)
class InitPlan:
    sequential: Tuple[InitStep, ...] = ()
    iterative: Tuple[IterativeInit, ...] = ()
    jacobian: Tuple[Triplet, ...] = ()
    service_order: Tuple[str, ...] = ()
    refreshable: FrozenSet[str] = frozenset()
    tol: float = INIT_TOL
    max_iter: int = INIT_MAX_ITER


class Program(NamedTuple):
    fn: Callable
    args: Tuple[str, ...]


@dataclass
class CompiledModel:
    """Symbolic-layer output for one model type; independent of any case."""
    schema: ModelSchema
    schema_hash: str
    states: Tuple[str, ...]
    algebs: Tuple[str, ...]
    f: Tuple[Equation, ...]
    g: Tuple[Equation, ...]
    jacobians: Dict[str, Tuple[Triplet, ...]]
    diag_eps: Tuple[Tuple[str, int, float], ...]
    init_plan: InitPlan
    source: str = ''
    programs: Dict[str, Program] = field(default_factory=dict, compare=False, repr=False)

    @property
    def name(self) -> str:
        return self.schema.name

    @property
    def group(self) -> Optional[str]:
        return self.schema.group

    @property
    def xy(self) -> Tuple[str, ...]:
        return tuple(v.name for v in self.schema.variables)

    def var(self, name: str) -> VarSpec:
        el = self.schema.element(name)
        if not isinstance(el, VarSpec):
            raise KeyError(f"{self.name}.{name} is not a variable")
        return el

    def kernels(self) -> List[Kernel]:
        """Generated-function layout, derived deterministically from the compiled fields."""
        ks = [
            Kernel('f_update', tuple(eq.expr for eq in self.f)),
            Kernel('g_update', tuple(eq.expr for eq in self.g)),
        ]
        for block in JACOBIAN_BLOCKS:
            ks.append(Kernel(f'j_{block}', tuple(t.value for t in self.jacobians[block])))
        for s in self.schema.services:
            if s.kind == 'const':
                ks.append(Kernel(f's_{s.name}', (ex.parse(s.v_str),), single=True))
        for d in self.schema.discretes:
            ks.append(Kernel(f'd_{d.name}_lower', (ex.parse(d.lower),), single=True))
            ks.append(Kernel(f'd_{d.name}_upper', (ex.parse(d.upper),), single=True))
        for step in self.init_plan.sequential:
            if step.kind == 'assign':
                ks.append(Kernel(f'i_{step.target}', (step.expr,), single=True))
        plan = self.init_plan
        ks.append(Kernel('it_res', tuple(it.residual for it in plan.iterative)))
        ks.append(Kernel('it_jac', tuple(t.value for t in plan.jacobian)))
        return ks

    def build_programs(self) -> None:
        kernels = self.kernels()
        fns = load_kernels(self.source, self.name, [k.name for k in kernels])
        self.programs = {k.name: Program(fns[k.name], k.args) for k in kernels}

    def program(self, name: str) -> Program:
        if not self.programs:
            self.build_programs()
        return self.programs[name]


# ---------------------------------------------------------------------------
# Compilation
# ---------------------------------------------------------------------------

def _resolve_symbols(schema: ModelSchema, e: ex.Expr, where: str) -> None:
    known = set(_declared_names(schema.elements))
    missing = sorted(ex.symbols(e) - known)
    if missing:
        raise ModelDefinitionError(f"{schema.name}: unresolvable symbol {', '.join(missing)} in {where}")


def _service_order(s: ModelSchema) -> Tuple[Tuple[str, ...], FrozenSet[str]]:
    services = {sv.name: sv for sv in s.services}
    deps: Dict[str, set] = {}
    for sv in s.services:
        if sv.kind == 'const':
            used = ex.symbols(ex.parse(sv.v_str))
        elif sv.kind in ('reduce', 'repeat'):
            used = frozenset({sv.source})
        else:
            used = frozenset()
        deps[sv.name] = set(used)

    order: List[str] = []
    pending = [sv.name for sv in s.services]
    while pending:
        ready = [n for n in pending if not (deps[n] & set(services)) - set(order)]
        if not ready:
            raise ModelDefinitionError(f"{s.name}: cyclic service dependency among {', '.join(pending)}")
        order.append(ready[0])
        pending.remove(ready[0])

    params = {p.name for p in s.params}
    refreshable = set()
    for n in order:
        sv = services[n]
        if sv.kind == 'external':
            continue
        if all(d in params or d in refreshable for d in deps[n]):
            refreshable.add(n)
    return tuple(order), frozenset(refreshable)


def derive_init_plan(s: ModelSchema) -> InitPlan:
    """Sequential assignments, iterative residuals and service order for one model."""
    s = expand_blocks(s)
    service_order, refreshable = _service_order(s)

    by_flag = {f: d for d in s.discretes for f in d.flags}
    refreshed = set()
    steps: List[InitStep] = []
    for v in s.variables:
        if v.v_str is None:
            continue
        e = ex.parse(v.v_str)
        _resolve_symbols(s, e, f"{v.name}.v_str")
        for sym in sorted(ex.symbols(e)):
            d = by_flag.get(sym)
            if d is not None and d.name not in refreshed:
                steps.append(InitStep('discrete', d.name))
                refreshed.add(d.name)
        steps.append(InitStep('assign', v.name, e))
    for d in s.discretes:
        if d.name not in refreshed:
            steps.append(InitStep('discrete', d.name))

    iterative = []
    for v in s.variables:
        if v.v_iter is None:
            continue
        res = ex.parse(v.v_iter)
        _resolve_symbols(s, res, f"{v.name}.v_iter")
        iterative.append(IterativeInit(v.name, res, ex.parse(v.v_str) if v.v_str else None))

    jac = []
    for i, it in enumerate(iterative):
        for j, other in enumerate(iterative):
            d = ex.differentiate(it.residual, other.var)
            if not d.is_number(0):
                jac.append(Triplet(i, j, d))

    return InitPlan(
        sequential=tuple(steps),
        iterative=tuple(iterative),
        jacobian=tuple(jac),
        service_order=service_order,
        refreshable=refreshable,
    )


def compile_model(s: ModelSchema) -> CompiledModel:
    """Parse, differentiate and generate code for one model schema."""
    source_hash = schema_hash(s)
    s = expand_blocks(s)
    logger.debug("Compiling model %s", s.name)

    states = tuple(v.name for v in s.states)
    algebs = tuple(v.name for v in s.algebs)
    state_pos = {n: i for i, n in enumerate(states)}
    algeb_pos = {n: i for i, n in enumerate(algebs)}
    order = {n: i for i, n in enumerate(v.name for v in s.variables)}

    f_eqs: List[Equation] = []
    g_eqs: List[Equation] = []
    for v in s.variables:
        if v.e_str is None:
            continue
        e = ex.parse(v.e_str)
        _resolve_symbols(s, e, f"{v.name}.e_str")
        if v.kind == 'state':
            f_eqs.append(Equation(v.name, state_pos[v.name], e))
        else:
            g_eqs.append(Equation(v.name, algeb_pos[v.name], e))

    jacobians: Dict[str, List[Triplet]] = {b: [] for b in JACOBIAN_BLOCKS}
    for prefix, eqs in (('f', f_eqs), ('g', g_eqs)):
        for eq in eqs:
            for sym in sorted(ex.symbols(eq.expr) & order.keys(), key=order.get):
                d = ex.differentiate(eq.expr, sym)
                if d.is_number(0):
                    continue
                if sym in state_pos:
                    jacobians[prefix + 'x'].append(Triplet(eq.row, state_pos[sym], d))
                else:
                    jacobians[prefix + 'y'].append(Triplet(eq.row, algeb_pos[sym], d))

    diag_eps = []
    for v in s.variables:
        if v.diag_eps > 0:
            if v.kind == 'state':
                diag_eps.append(('fx', state_pos[v.name], v.diag_eps))
            else:
                diag_eps.append(('gy', algeb_pos[v.name], v.diag_eps))

    for d in s.discretes:
        for bound in (d.lower, d.upper):
            _resolve_symbols(s, ex.parse(bound), f"{d.name} bounds")

    compiled = CompiledModel(
        schema=s,
        schema_hash=source_hash,
        states=states,
        algebs=algebs,
        f=tuple(f_eqs),
        g=tuple(g_eqs),
        jacobians={b: tuple(t) for b, t in jacobians.items()},
        diag_eps=tuple(diag_eps),
        init_plan=derive_init_plan(s),
    )
    compiled.source = generate_numpy_code(s.name, compiled.kernels())
    compiled.build_programs()
    logger.debug(
        "Compiled %s: %d states, %d algebs, triplets %s",
        s.name, len(states), len(algebs), {b: len(t) for b, t in compiled.jacobians.items()},
    )
    return compiled


def render_docs(c: CompiledModel) -> str:
    """Markdown/LaTeX reference document for one compiled model."""
    from symnum.generators.docs_generator import generate_model_doc
    return generate_model_doc(c)


# ---------------------------------------------------------------------------
# Declarative text format
# ---------------------------------------------------------------------------

ElementType = Literal[
    'NumParam', 'IdxParam', 'State', 'Algeb', 'ExtState', 'ExtAlgeb',
    'ConstService', 'ExtService', 'ReduceService', 'RepeatService',
    'HardLimiter', 'AntiWindup', 'Gain', 'Lag', 'LeadLag', 'LagAntiWindup',
]

_BLOCK_KINDS = {'Gain': 'gain', 'Lag': 'lag', 'LeadLag': 'lead_lag', 'LagAntiWindup': 'lag_anti_windup'}
_SERVICE_KINDS = {'ConstService': 'const', 'ExtService': 'external', 'ReduceService': 'reduce', 'RepeatService': 'repeat'}


class ElementDecl(BaseModel):
    """One element of a model declaration file."""
    model_config = ConfigDict(extra='forbid', str_strip_whitespace=True)

    type: ElementType
    name: str = Field(..., min_length=1)
    description: str = ''
    unit: str = ''
    tex_name: Optional[str] = None
    default: Optional[float] = None
    non_zero: bool = False
    mandatory: bool = False
    power_base: PowerBase = 'none'
    from_system: Optional[Literal['freq', 'baseMVA']] = None
    e_str: Optional[str] = None
    v_str: Optional[str] = None
    v_iter: Optional[str] = None
    diag_eps: float = Field(default=0.0, ge=0)
    model: Optional[str] = None
    src: Optional[str] = None
    indexer: Optional[str] = None
    v_setter: bool = False
    source: Optional[str] = None
    function: Literal['sum'] = 'sum'
    u: Optional[str] = None
    lower: Optional[str] = None
    upper: Optional[str] = None
    K: Optional[str] = None
    T: Optional[str] = None
    T1: Optional[str] = None
    T2: Optional[str] = None

    @field_validator('u', 'lower', 'upper', 'K', 'T', 'T1', 'T2', mode='before')
    @classmethod
    def _number_to_str(cls, v):
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            return ex.format_number(float(v))
        return v

    def to_spec(self) -> Element:
        common = dict(description=self.description, tex_name=self.tex_name)
        t = self.type
        if t in ('NumParam', 'IdxParam'):
            return ParamSpec(
                self.name, 'idx' if t == 'IdxParam' else 'numeric', default=self.default,
                unit=self.unit, non_zero=self.non_zero, mandatory=self.mandatory,
                power_base=self.power_base, model=self.model, from_system=self.from_system, **common,
            )
        if t in ('State', 'Algeb', 'ExtState', 'ExtAlgeb'):
            return VarSpec(
                self.name, 'state' if t.endswith('State') else 'algeb', e_str=self.e_str,
                v_str=self.v_str, v_iter=self.v_iter, unit=self.unit, diag_eps=self.diag_eps,
                model=self.model, src=self.src, indexer=self.indexer, v_setter=self.v_setter, **common,
            )
        if t in _SERVICE_KINDS:
            return ServiceSpec(
                self.name, _SERVICE_KINDS[t], v_str=self.v_str, model=self.model, src=self.src,
                indexer=self.indexer, source=self.source, function=self.function, unit=self.unit, **common,
            )
        if t in ('HardLimiter', 'AntiWindup'):
            if self.u is None or self.lower is None or self.upper is None:
                raise ModelDefinitionError(f"{self.name}: {t} needs u, lower and upper")
            kind = 'hard_limiter' if t == 'HardLimiter' else 'anti_windup'
            return DiscreteSpec(self.name, kind, self.u, self.lower, self.upper, **common)
        if self.u is None:
            raise ModelDefinitionError(f"{self.name}: {t} block needs u")
        return BlockSpec(
            self.name, _BLOCK_KINDS[t], self.u, K=self.K or '1', T=self.T, T1=self.T1, T2=self.T2,
            lower=self.lower, upper=self.upper, **common,
        )


class ModelDecl(BaseModel):
    """A whole model declaration file."""
    model_config = ConfigDict(extra='forbid', str_strip_whitespace=True)

    name: str = Field(..., min_length=1)
    group: Optional[str] = None
    pflow: bool = False
    tds: bool = True
    replaces: Optional[str] = None
    description: str = ''
    elements: List[ElementDecl] = Field(default_factory=list)


def schema_from_dict(data: Mapping[str, Any]) -> ModelSchema:
    """Build a schema from its declarative dictionary form."""
    try:
        decl = ModelDecl.model_validate(data)
    except ValidationError as e:
        raise ModelDefinitionError(f"Invalid model declaration: {e}") from e
    return build_schema(
        decl.name,
        [el.to_spec() for el in decl.elements],
        group=decl.group,
        pflow=decl.pflow,
        tds=decl.tds,
        replaces=decl.replaces,
        description=decl.description,
    )


def load_schema_file(path: Union[str, Path]) -> ModelSchema:
    """Read a JSON model declaration."""
    text = Path(path).read_text(encoding='utf-8')
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelDefinitionError(f"{path}: invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}") from e
    return schema_from_dict(data)


def _element_to_dict(el: Element) -> Dict[str, Any]:
    out: Dict[str, Any] = {'type': el.decl_type}
    for f in fields(el):
        if f.name == 'kind':
            continue
        value = getattr(el, f.name)
        if f.name != 'name' and value == f.default:
            continue
        out[f.name] = value
    return out


def schema_to_dict(s: ModelSchema) -> Dict[str, Any]:
    """Declarative dictionary form; `schema_from_dict` restores an equal schema."""
    return {
        'name': s.name,
        'group': s.group,
        'pflow': s.pflow,
        'tds': s.tds,
        'replaces': s.replaces,
        'description': s.description,
        'elements': [_element_to_dict(el) for el in s.elements],
    }


def schema_hash(s: ModelSchema) -> str:
    payload = json.dumps({'format': FORMAT_VERSION, 'schema': schema_to_dict(s)}, sort_keys=True)
    return hashlib.sha256(payload.encode('utf-8')).hexdigest()


# ---------------------------------------------------------------------------
# Cache
# ---------------------------------------------------------------------------

class CacheRecord(BaseModel):
    """Serialized CompiledModel; expressions are stored as plain equation strings."""
    model_config = ConfigDict(extra='forbid')

    format_version: int
    schema_hash: str
    model: Dict[str, Any]
    states: List[str]
    algebs: List[str]
    f: List[Tuple[str, int, str]]
    g: List[Tuple[str, int, str]]
    jacobians: Dict[str, List[Tuple[int, int, str]]]
    diag_eps: List[Tuple[str, int, float]]
    init_sequential: List[Tuple[str, str, Optional[str]]]
    init_iterative: List[Tuple[str, str, Optional[str]]]
    init_jacobian: List[Tuple[int, int, str]]
    service_order: List[str]
    refreshable: List[str]
    source: str


def cache_store(c: CompiledModel) -> bytes:
    """Serialize a compiled model, generated source included."""
    r = ex.render
    plan = c.init_plan
    record = CacheRecord(
        format_version=FORMAT_VERSION,
        schema_hash=c.schema_hash,
        model=schema_to_dict(c.schema),
        states=list(c.states),
        algebs=list(c.algebs),
        f=[(eq.var, eq.row, r(eq.expr)) for eq in c.f],
        g=[(eq.var, eq.row, r(eq.expr)) for eq in c.g],
        jacobians={b: [(t.row, t.col, r(t.value)) for t in ts] for b, ts in c.jacobians.items()},
        diag_eps=[tuple(d) for d in c.diag_eps],
        init_sequential=[(st.kind, st.target, r(st.expr) if st.expr is not None else None) for st in plan.sequential],
        init_iterative=[(it.var, r(it.residual), r(it.start) if it.start is not None else None) for it in plan.iterative],
        init_jacobian=[(t.row, t.col, r(t.value)) for t in plan.jacobian],
        service_order=list(plan.service_order),
        refreshable=sorted(plan.refreshable),
        source=c.source,
    )
    return record.model_dump_json().encode('utf-8')


def cache_load(data: bytes, expected_hash: Optional[str] = None) -> CompiledModel:
    """Restore a compiled model without repeating symbolic processing."""
    try:
        record = CacheRecord.model_validate_json(data)
    except ValidationError as e:
        raise CacheError(f"Corrupt cache payload: {e.error_count()} validation errors") from e
    if record.format_version != FORMAT_VERSION:
        raise CacheError(f"Cache format version {record.format_version} != {FORMAT_VERSION}")
    if expected_hash is not None and record.schema_hash != expected_hash:
        raise CacheError(f"Stale cache for {record.model.get('name')}: schema hash changed")

    p = ex.parse
    try:
        decl = ModelDecl.model_validate(record.model)
        schema = ModelSchema(
            name=decl.name,
            elements=tuple(el.to_spec() for el in decl.elements),
            group=decl.group,
            pflow=decl.pflow,
            tds=decl.tds,
            replaces=decl.replaces,
            description=decl.description,
        )
        plan = InitPlan(
            sequential=tuple(InitStep(k, t, p(e) if e is not None else None) for k, t, e in record.init_sequential),
            iterative=tuple(IterativeInit(v, p(res), p(st) if st is not None else None)
                            for v, res, st in record.init_iterative),
            jacobian=tuple(Triplet(i, j, p(e)) for i, j, e in record.init_jacobian),
            service_order=tuple(record.service_order),
            refreshable=frozenset(record.refreshable),
        )
        compiled = CompiledModel(
            schema=schema,
            schema_hash=record.schema_hash,
            states=tuple(record.states),
            algebs=tuple(record.algebs),
            f=tuple(Equation(v, row, p(e)) for v, row, e in record.f),
            g=tuple(Equation(v, row, p(e)) for v, row, e in record.g),
            jacobians={b: tuple(Triplet(i, j, p(e)) for i, j, e in record.jacobians.get(b, [])) for b in JACOBIAN_BLOCKS},
            diag_eps=tuple((b, int(i), float(eps)) for b, i, eps in record.diag_eps),
            init_plan=plan,
            source=record.source,
        )
        compiled.build_programs()
    except (ValidationError, ExprSyntaxError, ModelDefinitionError, SyntaxError, KeyError) as e:
        raise CacheError(f"Corrupt cache payload: {e}") from e
    return compiled


def default_cache_dir() -> Path:
    return Path(os.path.expanduser(os.environ.get('SYMNUM_CACHE_DIR', '~/.cache/symnum')))


def cache_disabled_by_env() -> bool:
    return os.environ.get('SYMNUM_NO_CACHE', '').strip().lower() in ('1', 'true', 'yes')


class ModelCache:
    """On-disk compiled-model cache, one JSON file per model keyed by schema hash."""

    def __init__(self, directory: Optional[Union[str, Path]] = None, enabled: bool = True):
        self.directory = Path(directory) if directory is not None else default_cache_dir()
        self.enabled = enabled and not cache_disabled_by_env()
        self.hits = 0
        self.misses = 0

    def path_for(self, name: str) -> Path:
        return self.directory / f'{name}.json'

    def get_or_compile(self, schema: ModelSchema) -> CompiledModel:
        if not self.enabled:
            return compile_model(schema)

        expected = schema_hash(schema)
        path = self.path_for(schema.name)
        if path.exists():
            try:
                compiled = cache_load(path.read_bytes(), expected_hash=expected)
                if schema.has_hooks:
                    compiled.schema = dc_replace(
                        compiled.schema, init_hooks=schema.init_hooks, residual_hooks=schema.residual_hooks,
                    )
                self.hits += 1
                logger.info("Cache hit for %s", schema.name)
                return compiled
            except (CacheError, OSError) as e:
                logger.warning("Ignoring cached %s: %s; recompiling", schema.name, e)

        compiled = compile_model(schema)
        self.misses += 1
        logger.info("Cache miss for %s", schema.name)
        try:
            self.directory.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix('.tmp')
            tmp.write_bytes(cache_store(compiled))
            os.replace(tmp, path)
        except OSError as e:
            logger.warning("Could not write cache for %s: %s", schema.name, e)
        return compiled
