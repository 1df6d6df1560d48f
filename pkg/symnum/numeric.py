# symnum/numeric.py
"""
Case-dependent storage and execution.

A System holds one DeviceTable per model, the global DAE arrays and the
address map. Internal variables of a model occupy contiguous address blocks,
so their value and residual arrays are plain views into the DAE arrays;
external variables use local copies that are gathered before and scattered
(accumulated) after each evaluation. Jacobians are assembled in two phases:
a zero-filled pattern built once per scope, then in-place value fills.
"""

from __future__ import annotations
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Literal, Optional, Sequence, Tuple
import logging

import numpy as np

from symnum.errors import CaseError, ConvergenceError, EvaluationError, ModelDefinitionError
from symnum.linalg import (
    SparseMatrix,
    csc_from_triplets,
    inplace_add,
    pattern_slots,
    sparse_lu_solve,
    zeroize,
)
from symnum.symbolic import JACOBIAN_BLOCKS, CompiledModel, Program

logger = logging.getLogger(__name__)

Scope = Literal['pflow', 'tds']
Phase = Literal['pre', 'post']

AddressMap = Dict[str, Dict[str, np.ndarray]]


# ---------------------------------------------------------------------------
# Storage
# ---------------------------------------------------------------------------

class DaeArrays:
    """The four global arrays x, y, f, g; lengths are fixed at allocation."""

    def __init__(self, n_state: int = 0, n_algeb: int = 0):
        self.x = np.zeros(n_state)
        self.y = np.zeros(n_algeb)
        self.f = np.zeros(n_state)
        self.g = np.zeros(n_algeb)
        self.x_names: List[str] = [''] * n_state
        self.y_names: List[str] = [''] * n_algeb

    @property
    def n_state(self) -> int:
        return self.x.size

    @property
    def n_algeb(self) -> int:
        return self.y.size

    @property
    def xy(self) -> np.ndarray:
        return np.concatenate([self.x, self.y])

    @property
    def fg(self) -> np.ndarray:
        return np.concatenate([self.f, self.g])


@dataclass
class DeviceTable:
    """Per-model device storage; every array has one entry per device."""
    model: str
    idx: List[Any] = field(default_factory=list)
    params: Dict[str, np.ndarray] = field(default_factory=dict)
    services: Dict[str, np.ndarray] = field(default_factory=dict)
    flags: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    e: Dict[str, np.ndarray] = field(default_factory=dict)
    extras: Dict[str, List[Any]] = field(default_factory=dict)
    positions: Dict[Any, int] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.idx)

    def position(self, idx: Any) -> int:
        return self.positions[idx]


@dataclass
class _ExtLink:
    """Device-wise source of an external service: target model and position per device."""
    models: List[str]
    positions: np.ndarray
    src: str


@dataclass
class _FillEntry:
    model: str
    block: str
    program: Program
    slots: np.ndarray
    buffer: np.ndarray


@dataclass
class JacobianPattern:
    """Zero-filled fx, fy, gx, gy for one scope with precomputed data slots."""
    scope: str
    n_state: int
    n_algeb: int
    matrices: Dict[str, SparseMatrix]
    entries: List[_FillEntry]
    diag: Dict[str, Tuple[np.ndarray, np.ndarray]]

    @property
    def nnz(self) -> Dict[str, int]:
        return {b: int(m.nnz) for b, m in self.matrices.items()}


class System:
    """A loaded case: compiled models, device tables, addresses and DAE arrays."""

    def __init__(self, models: Sequence[CompiledModel], base_mva: float = 100.0, freq: float = 60.0):
        self.models: Dict[str, CompiledModel] = {c.name: c for c in models}
        self.tables: Dict[str, DeviceTable] = {c.name: DeviceTable(c.name) for c in models}
        self.groups: Dict[str, List[str]] = {}
        for c in models:
            if c.group:
                self.groups.setdefault(c.group, []).append(c.name)
        self.base_mva = float(base_mva)
        self.freq = float(freq)
        self.dae = DaeArrays()
        self.addresses: AddressMap = {}
        self.ext_services: Dict[str, Dict[str, _ExtLink]] = {}
        self.patterns: Dict[str, JacobianPattern] = {}
        self.pu_converted = False
        self.n_pflow_state = 0
        self.n_pflow_algeb = 0
        self.is_setup = False
        self.dynamics_initialized = False

    # -- lookup -------------------------------------------------------------

    def models_in(self, scope: Optional[str] = None) -> List[CompiledModel]:
        """Models with devices participating in `scope` (all when None), in registry order."""
        out = []
        for c in self.models.values():
            if self.tables[c.name].n == 0:
                continue
            if scope == 'pflow' and not c.schema.pflow:
                continue
            if scope == 'tds' and not c.schema.tds:
                continue
            out.append(c)
        return out

    def members(self, model_or_group: str) -> List[str]:
        if model_or_group in self.models:
            return [model_or_group]
        if model_or_group in self.groups:
            return self.groups[model_or_group]
        raise CaseError(f"Unknown model or group '{model_or_group}'")

    def find(self, model_or_group: str, idx: Any) -> Tuple[str, int]:
        """Model name and device position of `idx` within a model or group."""
        for name in self.members(model_or_group):
            pos = self.tables[name].positions.get(idx)
            if pos is not None:
                return name, pos
        raise KeyError(idx)

    def value_of(self, model: str, name: str) -> np.ndarray:
        """Current values of a variable, parameter, service or flag of `model`."""
        table = self.tables[model]
        for store in (table.v, table.params, table.services, table.flags):
            if name in store:
                return store[name]
        raise KeyError(f"{model} has no attribute '{name}'")

    def address(self, model: str, var: str) -> np.ndarray:
        return self.addresses[model][var]

    # -- setup --------------------------------------------------------------

    def setup(self) -> None:
        """Allocate addresses, link externals and build Jacobian patterns."""
        allocate_addresses(self)
        link_external(self)
        for scope in ('pflow', 'tds'):
            build_jacobian_pattern(self, scope)
        self.is_setup = True

    def relink(self) -> None:
        """Refresh links and patterns after devices were added to models without internal variables."""
        for c in self.models.values():
            table = self.tables[c.name]
            for v in c.schema.variables:
                if not v.is_external and v.name in table.v and table.v[v.name].size != table.n:
                    raise ModelDefinitionError(f"{c.name}: cannot add devices with internal variables after setup")
        _bind_external_arrays(self)
        link_external(self)
        for scope in ('pflow', 'tds'):
            build_jacobian_pattern(self, scope)


# ---------------------------------------------------------------------------
# Addresses and linking
# ---------------------------------------------------------------------------

def _allocation_order(system: System) -> List[CompiledModel]:
    active = system.models_in(None)
    return [c for c in active if c.schema.pflow] + [c for c in active if not c.schema.pflow]


def allocate_addresses(system: System) -> AddressMap:
    """Contiguous address blocks per internal variable; power-flow models first."""
    n_x = n_y = 0
    addresses: AddressMap = {}
    x_names: List[str] = []
    y_names: List[str] = []
    order = _allocation_order(system)
    for c in order:
        table = system.tables[c.name]
        addresses[c.name] = {}
        for v in c.schema.variables:
            if v.is_external:
                continue
            names = [f'{c.name}.{v.name}[{i}]' for i in table.idx]
            if v.kind == 'state':
                addresses[c.name][v.name] = np.arange(n_x, n_x + table.n)
                n_x += table.n
                x_names.extend(names)
            else:
                addresses[c.name][v.name] = np.arange(n_y, n_y + table.n)
                n_y += table.n
                y_names.extend(names)
        if c.schema.pflow:
            system.n_pflow_state, system.n_pflow_algeb = n_x, n_y

    system.dae = DaeArrays(n_x, n_y)
    system.dae.x_names = x_names
    system.dae.y_names = y_names
    system.addresses = addresses

    for c in order:
        table = system.tables[c.name]
        for v in c.schema.variables:
            if v.is_external:
                continue
            a = addresses[c.name][v.name]
            start, stop = int(a[0]), int(a[-1]) + 1
            if v.kind == 'state':
                table.v[v.name] = system.dae.x[start:stop]
                table.e[v.name] = system.dae.f[start:stop]
            else:
                table.v[v.name] = system.dae.y[start:stop]
                table.e[v.name] = system.dae.g[start:stop]
    _bind_external_arrays(system)
    logger.debug("Allocated %d states and %d algebraics", n_x, n_y)
    return addresses


def _bind_external_arrays(system: System) -> None:
    for c in system.models_in(None):
        table = system.tables[c.name]
        for v in c.schema.variables:
            if v.is_external:
                table.v[v.name] = np.zeros(table.n)
                table.e[v.name] = np.zeros(table.n)
        for d in c.schema.discretes:
            for flag in d.flags:
                if flag not in table.flags or table.flags[flag].size != table.n:
                    table.flags[flag] = np.zeros(table.n)
            table.flags[d.flags[0]][:] = 1.0


def _resolve(system: System, model: str, indexer: str, target: str) -> Tuple[List[str], np.ndarray]:
    table = system.tables[model]
    values = table.params[indexer]
    models, positions = [], np.zeros(table.n, dtype=np.int64)
    for i, idx in enumerate(values):
        try:
            name, pos = system.find(target, idx)
        except KeyError:
            raise CaseError(
                f"{model} device {table.idx[i]}: {indexer}={idx!r} not found in {target}"
            ) from None
        models.append(name)
        positions[i] = pos
    return models, positions


def link_external(system: System) -> None:
    """Fill external variable addresses and external-service sources from indexers."""
    system.ext_services = {}
    for c in system.models_in(None):
        table = system.tables[c.name]
        for p in c.schema.params:
            if p.kind == 'idx' and p.model and p.model not in system.models and p.model not in system.groups:
                raise CaseError(f"{c.name}.{p.name} references unknown model '{p.model}'")
        for v in c.schema.variables:
            if not v.is_external:
                continue
            models, positions = _resolve(system, c.name, v.indexer, v.model)
            addr = np.zeros(table.n, dtype=np.int64)
            for i, (m, pos) in enumerate(zip(models, positions)):
                target = system.models[m].var(v.src)
                if target.kind != v.kind or target.is_external:
                    raise ModelDefinitionError(f"{c.name}.{v.name}: {m}.{v.src} is not an internal {v.kind}")
                addr[i] = system.addresses[m][v.src][pos]
            system.addresses.setdefault(c.name, {})[v.name] = addr
        links = {}
        for s in c.schema.services:
            if s.kind == 'external':
                models, positions = _resolve(system, c.name, s.indexer, s.model)
                links[s.name] = _ExtLink(models, positions, s.src)
        system.ext_services[c.name] = links


# ---------------------------------------------------------------------------
# Evaluation helpers
# ---------------------------------------------------------------------------

def _lookup(table: DeviceTable, name: str):
    for store in (table.v, table.params, table.services, table.flags):
        if name in store:
            return store[name]
    raise EvaluationError(f"{table.model}: value of '{name}' is not available", (name,))


def call_program(system: System, model: str, program: Program):
    """Run a generated program on the model's current arrays."""
    table = system.tables[model]
    args = [_lookup(table, a) for a in program.args]
    with np.errstate(all='ignore'):
        return program.fn(*args)


def _check_finite(values: np.ndarray, model: str, what: str, table: DeviceTable) -> None:
    bad = ~np.isfinite(values)
    if bad.any():
        i = int(np.flatnonzero(np.broadcast_to(bad, (table.n,)))[0])
        raise EvaluationError(f"{model}: non-finite value in {what} at device {table.idx[i]}", equation=what)


def _broadcast(value, n: int) -> np.ndarray:
    return np.broadcast_to(np.asarray(value, dtype=float), (n,))


# ---------------------------------------------------------------------------
# Services
# ---------------------------------------------------------------------------

def evaluate_services(system: System, models: Optional[Iterable[str]] = None, only: Optional[Iterable[str]] = None) -> None:
    """Compute services in dependency order; `only` limits which services are refreshed."""
    names = list(models) if models is not None else [c.name for c in system.models_in(None)]
    wanted = set(only) if only is not None else None
    for name in names:
        c = system.models[name]
        table = system.tables[name]
        if table.n == 0:
            continue
        if system.is_setup:
            _gather_external(system, name)
        for sname in c.init_plan.service_order:
            if wanted is not None and sname not in wanted:
                continue
            s = c.schema.element(sname)
            if s.kind == 'const':
                value = call_program(system, name, c.program(f's_{sname}'))
                value = np.array(_broadcast(value, table.n))
                _check_finite(value, name, f'service {sname}', table)
            elif s.kind == 'external':
                link = system.ext_services[name][sname]
                value = np.array([
                    float(system.value_of(m, link.src)[pos]) for m, pos in zip(link.models, link.positions)
                ])
            elif s.kind == 'reduce':
                keys = list(table.params[s.indexer])
                groups = list(dict.fromkeys(keys))
                source = _lookup(table, s.source)
                value = np.zeros(len(groups))
                np.add.at(value, np.array([groups.index(k) for k in keys], dtype=np.int64), source)
            else:
                keys = list(table.params[s.indexer])
                groups = list(dict.fromkeys(keys))
                reduced = table.services[s.source]
                value = reduced[np.array([groups.index(k) for k in keys], dtype=np.int64)]
            table.services[sname] = value


def refresh_services(system: System, model: str) -> None:
    """Re-evaluate the parameter-only services of one model (after a status change)."""
    c = system.models[model]
    evaluate_services(system, [model], only=c.init_plan.refreshable)


# ---------------------------------------------------------------------------
# Discrete flags
# ---------------------------------------------------------------------------

def discrete_bounds(system: System, model: str, name: str) -> Tuple[np.ndarray, np.ndarray]:
    c = system.models[model]
    n = system.tables[model].n
    lower = _broadcast(call_program(system, model, c.program(f'd_{name}_lower')), n)
    upper = _broadcast(call_program(system, model, c.program(f'd_{name}_upper')), n)
    return lower, upper


def check_discrete_bounds(system: System, models: Optional[Iterable[str]] = None) -> None:
    """Reject limiters whose lower bound exceeds the upper bound.

    Bounds reading anything not yet available (services of a dynamic model
    before its initialization) are skipped; they are checked again later.
    """
    names = list(models) if models is not None else [c.name for c in system.models_in(None)]
    for name in names:
        c = system.models[name]
        table = system.tables[name]
        for d in c.schema.discretes:
            args = c.program(f'd_{d.name}_lower').args + c.program(f'd_{d.name}_upper').args
            if not all(a in table.params or a in table.services for a in args):
                continue
            lower, upper = discrete_bounds(system, name, d.name)
            bad = np.flatnonzero(lower > upper)
            if bad.size:
                raise CaseError(f"{name}.{d.name}: lower > upper for device {table.idx[int(bad[0])]}")


def _set_flags(table: DeviceTable, d, zl: np.ndarray, zu: np.ndarray) -> None:
    zi_name, zl_name, zu_name = d.flags
    table.flags[zl_name][:] = zl
    table.flags[zu_name][:] = zu
    table.flags[zi_name][:] = 1.0 - table.flags[zl_name] - table.flags[zu_name]


def refresh_discrete(system: System, model: str, name: str) -> None:
    """Set a limiter's flags from its input and bounds with strict inequalities."""
    table = system.tables[model]
    d = system.models[model].schema.element(name)
    lower, upper = discrete_bounds(system, model, name)
    u = table.v[d.u]
    _set_flags(table, d, u < lower, u > upper)


def _anti_windup_post(system: System, model: str) -> None:
    table = system.tables[model]
    for d in system.models[model].schema.discretes:
        if d.kind != 'anti_windup':
            continue
        lower, upper = discrete_bounds(system, model, d.name)
        x = table.v[d.u]
        f = table.e[d.u]
        zu = (x >= upper) & (f > 0)
        zl = (x <= lower) & (f < 0)
        if zu.any():
            x[zu] = upper[zu]
            f[zu] = 0.0
        if zl.any():
            x[zl] = lower[zl]
            f[zl] = 0.0
        _set_flags(table, d, zl, zu)


def update_discrete_flags(system: System, phase: Phase, scope: Optional[str] = None) -> None:
    """`pre`: hard limiters from current inputs. `post`: anti-windup limiters from current residuals."""
    for c in system.models_in(scope):
        if phase == 'pre':
            for d in c.schema.discretes:
                if d.kind == 'hard_limiter':
                    refresh_discrete(system, c.name, d.name)
        else:
            _anti_windup_post(system, c.name)


def binding_state_addresses(system: System, scope: Optional[str] = None) -> np.ndarray:
    """State addresses currently held at a bound by an anti-windup limiter."""
    out = []
    for c in system.models_in(scope):
        table = system.tables[c.name]
        for d in c.schema.discretes:
            if d.kind != 'anti_windup':
                continue
            binding = (table.flags[d.flags[1]] + table.flags[d.flags[2]]) > 0
            if binding.any():
                out.append(system.addresses[c.name][d.u][binding])
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


# ---------------------------------------------------------------------------
# Equations
# ---------------------------------------------------------------------------

def evaluate_model_equations(system: System, model: str) -> None:
    """Gather externals, run residual programs, apply anti-windup and scatter into f and g."""
    c = system.models[model]
    table = system.tables[model]
    dae = system.dae
    ext_vars = [v for v in c.schema.variables if v.is_external]

    # 1. gather external values
    for v in ext_vars:
        src = dae.x if v.kind == 'state' else dae.y
        np.take(src, system.addresses[model][v.name], out=table.v[v.name])
        table.e[v.name][:] = 0.0

    # 2. residual programs; anti-windup derivatives are computed unconstrained
    for d in c.schema.discretes:
        if d.kind == 'anti_windup':
            table.flags[d.flags[0]][:] = 1.0
            table.flags[d.flags[1]][:] = 0.0
            table.flags[d.flags[2]][:] = 0.0
    for equations, prog_name in ((c.f, 'f_update'), (c.g, 'g_update')):
        if not equations:
            continue
        values = call_program(system, model, c.program(prog_name))
        for eq, val in zip(equations, values):
            out = table.e[eq.var]
            out += val
            _check_finite(out, model, f'{eq.var} equation', table)
    for hook in c.schema.residual_hooks:
        hook(system, model)

    # 3. anti-windup clamping
    _anti_windup_post(system, model)

    # 4. scatter external contributions
    for v in ext_vars:
        dst = dae.f if v.kind == 'state' else dae.g
        np.add.at(dst, system.addresses[model][v.name], table.e[v.name])


def fg_update(system: System, scope: Optional[str] = 'tds') -> None:
    """Zero f and g, refresh hard limiters, then evaluate every model in scope."""
    system.dae.f[:] = 0.0
    system.dae.g[:] = 0.0
    update_discrete_flags(system, 'pre', scope)
    for c in system.models_in(scope):
        evaluate_model_equations(system, c.name)


# ---------------------------------------------------------------------------
# Jacobians
# ---------------------------------------------------------------------------

def _scope_size(system: System, scope: str) -> Tuple[int, int]:
    if scope == 'pflow':
        return system.n_pflow_state, system.n_pflow_algeb
    return system.dae.n_state, system.dae.n_algeb


def _block_shape(block: str, n_x: int, n_y: int) -> Tuple[int, int]:
    size = {'x': n_x, 'y': n_y}
    return size[block[0].replace('f', 'x').replace('g', 'y')], size[block[1]]


def build_jacobian_pattern(system: System, scope: str = 'tds') -> Dict[str, SparseMatrix]:
    """Zero-filled fx, fy, gx, gy holding every (row, col) any triplet can touch."""
    n_x, n_y = _scope_size(system, scope)
    positions: Dict[str, List[Tuple[np.ndarray, np.ndarray]]] = {b: [] for b in JACOBIAN_BLOCKS}
    pending = []
    diag_parts: Dict[str, List[Tuple[np.ndarray, np.ndarray]]] = {b: [] for b in JACOBIAN_BLOCKS}

    for c in system.models_in(scope):
        table = system.tables[c.name]
        addr = system.addresses[c.name]
        for block in JACOBIAN_BLOCKS:
            triplets = c.jacobians[block]
            if not triplets:
                continue
            row_vars = c.states if block[0] == 'f' else c.algebs
            col_vars = c.states if block[1] == 'x' else c.algebs
            rows = np.concatenate([addr[row_vars[t.row]] for t in triplets])
            cols = np.concatenate([addr[col_vars[t.col]] for t in triplets])
            positions[block].append((rows, cols))
            pending.append((c, block, rows, cols, len(triplets), table.n))
        for block, i, eps in c.diag_eps:
            var = c.states[i] if block == 'fx' else c.algebs[i]
            a = addr[var]
            positions[block].append((a, a))
            diag_parts[block].append((a, np.full(a.size, eps)))

    matrices = {}
    for block in JACOBIAN_BLOCKS:
        parts = positions[block]
        rows = np.concatenate([p[0] for p in parts]) if parts else np.zeros(0, dtype=np.int64)
        cols = np.concatenate([p[1] for p in parts]) if parts else np.zeros(0, dtype=np.int64)
        matrices[block] = csc_from_triplets(_block_shape(block, n_x, n_y), (rows, cols, np.zeros(rows.size)))

    entries = []
    for c, block, rows, cols, k, n in pending:
        entries.append(_FillEntry(
            model=c.name,
            block=block,
            program=c.program(f'j_{block}'),
            slots=pattern_slots(matrices[block], rows, cols),
            buffer=np.zeros((k, n)),
        ))
    diag = {}
    for block, parts in diag_parts.items():
        if parts:
            a = np.concatenate([p[0] for p in parts])
            diag[block] = (pattern_slots(matrices[block], a, a), np.concatenate([p[1] for p in parts]))

    pattern = JacobianPattern(scope, n_x, n_y, matrices, entries, diag)
    system.patterns[scope] = pattern
    logger.debug("Jacobian pattern for %s: nnz %s", scope, pattern.nnz)
    return matrices


def fill_jacobian(system: System, scope: str = 'tds') -> Dict[str, SparseMatrix]:
    """Reset pattern values, add diagonal epsilons, then add every triplet value in place."""
    pattern = system.patterns[scope]
    for m in pattern.matrices.values():
        zeroize(m)
    for block, (slots, values) in pattern.diag.items():
        inplace_add(pattern.matrices[block], slots, values)
    for entry in pattern.entries:
        values = call_program(system, entry.model, entry.program)
        buf = entry.buffer
        for k, val in enumerate(values):
            buf[k] = val
        if not np.isfinite(buf).all():
            raise EvaluationError(f"{entry.model}: non-finite {entry.block} Jacobian entry", equation=entry.block)
        inplace_add(pattern.matrices[entry.block], entry.slots, buf.reshape(-1))
    return pattern.matrices


# ---------------------------------------------------------------------------
# Initialization and algebraic re-solve
# ---------------------------------------------------------------------------

def _assign(system: System, model: str, var: str, value) -> None:
    c = system.models[model]
    table = system.tables[model]
    v = c.var(var)
    value = _broadcast(value, table.n)
    _check_finite(value, model, f'{var} initial value', table)
    if not v.is_external:
        table.v[var][:] = value
        return
    dst = system.dae.x if v.kind == 'state' else system.dae.y
    addr = system.addresses[model][var]
    if v.v_setter:
        dst[addr] = value
    else:
        np.add.at(dst, addr, value)
    np.take(dst, addr, out=table.v[var])


def _gather_external(system: System, model: str) -> None:
    c = system.models[model]
    table = system.tables[model]
    for v in c.schema.variables:
        if v.is_external:
            src = system.dae.x if v.kind == 'state' else system.dae.y
            np.take(src, system.addresses[model][v.name], out=table.v[v.name])


def _solve_iterative(system: System, model: str) -> None:
    c = system.models[model]
    table = system.tables[model]
    plan = c.init_plan
    k, n = len(plan.iterative), table.n
    names = [it.var for it in plan.iterative]
    for name in names:
        if c.var(name).is_external:
            raise ModelDefinitionError(f"{model}.{name}: iterative initialization needs an internal variable")

    def residual() -> np.ndarray:
        values = call_program(system, model, c.program('it_res'))
        return np.array([_broadcast(r, n) for r in values])

    res = residual()
    for iteration in range(plan.max_iter):
        err = float(np.max(np.abs(res))) if res.size else 0.0
        if err < plan.tol:
            return
        jac = np.zeros((n, k, k))
        for t, val in zip(plan.jacobian, call_program(system, model, c.program('it_jac'))):
            jac[:, t.row, t.col] = val
        try:
            step = np.linalg.solve(jac, -res.T[..., None])[..., 0]
        except np.linalg.LinAlgError as e:
            raise ConvergenceError(f"{model}: singular iterative-init Jacobian for {', '.join(names)}") from e
        start = [table.v[name].copy() for name in names]
        damping = 1.0
        while True:
            for j, name in enumerate(names):
                table.v[name][:] = start[j] + damping * step[:, j]
            new_res = residual()
            if np.max(np.abs(new_res)) < err or damping < 1e-3:
                break
            damping *= 0.5
        res = new_res
        logger.debug("%s iterative init %d: max residual %.3e", model, iteration + 1, float(np.max(np.abs(res))))
    if res.size and np.max(np.abs(res)) >= plan.tol:
        raise ConvergenceError(
            f"{model}: iterative initialization of {', '.join(names)} did not converge", iterations=plan.max_iter,
        )


def initialize_model(system: System, model: str) -> None:
    """Run a model's init plan: sequential assignments, limiter refreshes, iterative set, hooks."""
    c = system.models[model]
    table = system.tables[model]
    if table.n == 0:
        return
    _gather_external(system, model)
    for step in c.init_plan.sequential:
        if step.kind == 'discrete':
            refresh_discrete(system, model, step.target)
        else:
            prog = c.program(f'i_{step.target}')
            _assign(system, model, step.target, call_program(system, model, prog))
    if c.init_plan.iterative:
        _solve_iterative(system, model)
    for hook in c.schema.init_hooks:
        hook(system, model)


def solve_algebraic(system: System, scope: str = 'tds', tol: float = 1e-10, max_iter: int = 20) -> int:
    """Newton on g(x, y) = 0 with states frozen; returns the number of linear solves."""
    _, n_y = _scope_size(system, scope)
    for iteration in range(max_iter + 1):
        fg_update(system, scope)
        g = system.dae.g[:n_y]
        err = float(np.max(np.abs(g))) if n_y else 0.0
        if err < tol:
            return iteration
        if iteration == max_iter:
            break
        gy = fill_jacobian(system, scope)['gy']
        system.dae.y[:n_y] += sparse_lu_solve(gy, -g)
    raise ConvergenceError(f"Algebraic re-solve did not converge (max |g| = {err:.3e})", iterations=max_iter)
