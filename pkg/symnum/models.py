# symnum/models.py
"""
Built-in model library.

Static models (Bus, PQ, PV, Slack, Shunt, Line) take part in power flow; GENCLS
and the two TGOV1 variants are dynamic and join after initialization. All
residuals follow one sign convention: power leaving a bus is added to that
bus's a (active) and v (reactive) equations.
"""

from __future__ import annotations
from functools import lru_cache
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence
import logging

import numpy as np

from symnum.errors import CaseError
from symnum.numeric import System, check_discrete_bounds, evaluate_services
from symnum.symbolic import (
    Algeb,
    AntiWindup,
    CompiledModel,
    ConstService,
    ExtAlgeb,
    ExtService,
    ExtState,
    Gain,
    IdxParam,
    LagAntiWindup,
    LeadLag,
    ModelCache,
    ModelSchema,
    NumParam,
    State,
    build_schema,
    compile_model,
)

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Shared declarations
# ---------------------------------------------------------------------------

def _status():
    return NumParam('u', 1.0, description='connection status', unit='bool')


def _bus_ext(a_str: Optional[str], v_e_str: Optional[str], indexer: str = 'bus', **v_kwargs):
    return [
        ExtAlgeb('a', 'Bus', 'a', indexer, e_str=a_str, description='bus voltage angle', unit='rad',
                 tex_name=r'\theta'),
        ExtAlgeb('v', 'Bus', 'v', indexer, e_str=v_e_str, description='bus voltage magnitude', unit='p.u.',
                 **v_kwargs),
    ]


def _static_gen_params():
    return [
        IdxParam('bus', 'Bus', mandatory=True, description='idx of the installed bus'),
        NumParam('Sn', 100.0, description='power rating', unit='MVA', non_zero=True),
        NumParam('Vn', 110.0, description='voltage rating', unit='kV', non_zero=True),
        NumParam('p0', 0.0, description='active power set point', unit='p.u.', tex_name='p_0'),
        NumParam('q0', 0.0, description='reactive power guess', unit='p.u.', tex_name='q_0'),
        NumParam('v0', 1.0, description='voltage set point', unit='p.u.', tex_name='v_0'),
        NumParam('ra', 0.0, description='armature resistance (stored for dynamic models)', unit='p.u.',
                 tex_name='r_a'),
        NumParam('xs', 0.3, description='armature reactance (stored for dynamic models)', unit='p.u.',
                 tex_name='x_s'),
        _status(),
    ]


# ---------------------------------------------------------------------------
# Static models
# ---------------------------------------------------------------------------

def bus_schema() -> ModelSchema:
    return build_schema('Bus', [
        NumParam('Vn', 110.0, description='nominal voltage', unit='kV', non_zero=True),
        NumParam('v0', 1.0, description='initial voltage magnitude', unit='p.u.', tex_name='v_0'),
        NumParam('a0', 0.0, description='initial voltage angle', unit='rad', tex_name=r'\theta_0'),
        NumParam('area', 1.0, description='area code'),
        Algeb('a', v_str='a0', description='voltage angle', unit='rad', tex_name=r'\theta'),
        Algeb('v', v_str='v0', description='voltage magnitude', unit='p.u.'),
    ], pflow=True, description='AC bus; its equations collect the power leaving it through every device.')


def pq_schema() -> ModelSchema:
    return build_schema('PQ', [
        IdxParam('bus', 'Bus', mandatory=True, description='idx of the connected bus'),
        NumParam('p0', 0.0, description='active power load', unit='p.u.', tex_name='p_0'),
        NumParam('q0', 0.0, description='reactive power load', unit='p.u.', tex_name='q_0'),
        _status(),
        *_bus_ext('u*p0', 'u*q0'),
    ], pflow=True, description='Constant-power load.')


def pv_schema() -> ModelSchema:
    return build_schema('PV', [
        *_static_gen_params(),
        *_bus_ext('-u*p', '-u*q', v_str='v0', v_setter=True),
        Algeb('p', 'u*p0 - p', v_str='p0', description='active power injection', unit='p.u.'),
        Algeb('q', 'u*(v0 - v) - (1 - u)*q', v_str='q0', description='reactive power injection', unit='p.u.'),
    ], group='StaticGen', pflow=True, description='Generator holding active power and voltage magnitude.')


def slack_schema() -> ModelSchema:
    params = _static_gen_params()
    params.insert(-1, NumParam('a0', 0.0, description='reference angle', unit='rad', tex_name=r'\theta_0'))
    return build_schema('Slack', [
        *params,
        ExtAlgeb('a', 'Bus', 'a', 'bus', e_str='-u*p', v_str='a0', v_setter=True,
                 description='bus voltage angle', unit='rad', tex_name=r'\theta'),
        ExtAlgeb('v', 'Bus', 'v', 'bus', e_str='-u*q', v_str='v0', v_setter=True,
                 description='bus voltage magnitude', unit='p.u.'),
        Algeb('p', 'u*(a0 - a) - (1 - u)*p', v_str='p0', description='active power injection', unit='p.u.'),
        Algeb('q', 'u*(v0 - v) - (1 - u)*q', v_str='q0', description='reactive power injection', unit='p.u.'),
    ], group='StaticGen', pflow=True, description='Generator holding voltage magnitude and angle.')


def shunt_schema() -> ModelSchema:
    return build_schema('Shunt', [
        IdxParam('bus', 'Bus', mandatory=True, description='idx of the connected bus'),
        NumParam('g', 0.0, description='shunt conductance', unit='p.u.'),
        NumParam('b', 0.0, description='shunt susceptance', unit='p.u.'),
        *_bus_ext('g*v*v', '-b*v*v'),
    ], pflow=True, description='Constant-admittance shunt.')


_THETA = '(a1 - a2 - phi)'
_LINE_P1 = f'u*(v1**2*gs/tap**2 - v1*v2/tap*(gs*cos{_THETA} + bs*sin{_THETA}))'
_LINE_Q1 = f'u*(-v1**2*(bs + bh)/tap**2 - v1*v2/tap*(gs*sin{_THETA} - bs*cos{_THETA}))'
_LINE_P2 = f'u*(v2**2*gs - v1*v2/tap*(gs*cos{_THETA} - bs*sin{_THETA}))'
_LINE_Q2 = f'u*(-v2**2*(bs + bh) + v1*v2/tap*(gs*sin{_THETA} + bs*cos{_THETA}))'


def line_schema() -> ModelSchema:
    return build_schema('Line', [
        IdxParam('bus1', 'Bus', mandatory=True, description='idx of the from bus'),
        IdxParam('bus2', 'Bus', mandatory=True, description='idx of the to bus'),
        NumParam('r', 0.0, description='series resistance', unit='p.u.'),
        NumParam('x', 1e-4, description='series reactance', unit='p.u.', non_zero=True),
        NumParam('b', 0.0, description='total shunt susceptance', unit='p.u.'),
        NumParam('tap', 1.0, description='off-nominal tap ratio on the from side', non_zero=True),
        NumParam('phi', 0.0, description='phase shift on the from side', unit='rad', tex_name=r'\phi'),
        _status(),
        ExtAlgeb('a1', 'Bus', 'a', 'bus1', e_str=_LINE_P1, description='from-bus angle', unit='rad',
                 tex_name=r'\theta_1'),
        ExtAlgeb('a2', 'Bus', 'a', 'bus2', e_str=_LINE_P2, description='to-bus angle', unit='rad',
                 tex_name=r'\theta_2'),
        ExtAlgeb('v1', 'Bus', 'v', 'bus1', e_str=_LINE_Q1, description='from-bus voltage', unit='p.u.'),
        ExtAlgeb('v2', 'Bus', 'v', 'bus2', e_str=_LINE_Q2, description='to-bus voltage', unit='p.u.'),
        ConstService('gs', 'r/(r**2 + x**2)', description='series conductance', tex_name='g_s'),
        ConstService('bs', '-x/(r**2 + x**2)', description='series susceptance', tex_name='b_s'),
        ConstService('bh', 'b/2', description='shunt susceptance at each end', tex_name='b_h'),
    ], pflow=True, description='Pi-model line or transformer; injections are written per end, no admittance matrix.')


# ---------------------------------------------------------------------------
# Dynamic models
# ---------------------------------------------------------------------------

def gencls_schema() -> ModelSchema:
    return build_schema('GENCLS', [
        IdxParam('bus', 'Bus', mandatory=True, description='idx of the installed bus'),
        IdxParam('gen', 'StaticGen', mandatory=True, description='static generator replaced after power flow'),
        NumParam('Sn', 100.0, description='power rating', unit='MVA', non_zero=True),
        NumParam('Vn', 110.0, description='voltage rating', unit='kV', non_zero=True),
        NumParam('fn', 60.0, description='rated frequency', unit='Hz', from_system='freq', tex_name='f_n'),
        NumParam('M', 6.0, description='inertia constant 2H', unit='s', non_zero=True, power_base='power'),
        NumParam('D', 0.0, description='damping coefficient', power_base='power'),
        NumParam('xd1', 0.3, description='transient reactance', unit='p.u.', non_zero=True,
                 power_base='inverse_power', tex_name="x'_d"),
        _status(),
        *_bus_ext('-u*te', '-u*(E*v*cos(delta - a) - v**2)/xd1'),
        ExtService('p0s', 'StaticGen', 'p', 'gen', description='active power from power flow', tex_name='p_{0s}'),
        ExtService('q0s', 'StaticGen', 'q', 'gen', description='reactive power from power flow', tex_name='q_{0s}'),
        ConstService('wb', '6.283185307179586*fn', description='base angular speed', unit='rad/s',
                     tex_name=r'\omega_b'),
        ConstService('Ir', 'u*(p0s*cos(a) + q0s*sin(a))/v', description='real part of terminal current',
                     tex_name='I_r'),
        ConstService('Ii', 'u*(p0s*sin(a) - q0s*cos(a))/v', description='imaginary part of terminal current',
                     tex_name='I_i'),
        ConstService('Er', 'v*cos(a) - xd1*Ii', description='real part of internal voltage', tex_name='E_r'),
        ConstService('Ei', 'v*sin(a) + xd1*Ir', description='imaginary part of internal voltage', tex_name='E_i'),
        ConstService('E', 'sqrt(Er**2 + Ei**2)', description='internal voltage magnitude', tex_name="E'"),
        ConstService('tm0', 'u*p0s', description='initial mechanical torque', tex_name=r'\tau_{m0}'),
        State('delta', 'u*wb*(omega - 1)', v_str='a', v_iter='Er*sin(delta) - Ei*cos(delta)',
              description='rotor angle', unit='rad'),
        State('omega', 'u*(tm - te - D*(omega - 1))/M', v_str='1', description='rotor speed', unit='p.u.'),
        Algeb('te', 'u*E*v*sin(delta - a)/xd1 - te', v_str='tm0', description='electrical torque',
              unit='p.u.', tex_name=r'\tau_e'),
        Algeb('tm', 'tm0 - tm', v_str='tm0', description='mechanical torque', unit='p.u.',
              tex_name=r'\tau_m'),
    ], group='SynGen', replaces='gen',
        description='Classical generator: constant voltage behind transient reactance with swing dynamics.')


def _governor_head() -> list:
    return [
        IdxParam('syn', 'SynGen', mandatory=True, description='idx of the governed generator'),
        NumParam('Sn', 100.0, description='power rating', unit='MVA', non_zero=True),
        NumParam('R', 0.05, description='speed regulation gain', non_zero=True, power_base='inverse_power'),
        NumParam('VMAX', 1.2, description='maximum valve position', unit='p.u.', power_base='power',
                 tex_name='V_{max}'),
        NumParam('VMIN', 0.0, description='minimum valve position', unit='p.u.', power_base='power',
                 tex_name='V_{min}'),
        NumParam('T1', 0.1, description='valve time constant', unit='s', non_zero=True, tex_name='T_1'),
        NumParam('T2', 1.0, description='lead-lag numerator time constant', unit='s', tex_name='T_2'),
        NumParam('T3', 1.0, description='lead-lag denominator time constant', unit='s', non_zero=True,
                 tex_name='T_3'),
        NumParam('Dt', 0.0, description='turbine damping coefficient', tex_name='D_t'),
        _status(),
        ExtState('omega', 'SynGen', 'omega', 'syn', description='generator speed', unit='p.u.'),
        ExtAlgeb('tm', 'SynGen', 'tm', 'syn', e_str='u*(pout - tm0)', description='generator torque input',
                 tex_name=r'\tau_m'),
        ConstService('G', 'u/R', description='droop gain'),
        ExtService('tm0', 'SynGen', 'tm', 'syn', description='initial mechanical torque', tex_name=r'\tau_{m0}'),
        Algeb('pref', 'tm0*R - pref', v_str='tm0*R', description='reference setpoint', tex_name='P_{ref}'),
        Algeb('wd', '(1 - omega) - wd', description='speed deviation', tex_name=r'\omega_d'),
    ]


def tgov1_schema() -> ModelSchema:
    return build_schema('TGOV1', [
        *_governor_head(),
        Algeb('pd', 'G*(wd + pref) - pd', v_str='tm0', description='droop output', tex_name='P_d'),
        State('LG_y', 'LG_lim_zi*(pd - LG_y)/T1', v_str='pd', description='valve lag output',
              tex_name='x_{LG}'),
        AntiWindup('LG_lim', 'LG_y', 'VMIN', 'VMAX', description='valve limiter', tex_name='lim'),
        State('LL_x', '(LG_y - LL_x)/T3', v_str='LG_y', description='lead-lag internal state',
              tex_name='x_{LL}'),
        Algeb('LL_y', 'T2/T3*(LG_y - LL_x) + LL_x - LL_y', v_str='LG_y', description='lead-lag output',
              tex_name='y_{LL}'),
        Algeb('pout', '(LL_y + Dt*wd) - pout', v_str='tm0', description='turbine output',
              tex_name='P_{OUT}'),
    ], group='TurbineGov', description='Steam turbine governor with droop, limited valve lag and reheat lead-lag.')


def tgov1b_schema() -> ModelSchema:
    return build_schema('TGOV1B', [
        *_governor_head(),
        Gain('GA', 'wd + pref', K='G'),
        LagAntiWindup('LG', 'GA_y', T='T1', K=1, lower='VMIN', upper='VMAX'),
        LeadLag('LL', 'LG_y', T1='T2', T2='T3'),
        Algeb('pout', '(LL_y + Dt*wd) - pout', v_str='tm0', description='turbine output',
              tex_name='P_{OUT}'),
    ], group='TurbineGov', description='TGOV1 assembled from gain, limited lag and lead-lag blocks.')


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------

_BUILDERS = (
    bus_schema, pq_schema, pv_schema, slack_schema, shunt_schema, line_schema,
    gencls_schema, tgov1_schema, tgov1b_schema,
)

MODEL_NAMES = ('Bus', 'PQ', 'PV', 'Slack', 'Shunt', 'Line', 'GENCLS', 'TGOV1', 'TGOV1B')

GROUPS = {
    'StaticGen': ('PV', 'Slack'),
    'SynGen': ('GENCLS',),
    'TurbineGov': ('TGOV1', 'TGOV1B'),
}

# Case-file table names loaded into another model; unknown columns go to extras
CASE_ALIASES = {'GENROU': 'GENCLS'}


@lru_cache(maxsize=None)
def builtin_schemas() -> tuple:
    """Built-in schemas in registry order."""
    return tuple(build() for build in _BUILDERS)


@lru_cache(maxsize=None)
def _compiled_builtins() -> tuple:
    return tuple(compile_model(s) for s in builtin_schemas())


def compile_builtin(cache: Optional[ModelCache] = None) -> List[CompiledModel]:
    """Compiled built-in models; through `cache` when given, else compiled once per process."""
    if cache is None:
        return list(_compiled_builtins())
    return [cache.get_or_compile(s) for s in builtin_schemas()]


# ---------------------------------------------------------------------------
# Loading and conversion
# ---------------------------------------------------------------------------

def _normalize_idx(value: Any) -> Any:
    if isinstance(value, float) and value.is_integer():
        return int(value)
    return value


def load_devices(
    system: System,
    model: str,
    rows: Sequence[Mapping[str, Any]],
    keep_extras: bool = False,
) -> None:
    """Append device rows to a model's table; defaults fill missing fields."""
    if model not in system.models:
        raise CaseError(f"Unknown model '{model}'")
    c = system.models[model]
    table = system.tables[model]
    params = c.schema.params
    known = {p.name for p in params} | {'idx'}
    system_values = {'freq': system.freq, 'baseMVA': system.base_mva}

    new_idx: List[Any] = []
    columns: Dict[str, List[Any]] = {p.name: [] for p in params}
    extras: Dict[str, List[Any]] = {}
    for i, row in enumerate(rows):
        unknown = sorted(set(row) - known)
        if unknown and not keep_extras:
            raise CaseError(f"{model} row {i}: unknown field(s) {', '.join(unknown)}")
        idx = _normalize_idx(row.get('idx', f'{model}_{table.n + i + 1}'))
        if idx in table.positions or idx in new_idx:
            raise CaseError(f"{model}: duplicate idx {idx!r}")
        new_idx.append(idx)

        for p in params:
            value = row.get(p.name)
            if value is None:
                if p.mandatory:
                    raise CaseError(f"{model} device {idx}: missing mandatory field '{p.name}'")
                if p.from_system:
                    value = system_values[p.from_system]
                elif p.kind == 'idx':
                    raise CaseError(f"{model} device {idx}: missing idx field '{p.name}'")
                else:
                    value = p.default if p.default is not None else 0.0
            if p.kind == 'idx':
                columns[p.name].append(_normalize_idx(value))
                continue
            try:
                value = float(value)
            except (TypeError, ValueError):
                raise CaseError(f"{model} device {idx}: field '{p.name}' is not a number: {value!r}") from None
            if p.non_zero and value == 0:
                raise CaseError(f"{model}.{p.name} must be non-zero (device {idx})")
            columns[p.name].append(value)
        for key in unknown:
            extras.setdefault(key, [None] * i).append(row[key])
        for key in extras:
            if len(extras[key]) < i + 1:
                extras[key].append(None)

    if not new_idx:
        return
    start = table.n
    table.idx.extend(new_idx)
    for pos, idx in enumerate(new_idx):
        table.positions[idx] = start + pos
    for p in params:
        dtype = object if p.kind == 'idx' else float
        added = np.array(columns[p.name], dtype=dtype)
        old = table.params.get(p.name, np.zeros(0, dtype=dtype))
        table.params[p.name] = np.concatenate([old, added])
    for key, values in extras.items():
        table.extras.setdefault(key, [None] * start).extend(values)
    for key in table.extras:
        table.extras[key].extend([None] * (table.n - len(table.extras[key])))
    logger.debug("Loaded %d %s devices", len(new_idx), model)


def per_unit_convert(system: System) -> None:
    """Scale power-based parameters from device base (Sn) to the system base."""
    if system.pu_converted:
        raise CaseError("Parameters are already converted to the system base")
    base = system.base_mva
    for c in system.models.values():
        table = system.tables[c.name]
        if table.n == 0:
            continue
        sn = table.params['Sn'] if 'Sn' in table.params else np.full(table.n, base)
        for p in c.schema.params:
            if p.power_base == 'power':
                table.params[p.name] = table.params[p.name] * sn / base
            elif p.power_base == 'inverse_power':
                table.params[p.name] = table.params[p.name] * base / sn
    system.pu_converted = True


def convert_pq_to_shunt(system: System) -> int:
    """Replace every PQ load by a constant-admittance Shunt at the solved voltage.

    Returns the number of converted loads. The PQ devices stay in the table with u=0.
    """
    pq = system.tables.get('PQ')
    if pq is None or pq.n == 0:
        return 0
    v = system.dae.y[system.addresses['PQ']['v']]
    if np.any(v == 0):
        bad = pq.idx[int(np.flatnonzero(v == 0)[0])]
        raise CaseError(f"PQ device {bad}: zero voltage, cannot convert to constant impedance")
    u = pq.params['u']
    g = u * pq.params['p0'] / v ** 2
    b = -u * pq.params['q0'] / v ** 2
    rows = [
        {'idx': f'{idx}_z', 'bus': bus, 'g': float(gi), 'b': float(bi)}
        for idx, bus, gi, bi in zip(pq.idx, pq.params['bus'], g, b)
    ]
    load_devices(system, 'Shunt', rows)
    pq.params['u'][:] = 0.0
    system.relink()
    logger.info("Converted %d PQ loads to constant impedance", len(rows))
    return len(rows)


def system_from_case(
    case: Any,
    models: Optional[Iterable[CompiledModel]] = None,
    cache: Optional[ModelCache] = None,
) -> System:
    """Build a ready-to-solve System from a case object (base MVA, frequency, model rows)."""
    compiled = list(models) if models is not None else compile_builtin(cache)
    system = System(compiled, base_mva=case.baseMVA, freq=case.freq)
    for name, rows in case.models.items():
        target = CASE_ALIASES.get(name, name)
        load_devices(system, target, rows, keep_extras=name in CASE_ALIASES)
    per_unit_convert(system)
    system.setup()
    evaluate_services(system, [c.name for c in system.models_in('pflow')])
    check_discrete_bounds(system)
    return system
