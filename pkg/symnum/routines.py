# symnum/routines.py
"""
Numerical analyses over a loaded System: Newton-Raphson power flow, dynamic
initialization, implicit trapezoidal time-domain simulation with toggle events,
and small-signal eigenvalue analysis of the reduced state matrix.
"""

from __future__ import annotations
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Literal, Optional
import logging
import time

import numpy as np
import scipy.sparse
import scipy.sparse.csgraph
from pydantic import BaseModel, ConfigDict, Field, field_validator

from symnum.errors import CaseError, ConvergenceError
from symnum.linalg import LuReuse, dense_eigenvalues, factorize, sparse_lu_solve
from symnum.models import convert_pq_to_shunt
from symnum.numeric import (
    System,
    binding_state_addresses,
    call_program,
    check_discrete_bounds,
    evaluate_services,
    fg_update,
    fill_jacobian,
    initialize_model,
    refresh_services,
    solve_algebraic,
)

logger = logging.getLogger(__name__)

INIT_WARN_TOL = 1e-6


# ============================================================================
# Configuration
# ============================================================================

class PowerFlowConfig(BaseModel):
    """Newton-Raphson power flow settings."""
    model_config = ConfigDict(validate_assignment=True, extra='forbid')

    tol: float = Field(default=1e-8, gt=0, description="Convergence tolerance on max |g|")
    max_iter: int = Field(default=20, ge=1, description="Maximum Newton iterations")
    flat_start: bool = Field(default=False, description="Start from v=1, a=0 instead of bus guesses")
    dishonest: bool = Field(default=False, description="Reuse the first factorization for every iteration")


class Event(BaseModel):
    """A status toggle of one device at a given time."""
    model_config = ConfigDict(str_strip_whitespace=True, extra='forbid')

    kind: Literal['toggle'] = 'toggle'
    model: str = Field(..., min_length=1, description="Model or group name, e.g. 'Line'")
    idx: Any = Field(..., description="Device idx")
    time: float = Field(..., ge=0, description="Event time in seconds")

    @classmethod
    def parse(cls, text: str) -> 'Event':
        """Parse 'toggle:<model>:<idx>:<time>'."""
        parts = text.strip().split(':')
        if len(parts) != 4 or parts[0] != 'toggle':
            raise ValueError(f"Event must look like 'toggle:<model>:<idx>:<time>', got '{text}'")
        _, model, idx, when = parts
        try:
            t = float(when)
        except ValueError:
            raise ValueError(f"Invalid event time '{when}'") from None
        return cls(model=model, idx=int(idx) if idx.lstrip('-').isdigit() else idx, time=t)


class TdsConfig(BaseModel):
    """Fixed-step implicit trapezoidal integration settings."""
    model_config = ConfigDict(validate_assignment=True, extra='forbid')

    h: float = Field(default=1 / 30, gt=0, description="Step size in seconds")
    t_end: float = Field(default=20.0, ge=0, description="Simulation end time in seconds")
    tol: float = Field(default=1e-8, gt=0, description="Newton tolerance per step")
    max_iter: int = Field(default=15, ge=1, description="Maximum Newton iterations per step")
    events: List[Event] = Field(default_factory=list)
    pq2z: bool = Field(default=True, description="Convert PQ loads to constant impedance before simulation")

    @field_validator('events')
    @classmethod
    def _sort_events(cls, v: List[Event]) -> List[Event]:
        return sorted(v, key=lambda e: e.time)


# ============================================================================
# Results
# ============================================================================

@dataclass
class RoutineResult:
    """Solution record of a routine run; one row of values per recorded time."""
    routine: Literal['pflow', 'tds', 'eig']
    converged: bool
    iterations: int
    names: List[str]
    t: np.ndarray
    values: np.ndarray
    timings: Dict[str, float] = field(default_factory=dict)
    mismatches: List[float] = field(default_factory=list)
    extra: Dict[str, Any] = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]


@dataclass
class EigenReport:
    """Eigenvalues of the state matrix sorted by damping ratio, conjugates adjacent."""
    eigenvalues: np.ndarray
    damping: np.ndarray
    state_names: List[str] = field(default_factory=list)

    def __len__(self) -> int:
        return self.eigenvalues.size


class PhaseTimer:
    """Accumulates wall time per phase: solve, update, jacobian."""

    def __init__(self):
        self.totals: Dict[str, float] = {'solve': 0.0, 'update': 0.0, 'jacobian': 0.0}

    @contextmanager
    def __call__(self, phase: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            self.totals[phase] = self.totals.get(phase, 0.0) + time.perf_counter() - start


# ============================================================================
# Power flow
# ============================================================================

def check_connectivity(system: System) -> None:
    """Every island of the network must contain an online Slack bus."""
    bus = system.tables.get('Bus')
    if bus is None or bus.n == 0:
        return
    rows, cols = [], []
    line = system.tables.get('Line')
    if line is not None and line.n:
        online = line.params['u'] != 0
        for b1, b2, on in zip(line.params['bus1'], line.params['bus2'], online):
            if on:
                rows.append(bus.positions[b1])
                cols.append(bus.positions[b2])
    graph = scipy.sparse.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(bus.n, bus.n))
    n_islands, labels = scipy.sparse.csgraph.connected_components(graph, directed=False)
    if n_islands <= 1:
        return
    slack = system.tables.get('Slack')
    with_slack = set()
    if slack is not None and slack.n:
        for b, on in zip(slack.params['bus'], slack.params['u']):
            if on:
                with_slack.add(int(labels[bus.positions[b]]))
    orphan = sorted(set(range(n_islands)) - with_slack)
    if orphan:
        members = [bus.idx[i] for i in np.flatnonzero(labels == orphan[0])]
        raise CaseError(
            f"Network is islanded into {n_islands} parts; island with buses {members} has no slack"
        )


def init_static(system: System, flat: bool = False) -> None:
    """Initial guesses for the power flow unknowns from the static models' init plans."""
    for c in system.models_in('pflow'):
        initialize_model(system, c.name)
        if flat and c.name == 'Bus':
            bus = system.tables['Bus']
            bus.v['a'][:] = 0.0
            bus.v['v'][:] = 1.0


def line_flows(system: System) -> Dict[str, Dict[str, float]]:
    """Active and reactive power leaving each end of every line."""
    c = system.models.get('Line')
    table = system.tables.get('Line')
    if c is None or table is None or table.n == 0:
        return {}
    for v in ('a1', 'a2', 'v1', 'v2'):
        np.take(system.dae.y, system.addresses['Line'][v], out=table.v[v])
    values = dict(zip((eq.var for eq in c.g), call_program(system, 'Line', c.program('g_update'))))
    labels = {'a1': 'P1', 'v1': 'Q1', 'a2': 'P2', 'v2': 'Q2'}
    out: Dict[str, Dict[str, float]] = {}
    for i, idx in enumerate(table.idx):
        out[str(idx)] = {labels[k]: float(np.broadcast_to(v, (table.n,))[i]) for k, v in values.items()}
    return out


def solve_power_flow(system: System, cfg: Optional[PowerFlowConfig] = None) -> RoutineResult:
    """Newton-Raphson on the static algebraic equations."""
    cfg = cfg or PowerFlowConfig()
    check_connectivity(system)
    init_static(system, flat=cfg.flat_start)

    dae = system.dae
    n_y = system.n_pflow_algeb
    timer = PhaseTimer()
    reuse = LuReuse()
    factors = None
    mismatches: List[float] = []
    logger.info("Power flow: %d algebraic unknowns", n_y)

    iterations = 0
    while True:
        with timer('update'):
            fg_update(system, 'pflow')
        g = dae.g[:n_y]
        err = float(np.max(np.abs(g))) if n_y else 0.0
        mismatches.append(err)
        logger.debug("Power flow iteration %d: max |g| = %.3e", iterations, err)
        if err < cfg.tol:
            break
        if iterations >= cfg.max_iter:
            raise ConvergenceError(
                f"Power flow did not converge in {cfg.max_iter} iterations (max |g| = {err:.3e})",
                iterations=iterations,
            )
        if factors is None or not cfg.dishonest:
            with timer('jacobian'):
                gy = fill_jacobian(system, 'pflow')['gy']
            with timer('solve'):
                factors = factorize(gy, reuse)
        with timer('solve'):
            dae.y[:n_y] += factors.solve(-g)
        iterations += 1

    logger.info("Power flow converged in %d iterations", iterations)
    return RoutineResult(
        routine='pflow',
        converged=True,
        iterations=iterations,
        names=list(dae.y_names[:n_y]),
        t=np.zeros(1),
        values=dae.y[:n_y].copy().reshape(1, -1),
        timings=dict(timer.totals),
        mismatches=mismatches,
        extra={'line_flows': line_flows(system)},
    )


# ============================================================================
# Dynamic initialization
# ============================================================================

def _replace_static(system: System, model: str) -> None:
    c = system.models[model]
    table = system.tables[model]
    for ref in table.params[c.schema.replaces]:
        target, pos = system.find(c.schema.element(c.schema.replaces).model, ref)
        static = system.tables[target]
        static.params['u'][pos] = 0.0
        for var in system.models[target].algebs:
            static.v[var][pos] = 0.0


def initialize_dynamics(system: System, pq2z: bool = True) -> float:
    """Initialize dynamic models from the power flow solution; returns max(|f|, |g|)."""
    if pq2z:
        convert_pq_to_shunt(system)
    for c in system.models_in('tds'):
        if c.schema.pflow:
            continue
        evaluate_services(system, [c.name])
        if c.schema.replaces:
            _replace_static(system, c.name)
        check_discrete_bounds(system, [c.name])
        initialize_model(system, c.name)
        logger.debug("Initialized %s", c.name)

    fg_update(system, 'tds')
    dae = system.dae
    mismatch = float(max(np.max(np.abs(dae.f), initial=0.0), np.max(np.abs(dae.g), initial=0.0)))
    if mismatch > INIT_WARN_TOL:
        worst = np.argmax(np.abs(dae.fg))
        name = (dae.x_names + dae.y_names)[worst]
        logger.warning("Initialization residual %.3e at %s", mismatch, name)
    system.dynamics_initialized = True
    return mismatch


# ============================================================================
# Time-domain simulation
# ============================================================================

def _iteration_matrix(system: System, h: float):
    mats = fill_jacobian(system, 'tds')
    n_x = system.dae.n_state
    eye = scipy.sparse.identity(n_x, format='csc')
    if system.dae.n_algeb == 0:
        return scipy.sparse.csc_matrix(eye - 0.5 * h * mats['fx'])
    if n_x == 0:
        return mats['gy']
    return scipy.sparse.bmat(
        [[eye - 0.5 * h * mats['fx'], -0.5 * h * mats['fy']], [mats['gx'], mats['gy']]],
        format='csc',
    )


def step_trapezoidal(
    system: System,
    t: float,
    h: float,
    tol: float = 1e-8,
    max_iter: int = 15,
    reuse: Optional[LuReuse] = None,
) -> int:
    """Advance x, y from t to t + h; f must be current at t. Returns Newton iterations."""
    dae = system.dae
    n_x = dae.n_state
    x0 = dae.x.copy()
    f0 = dae.f.copy()
    err = np.inf
    for iteration in range(max_iter + 1):
        fg_update(system, 'tds')
        rx = dae.x - x0 - 0.5 * h * (dae.f + f0)
        rx[binding_state_addresses(system, 'tds')] = 0.0
        residual = np.concatenate([rx, dae.g])
        err = float(np.max(np.abs(residual))) if residual.size else 0.0
        if err < tol:
            return iteration
        if iteration == max_iter:
            break
        delta = sparse_lu_solve(_iteration_matrix(system, h), -residual, reuse)
        dae.x += delta[:n_x]
        dae.y += delta[n_x:]
    raise ConvergenceError(
        f"Trapezoidal step did not converge (max residual {err:.3e})", iterations=max_iter, time=t + h,
    )


def apply_event(system: System, event: Event) -> None:
    """Flip the status of the targeted device and re-solve the algebraic variables."""
    try:
        model, pos = system.find(event.model, event.idx)
    except KeyError:
        raise CaseError(f"Event target {event.model} {event.idx!r} not found") from None
    u = system.tables[model].params['u']
    u[pos] = 1.0 - u[pos]
    refresh_services(system, model)
    solve_algebraic(system, 'tds')
    logger.info("t=%.4f s: %s %s toggled to u=%g", event.time, model, event.idx, u[pos])


def _schedule(system: System, cfg: TdsConfig, n_steps: int) -> Dict[int, List[Event]]:
    schedule: Dict[int, List[Event]] = {}
    for ev in cfg.events:
        try:
            system.find(ev.model, ev.idx)
        except KeyError:
            raise CaseError(f"Event target {ev.model} {ev.idx!r} not found") from None
        k = int(round(ev.time / cfg.h))
        if abs(k * cfg.h - ev.time) > 1e-9:
            logger.warning("Event at t=%.6f s snapped to step boundary t=%.6f s", ev.time, k * cfg.h)
        if k < n_steps:
            schedule.setdefault(k, []).append(ev)
    return schedule


def run_tds(system: System, cfg: Optional[TdsConfig] = None) -> RoutineResult:
    """Fixed-step trapezoidal simulation from 0 to t_end recording every x and y."""
    cfg = cfg or TdsConfig()
    if not system.dynamics_initialized:
        initialize_dynamics(system, pq2z=cfg.pq2z)

    dae = system.dae
    n_steps = int(round(cfg.t_end / cfg.h))
    schedule = _schedule(system, cfg, n_steps)
    timer = PhaseTimer()
    reuse = LuReuse()

    times = np.arange(n_steps + 1) * cfg.h
    values = np.empty((n_steps + 1, dae.n_state + dae.n_algeb))
    fg_update(system, 'tds')
    values[0] = dae.xy
    total_iterations = 0
    logger.info("TDS: %d steps of %.6f s, %d events", n_steps, cfg.h, len(cfg.events))

    for k in range(n_steps):
        for ev in schedule.get(k, []):
            apply_event(system, ev)
        with timer('solve'):
            total_iterations += step_trapezoidal(system, times[k], cfg.h, cfg.tol, cfg.max_iter, reuse)
        values[k + 1] = dae.xy

    logger.info("TDS finished at t=%.4f s after %d Newton iterations", times[-1], total_iterations)
    return RoutineResult(
        routine='tds',
        converged=True,
        iterations=total_iterations,
        names=list(dae.x_names) + list(dae.y_names),
        t=times,
        values=values,
        timings=dict(timer.totals),
        extra={'events': [ev.model_dump() for ev in cfg.events]},
    )


# ============================================================================
# Small-signal analysis
# ============================================================================

def compute_state_matrix(system: System) -> np.ndarray:
    """A = fx - fy gy^-1 gx at the current operating point."""
    fg_update(system, 'tds')
    mats = fill_jacobian(system, 'tds')
    fx = mats['fx'].toarray()
    if system.dae.n_algeb == 0:
        return fx
    factors = factorize(mats['gy'])
    z = factors.solve(mats['gx'].toarray())
    return fx - mats['fy'] @ z


def damping_ratio(lam: complex) -> float:
    """zeta = -Re(lam)/|lam|, defined as 0 for lam = 0."""
    magnitude = abs(lam)
    if magnitude == 0:
        return 0.0
    return float(-lam.real / magnitude)


def eigen_report(A: np.ndarray, state_names: Optional[List[str]] = None) -> EigenReport:
    """Eigenvalues sorted by ascending damping ratio with conjugate pairs adjacent."""
    lam = dense_eigenvalues(A)
    zeta = np.array([damping_ratio(complex(v)) for v in lam])
    order = sorted(range(lam.size), key=lambda i: (round(zeta[i], 10), round(abs(lam[i].imag), 10), -lam[i].imag))
    return EigenReport(eigenvalues=lam[order], damping=zeta[order], state_names=list(state_names or []))


def run_eigenvalues(system: System) -> RoutineResult:
    """State matrix and eigen report packaged as a routine result."""
    if not system.dynamics_initialized:
        initialize_dynamics(system)
    timer = PhaseTimer()
    with timer('jacobian'):
        A = compute_state_matrix(system)
    with timer('solve'):
        report = eigen_report(A, list(system.dae.x_names))
    values = np.column_stack([report.eigenvalues.real, report.eigenvalues.imag, report.damping])
    return RoutineResult(
        routine='eig',
        converged=True,
        iterations=0,
        names=['sigma', 'omega', 'zeta'],
        t=np.arange(len(report), dtype=float),
        values=values,
        timings=dict(timer.totals),
        extra={'report': report},
    )
