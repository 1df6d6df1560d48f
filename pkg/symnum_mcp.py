#!/usr/bin/env python3
"""
symnum MCP Server - Model Context Protocol server for power system studies.

This server exposes the symnum routines as read-only tools:
- Power flow with bus voltages and line flows
- Time-domain simulation with status toggle events
- Small-signal eigenvalue analysis
- Model reference documents and the built-in model list

Cases are given as a bundled case name (e.g. 'kundur'), a local path to a
.json or .m file, or an http(s) URL.
"""

import asyncio
import functools
import json
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional

import httpx
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from mcp.server.fastmcp import FastMCP

from symnum import __version__
from symnum.errors import CaseError, ConvergenceError, SymnumError
from symnum.io import bundled_case, load_case, result_to_dict
from symnum.models import MODEL_NAMES, compile_builtin, system_from_case
from symnum.routines import (
    Event,
    PowerFlowConfig,
    TdsConfig,
    initialize_dynamics,
    run_eigenvalues,
    run_tds,
    solve_power_flow,
)
from symnum.symbolic import render_docs


# ============================================================================
# Constants
# ============================================================================

SERVER_VERSION = __version__
CHARACTER_LIMIT = 80000
MAX_TABLE_ROWS = 200

mcp = FastMCP("symnum_mcp")

# ============================================================================
# Enums and Types
# ============================================================================

class ResponseFormat(str, Enum):
    """Output format for tool responses."""
    MARKDOWN = "markdown"
    JSON = "json"


# ============================================================================
# Pydantic Input Models
# ============================================================================

class CaseInput(BaseModel):
    """Common input for tools that run a routine on a case."""
    model_config = ConfigDict(str_strip_whitespace=True, validate_assignment=True)

    case: str = Field(
        default='kundur',
        description="Bundled case name (e.g. 'kundur'), local .json/.m path, or http(s) URL",
        min_length=1,
    )
    response_format: ResponseFormat = Field(
        default=ResponseFormat.MARKDOWN,
        description="Output format: 'markdown' for human-readable or 'json' for structured data",
    )


class PowerFlowInput(CaseInput):
    """Input for power flow."""
    tol: float = Field(default=1e-8, description="Newton tolerance on max |g|", gt=0)
    max_iter: int = Field(default=20, description="Maximum Newton iterations", ge=1, le=200)
    flat_start: bool = Field(default=False, description="Start from v=1, a=0 instead of case values")
    dishonest: bool = Field(default=False, description="Reuse the first Jacobian factorization")


class TimeDomainInput(CaseInput):
    """Input for time-domain simulation."""
    t_end: float = Field(default=10.0, description="Simulation end time in seconds", ge=0, le=600)
    h: float = Field(default=1.0 / 30.0, description="Step size in seconds", gt=0, le=1.0)
    events: List[str] = Field(
        default_factory=list,
        description="Status toggle events as 'toggle:<model>:<idx>:<time>', e.g. 'toggle:Line:Line_7:2.0'",
    )
    pq2z: bool = Field(default=True, description="Convert PQ loads to constant impedance before simulation")
    outputs: List[str] = Field(
        default_factory=list,
        description="Variable names to report (e.g. 'GENCLS.omega[1]'); default: all GENCLS speeds",
    )

    @field_validator('events')
    @classmethod
    def validate_events(cls, v: List[str]) -> List[str]:
        for text in v:
            Event.parse(text)
        return v


class EigenInput(CaseInput):
    """Input for small-signal analysis."""
    max_rows: int = Field(default=50, description="Maximum eigenvalues listed in markdown", ge=1, le=MAX_TABLE_ROWS)


class ModelDocsInput(BaseModel):
    """Input for model reference documents."""
    model_config = ConfigDict(str_strip_whitespace=True, validate_assignment=True)

    models: List[str] = Field(
        default_factory=list,
        description="Model names to document (default: all built-in models)",
    )

    @field_validator('models')
    @classmethod
    def validate_models(cls, v: List[str]) -> List[str]:
        unknown = [name for name in v if name not in MODEL_NAMES]
        if unknown:
            raise ValueError(f"Unknown models: {', '.join(unknown)}. Available: {', '.join(MODEL_NAMES)}")
        return v


# ============================================================================
# Helpers
# ============================================================================

def _with_version(response: str) -> str:
    """Append server version footer to tool responses."""
    return f"{response}\n\n---\n_MCP Server v{SERVER_VERSION}_"


def _versioned_tool(*args, **kwargs):
    """Decorator that wraps mcp.tool() and appends server version to responses."""
    def decorator(func):
        @functools.wraps(func)
        async def wrapper(*fn_args, **fn_kwargs):
            result = await func(*fn_args, **fn_kwargs)
            if isinstance(result, str):
                return _with_version(result)
            return result

        return mcp.tool(*args, **kwargs)(wrapper)
    return decorator


def _handle_error(e: Exception) -> str:
    """Format routine and case errors for user-friendly messages."""
    if isinstance(e, ConvergenceError):
        return f"Error: Solver did not converge. {e}"
    elif isinstance(e, CaseError):
        return f"Error: Invalid case. {e}"
    elif isinstance(e, httpx.HTTPStatusError):
        return f"Error: Case download returned status {e.response.status_code}"
    elif isinstance(e, (httpx.ConnectError, httpx.ConnectTimeout)):
        return "Error: Could not download the case after multiple retries. Check the URL and your connection."
    elif isinstance(e, httpx.TimeoutException):
        return "Error: Case download timed out."
    elif isinstance(e, (SymnumError, ValueError)):
        return f"Error: {str(e)}"
    return f"Error: {type(e).__name__}: {str(e)}"


def _load(case: str):
    path = Path(case)
    if case.startswith(('http://', 'https://')) or path.exists():
        return load_case(case)
    if path.suffix == '':
        return load_case(bundled_case(case))
    raise CaseError(f"Case file not found: {case}")


def _truncate(text: str) -> str:
    if len(text) <= CHARACTER_LIMIT:
        return text
    return text[:CHARACTER_LIMIT] + "\n\n_Output truncated. Request response_format='json' with fewer outputs._"


def _power_flow(params: PowerFlowInput) -> Dict[str, Any]:
    system = system_from_case(_load(params.case))
    cfg = PowerFlowConfig(
        tol=params.tol, max_iter=params.max_iter,
        flat_start=params.flat_start, dishonest=params.dishonest,
    )
    result = solve_power_flow(system, cfg)
    bus = system.tables['Bus']
    return {
        'iterations': result.iterations,
        'mismatch': result.mismatches[-1] if result.mismatches else 0.0,
        'buses': [
            {'idx': idx, 'v': float(v), 'a': float(a)}
            for idx, v, a in zip(bus.idx, bus.v['v'], bus.v['a'])
        ],
        'line_flows': result.extra.get('line_flows', {}),
        'timings': result.timings,
    }


def _time_domain(params: TimeDomainInput) -> Dict[str, Any]:
    system = system_from_case(_load(params.case))
    solve_power_flow(system)
    cfg = TdsConfig(
        h=params.h, t_end=params.t_end, pq2z=params.pq2z,
        events=[Event.parse(text) for text in params.events],
    )
    mismatch = initialize_dynamics(system, pq2z=cfg.pq2z)
    result = run_tds(system, cfg)

    outputs = params.outputs or [name for name in result.names if name.startswith('GENCLS.omega[')]
    missing = [name for name in outputs if name not in result.names]
    if missing:
        raise ValueError(f"Unknown output variables: {', '.join(missing)}")
    return {
        'init_mismatch': mismatch,
        'steps': len(result.t) - 1,
        'iterations': result.iterations,
        't': result.t.tolist(),
        'series': {name: result.column(name).tolist() for name in outputs},
        'timings': result.timings,
    }


def _eigenvalues(params: EigenInput) -> Dict[str, Any]:
    system = system_from_case(_load(params.case))
    solve_power_flow(system)
    initialize_dynamics(system)
    result = run_eigenvalues(system)
    payload = result_to_dict(result)
    report = result.extra['report']
    payload['modes'] = [
        {'sigma': float(lam.real), 'omega': float(lam.imag), 'zeta': float(zeta)}
        for lam, zeta in zip(report.eigenvalues, report.damping)
    ]
    return payload


# ============================================================================
# MCP Tools
# ============================================================================

@_versioned_tool(
    name="symnum_power_flow",
    annotations={
        "title": "Run Power Flow",
        "readOnlyHint": True,
        "destructiveHint": False,
        "idempotentHint": True,
        "openWorldHint": True
    }
)
async def symnum_power_flow(params: PowerFlowInput) -> str:
    """
    Solve the power flow of a case with Newton-Raphson.

    Args:
        params: PowerFlowInput containing:
            - case (str): bundled case name, local path, or URL
            - tol (float): Newton tolerance (default: 1e-8)
            - max_iter (int): iteration limit (default: 20)
            - flat_start (bool): start from v=1, a=0
            - dishonest (bool): reuse the first factorization
            - response_format: 'markdown' or 'json'

    Returns:
        str: Bus voltages and line flows in the requested format.

    Examples:
        - "Power flow of the Kundur system" -> case="kundur"
    """
    try:
        data = await asyncio.to_thread(_power_flow, params)

        if params.response_format == ResponseFormat.JSON:
            return json.dumps(data, indent=2)

        lines = [
            f"# Power Flow: {params.case}",
            f"**Converged in:** {data['iterations']} iterations (max |g| = {data['mismatch']:.3e})",
            "",
            "## Bus Voltages",
            "",
            "| Bus | v (p.u.) | a (rad) |",
            "|-----|----------|---------|",
        ]
        for row in data['buses']:
            lines.append(f"| {row['idx']} | {row['v']:.6f} | {row['a']:.6f} |")

        if data['line_flows']:
            lines.extend([
                "",
                "## Line Flows (p.u., leaving each end)",
                "",
                "| Line | P1 | Q1 | P2 | Q2 |",
                "|------|----|----|----|----|",
            ])
            for idx, flow in data['line_flows'].items():
                lines.append(f"| {idx} | {flow['P1']:.4f} | {flow['Q1']:.4f} | {flow['P2']:.4f} | {flow['Q2']:.4f} |")

        return _truncate("\n".join(lines))

    except Exception as e:
        return _handle_error(e)


@_versioned_tool(
    name="symnum_time_domain",
    annotations={
        "title": "Run Time-Domain Simulation",
        "readOnlyHint": True,
        "destructiveHint": False,
        "idempotentHint": True,
        "openWorldHint": True
    }
)
async def symnum_time_domain(params: TimeDomainInput) -> str:
    """
    Simulate a case in time with the implicit trapezoidal method.

    The power flow is solved first, dynamic models are initialized from it,
    and events toggle device status at the given times.

    Args:
        params: TimeDomainInput containing:
            - case (str): bundled case name, local path, or URL
            - t_end (float): end time in seconds
            - h (float): step size in seconds (default: 1/30)
            - events (list): 'toggle:<model>:<idx>:<time>' strings
            - pq2z (bool): convert PQ loads to impedance (default: True)
            - outputs (list): variable names to report
            - response_format: 'markdown' or 'json'

    Returns:
        str: Final values and extremes of the requested variables, or the full series in JSON.

    Examples:
        - "Trip line 7 at 2 s" -> events=["toggle:Line:Line_7:2.0"], t_end=10
    """
    try:
        data = await asyncio.to_thread(_time_domain, params)

        if params.response_format == ResponseFormat.JSON:
            return _truncate(json.dumps(data, indent=2))

        lines = [
            f"# Time-Domain Simulation: {params.case}",
            f"**Steps:** {data['steps']} ({data['iterations']} Newton iterations)",
            f"**Initialization residual:** {data['init_mismatch']:.3e}",
            "",
            "| Variable | Initial | Final | Min | Max |",
            "|----------|---------|-------|-----|-----|",
        ]
        for name, series in data['series'].items():
            values = np.asarray(series)
            lines.append(
                f"| `{name}` | {values[0]:.6f} | {values[-1]:.6f} | {values.min():.6f} | {values.max():.6f} |"
            )
        return _truncate("\n".join(lines))

    except Exception as e:
        return _handle_error(e)


@_versioned_tool(
    name="symnum_eigenvalues",
    annotations={
        "title": "Run Small-Signal Analysis",
        "readOnlyHint": True,
        "destructiveHint": False,
        "idempotentHint": True,
        "openWorldHint": True
    }
)
async def symnum_eigenvalues(params: EigenInput) -> str:
    """
    Compute the eigenvalues of the state matrix at the initialized operating point.

    Args:
        params: EigenInput containing:
            - case (str): bundled case name, local path, or URL
            - max_rows (int): eigenvalues listed in markdown (default: 50)
            - response_format: 'markdown' or 'json'

    Returns:
        str: Eigenvalues sorted by damping ratio with their damping.
    """
    try:
        data = await asyncio.to_thread(_eigenvalues, params)

        if params.response_format == ResponseFormat.JSON:
            return _truncate(json.dumps(data, indent=2))

        modes = data['modes']
        lines = [
            f"# Eigenvalues: {params.case}",
            f"**States:** {len(modes)}",
            "",
            "| # | Real | Imag | Damping (%) |",
            "|---|------|------|-------------|",
        ]
        for i, mode in enumerate(modes[:params.max_rows], start=1):
            lines.append(f"| {i} | {mode['sigma']:.4f} | {mode['omega']:.4f} | {100 * mode['zeta']:.2f} |")
        if len(modes) > params.max_rows:
            lines.append(f"\n_{len(modes) - params.max_rows} more eigenvalues omitted._")
        return "\n".join(lines)

    except Exception as e:
        return _handle_error(e)


@_versioned_tool(
    name="symnum_model_docs",
    annotations={
        "title": "Get Model Reference",
        "readOnlyHint": True,
        "destructiveHint": False,
        "idempotentHint": True,
        "openWorldHint": False
    }
)
async def symnum_model_docs(params: ModelDocsInput) -> str:
    """
    Render the reference document (parameters, variables, equations) of built-in models.

    Args:
        params: ModelDocsInput containing:
            - models (list): model names (default: all)

    Returns:
        str: Markdown documents with LaTeX equations, one section per model.
    """
    try:
        compiled = await asyncio.to_thread(compile_builtin)
        wanted = set(params.models) if params.models else None
        docs = [render_docs(c) for c in compiled if wanted is None or c.name in wanted]
        return _truncate("\n\n".join(docs))

    except Exception as e:
        return _handle_error(e)


@_versioned_tool(
    name="symnum_list_models",
    annotations={
        "title": "List Built-in Models",
        "readOnlyHint": True,
        "destructiveHint": False,
        "idempotentHint": True,
        "openWorldHint": False
    }
)
async def symnum_list_models(response_format: Optional[ResponseFormat] = ResponseFormat.MARKDOWN) -> str:
    """
    List the built-in models with their group and routine participation.

    Returns:
        str: One row per model: name, group, power flow flag, time-domain flag.
    """
    try:
        compiled = await asyncio.to_thread(compile_builtin)
        rows = [
            {
                'name': c.name,
                'group': c.group,
                'pflow': c.schema.pflow,
                'tds': c.schema.tds,
                'states': len(c.states),
                'algebs': len(c.algebs),
            }
            for c in compiled
        ]
        if response_format == ResponseFormat.JSON:
            return json.dumps(rows, indent=2)

        lines = [
            "# Built-in Models",
            "",
            "| Model | Group | Power flow | Time domain | States | Algebraics |",
            "|-------|-------|------------|-------------|--------|------------|",
        ]
        for row in rows:
            lines.append(
                f"| {row['name']} | {row['group'] or '-'} | {'yes' if row['pflow'] else 'no'} | "
                f"{'yes' if row['tds'] else 'no'} | {row['states']} | {row['algebs']} |"
            )
        return "\n".join(lines)

    except Exception as e:
        return _handle_error(e)


# ============================================================================
# Entry Point
# ============================================================================

if __name__ == "__main__":
    mcp.run()
