# symnum/io.py
"""
Case ingestion and result output.

Native cases are JSON objects holding `baseMVA`, `freq` and one array of row
objects per model, with field names matching the model parameters. A subset of
the MATPOWER text format (bus, gen and branch matrices) converts to the same
structure. Results are written as CSV (time-major) or JSON.
"""

from __future__ import annotations
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union
import json
import logging
import math
import re
import time

import httpx
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from symnum.errors import CaseError
from symnum.generators.docs_generator import generate_index, generate_model_doc
from symnum.models import CASE_ALIASES, MODEL_NAMES

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

CASES_DIR = Path(__file__).parent / 'cases'

DEFAULT_TIMEOUT = 30.0
MAX_RETRIES = 3
RETRY_BASE_DELAY = 1.0  # seconds, doubled per attempt

CSV_FORMAT = '%.9f'


# ============================================================================
# Case model
# ============================================================================

class CaseFile(BaseModel):
    """A loaded case: system base, frequency and device rows per model."""
    model_config = ConfigDict(extra='forbid', validate_assignment=True)

    baseMVA: float = Field(default=100.0, gt=0, description="System power base in MVA")
    freq: float = Field(default=60.0, gt=0, description="System frequency in Hz")
    models: Dict[str, List[Dict[str, Any]]] = Field(default_factory=dict)

    @field_validator('models')
    @classmethod
    def _validate_models(cls, v: Dict[str, List[Dict[str, Any]]]) -> Dict[str, List[Dict[str, Any]]]:
        allowed = set(MODEL_NAMES) | set(CASE_ALIASES)
        for name, rows in v.items():
            if name not in allowed:
                raise ValueError(f"unknown model '{name}'")
            seen = set()
            for i, row in enumerate(rows):
                if 'idx' not in row:
                    continue
                if row['idx'] in seen:
                    raise ValueError(f"{name}: duplicate idx {row['idx']!r} (row {i})")
                seen.add(row['idx'])
        return v

    def count(self, model: str) -> int:
        return len(self.models.get(model, []))


def case_from_dict(data: Dict[str, Any], source: str = '<dict>') -> CaseFile:
    """Split the flat JSON layout into base values and model tables."""
    if not isinstance(data, dict):
        raise CaseError(f"{source}: case must be a JSON object")
    data = dict(data)
    header = {k: data.pop(k) for k in ('baseMVA', 'freq') if k in data}
    for name, rows in data.items():
        if not isinstance(rows, list) or not all(isinstance(r, dict) for r in rows):
            raise CaseError(f"{source}: '{name}' must be an array of row objects")
    try:
        return CaseFile(models=data, **header)
    except ValidationError as e:
        first = e.errors()[0]
        where = '.'.join(str(p) for p in first.get('loc', ()))
        raise CaseError(f"{source}: {where}: {first.get('msg')}") from e


def case_to_dict(case: CaseFile) -> Dict[str, Any]:
    out: Dict[str, Any] = {'baseMVA': case.baseMVA, 'freq': case.freq}
    out.update(case.models)
    return out


# ============================================================================
# Native format
# ============================================================================

def _fetch_text(url: str) -> str:
    """GET a case over HTTP with retry and exponential backoff on connection errors."""
    last_exception: Optional[Exception] = None
    for attempt in range(MAX_RETRIES):
        try:
            with httpx.Client(timeout=DEFAULT_TIMEOUT, follow_redirects=True) as client:
                response = client.get(url)
                response.raise_for_status()
                return response.text
        except (httpx.ConnectError, httpx.ConnectTimeout, OSError) as e:
            last_exception = e
            if attempt < MAX_RETRIES - 1:
                delay = RETRY_BASE_DELAY * (2 ** attempt)
                logger.warning("Fetching %s failed (%s); retrying in %.1f s", url, e, delay)
                time.sleep(delay)
                continue
        except httpx.HTTPStatusError as e:
            raise CaseError(f"{url}: server returned status {e.response.status_code}") from e
    raise CaseError(f"{url}: could not connect after {MAX_RETRIES} attempts: {last_exception}")


def _read_text(path: PathLike) -> str:
    text = str(path)
    if text.startswith(('http://', 'https://')):
        return _fetch_text(text)
    try:
        return Path(path).read_text(encoding='utf-8')
    except OSError as e:
        raise CaseError(f"{path}: {e.strerror or e}") from e


def load_case(path: PathLike) -> CaseFile:
    """Load a native JSON case (or a MATPOWER `.m` file) from a path or http(s) URL."""
    if str(path).endswith('.m'):
        return load_matpower(path)
    text = _read_text(path)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise CaseError(f"{path}: invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}") from e
    case = case_from_dict(data, str(path))
    logger.info("Loaded case %s: %s", path, {k: len(v) for k, v in case.models.items()})
    return case


def write_case(case: CaseFile, path: PathLike) -> None:
    Path(path).write_text(json.dumps(case_to_dict(case), indent=2) + '\n', encoding='utf-8')


def bundled_case(name: str = 'kundur') -> Path:
    """Path of a case shipped with the package."""
    path = CASES_DIR / f'{name}.json'
    if not path.exists():
        available = sorted(p.stem for p in CASES_DIR.glob('*.json'))
        raise CaseError(f"No bundled case '{name}'; available: {', '.join(available)}")
    return path


# ============================================================================
# MATPOWER
# ============================================================================

# Column positions in the MATPOWER bus, gen and branch matrices
BUS_I, BUS_TYPE, PD, QD, GS, BS, BUS_AREA, VM, VA, BASE_KV = range(10)
GEN_BUS, PG, QG, QMAX, QMIN, VG, MBASE, GEN_STATUS = range(8)
F_BUS, T_BUS, BR_R, BR_X, BR_B, RATE_A, RATE_B, RATE_C, TAP, SHIFT, BR_STATUS = range(11)

_MATRIX_MIN_COLS = {'bus': 10, 'gen': 8, 'branch': 5}


def _strip_comments(text: str) -> str:
    return '\n'.join(line.split('%', 1)[0] for line in text.splitlines())


def _parse_matrix(text: str, name: str, source: str) -> np.ndarray:
    match = re.search(rf'mpc\.{name}\s*=\s*\[(.*?)\]\s*;?', text, re.DOTALL)
    if match is None:
        raise CaseError(f"{source}: missing mpc.{name} block")
    rows = []
    for k, raw in enumerate(re.split(r'[;\n]', match.group(1))):
        raw = raw.strip()
        if not raw:
            continue
        try:
            rows.append([float(x) for x in re.split(r'[\s,]+', raw)])
        except ValueError:
            raise CaseError(f"{source}: malformed row in mpc.{name}: '{raw}'") from None
    width = _MATRIX_MIN_COLS[name]
    for r in rows:
        if len(r) < width:
            raise CaseError(f"{source}: mpc.{name} row has {len(r)} columns, expected at least {width}")
    if not rows:
        return np.zeros((0, width))
    if len({len(r) for r in rows}) != 1:
        raise CaseError(f"{source}: mpc.{name} rows have differing column counts")
    return np.array(rows)


def parse_matpower(text: str, source: str = '<matpower>') -> CaseFile:
    """Convert MATPOWER bus/gen/branch matrices into native model rows."""
    text = _strip_comments(text)
    base_match = re.search(r'mpc\.baseMVA\s*=\s*([0-9.eE+-]+)', text)
    if base_match is None:
        raise CaseError(f"{source}: missing mpc.baseMVA")
    base = float(base_match.group(1))
    bus = _parse_matrix(text, 'bus', source)
    gen = _parse_matrix(text, 'gen', source)
    branch = _parse_matrix(text, 'branch', source)

    models: Dict[str, List[Dict[str, Any]]] = {k: [] for k in ('Bus', 'PQ', 'PV', 'Slack', 'Shunt', 'Line')}
    bus_type = {}
    bus_angle = {}
    for row in bus:
        idx = int(row[BUS_I])
        bus_type[idx] = int(row[BUS_TYPE])
        bus_angle[idx] = math.radians(row[VA])
        models['Bus'].append({
            'idx': idx, 'Vn': row[BASE_KV] if row[BASE_KV] > 0 else 110.0,
            'v0': row[VM], 'a0': bus_angle[idx], 'area': row[BUS_AREA],
        })
        if row[PD] != 0 or row[QD] != 0:
            models['PQ'].append({'idx': f'PQ_{idx}', 'bus': idx, 'p0': row[PD] / base, 'q0': row[QD] / base})
        if row[GS] != 0 or row[BS] != 0:
            models['Shunt'].append({'idx': f'Shunt_{idx}', 'bus': idx, 'g': row[GS] / base, 'b': row[BS] / base})

    # One Slack/PV per bus regulates voltage: the first in-service gen row, else the first row.
    # Further rows at that bus are fixed injections.
    regulating = {}
    for k, row in enumerate(gen, start=1):
        idx = int(row[GEN_BUS])
        if idx not in bus_type:
            raise CaseError(f"{source}: gen row {k} references unknown bus {idx}")
        current = regulating.get(idx)
        if current is None or (gen[current - 1][GEN_STATUS] <= 0 < row[GEN_STATUS]):
            regulating[idx] = k

    for k, row in enumerate(gen, start=1):
        idx = int(row[GEN_BUS])
        status = 1.0 if row[GEN_STATUS] > 0 else 0.0
        if regulating[idx] != k:
            models['PQ'].append({
                'idx': f'PQ_gen_{k}', 'bus': idx, 'p0': -row[PG] / base, 'q0': -row[QG] / base, 'u': status,
            })
            logger.debug("%s: gen row %d shares bus %d, converted to a fixed injection", source, k, idx)
            continue
        fields = {
            'idx': k, 'bus': idx, 'p0': row[PG] / base, 'q0': row[QG] / base, 'v0': row[VG],
            'Sn': row[MBASE] if row[MBASE] > 0 else base, 'u': status,
        }
        if bus_type[idx] == 3:
            models['Slack'].append({**fields, 'a0': bus_angle[idx]})
        else:
            models['PV'].append(fields)

    for k, row in enumerate(branch):
        tap = row[TAP] if branch.shape[1] > TAP and row[TAP] != 0 else 1.0
        shift = math.radians(row[SHIFT]) if branch.shape[1] > SHIFT else 0.0
        status = row[BR_STATUS] if branch.shape[1] > BR_STATUS else 1.0
        models['Line'].append({
            'idx': f'Line_{k}', 'bus1': int(row[F_BUS]), 'bus2': int(row[T_BUS]),
            'r': row[BR_R], 'x': row[BR_X], 'b': row[BR_B], 'tap': tap, 'phi': shift,
            'u': 1.0 if status > 0 else 0.0,
        })

    models = {k: v for k, v in models.items() if v}
    return case_from_dict({'baseMVA': base, **models}, source)


def load_matpower(path: PathLike) -> CaseFile:
    """Read a MATPOWER `.m` case (matrices and `%` comments only)."""
    case = parse_matpower(_read_text(path), str(path))
    logger.info("Loaded MATPOWER case %s: %s", path, {k: len(v) for k, v in case.models.items()})
    return case


# ============================================================================
# Results
# ============================================================================

def write_tds_csv(result, path: PathLike) -> None:
    """Time-major CSV: header `t,<names>`, one row per recorded time."""
    data = np.column_stack([result.t, result.values]) if result.values.size else result.t.reshape(-1, 1)
    header = ','.join(['t'] + list(result.names))
    np.savetxt(path, data, delimiter=',', header=header, comments='', fmt=CSV_FORMAT)


def write_eigen_csv(report, path: PathLike) -> None:
    """S-plane scatter data: sigma, omega, zeta per eigenvalue."""
    data = np.column_stack([report.eigenvalues.real, report.eigenvalues.imag, report.damping])
    np.savetxt(path, data.reshape(-1, 3), delimiter=',', header='sigma,omega,zeta', comments='', fmt=CSV_FORMAT)


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        if np.iscomplexobj(value):
            return [[float(v.real), float(v.imag)] for v in value]
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if hasattr(value, '__dataclass_fields__'):
        return {k: _jsonable(getattr(value, k)) for k in value.__dataclass_fields__}
    return value


def result_to_dict(result) -> Dict[str, Any]:
    return {
        'routine': result.routine,
        'converged': result.converged,
        'iterations': result.iterations,
        'mismatches': result.mismatches,
        'names': result.names,
        't': _jsonable(result.t),
        'values': _jsonable(result.values),
        'extra': _jsonable(result.extra),
    }


def write_result_json(result, path: PathLike) -> None:
    Path(path).write_text(json.dumps(result_to_dict(result), indent=2, sort_keys=True) + '\n', encoding='utf-8')


def export_model_docs(models: Sequence, path: PathLike) -> List[Path]:
    """Write one markdown reference per compiled model plus an index; returns written paths."""
    out_dir = Path(path)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for c in models:
        target = out_dir / f'{c.name}.md'
        target.write_text(generate_model_doc(c), encoding='utf-8')
        written.append(target)
    index = out_dir / 'index.md'
    index.write_text(generate_index([c.name for c in models]), encoding='utf-8')
    written.append(index)
    logger.info("Wrote %d model documents to %s", len(models), out_dir)
    return written
