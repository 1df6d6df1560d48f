"""Shared test fixtures for symnum tests."""
from pathlib import Path

import pytest

from symnum.io import bundled_case, case_from_dict, load_case
from symnum.models import compile_builtin, load_devices, system_from_case
from symnum.numeric import System, evaluate_services, fg_update, initialize_model
from symnum.routines import PowerFlowConfig, initialize_dynamics, solve_power_flow
from symnum.symbolic import NumParam, State, build_schema, compile_model

GOLDEN_DIR = Path(__file__).parent / 'golden'


@pytest.fixture(autouse=True)
def isolated_cache(monkeypatch, tmp_path):
    """Keep the on-disk model cache inside the test's temporary directory."""
    monkeypatch.setenv('SYMNUM_CACHE_DIR', str(tmp_path / 'cache'))
    monkeypatch.delenv('SYMNUM_NO_CACHE', raising=False)


@pytest.fixture(scope='session')
def builtin_models():
    """Built-in models compiled once per test session."""
    return compile_builtin()


@pytest.fixture(scope='session')
def kundur_case():
    """The bundled two-area four-machine case."""
    return load_case(bundled_case('kundur'))


@pytest.fixture
def kundur(kundur_case, builtin_models):
    """Fresh Kundur system, loaded and per-unit converted but not solved."""
    return system_from_case(kundur_case, models=builtin_models)


@pytest.fixture
def kundur_initialized(kundur):
    """Kundur system after power flow and dynamic initialization."""
    solve_power_flow(kundur, PowerFlowConfig(tol=1e-10))
    initialize_dynamics(kundur)
    return kundur


def two_bus_case(p=0.1, q=0.0, x=0.1, r=0.0, pv=False):
    """Slack at bus 1, one line, load at bus 2; `pv` adds a zero-power PV at bus 2."""
    data = {
        'baseMVA': 100,
        'Bus': [{'idx': 1}, {'idx': 2}],
        'Slack': [{'idx': 1, 'bus': 1, 'v0': 1.0, 'a0': 0.0}],
        'Line': [{'idx': 'Line_1', 'bus1': 1, 'bus2': 2, 'r': r, 'x': x, 'b': 0.0}],
        'PQ': [{'idx': 'PQ_1', 'bus': 2, 'p0': p, 'q0': q}],
    }
    if pv:
        data['PV'] = [{'idx': 2, 'bus': 2, 'p0': 0.0, 'v0': 1.0}]
    return case_from_dict(data)


@pytest.fixture
def two_bus(builtin_models):
    """Factory building a two-bus System from `two_bus_case` keywords."""
    def make(**kwargs):
        return system_from_case(two_bus_case(**kwargs), models=builtin_models)
    return make


@pytest.fixture(scope='session')
def decay_model():
    """Compiled single-state model x' = -k x with x(0) = 1."""
    return compile_model(build_schema('Decay', [
        NumParam('k', 1.0),
        State('x', '-k*x', v_str='1'),
    ]))


@pytest.fixture
def decay(decay_model):
    """Factory returning an initialized Decay system for a given rate k."""
    def make(k=1.0):
        system = System([decay_model])
        load_devices(system, 'Decay', [{'idx': 1, 'k': k}])
        system.setup()
        evaluate_services(system)
        initialize_model(system, 'Decay')
        fg_update(system, 'tds')
        system.dynamics_initialized = True
        return system
    return make
