"""Tests for the built-in model library, device loading and per-unit conversion."""
import cmath

import numpy as np
import pytest

from symnum.errors import CaseError
from symnum.io import case_from_dict
from symnum.models import (
    GROUPS,
    MODEL_NAMES,
    builtin_schemas,
    compile_builtin,
    convert_pq_to_shunt,
    load_devices,
    per_unit_convert,
    system_from_case,
)
from symnum.numeric import System, fg_update
from symnum.routines import line_flows
from symnum.symbolic import ModelCache


def empty_system(builtin_models):
    return System(builtin_models)


class TestRegistry:
    """Built-in schemas, groups and compiled models."""

    def test_names_and_order(self):
        assert tuple(s.name for s in builtin_schemas()) == MODEL_NAMES

    def test_pv_voltage_setter(self):
        pv = next(s for s in builtin_schemas() if s.name == 'PV')
        v = next(var for var in pv.variables if var.name == 'v')
        assert (v.e_str, v.v_str, v.v_setter) == ('-u*q', 'v0', True)

    def test_groups_match_schemas(self):
        by_name = {s.name: s for s in builtin_schemas()}
        for group, members in GROUPS.items():
            assert all(by_name[m].group == group for m in members)

    def test_static_models_take_part_in_power_flow(self):
        pflow = {s.name for s in builtin_schemas() if s.pflow}
        assert pflow == {'Bus', 'PQ', 'PV', 'Slack', 'Shunt', 'Line'}

    def test_no_diagonal_epsilons(self, builtin_models):
        assert all(c.diag_eps == () for c in builtin_models)

    def test_compile_through_cache(self, tmp_path):
        first = compile_builtin(ModelCache(tmp_path))
        cache = ModelCache(tmp_path)
        second = compile_builtin(cache)
        assert cache.hits == len(MODEL_NAMES)
        assert [c.name for c in first] == [c.name for c in second]


class TestLoadDevices:
    """Row validation and defaults."""

    def test_defaults_and_generated_idx(self, builtin_models):
        system = empty_system(builtin_models)
        load_devices(system, 'Bus', [{'idx': 1}])
        load_devices(system, 'PQ', [{'bus': 1, 'p0': 0.5}])
        table = system.tables['PQ']
        assert table.idx == ['PQ_1']
        assert table.params['q0'][0] == 0.0
        assert table.params['u'][0] == 1.0

    def test_float_idx_normalized(self, builtin_models):
        system = empty_system(builtin_models)
        load_devices(system, 'Bus', [{'idx': 3.0}])
        assert system.tables['Bus'].idx == [3]

    def test_unknown_model(self, builtin_models):
        with pytest.raises(CaseError, match="Unknown model 'Gen'"):
            load_devices(empty_system(builtin_models), 'Gen', [{}])

    def test_unknown_field(self, builtin_models):
        with pytest.raises(CaseError, match='unknown field'):
            load_devices(empty_system(builtin_models), 'Bus', [{'idx': 1, 'zone': 4}])

    def test_duplicate_idx(self, builtin_models):
        system = empty_system(builtin_models)
        load_devices(system, 'Bus', [{'idx': 1}])
        with pytest.raises(CaseError, match='duplicate idx 1'):
            load_devices(system, 'Bus', [{'idx': 1}])

    def test_missing_mandatory(self, builtin_models):
        with pytest.raises(CaseError, match="missing mandatory field 'bus'"):
            load_devices(empty_system(builtin_models), 'Shunt', [{'idx': 1, 'g': 0.1}])

    def test_not_a_number(self, builtin_models):
        with pytest.raises(CaseError, match="'p0' is not a number"):
            load_devices(empty_system(builtin_models), 'PQ', [{'idx': 1, 'bus': 1, 'p0': 'heavy'}])

    def test_non_zero(self, builtin_models):
        with pytest.raises(CaseError, match='TGOV1.R must be non-zero'):
            load_devices(empty_system(builtin_models), 'TGOV1', [{'idx': 1, 'syn': 1, 'R': 0}])

    def test_system_frequency_default(self, builtin_models):
        system = System(builtin_models, freq=50.0)
        load_devices(system, 'GENCLS', [{'idx': 1, 'bus': 1, 'gen': 1}])
        assert system.tables['GENCLS'].params['fn'][0] == 50.0

    def test_alias_keeps_extra_columns(self, kundur):
        table = kundur.tables['GENCLS']
        assert table.n == 4
        assert table.extras['xd'] == [1.8] * 4
        assert 'xd' not in table.params


class TestPerUnit:
    """Device-base to system-base conversion."""

    def test_governor_droop(self, kundur):
        np.testing.assert_allclose(kundur.tables['TGOV1'].params['R'], [0.05 * 100 / 900] * 4)
        np.testing.assert_allclose(kundur.tables['TGOV1'].params['VMAX'], [33 * 9.0] * 4)

    def test_generator_inertia(self, kundur):
        np.testing.assert_allclose(kundur.tables['GENCLS'].params['M'], [117.0, 117.0, 111.15, 111.15])
        np.testing.assert_allclose(kundur.tables['GENCLS'].params['xd1'], [0.3 / 9] * 4)

    def test_system_base_devices_unchanged(self, kundur):
        assert kundur.tables['PQ'].params['p0'][0] == 11.59

    def test_only_once(self, kundur):
        with pytest.raises(CaseError, match='already converted'):
            per_unit_convert(kundur)


class TestLine:
    """Line injections with taps, phase shift and charging."""

    @pytest.fixture
    def tapped(self, builtin_models):
        case = case_from_dict({
            'Bus': [{'idx': 1}, {'idx': 2}],
            'Line': [{'idx': 'T1', 'bus1': 1, 'bus2': 2, 'r': 0.02, 'x': 0.1, 'b': 0.1, 'tap': 1.05, 'phi': 0.1}],
        })
        system = system_from_case(case, models=builtin_models)
        system.dae.y[:] = [0.1, -0.05, 1.02, 0.97]
        return system

    def test_power_balance(self, tapped):
        flows = line_flows(tapped)['T1']
        services = tapped.tables['Line'].services
        gs, bs, bh = services['gs'][0], services['bs'][0], services['bh'][0]
        m, phi = 1.05, 0.1
        delta = 1.02 / m * cmath.exp(1j * (0.1 - phi)) - 0.97 * cmath.exp(-0.05j)
        assert flows['P1'] + flows['P2'] == pytest.approx(gs * abs(delta) ** 2, abs=1e-12)
        expected_q = -bs * abs(delta) ** 2 - bh * (1.02 ** 2 / m ** 2 + 0.97 ** 2)
        assert flows['Q1'] + flows['Q2'] == pytest.approx(expected_q, abs=1e-12)

    def test_flows_enter_bus_equations(self, tapped):
        fg_update(tapped, 'pflow')
        flows = line_flows(tapped)['T1']
        np.testing.assert_allclose(tapped.dae.g, [flows['P1'], flows['P2'], flows['Q1'], flows['Q2']])

    def test_offline_line_carries_nothing(self, tapped):
        tapped.tables['Line'].params['u'][0] = 0.0
        flows = line_flows(tapped)['T1']
        assert all(v == 0.0 for v in flows.values())


class TestPqToShunt:
    """Constant-power to constant-impedance load conversion."""

    @pytest.fixture
    def loaded_bus(self, builtin_models):
        case = case_from_dict({'Bus': [{'idx': 1}], 'PQ': [{'idx': 'PQ_0', 'bus': 1, 'p0': 11.59, 'q0': -0.735}]})
        system = system_from_case(case, models=builtin_models)
        system.dae.y[:] = [0.0, 1.0]
        return system

    def test_admittance_at_unit_voltage(self, loaded_bus):
        assert convert_pq_to_shunt(loaded_bus) == 1
        shunt = loaded_bus.tables['Shunt']
        assert shunt.idx == ['PQ_0_z']
        assert shunt.params['g'][0] == pytest.approx(11.59)
        assert shunt.params['b'][0] == pytest.approx(0.735)
        assert loaded_bus.tables['PQ'].params['u'][0] == 0.0

    def test_same_injection_at_solved_voltage(self, loaded_bus):
        fg_update(loaded_bus, 'pflow')
        before = loaded_bus.dae.g.copy()
        convert_pq_to_shunt(loaded_bus)
        fg_update(loaded_bus, 'pflow')
        np.testing.assert_allclose(loaded_bus.dae.g, before)

    def test_injection_scales_with_voltage_squared(self, loaded_bus):
        convert_pq_to_shunt(loaded_bus)
        loaded_bus.dae.y[1] = 0.9
        fg_update(loaded_bus, 'pflow')
        np.testing.assert_allclose(loaded_bus.dae.g, [11.59 * 0.81, -0.735 * 0.81])

    def test_zero_voltage(self, loaded_bus):
        loaded_bus.dae.y[1] = 0.0
        with pytest.raises(CaseError, match='zero voltage'):
            convert_pq_to_shunt(loaded_bus)

    def test_no_loads(self, builtin_models):
        system = system_from_case(case_from_dict({'Bus': [{'idx': 1}]}), models=builtin_models)
        assert convert_pq_to_shunt(system) == 0


class TestDynamicSteadyState:
    """Generator and governor initialization from the Kundur power flow."""

    def test_small_residual(self, kundur_initialized):
        dae = kundur_initialized.dae
        assert np.max(np.abs(dae.fg)) < 1e-7

    def test_static_generators_replaced(self, kundur_initialized):
        assert not kundur_initialized.tables['PV'].params['u'].any()
        assert not kundur_initialized.tables['Slack'].params['u'].any()

    def test_generator_speed_and_torque(self, kundur_initialized):
        gen = kundur_initialized.tables['GENCLS']
        np.testing.assert_allclose(gen.v['omega'], np.ones(4))
        np.testing.assert_allclose(gen.v['te'], gen.services['tm0'], atol=1e-9)
        np.testing.assert_allclose(gen.v['tm'], gen.services['tm0'], atol=1e-12)

    def test_governor_at_setpoint(self, kundur_initialized):
        gov = kundur_initialized.tables['TGOV1']
        tm0 = gov.services['tm0']
        np.testing.assert_allclose(gov.services['G'], [180.0] * 4)
        np.testing.assert_allclose(gov.v['pref'], tm0 * gov.params['R'])
        np.testing.assert_allclose(gov.v['LG_y'], tm0)
        np.testing.assert_allclose(gov.v['pout'], tm0)
        assert np.all(gov.flags['LG_lim_zi'] == 1.0)

    def test_loads_became_impedances(self, kundur_initialized):
        assert kundur_initialized.tables['Shunt'].idx == ['PQ_0_z', 'PQ_1_z']
