"""Tests for case loading, MATPOWER conversion and result output."""
import json

import httpx
import numpy as np
import pytest

from symnum.errors import CaseError
from symnum.io import (
    bundled_case,
    case_from_dict,
    case_to_dict,
    export_model_docs,
    load_case,
    parse_matpower,
    result_to_dict,
    write_case,
    write_eigen_csv,
    write_result_json,
    write_tds_csv,
)
from symnum.models import MODEL_NAMES, system_from_case
from symnum.routines import PowerFlowConfig, TdsConfig, run_eigenvalues, run_tds, solve_power_flow

THREE_BUS = """
function mpc = case3
% three buses, two generators
mpc.version = '2';
mpc.baseMVA = 100;

%% bus data
mpc.bus = [
    1  3  0   0   0  0   1  1.02  0  110  1  1.1  0.9;
    2  2  0   0   0  0   1  1.01  0  110  1  1.1  0.9;
    3  1  90  30  0  19  1  1.00  0  110  1  1.1  0.9;
];

%% generator data
mpc.gen = [
    1  0   0  300  -300  1.02  100  1;
    2  60  0  300  -300  1.01  100  1;
];

%% branch data
mpc.branch = [
    1  2  0.01  0.10  0.02  0  0  0  0  0  1;
    1  3  0.02  0.15  0.03  0  0  0  0  0  1;
    2  3  0.01  0.12  0.02  0  0  0  0  0  1;
];
"""


def three_bus_native():
    bus = {'Vn': 110, 'a0': 0.0, 'area': 1}
    line = {'tap': 1.0, 'phi': 0.0, 'u': 1.0}
    return case_from_dict({
        'baseMVA': 100,
        'Bus': [
            {'idx': 1, 'v0': 1.02, **bus},
            {'idx': 2, 'v0': 1.01, **bus},
            {'idx': 3, 'v0': 1.0, **bus},
        ],
        'PQ': [{'idx': 'PQ_3', 'bus': 3, 'p0': 0.9, 'q0': 0.3}],
        'Shunt': [{'idx': 'Shunt_3', 'bus': 3, 'g': 0.0, 'b': 0.19}],
        'Slack': [{'idx': 1, 'bus': 1, 'p0': 0.0, 'q0': 0.0, 'v0': 1.02, 'Sn': 100, 'u': 1.0, 'a0': 0.0}],
        'PV': [{'idx': 2, 'bus': 2, 'p0': 0.6, 'q0': 0.0, 'v0': 1.01, 'Sn': 100, 'u': 1.0}],
        'Line': [
            {'idx': 'Line_0', 'bus1': 1, 'bus2': 2, 'r': 0.01, 'x': 0.10, 'b': 0.02, **line},
            {'idx': 'Line_1', 'bus1': 1, 'bus2': 3, 'r': 0.02, 'x': 0.15, 'b': 0.03, **line},
            {'idx': 'Line_2', 'bus1': 2, 'bus2': 3, 'r': 0.01, 'x': 0.12, 'b': 0.02, **line},
        ],
    })


class TestNativeCase:
    """JSON case validation and round trip."""

    def test_kundur_counts(self, kundur_case):
        counts = {name: kundur_case.count(name) for name in kundur_case.models}
        assert counts == {'Bus': 10, 'Line': 15, 'PQ': 2, 'PV': 3, 'Slack': 1, 'GENROU': 4, 'TGOV1': 4}
        assert kundur_case.baseMVA == 100
        assert kundur_case.freq == 60

    def test_round_trip(self, kundur_case, tmp_path):
        path = tmp_path / 'kundur.json'
        write_case(kundur_case, path)
        assert case_to_dict(load_case(path)) == case_to_dict(kundur_case)

    def test_unknown_model(self):
        with pytest.raises(CaseError, match="unknown model 'GENSAL'"):
            case_from_dict({'GENSAL': [{'idx': 1}]})

    def test_duplicate_idx(self):
        with pytest.raises(CaseError, match='duplicate idx'):
            case_from_dict({'Bus': [{'idx': 1}, {'idx': 1}]})

    def test_rows_must_be_objects(self):
        with pytest.raises(CaseError, match='array of row objects'):
            case_from_dict({'Bus': [1, 2]})

    def test_case_must_be_object(self, tmp_path):
        path = tmp_path / 'list.json'
        path.write_text('[]', encoding='utf-8')
        with pytest.raises(CaseError, match='must be a JSON object'):
            load_case(path)

    def test_invalid_json_reports_position(self, tmp_path):
        path = tmp_path / 'broken.json'
        path.write_text('{\n  "Bus": [\n    {"idx": 1,}\n  ]\n}\n', encoding='utf-8')
        with pytest.raises(CaseError, match='invalid JSON at line 3'):
            load_case(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CaseError, match='missing.json'):
            load_case(tmp_path / 'missing.json')

    def test_unknown_bundled_case(self):
        with pytest.raises(CaseError, match="No bundled case 'ieee14'; available: kundur"):
            bundled_case('ieee14')


class TestRemoteCase:
    """Cases fetched over HTTP."""

    def test_url_is_fetched(self, monkeypatch):
        text = bundled_case('kundur').read_text(encoding='utf-8')
        seen = []
        monkeypatch.setattr('symnum.io._fetch_text', lambda url: seen.append(url) or text)
        case = load_case('https://example.org/kundur.json')
        assert seen == ['https://example.org/kundur.json']
        assert case.count('Bus') == 10

    def test_retries_with_backoff(self, monkeypatch):
        class RefusingClient:
            def __init__(self, *args, **kwargs):
                pass

            def __enter__(self):
                return self

            def __exit__(self, *exc):
                return False

            def get(self, url):
                raise httpx.ConnectError('connection refused')

        delays = []
        monkeypatch.setattr('symnum.io.httpx.Client', RefusingClient)
        monkeypatch.setattr('symnum.io.time.sleep', delays.append)
        with pytest.raises(CaseError, match='could not connect after 3 attempts'):
            load_case('https://example.org/kundur.json')
        assert delays == [1.0, 2.0]


class TestMatpower:
    """MATPOWER bus/gen/branch conversion."""

    def test_converted_rows(self):
        case = parse_matpower(THREE_BUS)
        assert case.count('Bus') == 3
        assert case.models['PQ'] == [{'idx': 'PQ_3', 'bus': 3, 'p0': 0.9, 'q0': 0.3}]
        assert case.models['Shunt'][0]['b'] == pytest.approx(0.19)
        assert case.models['Slack'][0]['bus'] == 1
        assert [row['idx'] for row in case.models['PV']] == [2]
        assert [row['tap'] for row in case.models['Line']] == [1.0, 1.0, 1.0]

    def test_matches_native_twin(self, builtin_models):
        results = []
        for case in (parse_matpower(THREE_BUS), three_bus_native()):
            system = system_from_case(case, models=builtin_models)
            solve_power_flow(system, PowerFlowConfig(tol=1e-12))
            bus = system.tables['Bus']
            results.append(np.concatenate([bus.v['a'], bus.v['v']]))
        np.testing.assert_allclose(results[0], results[1], atol=1e-10)

    def test_shared_generator_bus(self, builtin_models):
        split = THREE_BUS.replace(
            '    2  60  0  300  -300  1.01  100  1;\n',
            '    2  30  0  300  -300  1.01  100  1;\n    2  30  0  300  -300  1.01  100  1;\n'
            '    1  0   0  300  -300  1.02  100  1;\n',
        )
        case = parse_matpower(split)
        assert [row['idx'] for row in case.models['PV']] == [2]
        assert [row['idx'] for row in case.models['Slack']] == [1]
        assert [row['idx'] for row in case.models['PQ']] == ['PQ_3', 'PQ_gen_3', 'PQ_gen_4']
        assert case.models['PQ'][1]['p0'] == pytest.approx(-0.3)

        results = []
        for c in (case, three_bus_native()):
            system = system_from_case(c, models=builtin_models)
            solve_power_flow(system, PowerFlowConfig(tol=1e-12))
            bus = system.tables['Bus']
            results.append(np.concatenate([bus.v['a'], bus.v['v']]))
        np.testing.assert_allclose(results[0], results[1], atol=1e-10)

    def test_offline_first_generator_yields_to_online_one(self):
        split = THREE_BUS.replace(
            '    2  60  0  300  -300  1.01  100  1;\n',
            '    2  10  0  300  -300  1.01  100  0;\n    2  60  0  300  -300  1.01  100  1;\n',
        )
        case = parse_matpower(split)
        assert [row['idx'] for row in case.models['PV']] == [3]
        offline = case.models['PQ'][1]
        assert (offline['idx'], offline['u']) == ('PQ_gen_2', 0.0)

    def test_load_from_file(self, tmp_path):
        path = tmp_path / 'case3.m'
        path.write_text(THREE_BUS, encoding='utf-8')
        assert load_case(path).count('Line') == 3

    def test_missing_base(self):
        with pytest.raises(CaseError, match='missing mpc.baseMVA'):
            parse_matpower(THREE_BUS.replace('mpc.baseMVA = 100;', ''))

    def test_missing_block(self):
        text = THREE_BUS.split('%% generator data')[0]
        with pytest.raises(CaseError, match='missing mpc.gen block'):
            parse_matpower(text)

    def test_malformed_row(self):
        with pytest.raises(CaseError, match='malformed row'):
            parse_matpower(THREE_BUS.replace('0.10  0.02', 'x  0.02'))

    def test_empty_branch_matrix_islands(self, builtin_models):
        text = THREE_BUS.split('%% branch data')[0] + 'mpc.branch = [\n];\n'
        case = parse_matpower(text)
        assert 'Line' not in case.models
        with pytest.raises(CaseError, match='islanded'):
            solve_power_flow(system_from_case(case, models=builtin_models))


class TestResultOutput:
    """CSV and JSON result files."""

    def test_tds_csv(self, decay, tmp_path):
        result = run_tds(decay(0.0), TdsConfig(h=0.1, t_end=0.3))
        path = tmp_path / 'tds.csv'
        write_tds_csv(result, path)
        lines = path.read_text(encoding='utf-8').splitlines()
        assert lines[0] == 't,Decay.x[1]'
        assert len(lines) == 5
        assert lines[1] == '0.000000000,1.000000000'
        assert lines[-1] == '0.300000000,1.000000000'

    def test_eigen_csv(self, kundur_initialized, tmp_path):
        report = run_eigenvalues(kundur_initialized).extra['report']
        path = tmp_path / 'eig.csv'
        write_eigen_csv(report, path)
        lines = path.read_text(encoding='utf-8').splitlines()
        assert lines[0] == 'sigma,omega,zeta'
        assert len(lines) == 17

    def test_json_deterministic(self, two_bus, tmp_path):
        paths = [tmp_path / 'first.json', tmp_path / 'second.json']
        for path in paths:
            write_result_json(solve_power_flow(two_bus(), PowerFlowConfig()), path)
        assert paths[0].read_bytes() == paths[1].read_bytes()
        assert 'timings' not in json.loads(paths[0].read_text(encoding='utf-8'))

    def test_json_file(self, two_bus, tmp_path):
        path = tmp_path / 'pflow.json'
        write_result_json(solve_power_flow(two_bus(), PowerFlowConfig()), path)
        data = json.loads(path.read_text(encoding='utf-8'))
        assert list(data) == sorted(data)
        assert data['routine'] == 'pflow'
        assert data['names'] == ['Bus.a[1]', 'Bus.a[2]', 'Bus.v[1]', 'Bus.v[2]', 'Slack.p[1]', 'Slack.q[1]']
        assert set(data['extra']['line_flows']['Line_1']) == {'P1', 'P2', 'Q1', 'Q2'}

    def test_complex_eigenvalues_as_pairs(self, kundur_initialized):
        d = result_to_dict(run_eigenvalues(kundur_initialized))
        eigenvalues = d['extra']['report']['eigenvalues']
        assert len(eigenvalues) == 16
        assert all(len(pair) == 2 for pair in eigenvalues)
        json.dumps(d)


class TestModelDocs:
    """Reference document export."""

    def test_export(self, builtin_models, tmp_path):
        written = export_model_docs(builtin_models, tmp_path / 'docs')
        assert len(written) == len(MODEL_NAMES) + 1
        index = (tmp_path / 'docs' / 'index.md').read_text(encoding='utf-8')
        for name in MODEL_NAMES:
            assert f'- [{name}]({name}.md)' in index
        assert (tmp_path / 'docs' / 'GENCLS.md').read_text(encoding='utf-8').startswith('# GENCLS')
