"""Tests for model declaration, block expansion, compilation, the declarative format and the cache."""
import json
import logging

import numpy as np
import pytest

from symnum.errors import CacheError, ModelDefinitionError
from symnum.expr import parse, render, simplify, symbol
from symnum.models import gencls_schema, line_schema, shunt_schema, tgov1_schema, tgov1b_schema
from symnum.symbolic import (
    Algeb,
    ConstService,
    ExtAlgeb,
    HardLimiter,
    Lag,
    ModelCache,
    ModelSchema,
    NumParam,
    State,
    build_schema,
    cache_load,
    cache_store,
    compile_model,
    expand_blocks,
    load_schema_file,
    schema_from_dict,
    schema_hash,
    schema_to_dict,
)


def toy_schema(default=1.0, **kwargs):
    return build_schema('Toy', [
        NumParam('k', default),
        State('x', '-k*x', v_str='1'),
        Algeb('z', 'x - z', v_str='x'),
    ], **kwargs)


def rendered(triplets):
    return [(t.row, t.col, render(t.value)) for t in triplets]


class TestBuildSchema:
    """Validation of ordered element lists."""

    def test_element_categories(self):
        s = tgov1_schema()
        assert [v.name for v in s.states] == ['omega', 'LG_y', 'LL_x']
        assert [v.name for v in s.algebs] == ['tm', 'pref', 'wd', 'pd', 'LL_y', 'pout']
        assert [d.name for d in s.discretes] == ['LG_lim']
        assert s.flags == ('LG_lim_zi', 'LG_lim_zl', 'LG_lim_zu')
        assert s.element('R').power_base == 'inverse_power'

    def test_forward_reference_is_allowed(self):
        s = build_schema('Fwd', [Algeb('a', 'b - a'), Algeb('b', '1 - b')])
        assert [v.name for v in s.algebs] == ['a', 'b']

    def test_duplicate_name(self):
        with pytest.raises(ModelDefinitionError, match='duplicate'):
            build_schema('Dup', [NumParam('k'), NumParam('k')])

    def test_flag_name_clash(self):
        with pytest.raises(ModelDefinitionError, match="duplicate element name 'lim_zi'"):
            build_schema('Clash', [
                Algeb('lim_zi', '1 - lim_zi'),
                Algeb('y', '2 - y'),
                HardLimiter('lim', 'y', '0', '1'),
            ])

    def test_unparseable_equation(self):
        with pytest.raises(ModelDefinitionError, match='cannot parse'):
            build_schema('Bad', [NumParam('g'), Algeb('y', 'g*')])

    def test_dangling_reference(self):
        with pytest.raises(ModelDefinitionError, match="dangling reference 'w'"):
            build_schema('Bad', [NumParam('g'), Algeb('y', 'g*w - y')])

    def test_state_without_equation(self):
        with pytest.raises(ModelDefinitionError, match='needs an e_str'):
            build_schema('Bad', [State('x')])

    def test_external_needs_idx_indexer(self):
        with pytest.raises(ModelDefinitionError, match='external variable'):
            build_schema('Bad', [NumParam('bus'), ExtAlgeb('a', 'Bus', 'a', 'bus')])

    def test_limiter_input_must_be_variable(self):
        with pytest.raises(ModelDefinitionError, match='is not a variable'):
            build_schema('Bad', [NumParam('k'), HardLimiter('lim', 'k', '0', '1')])

    def test_reserved_and_keyword_names(self):
        with pytest.raises(ModelDefinitionError):
            build_schema('Bad', [NumParam('lambda')])
        with pytest.raises(ModelDefinitionError):
            build_schema('Bad', [NumParam('_np')])

    def test_negative_diag_eps(self):
        with pytest.raises(ModelDefinitionError, match='diag_eps'):
            build_schema('Bad', [Algeb('y', '-y', diag_eps=-1.0)])

    def test_replaces_must_be_idx_param(self):
        with pytest.raises(ModelDefinitionError, match='replaces'):
            toy_schema(replaces='k')


class TestBlocks:
    """Transfer-function block expansion."""

    def test_tgov1b_expansion(self):
        s = expand_blocks(tgov1b_schema())
        assert not s.blocks
        names = [el.name for el in s.elements]
        for exported in ('GA_y', 'LG_y', 'LG_lim', 'LL_x', 'LL_y'):
            assert exported in names
        assert [d.kind for d in s.discretes] == ['anti_windup']

    def test_lag_anti_windup_equation(self):
        s = expand_blocks(tgov1b_schema())
        lg = s.element('LG_y')
        assert lg.kind == 'state'
        assert simplify(parse(lg.e_str)) == simplify(parse('LG_lim_zi*(GA_y - LG_y)/T1'))
        assert s.element('LG_lim').u == 'LG_y'
        assert (s.element('LG_lim').lower, s.element('LG_lim').upper) == ('VMIN', 'VMAX')

    def test_lead_lag_equations(self):
        s = expand_blocks(tgov1b_schema())
        assert s.element('LL_y').e_str == 'T2/T3*(LG_y - LL_x) + LL_x - LL_y'
        assert simplify(parse(s.element('LL_x').e_str)) == simplify(parse('(LG_y - LL_x)/T3'))

    def test_gain_equation(self):
        s = expand_blocks(tgov1b_schema())
        ga = s.element('GA_y')
        assert ga.kind == 'algeb'
        assert simplify(parse(ga.e_str)) == simplify(parse('G*(wd + pref) - GA_y'))

    def test_plain_lag(self):
        s = expand_blocks(build_schema('L', [
            NumParam('T', 2.0), NumParam('K', 3.0), Algeb('w', '1 - w'), Lag('F', 'w', T='T', K='K'),
        ]))
        assert simplify(parse(s.element('F_y').e_str)) == simplify(parse('(K*w - F_y)/T'))

    def test_export_clash_in_declaration(self):
        with pytest.raises(ModelDefinitionError):
            build_schema('Clash', [Algeb('w', '1 - w'), Algeb('F_y', '-F_y'), Lag('F', 'w', T=1)])

    def test_export_clash_on_expansion(self):
        s = ModelSchema('Clash', elements=(Algeb('F_y', '-F_y'), Lag('F', 'w', T='1')))
        with pytest.raises(ModelDefinitionError, match='already declared'):
            expand_blocks(s)

    def test_schema_without_blocks_is_unchanged(self):
        s = shunt_schema()
        assert expand_blocks(s) is s


class TestCompile:
    """Residuals, sparse Jacobian triplets and generated programs."""

    def test_shunt(self):
        c = compile_model(shunt_schema())
        assert c.states == ()
        assert c.algebs == ('a', 'v')
        assert [eq.var for eq in c.g] == ['a', 'v']
        assert rendered(c.jacobians['gy']) == [(0, 1, '2*g*v'), (1, 1, '-2*b*v')]
        assert c.jacobians['fx'] == () and c.jacobians['gx'] == ()

    def test_tgov1_droop_derivative(self):
        c = compile_model(tgov1_schema())
        assert len(c.f) == 2
        assert len(c.g) == 6
        pd, wd = c.algebs.index('pd'), c.algebs.index('wd')
        entry = [t for t in c.jacobians['gy'] if (t.row, t.col) == (pd, wd)]
        assert len(entry) == 1
        assert entry[0].value == symbol('G')

    def test_no_zero_triplets(self):
        c = compile_model(line_schema())
        for triplets in c.jacobians.values():
            assert all(not t.value.is_number(0) for t in triplets)

    def test_diag_eps(self):
        c = compile_model(build_schema('Eps', [Algeb('y', '-y', diag_eps=1e-8), State('x', '-x')]))
        assert c.diag_eps == (('gy', 0, 1e-8),)

    def test_generated_program_evaluates(self):
        c = compile_model(shunt_schema())
        prog = c.program('g_update')
        values = {'g': np.array([0.5, 1.0]), 'b': np.array([0.2, 0.4]), 'v': np.array([1.0, 2.0])}
        p, q = prog.fn(*[values[a] for a in prog.args])
        np.testing.assert_allclose(p, [0.5, 4.0])
        np.testing.assert_allclose(q, [-0.2, -1.6])

    def test_generated_source_is_deterministic(self):
        assert compile_model(line_schema()).source == compile_model(line_schema()).source

    def test_unknown_program(self):
        with pytest.raises(KeyError):
            compile_model(toy_schema()).program('j_nothing')


class TestInitPlan:
    """Sequential, iterative and service ordering."""

    def test_tgov1_sequence(self):
        plan = compile_model(tgov1_schema()).init_plan
        assert [(st.kind, st.target) for st in plan.sequential] == [
            ('assign', 'pref'), ('assign', 'pd'), ('assign', 'LG_y'),
            ('assign', 'LL_x'), ('assign', 'LL_y'), ('assign', 'pout'), ('discrete', 'LG_lim'),
        ]
        assert plan.service_order == ('G', 'tm0')
        assert plan.refreshable == frozenset({'G'})

    def test_gencls_iterative_delta(self):
        plan = compile_model(gencls_schema()).init_plan
        assert [it.var for it in plan.iterative] == ['delta']
        assert [(t.row, t.col) for t in plan.jacobian] == [(0, 0)]
        assert plan.service_order[:3] == ('p0s', 'q0s', 'wb')
        assert plan.refreshable == frozenset({'wb'})

    def test_flag_read_by_initial_value_refreshes_first(self):
        plan = compile_model(build_schema('Clip', [
            Algeb('w', '0.5 - w', v_str='0.5'),
            HardLimiter('lim', 'w', '0', '1'),
            Algeb('y', 'lim_zi*w - y', v_str='lim_zi*w'),
        ])).init_plan
        kinds = [(st.kind, st.target) for st in plan.sequential]
        assert kinds.index(('discrete', 'lim')) < kinds.index(('assign', 'y'))

    def test_cyclic_services(self):
        s = build_schema('Cycle', [ConstService('a', 'b + 1'), ConstService('b', 'a + 1')])
        with pytest.raises(ModelDefinitionError, match='cyclic'):
            compile_model(s)


class TestDeclarativeFormat:
    """Dictionary and JSON model declarations."""

    @pytest.mark.parametrize('build', [shunt_schema, line_schema, gencls_schema, tgov1_schema, tgov1b_schema])
    def test_round_trip(self, build):
        s = build()
        restored = schema_from_dict(json.loads(json.dumps(schema_to_dict(s))))
        assert restored == s
        assert schema_hash(restored) == schema_hash(s)

    def test_numeric_block_arguments(self):
        s = schema_from_dict({
            'name': 'Filt',
            'elements': [
                {'type': 'Algeb', 'name': 'w', 'e_str': '1 - w'},
                {'type': 'Lag', 'name': 'F', 'u': 'w', 'T': 0.5, 'K': 2},
            ],
        })
        assert s.element('F').T == '0.5'
        assert s.element('F').K == '2'

    def test_unknown_element_type(self):
        with pytest.raises(ModelDefinitionError, match='Invalid model declaration'):
            schema_from_dict({'name': 'X', 'elements': [{'type': 'Integrator', 'name': 'i'}]})

    def test_unknown_field(self):
        with pytest.raises(ModelDefinitionError):
            schema_from_dict({'name': 'X', 'elements': [{'type': 'NumParam', 'name': 'k', 'colour': 'red'}]})

    def test_limiter_needs_bounds(self):
        with pytest.raises(ModelDefinitionError, match='needs u, lower and upper'):
            schema_from_dict({'name': 'X', 'elements': [
                {'type': 'Algeb', 'name': 'w', 'e_str': '-w'},
                {'type': 'HardLimiter', 'name': 'lim', 'u': 'w'},
            ]})

    def test_load_file(self, tmp_path):
        path = tmp_path / 'toy.json'
        path.write_text(json.dumps(schema_to_dict(toy_schema())), encoding='utf-8')
        assert load_schema_file(path) == toy_schema()

    def test_load_invalid_json(self, tmp_path):
        path = tmp_path / 'broken.json'
        path.write_text('{"name": "X",', encoding='utf-8')
        with pytest.raises(ModelDefinitionError, match='invalid JSON at line 1'):
            load_schema_file(path)

    def test_hash_tracks_content(self):
        assert schema_hash(toy_schema(1.0)) == schema_hash(toy_schema(1.0))
        assert schema_hash(toy_schema(1.0)) != schema_hash(toy_schema(2.0))


class TestCache:
    """Serialized compiled models and the on-disk cache."""

    def test_store_and_load(self):
        c = compile_model(gencls_schema())
        restored = cache_load(cache_store(c), expected_hash=c.schema_hash)
        assert restored.states == c.states
        assert restored.algebs == c.algebs
        for block in ('fx', 'fy', 'gx', 'gy'):
            assert rendered(restored.jacobians[block]) == rendered(c.jacobians[block])
        assert restored.init_plan.service_order == c.init_plan.service_order
        assert restored.init_plan.refreshable == c.init_plan.refreshable
        assert restored.source == c.source

    def test_restored_programs_run(self):
        c = compile_model(shunt_schema())
        prog = cache_load(cache_store(c)).program('j_gy')
        out = prog.fn(*[np.array([2.0]) for _ in prog.args])
        np.testing.assert_allclose([np.asarray(o)[0] for o in out], [8.0, -8.0])

    def test_corrupt_payload(self):
        with pytest.raises(CacheError, match='Corrupt'):
            cache_load(b'{not json')

    def test_stale_hash(self):
        c = compile_model(toy_schema())
        with pytest.raises(CacheError, match='Stale'):
            cache_load(cache_store(c), expected_hash=schema_hash(toy_schema(2.0)))

    def test_version_mismatch(self):
        data = json.loads(cache_store(compile_model(toy_schema())))
        data['format_version'] = 999
        with pytest.raises(CacheError, match='format version'):
            cache_load(json.dumps(data).encode('utf-8'))

    def test_miss_then_hit(self, tmp_path):
        cache = ModelCache(tmp_path / 'models')
        first = cache.get_or_compile(toy_schema())
        assert (cache.misses, cache.hits) == (1, 0)
        assert cache.path_for('Toy').exists()

        again = ModelCache(tmp_path / 'models')
        second = again.get_or_compile(toy_schema())
        assert (again.misses, again.hits) == (0, 1)
        assert rendered(second.jacobians['fx']) == rendered(first.jacobians['fx'])

    def test_changed_schema_recompiles(self, tmp_path):
        ModelCache(tmp_path).get_or_compile(toy_schema(1.0))
        cache = ModelCache(tmp_path)
        c = cache.get_or_compile(toy_schema(2.0))
        assert cache.misses == 1
        assert c.schema.element('k').default == 2.0

    def test_corrupt_file_is_replaced(self, tmp_path, caplog):
        cache = ModelCache(tmp_path)
        cache.path_for('Toy').write_text('garbage', encoding='utf-8')
        with caplog.at_level(logging.WARNING, logger='symnum.symbolic'):
            cache.get_or_compile(toy_schema())
        assert 'Ignoring cached Toy' in caplog.text
        assert cache.misses == 1
        again = ModelCache(tmp_path)
        again.get_or_compile(toy_schema())
        assert again.hits == 1

    def test_hooks_survive_a_hit(self, tmp_path):
        def hook(system, model):
            return None

        ModelCache(tmp_path).get_or_compile(toy_schema(init_hooks=(hook,)))
        cache = ModelCache(tmp_path)
        c = cache.get_or_compile(toy_schema(init_hooks=(hook,)))
        assert cache.hits == 1
        assert c.schema.init_hooks == (hook,)

    def test_default_directory_from_environment(self, tmp_path):
        assert ModelCache().directory == tmp_path / 'cache'

    def test_disabled_by_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv('SYMNUM_NO_CACHE', '1')
        cache = ModelCache(tmp_path / 'off')
        assert not cache.enabled
        cache.get_or_compile(toy_schema())
        assert not (tmp_path / 'off').exists()
