# symnum/cli.py
"""
Command-line front end: load a case, compile models (through the cache), run
a routine and write outputs.

    symnum pf kundur --profile
    symnum tds kundur --tmax 20 --event toggle:Line:Line_7:2.0 --out run.csv
    symnum eig kundur --out eig.csv
    symnum doc --out docs/models
"""

from __future__ import annotations
from pathlib import Path
from typing import Optional, Sequence
import argparse
import logging
import sys

import numpy as np

from symnum import __version__
from symnum.errors import CaseError, ConvergenceError, ExprSyntaxError, ModelDefinitionError
from symnum.io import (
    bundled_case,
    export_model_docs,
    load_case,
    write_eigen_csv,
    write_result_json,
    write_tds_csv,
)
from symnum.models import compile_builtin, system_from_case
from symnum.routines import (
    Event,
    PowerFlowConfig,
    RoutineResult,
    TdsConfig,
    initialize_dynamics,
    run_eigenvalues,
    run_tds,
    solve_power_flow,
)
from symnum.symbolic import ModelCache

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONVERGENCE = 3
EXIT_INTERNAL = 4


# ============================================================================
# Parser
# ============================================================================

def _case_options(p: argparse.ArgumentParser) -> None:
    p.add_argument('case', help="case file (.json or .m), URL, or bundled case name such as 'kundur'")
    p.add_argument('--tol', type=float, default=None, help='Newton tolerance (power flow and every solve after it)')
    p.add_argument('--max-iter', type=int, default=None, help='maximum Newton iterations per solve')
    p.add_argument('--out', type=Path, default=None, help='output file')
    p.add_argument('--format', choices=('json', 'csv'), default=None, help='output format (default from --out suffix)')
    p.add_argument('--no-cache', action='store_true', help='compile models without the on-disk cache')
    p.add_argument('--profile', action='store_true', help='print the solve/update/jacobian timing split')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='symnum', description='Symbolic-numeric power system DAE toolkit')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    parser.add_argument('-v', '--verbose', action='count', default=0, help='-v for INFO, -vv for DEBUG')
    sub = parser.add_subparsers(dest='command', required=True)

    pf = sub.add_parser('pf', help='power flow')
    _case_options(pf)
    pf.add_argument('--flat-start', action='store_true', help='start from v=1, a=0')
    pf.add_argument('--dishonest', action='store_true', help='reuse the first Jacobian factorization')

    tds = sub.add_parser('tds', help='time-domain simulation')
    _case_options(tds)
    tds.add_argument('--h', type=float, default=None, help='step size in seconds (default 1/30)')
    tds.add_argument('--tmax', type=float, default=None, help='end time in seconds')
    tds.add_argument('--event', action='append', default=[], metavar='toggle:<model>:<idx>:<time>',
                     help='status toggle event (repeatable)')
    tds.add_argument('--no-pq2z', action='store_true', help='keep PQ loads as constant power')

    eig = sub.add_parser('eig', help='small-signal eigenvalue analysis')
    _case_options(eig)

    doc = sub.add_parser('doc', help='export model reference documents')
    doc.add_argument('--out', type=Path, default=Path('docs/models'), help='output directory')
    doc.add_argument('--no-cache', action='store_true', help='compile models without the on-disk cache')

    selftest = sub.add_parser('selftest', help='compile the built-in models and solve the bundled case')
    selftest.add_argument('--no-cache', action='store_true', help='compile models without the on-disk cache')
    return parser


# ============================================================================
# Helpers
# ============================================================================

def _configure_logging(verbosity: int) -> None:
    level = logging.WARNING if verbosity == 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(level=level, format='%(levelname)s %(name)s: %(message)s')


def _cache(args) -> ModelCache:
    return ModelCache(enabled=not args.no_cache)


def _resolve_case(text: str):
    path = Path(text)
    if text.startswith(('http://', 'https://')) or path.exists():
        return load_case(text)
    if path.suffix == '':
        return load_case(bundled_case(text))
    raise CaseError(f"Case file not found: {text}")


def _output_format(args) -> str:
    if args.format:
        return args.format
    if args.out is not None and args.out.suffix == '.csv':
        return 'csv'
    return 'json'


def _check_output_flags(parser: argparse.ArgumentParser, args) -> None:
    """Reject --format/--out combinations that would write the wrong file type."""
    if not hasattr(args, 'format'):
        return
    suffix = args.out.suffix.lstrip('.') if args.out is not None else ''
    if args.format and suffix in ('json', 'csv') and suffix != args.format:
        parser.error(f"--format {args.format} conflicts with --out {args.out}")
    if args.command == 'pf' and _output_format(args) == 'csv':
        parser.error('power flow results are written as JSON only')


def _print_profile(result: RoutineResult, system) -> None:
    print('')
    print(f"{'Phase':<18}{'Time (s)':>12}")
    for label, key in (('Solve equations', 'solve'), ('Update equations', 'update'), ('Build Jacobians', 'jacobian')):
        print(f"{label:<18}{result.timings.get(key, 0.0):>12.6f}")
    for scope, pattern in system.patterns.items():
        print(f"Jacobian nnz ({scope}): {pattern.nnz}")


def _write(result: RoutineResult, args) -> None:
    if args.out is None:
        return
    fmt = _output_format(args)
    if fmt == 'csv':
        if result.routine == 'eig':
            write_eigen_csv(result.extra['report'], args.out)
        else:
            write_tds_csv(result, args.out)
    else:
        write_result_json(result, args.out)
    print(f"Wrote {args.out}")


def _pf_config(args) -> PowerFlowConfig:
    values = {}
    if args.tol is not None:
        values['tol'] = args.tol
    if args.max_iter is not None:
        values['max_iter'] = args.max_iter
    if getattr(args, 'flat_start', False):
        values['flat_start'] = True
    if getattr(args, 'dishonest', False):
        values['dishonest'] = True
    return PowerFlowConfig(**values)


# ============================================================================
# Commands
# ============================================================================

def cmd_pf(args) -> int:
    system = system_from_case(_resolve_case(args.case), cache=_cache(args))
    result = solve_power_flow(system, _pf_config(args))
    print(f"Power flow converged in {result.iterations} iterations (max |g| = {result.mismatches[-1]:.3e})")
    bus = system.tables['Bus']
    print(f"{'Bus':>8}{'v (p.u.)':>14}{'a (rad)':>14}")
    for idx, v, a in zip(bus.idx, bus.v['v'], bus.v['a']):
        print(f"{str(idx):>8}{v:>14.6f}{a:>14.6f}")
    if args.profile:
        _print_profile(result, system)
    _write(result, args)
    return EXIT_OK


def cmd_tds(args) -> int:
    events = [Event.parse(text) for text in args.event]
    values = {'events': events, 'pq2z': not args.no_pq2z}
    if args.h is not None:
        values['h'] = args.h
    if args.tmax is not None:
        values['t_end'] = args.tmax
    if args.tol is not None:
        values['tol'] = args.tol
    if args.max_iter is not None:
        values['max_iter'] = args.max_iter
    cfg = TdsConfig(**values)

    system = system_from_case(_resolve_case(args.case), cache=_cache(args))
    solve_power_flow(system, _pf_config(args))
    mismatch = initialize_dynamics(system, pq2z=cfg.pq2z)
    print(f"Initialized dynamics (max residual {mismatch:.3e})")
    result = run_tds(system, cfg)
    print(f"Simulated {result.t[-1]:.4f} s in {len(result.t) - 1} steps ({result.iterations} Newton iterations)")
    if args.profile:
        _print_profile(result, system)
    _write(result, args)
    return EXIT_OK


def cmd_eig(args) -> int:
    system = system_from_case(_resolve_case(args.case), cache=_cache(args))
    solve_power_flow(system, _pf_config(args))
    initialize_dynamics(system)
    result = run_eigenvalues(system)
    report = result.extra['report']
    print(f"{'Eigenvalue':>30}{'Damping (%)':>14}")
    for lam, zeta in zip(report.eigenvalues, report.damping):
        text = f"{lam.real:.4f} {'+' if lam.imag >= 0 else '-'} j{abs(lam.imag):.4f}"
        print(f"{text:>30}{100 * zeta:>14.2f}")
    if args.profile:
        _print_profile(result, system)
    _write(result, args)
    return EXIT_OK


def cmd_doc(args) -> int:
    written = export_model_docs(compile_builtin(_cache(args)), args.out)
    print(f"Wrote {len(written)} documents to {args.out}")
    return EXIT_OK


def cmd_selftest(args) -> int:
    models = compile_builtin(_cache(args))
    shunt = next(c for c in models if c.name == 'Shunt')
    if len(shunt.jacobians['gy']) != 2:
        raise ModelDefinitionError('Shunt must yield two gy triplets')
    system = system_from_case(load_case(bundled_case('kundur')), models=models)
    result = solve_power_flow(system, PowerFlowConfig(tol=1e-10))
    mismatch = initialize_dynamics(system)
    if mismatch > 1e-8:
        raise ConvergenceError(f"Initialization residual {mismatch:.3e} above 1e-8")
    eig = run_eigenvalues(system)
    ok = bool(np.all(np.abs(eig.extra['report'].damping) <= 1.0 + 1e-12))
    print(f"Compiled {len(models)} models; power flow in {result.iterations} iterations; "
          f"init residual {mismatch:.1e}; {len(eig.t)} eigenvalues")
    print('selftest passed' if ok else 'selftest FAILED')
    return EXIT_OK if ok else EXIT_INTERNAL


COMMANDS = {
    'pf': cmd_pf,
    'tds': cmd_tds,
    'eig': cmd_eig,
    'doc': cmd_doc,
    'selftest': cmd_selftest,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _check_output_flags(parser, args)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else EXIT_USAGE
    _configure_logging(args.verbose)

    try:
        return COMMANDS[args.command](args)
    except (CaseError, ExprSyntaxError, ModelDefinitionError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ConvergenceError as e:
        print(f"convergence failure: {e}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except Exception as e:
        logger.debug("Internal error", exc_info=True)
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == '__main__':
    sys.exit(main())
