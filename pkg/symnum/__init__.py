"""symnum - Hybrid symbolic-numeric DAE toolkit for power system simulation."""

__version__ = '1.0.0'

from symnum.errors import (  # noqa: E402
    CaseError,
    ConvergenceError,
    EvaluationError,
    ExprSyntaxError,
    ModelDefinitionError,
    SingularMatrixError,
    SymnumError,
)
from symnum.models import compile_builtin, system_from_case  # noqa: E402
from symnum.numeric import System  # noqa: E402
from symnum.routines import (  # noqa: E402
    Event,
    PowerFlowConfig,
    TdsConfig,
    initialize_dynamics,
    run_eigenvalues,
    run_tds,
    solve_power_flow,
)

__all__ = [
    '__version__',
    'CaseError',
    'ConvergenceError',
    'EvaluationError',
    'Event',
    'ExprSyntaxError',
    'ModelDefinitionError',
    'PowerFlowConfig',
    'SingularMatrixError',
    'SymnumError',
    'System',
    'TdsConfig',
    'compile_builtin',
    'initialize_dynamics',
    'run_eigenvalues',
    'run_tds',
    'solve_power_flow',
    'system_from_case',
]
