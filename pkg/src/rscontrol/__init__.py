"""Stochastic control toolkit for regime-switching diffusion markets.

Solves quadratic terminal-loss and mean-variance portfolio problems under a
continuous-time Markov regime chain, provides the closed-form optimal
feedback controls and adjoint processes, and ships a Monte Carlo engine
that verifies the optimality conditions numerically.
"""

from .chain import (
    ChainPath,
    CountingRecord,
    GeneratorMatrix,
    counting_record,
    path_stream,
    sample_path,
    transition_matrix,
    validate_generator,
)
from .control import (
    AdjointTriple,
    PolicySpec,
    adjoint_closed_form,
    compile_policy,
    constant_policy,
    hamiltonian,
    lq_hamiltonian,
    optimal_control,
    optimal_policy,
    scale_policy,
    shift_policy,
    standard_perturbations,
    table_policy,
    window_shift_policy,
)
from .errors import (
    BadIntervalError,
    ConfigError,
    DegenerateDualError,
    DimensionMismatchError,
    InvalidInitialStateError,
    MissingFieldError,
    NegativeOffDiagonalError,
    NegativeTimeError,
    NonFiniteSolutionError,
    NonSquareMatrixError,
    RowSumError,
    StateOutOfRangeError,
    TimeOutOfRangeError,
    ValidationError,
    ZeroVolatilityError,
)
from .frontier import (
    FrontierPoint,
    dual_lambda_golden,
    inner_value,
    solve_frontier_point,
)
from .market import (
    MarketModel,
    ProblemSpec,
    coefficients_at,
    load_market,
    make_market,
    quadratic_loss_problem,
)
from .odes import (
    PhiPsiChiSolution,
    feynman_kac_oracle,
    phi_psi_from_oracle,
    solve_phi_psi_chi,
    value_function,
)
from .simulate import (
    McEstimate,
    WealthPath,
    compare_policies,
    estimate_J,
    simulate_wealth,
)
from .verify import (
    CheckReport,
    check_adjoint_bsde,
    check_chain_martingales,
    check_dp_connection,
    check_dynkin,
    check_hamiltonian_maximum,
    check_integrability,
    check_rs_martingales,
    run_all_checks,
)

__version__ = "0.1.0"

__all__ = [
    "AdjointTriple",
    "BadIntervalError",
    "ChainPath",
    "CheckReport",
    "ConfigError",
    "CountingRecord",
    "DegenerateDualError",
    "DimensionMismatchError",
    "FrontierPoint",
    "GeneratorMatrix",
    "InvalidInitialStateError",
    "MarketModel",
    "McEstimate",
    "MissingFieldError",
    "NegativeOffDiagonalError",
    "NegativeTimeError",
    "NonFiniteSolutionError",
    "NonSquareMatrixError",
    "PhiPsiChiSolution",
    "PolicySpec",
    "ProblemSpec",
    "RowSumError",
    "StateOutOfRangeError",
    "TimeOutOfRangeError",
    "ValidationError",
    "WealthPath",
    "ZeroVolatilityError",
    "adjoint_closed_form",
    "check_adjoint_bsde",
    "check_chain_martingales",
    "check_dp_connection",
    "check_dynkin",
    "check_hamiltonian_maximum",
    "check_integrability",
    "check_rs_martingales",
    "coefficients_at",
    "compare_policies",
    "compile_policy",
    "constant_policy",
    "counting_record",
    "dual_lambda_golden",
    "estimate_J",
    "feynman_kac_oracle",
    "hamiltonian",
    "inner_value",
    "load_market",
    "lq_hamiltonian",
    "make_market",
    "optimal_control",
    "optimal_policy",
    "path_stream",
    "phi_psi_from_oracle",
    "quadratic_loss_problem",
    "run_all_checks",
    "sample_path",
    "scale_policy",
    "shift_policy",
    "simulate_wealth",
    "solve_frontier_point",
    "solve_phi_psi_chi",
    "standard_perturbations",
    "table_policy",
    "transition_matrix",
    "validate_generator",
    "value_function",
    "window_shift_policy",
]
