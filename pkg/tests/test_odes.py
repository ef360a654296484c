"""Backward coefficient systems, the matrix-exponential oracle, and V.

Single-regime closed forms used as frozen oracles (r=0.05, theta=0.2, T=1,
d=1):

    phi(t) = -2 exp((2r - theta^2)(T - t))   -> phi(0) = -2 e^{0.06}
    psi(t) = 2 d exp((r - theta^2)(T - t))   -> psi(0) = 2 e^{0.01}
    chi(t) = -d^2 exp(-theta^2 (T - t))      -> chi(0) = -e^{-0.04}
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rscontrol import (
    DimensionMismatchError,
    NonFiniteSolutionError,
    TimeOutOfRangeError,
    feynman_kac_oracle,
    make_market,
    phi_psi_from_oracle,
    solve_phi_psi_chi,
    validate_generator,
    value_function,
)
from rscontrol.chain import integrate_rates, sample_path

PHI0 = -2.1236730930907193  # -2 e^{0.06}
PSI0 = 2.020100334168336  # 2 e^{0.01}
CHI0 = -0.9607894391523232  # -e^{-0.04}


def test_single_regime_closed_forms(single_sol):
    phi, psi, chi = single_sol.interp(0.0)
    assert abs(phi[0] - PHI0) < 1e-8
    assert abs(psi[0] - PSI0) < 1e-8
    assert abs(chi[0] - CHI0) < 1e-8


def test_single_regime_closed_forms_along_the_grid(single_sol):
    for t in (0.1, 0.33, 0.5, 0.99):
        tau = 1.0 - t
        phi, psi, chi = single_sol.interp(t)
        assert abs(phi[0] + 2.0 * math.exp(0.06 * tau)) < 1e-7
        assert abs(psi[0] - 2.0 * math.exp(0.01 * tau)) < 1e-7
        assert abs(chi[0] + math.exp(-0.04 * tau)) < 1e-7


def test_terminal_conditions_exact(single_sol, tworeg_sol):
    for sol, d in ((single_sol, 1.0), (tworeg_sol, 1.2)):
        assert np.all(sol.phi[-1] == -2.0)
        assert np.all(sol.psi[-1] == 2.0 * d)
        assert np.all(sol.chi[-1] == -d * d)


def test_phi_negative_psi_positive(tworeg_sol):
    assert np.all(tworeg_sol.phi < 0.0)
    assert np.all(tworeg_sol.psi > 0.0)


def test_identical_regimes_reduce_to_single(single_sol, tworeg_gen):
    twin = make_market(
        horizon=1.0,
        initial_wealth=0.8,
        rates=[0.05, 0.05],
        drifts=[0.11, 0.11],
        vols=[0.3, 0.3],
    )
    sol = solve_phi_psi_chi(twin, tworeg_gen, 1.0, 200)
    for t in (0.0, 0.4, 0.8):
        phi, psi, _ = sol.interp(t)
        ref_phi, ref_psi, _ = single_sol.interp(t)
        assert abs(phi[0] - phi[1]) < 1e-10
        assert abs(phi[0] - ref_phi[0]) < 1e-10
        assert abs(psi[0] - ref_psi[0]) < 1e-10


def test_two_regime_solution_matches_oracle(tworeg_market, tworeg_gen, tworeg_sol):
    for t in (0.0, 0.25, 0.7):
        phi_o, psi_o = phi_psi_from_oracle(tworeg_market, tworeg_gen, 1.2, t)
        phi, psi, _ = tworeg_sol.interp(t)
        assert np.max(np.abs(phi - phi_o)) < 1e-8
        assert np.max(np.abs(psi - psi_o)) < 1e-8


def test_solver_input_validation(single_market, tworeg_gen, single_gen):
    with pytest.raises(DimensionMismatchError):
        solve_phi_psi_chi(single_market, tworeg_gen, 1.0)
    with pytest.raises(ValueError):
        solve_phi_psi_chi(single_market, single_gen, 1.0, steps_per_cell=0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_solver_flags_overflow(single_gen):
    # growth rate ~2e9 per unit time pushes phi through the float64 ceiling
    hot = make_market(
        horizon=1.0, initial_wealth=1.0, rates=[1.0e9], drifts=[1.0e9 + 0.06], vols=[0.3]
    )
    with pytest.raises(NonFiniteSolutionError):
        solve_phi_psi_chi(hot, single_gen, 1.0, steps_per_cell=10)


@settings(max_examples=15, deadline=None)
@given(d=st.floats(0.05, 3.0))
def test_target_scaling_structure(tworeg_market, tworeg_gen, d):
    """phi is independent of d; psi is linear and chi quadratic in d.

    Doubling is exact in floating point, so the scaled solve must agree
    bitwise with scaling the base solve.
    """
    base = solve_phi_psi_chi(tworeg_market, tworeg_gen, d, 25)
    doubled = solve_phi_psi_chi(tworeg_market, tworeg_gen, 2.0 * d, 25)
    assert np.array_equal(doubled.phi, base.phi)
    assert np.array_equal(doubled.psi, 2.0 * base.psi)
    assert np.array_equal(doubled.chi, 4.0 * base.chi)


def test_zero_target_kills_psi_and_chi(tworeg_market, tworeg_gen):
    sol = solve_phi_psi_chi(tworeg_market, tworeg_gen, 0.0, 50)
    assert np.all(sol.psi == 0.0)
    assert np.all(sol.chi == 0.0)


# ---------------------------------------------------------------------------
# feynman_kac_oracle
# ---------------------------------------------------------------------------


def test_oracle_decouples_without_switching():
    gen = validate_generator(np.zeros((2, 2)))
    bp = np.array([0.0, 1.5])
    v = feynman_kac_oracle(gen, bp, np.array([[0.2, -0.4]]), 0.0, 1.5)
    assert abs(v[0] - math.exp(0.3)) < 1e-12
    assert abs(v[1] - math.exp(-0.6)) < 1e-12


def test_oracle_constant_exponent_any_generator(sym_gen):
    bp = np.array([0.0, 2.0])
    v = feynman_kac_oracle(sym_gen, bp, np.array([[0.07, 0.07]]), 0.5, 2.0)
    assert np.max(np.abs(v - math.exp(0.07 * 1.5))) < 1e-12


def test_oracle_matches_nested_monte_carlo(sym_gen):
    bp = np.array([0.0, 1.0])
    rates = np.array([[0.1, -0.1]])
    v = feynman_kac_oracle(sym_gen, bp, rates, 0.0, 1.0)
    n = 20_000
    draws = np.empty(n)
    for k in range(n):
        path = sample_path(sym_gen, 1, 1.0, seed=314, path_index=k)
        draws[k] = math.exp(integrate_rates(path, bp, rates, 1.0))
    se = draws.std(ddof=1) / math.sqrt(n)
    assert abs(draws.mean() - v[0]) < 3.0 * se


def test_oracle_interval_validation(sym_gen):
    bp = np.array([0.0, 1.0])
    rates = np.array([[0.1, -0.1]])
    from rscontrol import BadIntervalError

    with pytest.raises(BadIntervalError):
        feynman_kac_oracle(sym_gen, bp, rates, 0.8, 0.2)
    with pytest.raises(DimensionMismatchError):
        feynman_kac_oracle(sym_gen, bp, np.array([[0.1, 0.2, 0.3]]), 0.0, 1.0)


# ---------------------------------------------------------------------------
# value_function
# ---------------------------------------------------------------------------


def test_value_function_terminal_reassembles_loss(single_sol, tworeg_sol):
    assert value_function(single_sol, 1.0, 0.5, 1) == -0.25
    for x in (0.0, 0.8, 1.37):
        for i in (1, 2):
            v = value_function(tworeg_sol, 1.0, x, i)
            assert abs(v + (x - 1.2) ** 2) < 1e-14


def test_value_function_zero_at_discounted_target(single_sol):
    x_star = math.exp(-0.05)
    assert abs(value_function(single_sol, 0.0, x_star, 1)) < 1e-8


def test_value_function_log_two_market(single_gen):
    model = make_market(
        horizon=1.0,
        initial_wealth=0.0,
        rates=[0.0],
        drifts=[math.sqrt(math.log(2.0))],
        vols=[1.0],
    )
    sol = solve_phi_psi_chi(model, single_gen, 1.0, 200)
    assert abs(value_function(sol, 0.0, 0.0, 1) + 0.5) < 1e-8


def test_value_function_validates_time_and_state(single_sol):
    with pytest.raises(TimeOutOfRangeError):
        value_function(single_sol, 1.5, 0.8, 1)
    from rscontrol import StateOutOfRangeError

    with pytest.raises(StateOutOfRangeError):
        value_function(single_sol, 0.5, 0.8, 2)
