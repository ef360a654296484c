"""Acceptance gate: the nine headline guarantees, one printed line each.

Each test exercises one end-to-end guarantee at its stated tolerance and
runtime budget, prints a single PASS/FAIL line (visible under capture), and
only then asserts.  Statistical comparisons are at three standard errors
with frozen seeds.
"""

import copy
import json
import math
import time
from dataclasses import replace

import numpy as np

from rscontrol import (
    adjoint_closed_form,
    compare_policies,
    dual_lambda_golden,
    estimate_J,
    make_market,
    optimal_control,
    optimal_policy,
    sample_path,
    solve_frontier_point,
    solve_phi_psi_chi,
    standard_perturbations,
    transition_matrix,
    validate_generator,
    value_function,
)
from rscontrol.chain import counting_record
from rscontrol.cli import main as cli_main
from rscontrol.odes import phi_psi_from_oracle
from rscontrol.verify import (
    check_adjoint_bsde,
    check_chain_martingales,
    check_dp_connection,
    check_hamiltonian_maximum,
    check_rs_martingales,
)


def _gate(capsys, num, label, failures, elapsed, budget):
    ok = not failures and elapsed < budget
    with capsys.disabled():
        print(f"[ACCEPTANCE {num}] {label}: {'PASS' if ok else 'FAIL'} "
              f"({elapsed:.2f}s, budget {budget:.0f}s)")
    assert not failures, failures
    assert elapsed < budget, f"runtime {elapsed:.2f}s over budget {budget}s"


def test_criterion_1_ode_solver_matches_matrix_exponential_oracle(
    tworeg_market, tworeg_gen, capsys
):
    t_start = time.perf_counter()
    worst = {}
    for spc in (100, 200):
        sol = solve_phi_psi_chi(tworeg_market, tworeg_gen, 1.2, spc)
        err = 0.0
        for k, t in enumerate(sol.grid):
            phi_o, psi_o = phi_psi_from_oracle(tworeg_market, tworeg_gen, 1.2, float(t))
            err = max(
                err,
                float(np.max(np.abs(sol.phi[k] - phi_o) / np.abs(phi_o))),
                float(np.max(np.abs(sol.psi[k] - psi_o) / np.abs(psi_o))),
            )
        worst[spc] = err
    elapsed = time.perf_counter() - t_start

    failures = []
    if not worst[200] < 1e-6:
        failures.append(f"rel error {worst[200]:.3e} at 200 steps/cell >= 1e-6")
    if not worst[100] < 1e-6:
        failures.append(f"rel error {worst[100]:.3e} at 100 steps/cell >= 1e-6")
    ratio = worst[100] / worst[200]
    if not ratio >= 12.0:
        failures.append(f"error ratio 100->200 is {ratio:.2f}, need >= 12")
    _gate(capsys, 1, "ODE solver vs matrix-exponential oracle", failures, elapsed, 1.0)


def test_criterion_2_single_regime_closed_forms(single_market, single_gen, capsys):
    t_start = time.perf_counter()
    sol = solve_phi_psi_chi(single_market, single_gen, 1.0, 200)
    phi, psi, chi = sol.interp(0.0)
    u = optimal_control(sol, 0.0, 0.8, 1)
    elapsed = time.perf_counter() - t_start

    targets = [
        ("phi(0)", phi[0], -2.0 * math.exp(0.06), 1e-8),
        ("psi(0)", psi[0], 2.0 * math.exp(0.01), 1e-8),
        ("chi(0)", chi[0], -math.exp(-0.04), 1e-8),
        ("u_hat(0,0.8)", u, (0.2 / 0.3) * (math.exp(-0.05) - 0.8), 1e-6),
    ]
    failures = [
        f"{name}: {got!r} vs {want!r} (|diff|={abs(got - want):.3e} >= {tol})"
        for name, got, want, tol in targets
        if not abs(got - want) < tol
    ]
    _gate(capsys, 2, "single-regime closed forms", failures, elapsed, 1.0)


def test_criterion_3_analytic_value_vs_monte_carlo(
    single_market, single_gen, single_sol, tworeg_market, tworeg_gen, tworeg_sol, capsys
):
    est_s = estimate_J(
        single_market, single_gen, optimal_policy(), 1.0, 100_000, 4096,
        seed=2025, sol=single_sol,
    )
    j_exact = -math.exp(-0.04) * (0.8 * math.exp(0.05) - 1.0) ** 2
    est_t = estimate_J(
        tworeg_market, tworeg_gen, optimal_policy(), 1.2, 100_000, 4096,
        seed=2026, sol=tworeg_sol,
    )
    v0 = value_function(tworeg_sol, 0.0, 1.0, 1)

    failures = []
    gap_s = abs(est_s.mean - j_exact)
    if not gap_s < 3.0 * est_s.std_error:
        failures.append(f"single: |{est_s.mean} - {j_exact}| = {gap_s:.3e} "
                        f"> 3se = {3 * est_s.std_error:.3e}")
    gap_t = abs(est_t.mean - v0)
    if not gap_t < 3.0 * est_t.std_error:
        failures.append(f"two-regime: |{est_t.mean} - {v0}| = {gap_t:.3e} "
                        f"> 3se = {3 * est_t.std_error:.3e}")
    if not est_s.elapsed < 60.0:
        failures.append(f"single-regime run took {est_s.elapsed:.1f}s")
    _gate(capsys, 3, "analytic value vs Monte Carlo",
          failures, max(est_s.elapsed, est_t.elapsed), 60.0)


def test_criterion_4_optimal_policy_dominates_perturbations(
    tworeg_market, tworeg_gen, tworeg_sol, capsys
):
    perturbations = standard_perturbations(tworeg_market.horizon)
    comps = compare_policies(
        tworeg_market, tworeg_gen, optimal_policy(), perturbations, 1.2,
        100_000, 2048, 404, sol=tworeg_sol,
    )
    failures = []
    for spec, c in zip(perturbations, comps):
        if not c.mean >= 0.0:
            failures.append(f"{spec.describe()}: paired difference {c.mean:.3e} < 0")
        if not c.mean > 3.0 * c.std_error:
            failures.append(f"{spec.describe()}: difference {c.mean:.3e} "
                            f"not significant (3se = {3 * c.std_error:.3e})")
    _gate(capsys, 4, "optimal policy dominates perturbations",
          failures, comps[0].elapsed, 120.0)


def test_criterion_5_maximum_principle_identities(tworeg_market, tworeg_sol, capsys):
    t_start = time.perf_counter()
    ham = check_hamiltonian_maximum(tworeg_sol, tworeg_market)
    dps = check_dp_connection(tworeg_sol, tworeg_market)
    xs = np.linspace(0.5, 1.5, 41)
    terminal_err = max(
        abs(adjoint_closed_form(tworeg_sol, 1.0, float(x), i).p - (-2.0 * (float(x) - 1.2)))
        for x in xs
        for i in (1, 2)
    )
    elapsed = time.perf_counter() - t_start

    failures = []
    if not ham.statistic < 1e-10:
        failures.append(f"Hamiltonian u-coefficient {ham.statistic:.3e} >= 1e-10")
    if terminal_err != 0.0:
        failures.append(f"adjoint terminal condition off by {terminal_err:.3e}")
    for r in dps:
        bound = 1e-6 if r.check_name == "dp_vx_finite_difference" else 1e-10
        if not r.statistic < bound:
            failures.append(f"{r.check_name}: {r.statistic:.3e} >= {bound}")
    _gate(capsys, 5, "maximum-principle identities", failures, elapsed, 1.0)


def test_criterion_6_martingale_suite_with_negative_controls(
    tworeg_market, tworeg_gen, tworeg_sol, capsys
):
    t_start = time.perf_counter()
    reports = []
    reports += check_chain_martingales(tworeg_gen, 1.0, 100_000, 11, i0=1)
    reports += check_rs_martingales(
        tworeg_sol, tworeg_market, tworeg_gen, 100_000, 23, i0=1
    )
    reports += check_adjoint_bsde(
        tworeg_sol, tworeg_market, tworeg_gen, 100_000, 4096, 37, i0=1
    )
    psi_c = tworeg_sol.psi.copy()
    psi_c[:, 0] += 0.01
    corrupted = check_hamiltonian_maximum(
        tworeg_sol, tworeg_market, policy_sol=replace(tworeg_sol, psi=psi_c)
    )
    reversed_r = check_rs_martingales(
        tworeg_sol, tworeg_market, tworeg_gen, 20_000, 61, i0=1, reverse_time=True
    )[0]
    elapsed = time.perf_counter() - t_start

    failures = [
        f"{r.check_name}: {r.statistic:.3e} > {r.threshold:.3e} ({r.detail})"
        for r in reports
        if not r.passed
    ]
    if corrupted.passed:
        failures.append("corrupted-psi control went undetected")
    if reversed_r.passed:
        failures.append("time-reversed R control went undetected")
    _gate(capsys, 6, "martingale suite + negative controls", failures, elapsed, 120.0)


def test_criterion_7_chain_law(tworeg_gen, sym_gen, capsys):
    t_start = time.perf_counter()
    n = 100_000
    hits = np.zeros(2)
    for k in range(n):
        hits[sample_path(tworeg_gen, 1, 1.0, 515, k).state_at(1.0) - 1] += 1
    tv = 0.5 * float(np.sum(np.abs(hits / n - transition_matrix(tworeg_gen, 1.0)[0])))

    n12 = np.empty(n)
    for k in range(n):
        rec = counting_record(sample_path(sym_gen, 1, 1.0, 516, k), sym_gen)
        n12[k] = rec.counts[-1, 0, 1]
    mean_n12 = float(np.mean(n12))
    se_n12 = float(np.std(n12, ddof=1) / math.sqrt(n))
    expected_n12 = 0.5 + 0.25 * (1.0 - math.exp(-2.0))  # int_0^1 P(alpha=1) dt
    elapsed = time.perf_counter() - t_start

    failures = []
    if not tv < 0.02:
        failures.append(f"total variation {tv:.4f} >= 0.02")
    if not abs(mean_n12 - expected_n12) < 3.0 * se_n12:
        failures.append(f"E N_12(1): {mean_n12:.6f} vs {expected_n12:.6f} "
                        f"beyond 3se = {3 * se_n12:.2e}")
    _gate(capsys, 7, "chain law (terminal distribution, jump counts)",
          failures, elapsed, 30.0)


def test_criterion_8_frontier(tworeg_market, tworeg_gen, capsys):
    t_start = time.perf_counter()
    log2_market = make_market(
        horizon=1.0, initial_wealth=1.0, rates=[0.0],
        drifts=[math.sqrt(math.log(2.0))], vols=[1.0],
    )
    gen1 = validate_generator([[0.0]])
    pt = solve_frontier_point(
        log2_market, gen1, 1.5, n_paths=100_000, n_steps=2048, seed=606
    )
    pt2 = solve_frontier_point(
        tworeg_market, tworeg_gen, 1.25, n_paths=100_000, n_steps=2048, seed=607
    )
    lam_g1 = dual_lambda_golden(log2_market, gen1, 1.5)
    lam_g2 = dual_lambda_golden(tworeg_market, tworeg_gen, 1.25)
    elapsed = time.perf_counter() - t_start

    failures = []
    if not abs(pt.min_variance - 0.25) < 1e-8:
        failures.append(f"analytic min variance {pt.min_variance!r} vs 0.25")
    if not abs(pt.sim_variance - 0.25) < 3.0 * pt.sim_variance_std_error:
        failures.append(f"simulated variance {pt.sim_variance:.6f} vs 0.25 "
                        f"beyond 3se = {3 * pt.sim_variance_std_error:.2e}")
    if not abs(pt2.achieved_mean - 1.25) < 3.0 * pt2.mean_std_error:
        failures.append(f"achieved mean {pt2.achieved_mean:.6f} vs 1.25 "
                        f"beyond 3se = {3 * pt2.mean_std_error:.2e}")
    for lam, lam_gold, label in ((pt.lambda_star, lam_g1, "single"),
                                 (pt2.lambda_star, lam_g2, "two-regime")):
        if not abs(lam - lam_gold) < 1e-8:
            failures.append(f"{label} lambda*: closed form {lam!r} vs golden {lam_gold!r}")
    _gate(capsys, 8, "mean-variance frontier", failures, elapsed, 60.0)


def test_criterion_9_byte_identical_artifacts(tworeg_config_dict, tmp_path, capsys):
    t_start = time.perf_counter()
    base = copy.deepcopy(tworeg_config_dict)
    base["numerics"].update(n_paths=4096, n_steps=128)
    blobs = {}
    for tag, workers in (("w1", 1), ("w1-again", 1), ("w2", 2), ("w8", 8)):
        cfg = copy.deepcopy(base)
        cfg["numerics"]["workers"] = workers
        cfg["output"]["directory"] = str(tmp_path / tag)
        cfg_path = tmp_path / f"{tag}.json"
        cfg_path.write_text(json.dumps(cfg))
        assert cli_main(["evaluate", str(cfg_path)]) == 0
        blobs[tag] = (tmp_path / tag / "evaluate.csv").read_bytes()
    elapsed = time.perf_counter() - t_start

    failures = []
    if blobs["w1"] != blobs["w1-again"]:
        failures.append("rerun with identical config differs")
    for tag in ("w2", "w8"):
        if blobs[tag] != blobs["w1"]:
            failures.append(f"{tag} differs from single-worker output")
    _gate(capsys, 9, "byte-identical artifacts across reruns and workers",
          failures, elapsed, 60.0)
