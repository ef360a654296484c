"""Monte Carlo simulation of controlled wealth under regime switching.

The wealth SDE is dX = (r X + u sigma theta) dt + u sigma dW with
coefficients driven by the chain.  Discretization is Euler-Maruyama on the
*merged* grid: uniform nodes, market breakpoints, and the exact chain jump
times of each path, so regime changes take effect at the true jump instant.
Every update evaluates coefficients and the control at the cell's left
endpoint using the regime in force during the cell (previsible,
piecewise-constant controls).

Reproducibility contract: path k under master seed s draws its chain from
Philox stream (s, 2k) and its Brownian increments from stream (s, 2k+1).
Noise therefore depends only on (seed, path index, chain path), never on the
policy, the number of paths, or how blocks are scheduled across workers;
paths are aggregated in path-index order, so estimates are bit-identical for
any worker count.  Evaluating several policies in one run reuses the same
noise per path (common random numbers), which is what makes paired policy
comparisons sharp.

Draw layout per path: with S merged-grid segments shared by all paths, draw
``z[0:S]`` feeds the first sub-cell of each segment and ``z[S + m]`` feeds the
sub-cell opened by the path's m-th within-segment jump (time order).  A jump
landing exactly on a grid node splits nothing and consumes no extra draw.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .chain import (
    CHAIN_STREAM,
    NOISE_STREAM,
    ChainPath,
    GeneratorMatrix,
    _ChainSampler,
    path_stream,
)
from .control import CompiledPolicy, PolicySpec, _needs_solution, compile_policy
from .errors import InvalidInitialStateError, NonFiniteSolutionError
from .market import MarketModel
from .odes import PhiPsiChiSolution, solve_phi_psi_chi

__all__ = [
    "McEstimate",
    "WealthPath",
    "simulate_wealth",
    "estimate_J",
    "compare_policies",
]

_BLOCK = 2048  # fixed block size; independent of n_paths and worker count
_CHUNK = 256  # segments per bulk table gather in the Euler stage


@dataclass(frozen=True)
class McEstimate:
    """Monte Carlo estimate with its standard error (sample std / sqrt(n))."""

    mean: float
    std_error: float
    n_paths: int
    seed: int
    elapsed: float


@dataclass(frozen=True)
class WealthPath:
    """One simulated path on its merged grid.

    ``times`` has n_cells+1 nodes; per-cell arrays hold the control, the
    Brownian increment, and the (1-based) regime in force on each cell.
    """

    times: np.ndarray
    wealth: np.ndarray
    controls: np.ndarray
    brownian_increments: np.ndarray
    regimes: np.ndarray
    chain: ChainPath


def _euler_step(x, u, r, sig, th, dt, dw):
    """Canonical update; identical expression on arrays and scalars."""
    return x + (r * x + u * sig * th) * dt + u * sig * dw


# ---------------------------------------------------------------------------
# shared grid geometry and coefficient tables
# ---------------------------------------------------------------------------


class _SimGrid:
    """Segment decomposition shared by all paths of a run."""

    def __init__(self, model: MarketModel, n_steps: int):
        if n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {n_steps}")
        uniform = np.linspace(0.0, model.horizon, n_steps + 1)
        self.bounds = np.unique(np.concatenate([uniform, model.breakpoints]))
        self.n_seg = self.bounds.shape[0] - 1
        self.lens = np.diff(self.bounds)
        self.sqrt_lens = np.sqrt(self.lens)
        cells = np.searchsorted(model.breakpoints, self.bounds[:-1], side="right") - 1
        self.cell_of_seg = np.clip(cells, 0, model.num_cells - 1)
        self.r_seg = model.rates[self.cell_of_seg]  # (S, D)
        self.sig_seg = model.vols[self.cell_of_seg]
        theta = (model.drifts - model.rates) / model.vols
        self.th_seg = theta[self.cell_of_seg]


def _policy_tables(policies: list[CompiledPolicy], grid: _SimGrid):
    """Per-segment affine (intercept, slope) tables; None for table policies."""
    tables = []
    for pol in policies:
        if not pol.is_affine:
            tables.append(None)
            continue
        d = pol.model.num_states
        c0 = np.empty((grid.n_seg, d))
        c1 = np.empty((grid.n_seg, d))
        for s in range(grid.n_seg):
            c0[s], c1[s] = pol.coeffs(float(grid.bounds[s]))
        tables.append((c0, c1))
    return tables


def _semigroup_tables(model: MarketModel, gen: GeneratorMatrix, d: float, grid: _SimGrid):
    """phi and psi at every grid bound by exact per-segment propagation.

    Within a segment the exponent rates are constant, so stepping the
    semigroup with one matrix exponential per segment evaluates the backward
    systems at machine precision on the simulation nodes.
    """
    g = gen.rates
    n, ds = grid.n_seg, model.num_states
    theta = (model.drifts - model.rates) / model.vols
    c2 = 2.0 * model.rates - theta * theta
    c1 = model.rates - theta * theta
    phi = np.empty((n + 1, ds))
    psi = np.empty((n + 1, ds))
    phi[n] = -2.0
    psi[n] = 2.0 * d
    for s in range(n - 1, -1, -1):
        k = grid.cell_of_seg[s]
        dt = grid.lens[s]
        phi[s] = expm((g + np.diag(c2[k])) * dt) @ phi[s + 1]
        psi[s] = expm((g + np.diag(c1[k])) * dt) @ psi[s + 1]
    return phi, psi


class _AdjointTables:
    """Per-bound adjoint ingredients for the residual accumulators."""

    def __init__(self, model, gen, d, grid: _SimGrid, sol: PhiPsiChiSolution):
        g = gen.rates
        self.phi, self.psi = _semigroup_tables(model, gen, d, grid)
        self.gphi = self.phi @ g.T
        self.gpsi = self.psi @ g.T
        # eta quadratic contractions: sum_j g_ij eta_ij^2 = A2 x^2 + A1 x + A0
        dphi = self.phi[:, None, :] - self.phi[:, :, None]  # [s, i, j] = phi_j - phi_i
        dpsi = self.psi[:, None, :] - self.psi[:, :, None]
        w = g[None, :, :]
        self.qa2 = np.einsum("sij,sij->si", w * dphi, dphi)
        self.qa1 = 2.0 * np.einsum("sij,sij->si", w * dphi, dpsi)
        self.qa0 = np.einsum("sij,sij->si", w * dpsi, dpsi)
        # Second-order drift correction for the optimal policy: the Euler
        # update's conditional mean is exact only to O(dt^2), which leaves a
        # deterministic O(dt) bias in summed martingale residuals -- far above
        # Monte Carlo resolution.  Adding (wa + wb*x)*dt^2 makes the mean flow
        # third-order accurate, pushing the summed bias to O(dt^2).
        r_s, th_s = grid.r_seg, grid.th_seg
        phi_l, psi_l = self.phi[:-1], self.psi[:-1]
        c2s, c1s = 2.0 * r_s - th_s * th_s, r_s - th_s * th_s
        self.phi_tl = -c2s * phi_l - self.gphi[:-1]
        self.psi_tl = -c1s * psi_l - self.gpsi[:-1]
        self.phi_tr = -c2s * self.phi[1:] - self.gphi[1:]
        self.psi_tr = -c1s * self.psi[1:] - self.gpsi[1:]
        rho = psi_l / phi_l
        rho_t = (self.psi_tl * phi_l - psi_l * self.phi_tl) / (phi_l * phi_l)
        th2 = th_s * th_s
        self.wa = -0.5 * th2 * (rho_t + (r_s - th2) * rho)
        self.wb = 0.5 * (r_s - th2) ** 2
        # Collapsed per-cell residual coefficients: apart from the
        # martingale-increment term, the trapezoid residual of one cell is
        # affine in (x_s, x_{s+1}), so three gathered rows replace the full
        # term-by-term evaluation in the hot loop.
        half = 0.5 * grid.lens[:, None]
        b0, b1 = psi_l, self.psi[1:]
        c0, c1 = self.gphi[:-1], self.gphi[1:]
        d0, d1 = self.gpsi[:-1], self.gpsi[1:]
        self.rl0 = (b1 - b0) + half * (r_s * (b0 + b1) + d0 + d1)
        self.rl1 = -phi_l + half * (r_s * phi_l + c0)
        self.rl2 = self.phi[1:] + half * (r_s * self.phi[1:] + c1)
        self.bounds = grid.bounds
        self.sol = sol
        self.g = g

    def interp_rows(self, t: float):
        phi, psi, _ = self.sol.interp(t)
        return phi, psi, self.g @ phi, self.g @ psi

    def hermite_rows(self, s: int, t: float):
        """phi/psi rows inside segment s by cubic Hermite between exact bounds.

        Both endpoint values (semigroup tables) and endpoint slopes (from the
        backward systems) are exact, so the interpolation error is ~h^4 --
        needed because regime-jump residual terms see interpolation errors of
        the two regimes with opposite signs, without cancellation.
        """
        b0, b1 = float(self.bounds[s]), float(self.bounds[s + 1])
        h = b1 - b0
        u = (t - b0) / h
        u2 = u * u
        u3 = u2 * u
        h00 = 2.0 * u3 - 3.0 * u2 + 1.0
        h10 = (u3 - 2.0 * u2 + u) * h
        h01 = -2.0 * u3 + 3.0 * u2
        h11 = (u3 - u2) * h
        phi = h00 * self.phi[s] + h10 * self.phi_tl[s] + h01 * self.phi[s + 1] + h11 * self.phi_tr[s]
        psi = h00 * self.psi[s] + h10 * self.psi_tl[s] + h01 * self.psi[s + 1] + h11 * self.psi_tr[s]
        return phi, psi, self.g @ phi, self.g @ psi


class _ValueTables:
    """V and its pieces at grid bounds, from the solved coefficient triple."""

    def __init__(self, gen, grid: _SimGrid, sol: PhiPsiChiSolution):
        n = grid.n_seg
        ds = sol.num_states
        g = gen.rates
        self.phi = np.empty((n + 1, ds))
        self.psi = np.empty((n + 1, ds))
        self.chi = np.empty((n + 1, ds))
        self.phi_t = np.empty((n, ds))
        self.psi_t = np.empty((n, ds))
        self.chi_t = np.empty((n, ds))
        for s in range(n + 1):
            self.phi[s], self.psi[s], self.chi[s] = sol.interp(float(grid.bounds[s]))
        for s in range(n):
            self.phi_t[s], self.psi_t[s], self.chi_t[s] = sol.derivatives(float(grid.bounds[s]))
        self.gphi = self.phi @ g.T
        self.gpsi = self.psi @ g.T
        self.gchi = self.chi @ g.T
        self.sol = sol


# ---------------------------------------------------------------------------
# per-path chain realization against the shared grid
# ---------------------------------------------------------------------------


class _PathChain:
    """A sampled chain path resolved against the segment grid (0-based states)."""

    __slots__ = ("jump_times", "jump_states", "interior_seg", "final_state", "n_interior")

    def __init__(self, bounds: np.ndarray, state0: int, times: np.ndarray, states: np.ndarray):
        self.jump_times = times
        self.jump_states = states
        self.final_state = state0 if times.shape[0] == 0 else int(states[-1])
        if times.shape[0]:
            pos = np.searchsorted(bounds, times, side="right") - 1
            on_node = times == bounds[pos]
            self.interior_seg = np.where(on_node, -1, pos)  # -1: no split needed
        else:
            self.interior_seg = np.empty(0, dtype=np.int64)
        self.n_interior = int(np.count_nonzero(self.interior_seg >= 0))


def _fill_regimes(r_row: np.ndarray, pc: _PathChain, bounds: np.ndarray) -> None:
    """Regime in force at the start of each segment (row of the R matrix)."""
    for tau, new, seg in zip(pc.jump_times, pc.jump_states, pc.interior_seg):
        if seg < 0:  # jump exactly on a node: takes effect from that node on
            pos = int(np.searchsorted(bounds, tau, side="right")) - 1
            r_row[pos:] = new
        else:
            r_row[seg + 1 :] = new


# ---------------------------------------------------------------------------
# block engine
# ---------------------------------------------------------------------------


class _RunContext:
    def __init__(
        self,
        model: MarketModel,
        gen: GeneratorMatrix,
        policies: list[CompiledPolicy],
        *,
        i0: int,
        x0: float,
        n_steps: int,
        seed: int,
        accumulate: frozenset,
        sol: PhiPsiChiSolution | None,
        d: float | None,
        t_end: float | None,
    ):
        self.model = model
        self.gen = gen
        self.policies = policies
        self.i0 = i0
        self.x0 = float(x0)
        self.seed = seed
        self.grid = _SimGrid(model, n_steps)
        self.tables = _policy_tables(policies, self.grid)
        self.sampler = _ChainSampler(gen)
        self.accumulate = accumulate
        self.weak2 = "bsde" in accumulate
        self.adj = None
        self.val = None
        self.t_end_idx = None
        if "bsde" in accumulate or "integrability" in accumulate:
            self.adj = _AdjointTables(model, gen, d, self.grid, sol)
        if self.weak2 and policies and policies[0].spec.kind == "optimal":
            # Feed the residual run the same phi/psi representation in the
            # control as in the coefficient rows.  The ODE interpolant is
            # only solver-tolerance accurate; the ~1e-9 control offset it
            # carries would otherwise bias the summed residual mean by a
            # step-count-independent amount.
            th, sg = self.grid.th_seg, self.grid.sig_seg
            c1 = -th / sg
            c0 = c1 * (self.adj.psi[:-1] / self.adj.phi[:-1])
            self.tables[0] = (c0, c1)
        if "dynkin" in accumulate:
            self.val = _ValueTables(gen, self.grid, sol)
            idx = np.nonzero(np.abs(self.grid.bounds - t_end) <= 1e-12)[0]
            if idx.shape[0] == 0:
                raise ValueError(f"t_end={t_end} is not a grid node")
            self.t_end_idx = int(idx[0])
        self.d = d


class _BlockOut:
    """Per-block slices of the run outputs (views into shared arrays)."""

    def __init__(self, arts: "_RunArtifacts", lo: int, hi: int):
        self.x_final = arts.x_final[:, lo:hi]
        self.alpha_final = arts.alpha_final[lo:hi]
        self.n_jumps = arts.n_jumps[lo:hi]
        self.bsde_sum = None if arts.bsde_sum is None else arts.bsde_sum[lo:hi]
        self.bsde_sq = None if arts.bsde_sq is None else arts.bsde_sq[lo:hi]
        self.dynkin_int = None if arts.dynkin_int is None else arts.dynkin_int[lo:hi]
        self.dynkin_vend = None if arts.dynkin_vend is None else arts.dynkin_vend[lo:hi]
        self.integ = None if arts.integ is None else arts.integ[:, lo:hi]


@dataclass
class _RunArtifacts:
    x_final: np.ndarray  # (P, n_paths)
    alpha_final: np.ndarray  # (n_paths,), 1-based
    n_jumps: np.ndarray  # (n_paths,)
    n_segments: int = 0
    bsde_sum: np.ndarray | None = None
    bsde_sq: np.ndarray | None = None  # per-path sum of squared cell residuals
    bsde_terminal_gap: float = 0.0
    dynkin_int: np.ndarray | None = None
    dynkin_vend: np.ndarray | None = None
    integ: np.ndarray | None = None  # (3, n_paths)


def _process_block(ctx: _RunContext, lo: int, hi: int, out: _BlockOut) -> float:
    grid = ctx.grid
    model = ctx.model
    bounds, lens, sqrt_lens = grid.bounds, grid.lens, grid.sqrt_lens
    n_seg = grid.n_seg
    n_pol = len(ctx.policies)
    nb = hi - lo
    i0_0 = ctx.i0 - 1

    # --- chain stage -------------------------------------------------------
    chains: list[_PathChain] = []
    regimes = np.full((nb, n_seg), i0_0, dtype=np.int16)
    jump_groups: dict[int, list] = {}
    max_extra = 0
    for p in range(nb):
        rng = path_stream(ctx.seed, lo + p, CHAIN_STREAM)
        times, states = ctx.sampler.sample(rng, i0_0, model.horizon)
        pc = _PathChain(bounds, i0_0, times, states)
        chains.append(pc)
        if times.shape[0]:
            _fill_regimes(regimes[p], pc, bounds)
        max_extra = max(max_extra, pc.n_interior)
        m = 0
        run_seg, run = -1, None
        for tau, new, seg in zip(pc.jump_times, pc.jump_states, pc.interior_seg):
            if seg < 0:
                continue
            z_idx = n_seg + m
            m += 1
            if seg != run_seg:
                run = []
                jump_groups.setdefault(int(seg), []).append((p, run))
                run_seg = seg
            run.append((float(tau), int(new), z_idx))
        out.n_jumps[p] = times.shape[0]
        out.alpha_final[p] = pc.final_state + 1

    # --- noise stage -------------------------------------------------------
    z = np.empty((nb, n_seg + max_extra))
    for p in range(nb):
        rng = path_stream(ctx.seed, lo + p, NOISE_STREAM)
        need = n_seg + chains[p].n_interior
        rng.standard_normal(out=z[p, :need])

    # --- Euler stage -------------------------------------------------------
    x = [np.full(nb, ctx.x0) for _ in range(n_pol)]
    acc = ctx.accumulate
    want_bsde = "bsde" in acc and out.bsde_sum is not None
    want_dyn = "dynkin" in acc and out.dynkin_int is not None
    want_integ = "integrability" in acc and out.integ is not None
    if want_bsde:
        res = np.zeros(nb)
        res_sq = np.zeros(nb)
        adj = ctx.adj
    if want_dyn:
        dint = np.zeros(nb)
        val = ctx.val
    if want_integ:
        integ = np.zeros((3, nb))
        adj = ctx.adj

    # The regime and draw matrices are path-major, so reading one segment's
    # column would touch one cache line per path; transposing a chunk at a
    # time amortizes that into contiguous rows.  Coefficient rows are then
    # gathered per segment with those contiguous index vectors, and the cell
    # residual uses the collapsed affine form rl0 + rl1*x0 + rl2*x1 - q*dW
    # to keep the vector-operation count per segment small.
    for cs in range(0, n_seg, _CHUNK):
        ce = min(cs + _CHUNK, n_seg)
        regsT = regimes[:, cs:ce].T.astype(np.intp)
        dwC = z[:, cs:ce].T * sqrt_lens[cs:ce, None]
        for s in range(cs, ce):
            c = s - cs
            reg = regsT[c]
            dw = dwC[c]
            t0 = float(bounds[s])
            dt = float(lens[s])
            r_v = grid.r_seg[s][reg]
            sg_v = grid.sig_seg[s][reg]
            th_v = grid.th_seg[s][reg]
            us = []
            xn = []
            for k_pol in range(n_pol):
                tab = ctx.tables[k_pol]
                if tab is not None:
                    u = tab[0][s][reg] + tab[1][s][reg] * x[k_pol]
                else:
                    u = ctx.policies[k_pol].eval_vector(t0, x[k_pol], reg)
                us.append(u)
                xn.append(_euler_step(x[k_pol], u, r_v, sg_v, th_v, dt, dw))
            if ctx.weak2:
                xn[0] = xn[0] + (ctx.adj.wa[s][reg] + ctx.adj.wb[s][reg] * x[0]) * (dt * dt)

            records = jump_groups.get(s)
            if records is None:
                mask = None
            else:
                mask = np.ones(nb)
                for p, _run in records:
                    mask[p] = 0.0

            if want_bsde:
                qhat = adj.phi[s][reg] * sg_v * us[0]
                contrib = adj.rl0[s][reg] + adj.rl1[s][reg] * x[0] + adj.rl2[s][reg] * xn[0] - qhat * dw
                if mask is not None:
                    contrib = contrib * mask
                res += contrib
                res_sq += contrib * contrib
            if want_dyn and s < ctx.t_end_idx:
                x0v, u0 = x[0], us[0]
                vph = val.phi[s][reg]
                gv = (
                    0.5 * val.phi_t[s][reg] * x0v * x0v
                    + val.psi_t[s][reg] * x0v
                    + val.chi_t[s][reg]
                    + (r_v * x0v + u0 * sg_v * th_v) * (vph * x0v + val.psi[s][reg])
                    + 0.5 * u0 * u0 * sg_v * sg_v * vph
                    + 0.5 * val.gphi[s][reg] * x0v * x0v
                    + val.gpsi[s][reg] * x0v
                    + val.gchi[s][reg]
                )
                dint += gv * dt if mask is None else gv * dt * mask
            if want_integ:
                xh, xa = x[0], x[1]
                uh, ua = us[0], us[1]
                ph = adj.phi[s][reg] * xh + adj.psi[s][reg]
                gap_u = (uh - ua) * sg_v
                gap_x = xh - xa
                qhat = adj.phi[s][reg] * sg_v * uh
                eta_q = adj.qa2[s][reg] * xh * xh + adj.qa1[s][reg] * xh + adj.qa0[s][reg]
                c1v = gap_u * gap_u * ph * ph * dt
                c2v = qhat * qhat * gap_x * gap_x * dt
                c3v = gap_x * gap_x * eta_q * dt
                if mask is not None:
                    c1v, c2v, c3v = c1v * mask, c2v * mask, c3v * mask
                integ[0] += c1v
                integ[1] += c2v
                integ[2] += c3v

            if want_dyn and s == ctx.t_end_idx:
                _capture_dynkin_end(out, val, x[0], reg, s)

            if records is not None:
                t1 = float(bounds[s + 1])
                cell_k = int(grid.cell_of_seg[s])
                for p, run in records:
                    _replay_segment(
                        ctx, p, run, s, t0, t1, cell_k, regimes, x, xn, z,
                        res if want_bsde else None,
                        res_sq if want_bsde else None,
                        dint if want_dyn and s < ctx.t_end_idx else None,
                        integ if want_integ else None,
                    )
            x = xn

    if want_dyn and ctx.t_end_idx == n_seg:
        _capture_dynkin_end(out, val, x[0], None, n_seg, alpha_final=out.alpha_final)

    for k_pol in range(n_pol):
        if not np.isfinite(x[k_pol]).all():
            raise NonFiniteSolutionError(
                f"wealth overflowed for policy {ctx.policies[k_pol].spec.describe()!r}"
            )
        out.x_final[k_pol] = x[k_pol]
    gap = 0.0
    if want_bsde:
        out.bsde_sum[:] = res
        out.bsde_sq[:] = res_sq
        # terminal condition: p_hat(T) vs dh/dx, both affine in X(T)
        reg_t = out.alpha_final - 1
        p_t = ctx.adj.phi[n_seg][reg_t] * x[0] + ctx.adj.psi[n_seg][reg_t]
        grad = -2.0 * (x[0] - ctx.d)
        gap = float(np.max(np.abs(p_t - grad)))
    if want_dyn:
        out.dynkin_int[:] = dint
    if want_integ:
        out.integ[:] = integ
    return gap


def _capture_dynkin_end(out, val, x_vec, reg_col, s_idx, alpha_final=None):
    reg = (alpha_final - 1) if reg_col is None else reg_col
    phi = val.phi[s_idx][reg]
    psi = val.psi[s_idx][reg]
    chi = val.chi[s_idx][reg]
    out.dynkin_vend[:] = 0.5 * phi * x_vec * x_vec + psi * x_vec + chi


def _replay_segment(
    ctx, p, run, s, t0, t1, cell_k, regimes, x_old, x_new, z, res, res_sq, dint, integ
):
    """Re-run one segment for a path whose chain jumps inside it.

    Builds the sub-cell list [(a, b, state, z-column)] and applies the same
    canonical Euler expression per policy in scalar arithmetic; optional
    accumulators receive the corrected contributions for this path.
    """
    model = ctx.model
    grid = ctx.grid
    sub = []
    state = int(regimes[p, s])
    a, zcol = t0, s
    for tau, new, z_idx in run:
        sub.append((a, tau, state, zcol))
        a, state, zcol = tau, new, z_idx
    sub.append((a, t1, state, zcol))
    rates_row = model.rates[cell_k]
    vols_row = model.vols[cell_k]
    th_row = (model.drifts[cell_k] - model.rates[cell_k]) / model.vols[cell_k]

    n_pol = len(ctx.policies)
    for k_pol in range(n_pol):
        xs = float(x_old[k_pol][p])
        pol = ctx.policies[k_pol]
        tab = ctx.tables[k_pol]
        track_bsde = res is not None and k_pol == 0
        track_dyn = dint is not None and k_pol == 0
        track_integ = integ is not None and k_pol == 0
        if track_bsde:
            res_p = 0.0
            sq_p = 0.0
            adj = ctx.adj
        if track_dyn:
            dint_p = 0.0
        if track_integ:
            # needs both trajectories; replay policy 1 alongside below
            xs_alt = float(x_old[1][p])
            integ_p = [0.0, 0.0, 0.0]
        prev_right = None  # interp rows carried across sub-cells
        for idx_c, (ca, cb, st, zc) in enumerate(sub):
            dtc = cb - ca
            dwc = float(z[p, zc]) * math.sqrt(dtc)
            r_c = float(rates_row[st])
            sg_c = float(vols_row[st])
            th_c = float(th_row[st])
            if tab is not None and ca == t0:
                u_c = float(tab[0][s][st] + tab[1][s][st] * xs)
            else:
                u_c = pol(ca, xs, st + 1)
            x_next = _euler_step(xs, u_c, r_c, sg_c, th_c, dtc, dwc)
            if track_bsde:
                if idx_c == 0:
                    phi_a, psi_a = adj.phi[s], adj.psi[s]
                    gphi_a, gpsi_a = adj.gphi[s], adj.gpsi[s]
                else:
                    phi_a, psi_a, gphi_a, gpsi_a = prev_right
                if ctx.weak2:
                    if idx_c == 0:
                        wa_c = float(adj.wa[s][st])
                        wb_c = float(adj.wb[s][st])
                    else:
                        phv, psv = float(phi_a[st]), float(psi_a[st])
                        th2 = th_c * th_c
                        phit = -(2.0 * r_c - th2) * phv - float(gphi_a[st])
                        psit = -(r_c - th2) * psv - float(gpsi_a[st])
                        rho = psv / phv
                        rho_t = (psit * phv - psv * phit) / (phv * phv)
                        wa_c = -0.5 * th2 * (rho_t + (r_c - th2) * rho)
                        wb_c = 0.5 * (r_c - th2) ** 2
                    x_next = x_next + (wa_c + wb_c * xs) * (dtc * dtc)
                if idx_c == len(sub) - 1:
                    phi_b, psi_b = adj.phi[s + 1], adj.psi[s + 1]
                    gphi_b, gpsi_b = adj.gphi[s + 1], adj.gpsi[s + 1]
                else:
                    phi_b, psi_b, gphi_b, gpsi_b = adj.hermite_rows(s, cb)
                p0 = float(phi_a[st]) * xs + float(psi_a[st])
                p1 = float(phi_b[st]) * x_next + float(psi_b[st])
                qh = float(phi_a[st]) * sg_c * u_c
                eg0 = xs * float(gphi_a[st]) + float(gpsi_a[st])
                eg1 = x_next * float(gphi_b[st]) + float(gpsi_b[st])
                res_c = (p1 - p0) + 0.5 * (r_c * p0 + r_c * p1) * dtc - qh * dwc + 0.5 * (eg0 + eg1) * dtc
                if idx_c < len(sub) - 1:
                    # jump at cb: p_hat jump minus eta cancels up to rounding
                    nxt = sub[idx_c + 1][2]
                    jump_dp = (float(phi_b[nxt]) * x_next + float(psi_b[nxt])) - (
                        float(phi_b[st]) * x_next + float(psi_b[st])
                    )
                    eta = x_next * (float(phi_b[nxt]) - float(phi_b[st])) + (
                        float(psi_b[nxt]) - float(psi_b[st])
                    )
                    res_c += jump_dp - eta
                    prev_right = (phi_b, psi_b, gphi_b, gpsi_b)
                res_p += res_c
                sq_p += res_c * res_c
            if track_dyn:
                val = ctx.val
                if idx_c == 0:
                    phi_r, psi_r, chi_r = val.phi[s], val.psi[s], val.chi[s]
                    pt_r, st_r, ct_r = val.phi_t[s], val.psi_t[s], val.chi_t[s]
                    gp_r, gs_r, gc_r = val.gphi[s], val.gpsi[s], val.gchi[s]
                else:
                    phi_r, psi_r, chi_r = val.sol.interp(ca)
                    pt_r, st_r, ct_r = val.sol.derivatives(ca)
                    g = ctx.gen.rates
                    gp_r, gs_r, gc_r = g @ phi_r, g @ psi_r, g @ chi_r
                gv = (
                    0.5 * float(pt_r[st]) * xs * xs
                    + float(st_r[st]) * xs
                    + float(ct_r[st])
                    + (r_c * xs + u_c * sg_c * th_c) * (float(phi_r[st]) * xs + float(psi_r[st]))
                    + 0.5 * u_c * u_c * sg_c * sg_c * float(phi_r[st])
                    + 0.5 * float(gp_r[st]) * xs * xs
                    + float(gs_r[st]) * xs
                    + float(gc_r[st])
                )
                dint_p += gv * dtc
            if track_integ:
                adj = ctx.adj
                if idx_c == 0:
                    phi_a, psi_a = adj.phi[s], adj.psi[s]
                    qa2, qa1, qa0 = adj.qa2[s], adj.qa1[s], adj.qa0[s]
                else:
                    phi_row, psi_row, _, _ = adj.interp_rows(ca)
                    phi_a, psi_a = phi_row, psi_row
                    g = ctx.gen.rates
                    dphi = phi_a[None, :] - phi_a[:, None]
                    dpsi = psi_a[None, :] - psi_a[:, None]
                    qa2 = np.sum(g * dphi * dphi, axis=1)
                    qa1 = 2.0 * np.sum(g * dphi * dpsi, axis=1)
                    qa0 = np.sum(g * dpsi * dpsi, axis=1)
                tab1 = ctx.tables[1]
                if tab1 is not None and ca == t0:
                    u_alt = float(tab1[0][s][st] + tab1[1][s][st] * xs_alt)
                else:
                    u_alt = ctx.policies[1](ca, xs_alt, st + 1)
                ph = float(phi_a[st]) * xs + float(psi_a[st])
                gap_u = (u_c - u_alt) * sg_c
                gap_x = xs - xs_alt
                qh = float(phi_a[st]) * sg_c * u_c
                eta_q = float(qa2[st]) * xs * xs + float(qa1[st]) * xs + float(qa0[st])
                integ_p[0] += gap_u * gap_u * ph * ph * dtc
                integ_p[1] += qh * qh * gap_x * gap_x * dtc
                integ_p[2] += gap_x * gap_x * eta_q * dtc
                xs_alt = _euler_step(xs_alt, u_alt, r_c, sg_c, th_c, dtc, dwc)
            xs = x_next
        x_new[k_pol][p] = xs
        if track_bsde:
            res[p] += res_p
            res_sq[p] += sq_p
        if track_dyn:
            dint[p] += dint_p
        if track_integ:
            integ[0, p] += integ_p[0]
            integ[1, p] += integ_p[1]
            integ[2, p] += integ_p[2]
            x_new[1][p] = xs_alt


def _run_blocks(
    model: MarketModel,
    gen: GeneratorMatrix,
    policies: list[CompiledPolicy],
    *,
    i0: int,
    x0: float,
    n_paths: int,
    n_steps: int,
    seed: int,
    workers: int = 1,
    accumulate: frozenset = frozenset(),
    sol: PhiPsiChiSolution | None = None,
    d: float | None = None,
    t_end: float | None = None,
) -> _RunArtifacts:
    if not (1 <= i0 <= model.num_states):
        raise InvalidInitialStateError(f"initial state {i0} outside 1..{model.num_states}")
    if n_paths < 1:
        raise ValueError(f"n_paths must be >= 1, got {n_paths}")
    ctx = _RunContext(
        model, gen, policies, i0=i0, x0=x0, n_steps=n_steps, seed=seed,
        accumulate=accumulate, sol=sol, d=d, t_end=t_end,
    )
    n_pol = len(policies)
    arts = _RunArtifacts(
        x_final=np.empty((n_pol, n_paths)),
        alpha_final=np.empty(n_paths, dtype=np.int64),
        n_jumps=np.empty(n_paths, dtype=np.int64),
    )
    arts.n_segments = ctx.grid.n_seg
    if "bsde" in accumulate:
        arts.bsde_sum = np.empty(n_paths)
        arts.bsde_sq = np.empty(n_paths)
    if "dynkin" in accumulate:
        arts.dynkin_int = np.empty(n_paths)
        arts.dynkin_vend = np.empty(n_paths)
    if "integrability" in accumulate:
        arts.integ = np.empty((3, n_paths))
    blocks = [(lo, min(lo + _BLOCK, n_paths)) for lo in range(0, n_paths, _BLOCK)]

    def work(span):
        lo, hi = span
        return _process_block(ctx, lo, hi, _BlockOut(arts, lo, hi))

    if workers <= 1 or len(blocks) == 1:
        gaps = [work(b) for b in blocks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            gaps = list(pool.map(work, blocks))
    arts.bsde_terminal_gap = max(gaps) if gaps else 0.0
    return arts


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------


def _resolve_policies(model, gen, specs: list[PolicySpec], sol, d, steps_per_cell=200):
    if sol is None and any(_needs_solution(sp) for sp in specs):
        if d is None:
            raise ValueError("target d is required to solve for the optimal policy")
        sol = solve_phi_psi_chi(model, gen, d, steps_per_cell)
    return [compile_policy(sp, model, sol) for sp in specs], sol


def simulate_wealth(
    model: MarketModel,
    gen: GeneratorMatrix,
    policy: PolicySpec,
    sol: PhiPsiChiSolution | None,
    x0: float,
    n_steps: int,
    seed: int,
    *,
    i0: int = 1,
    path_index: int = 0,
) -> WealthPath:
    """Simulate one path and return its full trajectory on the merged grid.

    Uses the same per-path streams and update arithmetic as the aggregate
    estimators, so path ``k`` here reproduces path ``k`` of an
    :func:`estimate_J` run with the same seed, bit for bit.
    """
    compiled, sol = _resolve_policies(
        model, gen, [policy], sol, sol.target if sol is not None else None
    )
    pol = compiled[0]
    grid = _SimGrid(model, n_steps)
    tab = _policy_tables([pol], grid)[0]
    if not (1 <= i0 <= model.num_states):
        raise InvalidInitialStateError(f"initial state {i0} outside 1..{model.num_states}")
    rng = path_stream(seed, path_index, CHAIN_STREAM)
    sampler = _ChainSampler(gen)
    times, states = sampler.sample(rng, i0 - 1, model.horizon)
    pc = _PathChain(grid.bounds, i0 - 1, times, states)
    n_draws = grid.n_seg + pc.n_interior
    zrng = path_stream(seed, path_index, NOISE_STREAM)
    z = zrng.standard_normal(n_draws)

    cell_times = [0.0]
    wealth = [x0]
    controls: list[float] = []
    incrs: list[float] = []
    regs: list[int] = []
    x = float(x0)
    state = i0 - 1
    m = 0  # interior jumps consumed
    jump_ptr = 0
    for s in range(grid.n_seg):
        t0, t1 = float(grid.bounds[s]), float(grid.bounds[s + 1])
        # node-exact jumps switch the regime without splitting the cell
        while jump_ptr < times.shape[0] and pc.interior_seg[jump_ptr] < 0 and times[jump_ptr] <= t0:
            state = int(pc.jump_states[jump_ptr])
            jump_ptr += 1
        sub = []
        a, zcol = t0, s
        while jump_ptr < times.shape[0] and pc.interior_seg[jump_ptr] == s:
            tau = float(times[jump_ptr])
            sub.append((a, tau, state, zcol))
            state = int(pc.jump_states[jump_ptr])
            a, zcol = tau, grid.n_seg + m
            m += 1
            jump_ptr += 1
        sub.append((a, t1, state, zcol))
        cell_k = int(grid.cell_of_seg[s])
        for ca, cb, st, zc in sub:
            dtc = cb - ca
            dwc = float(z[zc]) * math.sqrt(dtc)
            r_c = float(model.rates[cell_k, st])
            sg_c = float(model.vols[cell_k, st])
            th_c = (float(model.drifts[cell_k, st]) - r_c) / sg_c
            if tab is not None and ca == t0:
                u_c = float(tab[0][s][st] + tab[1][s][st] * x)
            else:
                u_c = pol(ca, x, st + 1)
            x = _euler_step(x, u_c, r_c, sg_c, th_c, dtc, dwc)
            cell_times.append(cb)
            wealth.append(x)
            controls.append(u_c)
            incrs.append(dwc)
            regs.append(st + 1)
    chain = ChainPath(
        initial_state=i0,
        horizon=model.horizon,
        jump_times=times,
        jump_states=states + 1,
    )
    return WealthPath(
        times=np.asarray(cell_times),
        wealth=np.asarray(wealth),
        controls=np.asarray(controls),
        brownian_increments=np.asarray(incrs),
        regimes=np.asarray(regs, dtype=np.int64),
        chain=chain,
    )


def estimate_J(
    model: MarketModel,
    gen: GeneratorMatrix,
    policy: PolicySpec,
    d: float,
    n_paths: int,
    n_steps: int,
    seed: int,
    *,
    i0: int = 1,
    sol: PhiPsiChiSolution | None = None,
    workers: int = 1,
) -> McEstimate:
    """Estimate J(u) = E[-(X(T) - d)^2] over n_paths independent paths."""
    if n_paths < 2:
        raise ValueError(f"n_paths must be >= 2 for a standard error, got {n_paths}")
    t_start = time.perf_counter()
    compiled, _ = _resolve_policies(model, gen, [policy], sol, d)
    arts = _run_blocks(
        model, gen, compiled, i0=i0, x0=model.initial_wealth,
        n_paths=n_paths, n_steps=n_steps, seed=seed, workers=workers,
    )
    payoff = -((arts.x_final[0] - d) ** 2)
    mean = float(np.mean(payoff))
    se = float(np.std(payoff, ddof=1) / math.sqrt(n_paths))
    return McEstimate(
        mean=mean, std_error=se, n_paths=n_paths, seed=seed,
        elapsed=time.perf_counter() - t_start,
    )


def compare_policies(
    model: MarketModel,
    gen: GeneratorMatrix,
    base: PolicySpec,
    alternatives: list[PolicySpec],
    d: float,
    n_paths: int,
    n_steps: int,
    seed: int,
    *,
    i0: int = 1,
    sol: PhiPsiChiSolution | None = None,
    workers: int = 1,
) -> list[McEstimate]:
    """Paired estimates of J(base) - J(alt) under common random numbers.

    All policies see identical chain paths and Brownian increments, so the
    difference estimator's standard error reflects only the policy gap.  An
    alternative equal to the base yields a difference of exactly zero.
    """
    if n_paths < 2:
        raise ValueError(f"n_paths must be >= 2 for a standard error, got {n_paths}")
    t_start = time.perf_counter()
    compiled, _ = _resolve_policies(model, gen, [base, *alternatives], sol, d)
    arts = _run_blocks(
        model, gen, compiled, i0=i0, x0=model.initial_wealth,
        n_paths=n_paths, n_steps=n_steps, seed=seed, workers=workers,
    )
    payoff_base = -((arts.x_final[0] - d) ** 2)
    out = []
    elapsed = time.perf_counter() - t_start
    for k in range(len(alternatives)):
        payoff_alt = -((arts.x_final[k + 1] - d) ** 2)
        diff = payoff_base - payoff_alt
        out.append(
            McEstimate(
                mean=float(np.mean(diff)),
                std_error=float(np.std(diff, ddof=1) / math.sqrt(n_paths)),
                n_paths=n_paths,
                seed=seed,
                elapsed=elapsed,
            )
        )
    return out
