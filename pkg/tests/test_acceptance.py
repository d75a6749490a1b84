"""Acceptance criteria, one verdict line per criterion.

Run with ``pytest tests/test_acceptance.py -s`` to see the verdicts inline;
they are also listed in the terminal summary.  The Monte-Carlo trend run
(3 sweep points x 50 drops) is shared by criteria 2, 3, 6 and 7 and takes
about a minute.
"""

import numpy as np
import pytest

from dude_mec.harness import (ExperimentConfig, _Drop, _fpc_vector, drop_seed, emit_outputs,
                              run_experiment)
from dude_mec.matching import (SwapContext, blocking_pairs, md_optimal_stable_matching,
                               spa_match, swap_match)
from dude_mec.mec import Assignment
from dude_mec.power import (SolverParams, UplinkProblem, fpc_ul_powers, solve_inner_sca,
                            solve_optimal_power, surrogate_gradient, surrogate_objective,
                            surrogate_rates)

from conftest import random_profile, small_instance

SWEEP = [10, 20, 30]
N_DROPS = 50
DUDE = ["MinPL_G_FPC", "SPA_FPC", "SPA_SM_FPC", "SPA_SM_OPA"]


@pytest.fixture(scope="module")
def trend():
    """Default parameters, 1 MBS + 10/20/30 SBSs, 50 drops per point."""
    return run_experiment(ExperimentConfig(n_drops=N_DROPS, sweep_sbs=SWEEP, seed=0))


@pytest.fixture(scope="module")
def opa_runs():
    """SPA + swap assignments at FPC powers with the optimal-power solution, 10 drops/point."""
    cfg = ExperimentConfig(sweep_sbs=SWEEP, seed=0)
    out = []
    for si, n in enumerate(SWEEP):
        for drop in range(10):
            d = _Drop(cfg, cfg.network_at(n), drop_seed(cfg.seed, si, drop))
            mt, _ = d.spa()
            p = _fpc_vector(d.fpc, mt.bs, mt.sub)
            mt, _ = swap_match(mt, SwapContext(d.channels, p, d.bits))
            prob = UplinkProblem(d.assignment(mt.bs, mt.sub), d.channels, d.bits,
                                 d.topology.md_max_power_w(), cfg.solver)
            out.append((prob, p, solve_optimal_power(prob, cfg.solver, p)))
    return out


def grid_best(prob, n=1000):
    g = np.linspace(prob.p_min[0], prob.p_max[0], n)
    p1, p2 = np.meshgrid(g, g, indexing="ij")
    G, s = prob.cross, prob.signal_gain
    r1 = prob.bandwidth * np.log2(1 + p1 * s[0] / (p2 * G[1, 0] + prob.noise))
    r2 = prob.bandwidth * np.log2(1 + p2 * s[1] / (p1 * G[0, 1] + prob.noise))
    return float((prob.bits[0] / r1 + prob.bits[1] / r2).min())


def relative_fd_error(prob, q, lam, tau, mu1, mu2, h=1e-6):
    g = surrogate_gradient(prob, q, lam, tau, mu1, mu2)
    fd = np.empty_like(q)
    for i in range(q.size):
        e = np.zeros_like(q)
        e[i] = h
        fd[i] = (surrogate_objective(prob, q + e, lam, tau, mu1, mu2)
                 - surrogate_objective(prob, q - e, lam, tau, mu1, mu2)) / (2 * h)
    # at a stationary point g is near zero; scale by the per-term gradient magnitude
    scale = max(np.linalg.norm(g), np.linalg.norm(lam * tau * prob.bandwidth * mu1))
    return float(np.linalg.norm(g - fd) / scale)


def test_criterion_1_spa_matches_brute_force(report):
    rng = np.random.default_rng(20240601)
    bad = []
    for i in range(200):
        prof, caps = random_profile(rng, max_md=4, max_st=2, max_sub=3)
        mt = spa_match(prof, caps)
        best = md_optimal_stable_matching(prof, caps)
        if (blocking_pairs(mt, prof, caps) or best is None
                or not np.array_equal(mt.channels(), best.channels())):
            bad.append(i)
    ok = report("1 SPA stable and MD-optimal vs enumeration", not bad,
                f"{200 - len(bad)}/200 instances")
    assert ok, bad


def test_criterion_2_swap_monotone_and_exchange_stable(trend, report):
    bad, n_swaps, checked = [], 0, 0
    for d in trend.drops:
        for name in ("SPA_SM_FPC", "SPA_SM_OPA"):
            diag = d.schemes[name].diagnostics
            checked += 1
            n_swaps += int(diag["n_swaps"] or 0)
            if diag["swaps_decreasing"] is not True or diag["exchange_stable"] is not True:
                bad.append((d.sweep_value, d.drop, name))
    ok = report("2 swaps strictly decrease sum UL latency; exchange-stable at exit", not bad,
                f"{checked - len(bad)}/{checked} scheme-drops, {n_swaps} swaps")
    assert ok, bad


def test_criterion_3_kkt_residual_and_gradient(trend, opa_runs, report):
    residuals = [d.schemes["SPA_SM_OPA"].diagnostics["solver_residual"] for d in trend.drops]
    residuals += [res.residual for _, _, res in opa_runs]
    worst_res = max(residuals)
    worst_grad = 0.0
    for prob, _, res in opa_runs:
        q = np.log2(res.p_served(prob))
        worst_grad = max(worst_grad, relative_fd_error(prob, q, res.lam, res.tau,
                                                       res.mu1, res.mu2))
    ok = report("3 KKT residual <= 1e-10 and gradient matches FD <= 1e-5",
                worst_res <= 1e-10 and worst_grad <= 1e-5,
                f"max residual {worst_res:.2e} over {len(residuals)} solves, "
                f"max FD error {worst_grad:.2e}")
    assert ok


def test_criterion_4_two_md_grid_oracle(report):
    worst = 0.0
    for seed in range(50):
        cfg, top, ch = small_instance(n_md=2, n_sbs=1, n_sub=1, seed=seed, side=300.0)
        a = Assignment([0, 1], [0, 0], [0, 1], [0, 0])
        prob = UplinkProblem(a, ch, top.input_bits(), top.md_max_power_w())
        res = solve_optimal_power(prob, SolverParams(), fpc_ul_powers(a, ch, cfg))
        worst = max(worst, prob.sum_latency(res.p_served(prob)) / grid_best(prob))
    ok = report("4 two-MD solver latency <= 1000x1000 grid best x 1.005", worst <= 1.005,
                f"worst ratio {worst:.6f}")
    assert ok


def test_criterion_5_sca_monotone_and_tight(opa_runs, report):
    worst_incr, worst_tight, unconverged = 0.0, 0.0, 0
    for prob, p, res in opa_runs:
        p0 = prob.clip(p[prob.idx])
        r = prob.rates(p0)
        inner = solve_inner_sca(1 / r, prob.bits / r, prob, p0)
        unconverged += not inner.converged
        h = np.array(inner.objective)
        worst_incr = max(worst_incr, float(np.max(np.diff(h))))
        tight = surrogate_rates(prob, inner.q, inner.mu1, inner.mu2) / prob.rates(inner.p) - 1
        worst_tight = max(worst_tight, float(np.max(np.abs(tight))))
        # the outer solver's last bound is tight at its returned point as well
        q = np.log2(res.p_served(prob))
        tight = surrogate_rates(prob, q, res.mu1, res.mu2) / prob.rates(res.p_served(prob)) - 1
        worst_tight = max(worst_tight, float(np.max(np.abs(tight))))
    ok = report("5 SCA objective nonincreasing; bound tight at convergence <= 1e-9",
                worst_incr <= 0.0 and worst_tight <= 1e-9 and unconverged == 0,
                f"max step increase {worst_incr:.2e}, max tightness gap {worst_tight:.2e}, "
                f"{unconverged} unconverged")
    assert ok


def _by_point(trend, metric):
    return {n: {s: trend.mean(s, metric, n) for s in trend.config.schemes} for n in SWEEP}


def test_criterion_6a_dude_below_cuda(trend, report):
    lat = _by_point(trend, "sum_latency")
    bad = [(n, s) for n in SWEEP for s in DUDE if not lat[n][s] < lat[n]["CUDA"]]
    detail = "; ".join(f"{n} SBS: CUDA {lat[n]['CUDA']:.0f}, "
                       + ", ".join(f"{s} {lat[n][s]:.0f}" for s in DUDE) for n in SWEEP)
    ok = report("6a every DUDe scheme has lower sum latency than CUDA", not bad,
                f"violations {bad}; {detail}")
    assert ok


def test_criterion_6b_opa_ratio(trend, report):
    lat = _by_point(trend, "sum_latency")
    ratios = {n: lat[n]["SPA_SM_OPA"] / lat[n]["CUDA"] for n in SWEEP}
    ok = report("6b SPA-SM-OPA / CUDA sum latency <= 0.8", max(ratios.values()) <= 0.8,
                ", ".join(f"{n} SBS: {r:.3f}" for n, r in ratios.items()))
    assert ok


def test_criterion_6c_opa_below_min_pl(trend, report):
    lat = _by_point(trend, "sum_latency")
    ok = report("6c SPA-SM-OPA sum latency <= Min-PL-G-FPC",
                all(lat[n]["SPA_SM_OPA"] <= lat[n]["MinPL_G_FPC"] for n in SWEEP),
                ", ".join(f"{n} SBS: {lat[n]['SPA_SM_OPA']:.0f} vs "
                          f"{lat[n]['MinPL_G_FPC']:.0f}" for n in SWEEP))
    assert ok


def test_criterion_6d_min_pl_highest_computation(trend, report):
    exe = _by_point(trend, "sum_computation_latency")
    ok = report("6d Min-PL-G-FPC has the highest computation latency",
                all(max(exe[n], key=exe[n].get) == "MinPL_G_FPC" for n in SWEEP),
                ", ".join(f"{n} SBS: " + " ".join(f"{s}={v:.0f}" for s, v in exe[n].items())
                          for n in SWEEP))
    assert ok


def test_criterion_6e_energy_efficiency_ordering(trend, report):
    ee = _by_point(trend, "energy_efficiency")
    ok = all(ee[n]["MinPL_G_FPC"] >= ee[n]["SPA_SM_FPC"] >= ee[n]["CUDA"]
             and ee[n]["SPA_SM_FPC"] >= 1.5 * ee[n]["CUDA"] for n in SWEEP)
    ok = report("6e EE: Min-PL >= SPA-SM-FPC >= CUDA and SPA-SM-FPC >= 1.5 x CUDA", ok,
                ", ".join(f"{n} SBS: {ee[n]['MinPL_G_FPC']:.3g} >= {ee[n]['SPA_SM_FPC']:.3g}"
                          f" >= {ee[n]['CUDA']:.3g}" for n in SWEEP))
    assert ok


def test_criterion_7a_min_pl_fairest_ul(trend, report):
    j = _by_point(trend, "jain_ul")
    ok = report("7a Min-PL-G-FPC has the highest UL Jain index",
                all(max(j[n], key=j[n].get) == "MinPL_G_FPC" for n in SWEEP),
                ", ".join(f"{n} SBS: " + " ".join(f"{s}={v:.3f}" for s, v in j[n].items())
                          for n in SWEEP))
    assert ok


def test_criterion_7b_cuda_least_fair_ul(trend, report):
    j = _by_point(trend, "jain_ul")
    group = ["CUDA", "SPA_SM_FPC", "SPA_SM_OPA"]
    ok = report("7b CUDA UL Jain index lowest among CUDA and SPA-SM-*",
                all(min(group, key=j[n].get) == "CUDA" for n in SWEEP),
                ", ".join(f"{n} SBS: " + " ".join(f"{s}={j[n][s]:.3f}" for s in group)
                          for n in SWEEP))
    assert ok


def test_criterion_7c_min_pl_least_fair_computation(trend, report):
    j = _by_point(trend, "jain_exe")
    ok = report("7c Min-PL-G-FPC has the lowest computation Jain index",
                all(min(j[n], key=j[n].get) == "MinPL_G_FPC" for n in SWEEP),
                ", ".join(f"{n} SBS: " + " ".join(f"{s}={v:.3f}" for s, v in j[n].items())
                          for n in SWEEP))
    assert ok


def test_criterion_8_summary_byte_identical(tmp_path, report):
    cfg = ExperimentConfig(n_drops=3, sweep_sbs=[10, 20], seed=7)
    emit_outputs(run_experiment(cfg), tmp_path / "a")
    emit_outputs(run_experiment(cfg), tmp_path / "b")
    a = (tmp_path / "a" / "summary.csv").read_bytes()
    b = (tmp_path / "b" / "summary.csv").read_bytes()
    ok = report("8 identical config and seed give byte-identical summary.csv", a == b,
                f"{len(a)} bytes")
    assert ok
