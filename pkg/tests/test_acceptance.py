"""Acceptance criteria, each run at its stated tolerance.

Every test records one PASS/FAIL line, printed in the terminal summary (and
directly when the file is run as a script).
"""

from __future__ import annotations

import math
import time

import numpy as np
import pytest

from surplus_reg.equivalence import alpha_for_epsilon, epsilon_for_alpha
from surplus_reg.hedging import simulate_replication, strategy_point, strategy_pre_horizon, wealth_pre_horizon
from surplus_reg.market import MarketParams, terminal_density_law
from surplus_reg.oracle import OracleInstance, crosscheck, oracle_solve
from surplus_reg.profile import Zero, evaluate
from surplus_reg.solvers import (
    ESConstraint,
    Institution,
    VaRConstraint,
    feasibility_min,
    solve,
    solve_benchmark,
    solve_es,
    solve_var,
)
from surplus_reg.utility import CrraUtility, tangent_point

from conftest import ACCEPTANCE_LINES, REGIMES, BASE_MARKET, lagrangian_gap, support_grid

U = CrraUtility(0.5)


def record(n: int, ok: bool, title: str, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {title}  [{detail}]"
    ACCEPTANCE_LINES[n] = line
    print(line)


def _solve(case):
    x0, d, c, _ = case
    return solve(BASE_MARKET, Institution(x0, d), U, c)


# ---------------------------------------------------------------------------
# 1. Reference epsilon values
# ---------------------------------------------------------------------------

REFERENCE_EPS = [(0.005, 0.87), (0.01, 1.70), (0.05, 6.82)]


def test_criterion_1_reference_epsilons():
    t0 = time.perf_counter()
    rows = []
    ok = True
    for alpha, pct in REFERENCE_EPS:
        got = 100.0 * epsilon_for_alpha(BASE_MARKET, 90.0, alpha) / 100.0
        hit = abs(got - pct) <= 0.005
        ok &= hit
        rows.append(f"alpha={alpha:g}: {got:.4f}% vs {pct:.2f}% {'ok' if hit else 'off'}")
    inv = alpha_for_epsilon(BASE_MARKET, 90.0, 1.70)
    rows.append(f"alpha(1.70)={inv:.5f}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 1.0
    record(1, ok, "reference epsilon values", "; ".join(rows) + f"; {elapsed:.3f}s")
    assert ok, rows


# ---------------------------------------------------------------------------
# 2. VaR / ES equivalence below the tangent point
# ---------------------------------------------------------------------------


def _random_binding_config(rng):
    while True:
        mkt = MarketParams(rng.uniform(0.05, 0.12), rng.uniform(0.0, 0.05), rng.uniform(0.1, 0.4), rng.uniform(0.5, 3.0))
        if mkt.mu - mkt.r < 0.01:
            continue
        u = CrraUtility(rng.uniform(0.25, 0.8))
        d = rng.uniform(50.0, 150.0)
        L = rng.uniform(0.2, 1.0) * tangent_point(u, d).hat_d
        alpha = rng.uniform(0.002, 0.08)
        c = VaRConstraint(L, alpha)
        x_min = feasibility_min(mkt, c)
        probe = solve_var(mkt, Institution(1.001 * x_min, d), u, c)
        slack = [v for k, v in probe.diagnostics.items() if k in ("x0_4", "x0_5")][0]
        x0 = x_min + rng.uniform(0.01, 0.95) * (slack - x_min)
        return mkt, u, Institution(x0, d), c


def test_criterion_2_equivalence():
    rng = np.random.default_rng(20240501)
    t0 = time.perf_counter()
    worst_prof = worst_lam = 0.0
    n_binding = 0
    for _ in range(20):
        mkt, u, inst, c = _random_binding_config(rng)
        a = solve_var(mkt, inst, u, c)
        b = solve_es(mkt, inst, u, ESConstraint(c.L, epsilon_for_alpha(mkt, c.L, c.alpha)))
        n_binding += a.binding and b.binding
        grid = support_grid(mkt, 5000)
        gap = np.max(np.abs(evaluate(a.profile, grid) - evaluate(b.profile, grid))) / inst.x0
        worst_prof = max(worst_prof, float(gap))
        worst_lam = max(worst_lam, abs(a.lambda_budget - b.lambda_budget) / a.lambda_budget)
    elapsed = time.perf_counter() - t0
    ok = n_binding == 20 and worst_prof <= 1e-6 and worst_lam <= 1e-8 and elapsed < 10.0
    record(2, ok, "VaR/ES equivalence", f"binding {n_binding}/20; sup gap/x0 {worst_prof:.2e}; lambda gap {worst_lam:.2e}; {elapsed:.2f}s")
    assert ok


# ---------------------------------------------------------------------------
# 3. Oracle cross-check of every regime
# ---------------------------------------------------------------------------


def test_criterion_3_oracle():
    t0 = time.perf_counter()
    failures = []
    worst_u = worst_p = 0.0
    for case in REGIMES:
        x0, d, c, label = case
        sol = _solve(case)
        inst = OracleInstance.build(BASE_MARKET, Institution(x0, d), U, c, n_states=500)
        rep = crosscheck(sol, inst, result=oracle_solve(inst), utility_tol=1e-3, profile_tol=1e-2)
        worst_u = max(worst_u, rep.utility_gap)
        worst_p = max(worst_p, rep.profile_sup_gap)
        if not rep.passed:
            failures.append(f"{label}: utility {rep.utility_gap:.2e}, profile {rep.profile_sup_gap:.2e}")
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 60.0
    detail = f"{len(REGIMES) - len(failures)}/{len(REGIMES)} regimes; worst utility {worst_u:.2e}; worst profile {worst_p:.2e}; {elapsed:.1f}s"
    if failures:
        detail += "; failing: " + ", ".join(failures)
    record(3, ok, "oracle equivalence", detail)
    assert ok, failures


# ---------------------------------------------------------------------------
# 4. Binding diagnostics
# ---------------------------------------------------------------------------


def test_criterion_4_binding():
    rng = np.random.default_rng(4)
    sols = [_solve(case) for case in REGIMES]
    for _ in range(20):
        mkt, u, inst, c = _random_binding_config(rng)
        sols.append(solve_var(mkt, inst, u, c))
    bad = []
    n_binding = 0
    for sol in sols:
        d, x0 = sol.diagnostics, sol.institution.x0
        if abs(d["budget"] - x0) / x0 > 1e-8:
            bad.append(f"{sol.regime} budget")
        if not sol.binding:
            continue
        n_binding += 1
        c = sol.constraint
        if isinstance(c, VaRConstraint) and abs(d["shortfall_prob"] - c.alpha) > 1e-8:
            bad.append(f"{sol.regime} P(X<L)={d['shortfall_prob']:.10f}")
        if isinstance(c, ESConstraint) and abs(d["expected_shortfall"] - c.epsilon) / c.epsilon > 1e-6:
            bad.append(f"{sol.regime} ES")
    ok = not bad
    record(4, ok, "binding diagnostics", f"{len(sols)} solutions, {n_binding} binding; violations: {bad or 'none'}")
    assert ok, bad


# ---------------------------------------------------------------------------
# 5. Pointwise Lagrangian optimality
# ---------------------------------------------------------------------------


def test_criterion_5_pointwise_lagrangian():
    gaps = {f"{case[3]}@{case[0]:g}/D={case[1]:g}": lagrangian_gap(_solve(case), n_xi=200, n_wealth=2000) for case in REGIMES}
    worst = max(gaps.values())
    ok = worst <= 1e-9
    record(5, ok, "pointwise Lagrangian", f"{len(gaps)} regimes, 200 xi x 2000 wealth; worst scaled gap {worst:.2e}")
    assert ok, gaps


# ---------------------------------------------------------------------------
# 6. Hedging
# ---------------------------------------------------------------------------


def test_criterion_6_hedging():
    worst_fd = 0.0
    for case in REGIMES:
        sol = _solve(case)
        rng = np.random.default_rng(600)
        bounds = np.array(sol.profile.boundaries)
        n = 0
        while n < 200:
            t = rng.uniform(0.05, 0.95)
            xi = math.exp(-0.06 + 0.3 * rng.standard_normal())
            if bounds.size and np.min(np.abs(np.log(xi / bounds))) < 1e-3:
                continue
            h = 1e-5 * xi
            dx = (wealth_pre_horizon(sol, BASE_MARKET, U, t, xi + h) - wealth_pre_horizon(sol, BASE_MARKET, U, t, xi - h)) / (2 * h)
            an = strategy_pre_horizon(sol, BASE_MARKET, U, t, xi) * BASE_MARKET.sigma * wealth_pre_horizon(sol, BASE_MARKET, U, t, xi)
            worst_fd = max(worst_fd, abs(an + BASE_MARKET.theta * xi * dx) / (1 + abs(an)))
            n += 1

    merton = solve_benchmark(BASE_MARKET, Institution(100.0, 0.0), U)
    grid = np.geomspace(0.05, 20.0, 200)
    merton_err = max(float(np.max(np.abs(strategy_pre_horizon(merton, BASE_MARKET, U, t, grid) - 2.5))) for t in (0.0, 0.5, 0.9))

    bench = solve_benchmark(BASE_MARKET, Institution(100.0, 100.0), U)
    (b,) = bench.profile.boundaries
    t = 1.0 - 1e-8
    limit_err = 0.0
    for xi in np.linspace(0.2, 0.95, 16) * b:
        pt = strategy_point(bench, BASE_MARKET, U, t, xi)
        x_T = evaluate(bench.profile, xi)
        limit_err = max(limit_err, abs(pt.pi_t - 2.5 * (x_T - 100.0) / x_T))
    diverged = all(strategy_point(bench, BASE_MARKET, U, t, xi).diverged for xi in np.linspace(1.05, 3.0, 16) * b)

    ok = worst_fd <= 1e-4 and merton_err <= 1e-10 and limit_err <= 1e-6 and diverged
    record(
        6, ok, "hedging checks",
        f"FD worst {worst_fd:.2e}; Merton |pi-2.5| {merton_err:.1e}; near-T limit {limit_err:.1e}; divergence flagged {diverged}",
    )
    assert ok


# ---------------------------------------------------------------------------
# 7. Monte-Carlo replication
# ---------------------------------------------------------------------------


def test_criterion_7_replication():
    t0 = time.perf_counter()
    inst = Institution(100.0, 100.0)
    sols = {"benchmark": solve_benchmark(BASE_MARKET, inst, U), "ES(0.87)": solve(BASE_MARKET, inst, U, ESConstraint(90.0, 0.87))}
    reports = {k: simulate_replication(s, BASE_MARKET, U, 100_000, 250, seed=42) for k, s in sols.items()}
    again = simulate_replication(sols["ES(0.87)"], BASE_MARKET, U, 100_000, 250, seed=42)
    elapsed = time.perf_counter() - t0
    deterministic = again == reports["ES(0.87)"]
    within = all(r.rmse <= 0.01 * inst.x0 for r in reports.values())
    ok = within and deterministic and elapsed < 120.0
    detail = "; ".join(f"{k} RMSE {r.rmse:.3f}" for k, r in reports.items())
    record(7, ok, "Monte-Carlo replication", f"{detail} (limit 1.0); deterministic {deterministic}; {elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# 8. Regulation lowers complete-default probability
# ---------------------------------------------------------------------------


def test_criterion_8_default_reduction():
    law = terminal_density_law(BASE_MARKET)
    bad = []
    n = 0
    for c in (VaRConstraint(90.0, 0.005), ESConstraint(90.0, 0.87)):
        for x0 in np.linspace(90.0, 400.0, 10):
            inst = Institution(float(x0), 100.0)
            sol = solve(BASE_MARKET, inst, U, c)
            bench = solve_benchmark(BASE_MARKET, inst, U)
            if not sol.binding:
                bad.append(f"{sol.regime}@{x0:g} not binding")
                continue
            n += 1
            if sol.diagnostics["default_prob"] > bench.diagnostics["default_prob"] + 1e-10:
                bad.append(f"{sol.regime}@{x0:g}")
            last = sol.profile.regions[-1]
            probe = last.lo * np.geomspace(1.0, 1e3, 50)
            if not (isinstance(last.branch, Zero) and np.all(evaluate(sol.profile, probe) == 0.0)):
                bad.append(f"{sol.regime}@{x0:g} tail not zero")
            if not float(law.sf(last.lo)) > 0:
                bad.append(f"{sol.regime}@{x0:g} no default region")
    ok = not bad
    record(8, ok, "default probability reduction", f"{n} binding solutions; violations: {bad or 'none'}")
    assert ok, bad


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q"]))
