from __future__ import annotations

import pytest

from surplus_reg import CrraUtility, ESConstraint, Institution, MarketParams, NoConstraint, VaRConstraint

BASE_MARKET = MarketParams(mu=0.08, r=0.03, sigma=0.2, T=1.0)
GAMMA = 0.5
DT = 100.0

# (x0, DT, constraint, expected regime): one instance per branch of the solvers
REGIMES = [
    (100.0, DT, NoConstraint(), "benchmark"),
    (100.0, 0.0, NoConstraint(), "benchmark"),
    (100.0, DT, VaRConstraint(90.0, 0.005), "VaR-a-threeregion"),
    (200.0, DT, VaRConstraint(90.0, 0.005), "VaR-a-tworegion"),
    (500.0, DT, VaRConstraint(90.0, 0.005), "VaR-a-benchmark"),
    (160.0, DT, VaRConstraint(150.0, 0.01), "VaR-b-threeregion"),
    (300.0, DT, VaRConstraint(150.0, 0.01), "VaR-b-tworegion"),
    (600.0, DT, VaRConstraint(150.0, 0.01), "VaR-b-benchmark"),
    (250.0, DT, VaRConstraint(250.0, 0.01), "VaR-c-threeregion"),
    (450.0, DT, VaRConstraint(250.0, 0.01), "VaR-c-fourregion"),
    (600.0, DT, VaRConstraint(250.0, 0.01), "VaR-c-benchmark"),
    (100.0, DT, ESConstraint(90.0, 0.87), "ES-a-threeregion"),
    (200.0, DT, ESConstraint(90.0, 0.87), "ES-a-tworegion"),
    (500.0, DT, ESConstraint(90.0, 0.87), "ES-a-benchmark"),
    (160.0, DT, ESConstraint(150.0, 0.5), "ES-b-threeregion"),
    (300.0, DT, ESConstraint(150.0, 1.0), "ES-b-tworegion"),
    (1000.0, DT, ESConstraint(150.0, 1.0), "ES-b-benchmark"),
    (250.0, DT, ESConstraint(250.0, 2.6), "ES-c-fourregion"),
    (800.0, DT, ESConstraint(250.0, 2.6), "ES-c-benchmark"),
]


def regime_id(case) -> str:
    x0, d, c, label = case
    return f"{label}-x0={x0:g}-D={d:g}"


@pytest.fixture
def mkt() -> MarketParams:
    return BASE_MARKET


@pytest.fixture
def u() -> CrraUtility:
    return CrraUtility(GAMMA)


@pytest.fixture
def inst100() -> Institution:
    return Institution(x0=100.0, DT=DT)


def lagrangian_gap(sol, n_xi: int = 200, n_wealth: int = 2000) -> float:
    """Largest amount by which a grid wealth beats the profile in the pointwise Lagrangian.

    The objective is U((x - DT)^+) - lam xi x - penalty(x, xi), with the VaR
    penalty lam2 1{x < L} and the ES penalty lam2 xi (L - x)^+. Returns the
    worst gap scaled by (1 + |objective|); ties are allowed.
    """
    import math

    import numpy as np

    from surplus_reg.profile import evaluate

    inst, c = sol.institution, sol.constraint
    g, D = sol.utility.gamma, inst.DT
    lam = sol.lambda_budget
    lam2 = sol.lambda_risk or 0.0
    L = getattr(c, "L", 0.0)
    xi = np.geomspace(1e-2, 20.0, n_xi)
    top = 20.0 * inst.x0 * math.exp(sol.market.r * sol.market.T)
    grid = np.unique(np.concatenate([[0.0, L], np.geomspace(1e-6 * inst.x0, top, n_wealth)]))

    def obj(x, y):
        val = np.maximum(x - D, 0.0) ** (1 - g) / (1 - g) - lam * y * x
        if isinstance(c, VaRConstraint):
            val = val - lam2 * (x < L)
        elif isinstance(c, ESConstraint):
            val = val - lam2 * y * np.maximum(L - x, 0.0)
        return val

    x_prof = evaluate(sol.profile, xi)
    at_profile = obj(x_prof, xi)
    best_grid = np.max(obj(grid[None, :], xi[:, None]), axis=1)
    return float(np.max((best_grid - at_profile) / (1.0 + np.abs(at_profile))))


def support_grid(mkt, n: int, tail: float = 1e-6):
    """Log-spaced xi levels between the tail and 1 - tail quantiles of xi_T."""
    import math

    import numpy as np

    from surplus_reg.market import normal_quantile, terminal_density_law

    law = terminal_density_law(mkt)
    z = float(normal_quantile(1.0 - tail))
    return np.geomspace(math.exp(law.m - z * law.s), math.exp(law.m + z * law.s), n)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
