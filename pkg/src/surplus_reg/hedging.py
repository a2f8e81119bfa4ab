"""Pre-horizon wealth, optimal risky fraction and a Monte-Carlo replication check.

Wealth before T is the conditional price of the terminal profile,
X_t = E[(xi_T / xi_t) X_T | xi_t], with xi_T / xi_t lognormal. For a piecewise
profile this is a sum over regions of truncated lognormal moments evaluated at
the region bounds divided by xi_t. The risky fraction follows from the delta
hedge pi_t = -theta xi_t dX_t/dxi_t / (sigma X_t), where the derivative is
taken in closed form: the power branches contribute -(1/gamma) times their
price and each finite region boundary contributes a density term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from surplus_reg.errors import DomainError
from surplus_reg.market import MarketParams, conditional_density_law, normal_pdf, truncated_mean
from surplus_reg.profile import Constant, PowerBranch, branch_value, evaluate
from surplus_reg.solvers import Solution
from surplus_reg.utility import CrraUtility

# Below this the wealth is numerically zero and the fraction pi_t is reported as +inf.
WEALTH_FLOOR = 1e-300


@dataclass(frozen=True)
class StrategyPoint:
    t: float
    xi_t: float
    X_t: float
    pi_t: float
    diverged: bool = False


def _law_at(mkt: MarketParams, t: float):
    if not 0.0 <= t < mkt.T:
        raise DomainError(f"time must satisfy 0 <= t < T, got t={t}")
    return conditional_density_law(mkt, mkt.T - t)


def _price_parts(sol: Solution, mkt: MarketParams, t: float, xi_t):
    """Return (X_t, xi_t dX_t/dxi_t) for arrays of xi_t."""
    xi_t = np.asarray(xi_t, dtype=float)
    if np.any(xi_t <= 0):
        raise DomainError("xi_t must be positive")
    law = _law_at(mkt, t)
    prof = sol.profile
    g = prof.gamma
    p = 1.0 - 1.0 / g

    wealth = np.zeros_like(xi_t)
    delta = np.zeros_like(xi_t)
    for reg in prof.regions:
        a = reg.lo / xi_t
        b = reg.hi / xi_t if math.isfinite(reg.hi) else np.full_like(xi_t, math.inf)
        br = reg.branch
        if isinstance(br, PowerBranch):
            power_part = (br.lam * xi_t) ** (-1.0 / g) * truncated_mean(law, p, a, b)
            wealth += power_part + br.shift * truncated_mean(law, 1.0, a, b)
            delta += -power_part / g
        elif isinstance(br, Constant):
            wealth += br.value * truncated_mean(law, 1.0, a, b)
        else:
            continue
        # boundary terms: -h(b-) b^2 f(b) + h(a+) a^2 f(a), with y^2 f(y) = y phi(z(y)) / s
        if math.isfinite(reg.hi):
            h_hi = branch_value(br, reg.hi, g)
            delta -= h_hi * b * normal_pdf(law.z(b)) / law.s
        if reg.lo > 0:
            h_lo = branch_value(br, reg.lo, g)
            delta += h_lo * a * normal_pdf(law.z(a)) / law.s
    return wealth, delta


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def wealth_pre_horizon(sol: Solution, mkt: MarketParams, u: CrraUtility, t: float, xi_t):
    """Optimal wealth at time t < T given xi_t (scalar or array)."""
    _check_utility(sol, u)
    wealth, _ = _price_parts(sol, mkt, t, xi_t)
    return _scalar(wealth)


def risky_exposure(sol: Solution, mkt: MarketParams, t: float, xi_t):
    """Amount held in the risky asset, pi_t X_t = -theta xi_t dX_t/dxi_t / sigma (finite everywhere)."""
    _, delta = _price_parts(sol, mkt, t, xi_t)
    return _scalar(-mkt.theta * delta / mkt.sigma)


def strategy_pre_horizon(sol: Solution, mkt: MarketParams, u: CrraUtility, t: float, xi_t):
    """Optimal fraction of wealth in the risky asset; +inf where wealth is numerically zero."""
    _check_utility(sol, u)
    wealth, delta = _price_parts(sol, mkt, t, xi_t)
    with np.errstate(divide="ignore", invalid="ignore"):
        pi = np.where(wealth > WEALTH_FLOOR, -mkt.theta * delta / (mkt.sigma * wealth), math.inf)
    return _scalar(pi)


def strategy_point(sol: Solution, mkt: MarketParams, u: CrraUtility, t: float, xi_t: float) -> StrategyPoint:
    wealth, delta = _price_parts(sol, mkt, t, xi_t)
    wealth, delta = float(wealth), float(delta)
    if wealth <= WEALTH_FLOOR:
        return StrategyPoint(t, xi_t, wealth, math.inf, diverged=True)
    return StrategyPoint(t, xi_t, wealth, -mkt.theta * delta / (mkt.sigma * wealth))


def relative_risk_exposure(
    sol_constrained: Solution, sol_benchmark: Solution, mkt: MarketParams, u: CrraUtility, t: float, xi_t
):
    """Ratio of the constrained to the benchmark risky fraction at the same (t, xi_t)."""
    pi_c = np.asarray(strategy_pre_horizon(sol_constrained, mkt, u, t, xi_t), dtype=float)
    pi_b = np.asarray(strategy_pre_horizon(sol_benchmark, mkt, u, t, xi_t), dtype=float)
    if np.any(pi_b == 0):
        raise DomainError("benchmark fraction is zero; relative exposure undefined")
    with np.errstate(invalid="ignore"):
        ratio = pi_c / pi_b
    return _scalar(ratio)


def _check_utility(sol: Solution, u: CrraUtility) -> None:
    if not math.isclose(sol.profile.gamma, u.gamma):
        raise DomainError("utility does not match the one the solution was built with")


# --------------------------------------------------------------------------
# Replication
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ReplicationReport:
    rmse: float
    mean_abs_budget_drift: float
    max_abs_error: float
    n_paths: int
    n_steps: int
    seed: int
    near_boundary_paths: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


CHUNK = 25_000


def simulate_replication(
    sol: Solution,
    mkt: MarketParams,
    u: CrraUtility,
    n_paths: int,
    n_steps: int,
    seed: int,
    *,
    boundary_band: float = 0.01,
) -> ReplicationReport:
    """Euler-integrate the self-financing wealth under the optimal fraction and compare with the profile.

    Paths are split into fixed chunks seeded by (seed, chunk index), so results do
    not depend on how chunks are scheduled. ``near_boundary_paths`` counts paths
    whose terminal xi lies within a relative ``boundary_band`` of a region boundary.
    """
    if n_paths < 1 or n_steps < 1:
        raise DomainError("need n_paths >= 1 and n_steps >= 1")
    _check_utility(sol, u)
    dt = mkt.T / n_steps
    th, sig, r = mkt.theta, mkt.sigma, mkt.r
    x0 = sol.institution.x0
    bounds = np.asarray(sol.profile.boundaries)

    sq_err = 0.0
    max_err = 0.0
    deflated = 0.0
    near = 0
    for chunk, start in enumerate(range(0, n_paths, CHUNK)):
        m = min(CHUNK, n_paths - start)
        rng = np.random.default_rng(np.random.SeedSequence([seed, chunk]))
        xi = np.ones(m)
        x = np.full(m, x0)
        for k in range(n_steps):
            t = k * dt
            wealth, delta = _price_parts(sol, mkt, t, xi)
            exposure = -th * delta / sig  # pi_t X_t, finite even where X_t underflows
            dw = rng.standard_normal(m) * math.sqrt(dt)
            x = x + r * x * dt + exposure * sig * (th * dt + dw)
            xi = xi * np.exp(-(r + 0.5 * th * th) * dt - th * dw)
        target = evaluate(sol.profile, xi)
        err = x - target
        sq_err += float(np.sum(err * err))
        max_err = max(max_err, float(np.max(np.abs(err))))
        deflated += float(np.sum(xi * x))
        if bounds.size:
            rel = np.abs(xi[:, None] / bounds[None, :] - 1.0)
            near += int(np.sum(np.any(rel < boundary_band, axis=1)))

    return ReplicationReport(
        rmse=math.sqrt(sq_err / n_paths),
        mean_abs_budget_drift=abs(deflated / n_paths - x0),
        max_abs_error=max_err,
        n_paths=n_paths,
        n_steps=n_steps,
        seed=seed,
        near_boundary_paths=near,
    )
