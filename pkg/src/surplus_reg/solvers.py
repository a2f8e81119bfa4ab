"""Optimal terminal wealth for a surplus-driven institution, with and without risk regulation.

The equity holders maximise E[U((X_T - D_T)^+)] subject to the budget
E[xi_T X_T] <= x0 and optionally a VaR constraint P(X_T < L) <= alpha or an
expected-shortfall constraint E[xi_T (L - X_T) 1{X_T < L}] <= epsilon.

Each solver first evaluates the explicit initial-wealth thresholds that
separate the solution shapes, picks the shape, and then finds the budget
multiplier by a bracketed root search on log(lambda). Cases are labelled by how
L compares with the debt D_T and its tangent point hat_D = D_T / gamma:

    a: L <= D_T      b: D_T < L <= hat_D      c: L > hat_D
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Union

from scipy import optimize

from surplus_reg.errors import DomainError, InfeasibleError, RootFindingError
from surplus_reg.market import (
    LognormalLaw,
    MarketParams,
    normal_quantile,
    quantile_threshold,
    terminal_density_law,
    truncated_mean,
)
from surplus_reg.profile import (
    Constant,
    PowerBranch,
    Region,
    WealthProfile,
    Zero,
    budget,
    default_probability,
    expected_shortfall,
    expected_utility,
    shortfall_probability,
)
from surplus_reg.utility import CrraUtility, conjugate, tangent_point, tangent_slope

# Initial bracket for the budget multiplier; expanded if the root lies outside.
LAMBDA_BRACKET = (1e-12, 1e12)


@dataclass(frozen=True)
class Institution:
    """Initial assets x0 and terminal debt DT (= D0 exp(g T) when built from accrual)."""

    x0: float
    DT: float
    D0: float | None = None
    g: float | None = None

    def __post_init__(self) -> None:
        if not self.x0 > 0:
            raise DomainError(f"initial wealth must be positive, got {self.x0}")
        if not self.DT >= 0:
            raise DomainError(f"terminal debt must be non-negative, got {self.DT}")

    @classmethod
    def from_accrual(cls, x0: float, D0: float, g: float, mkt: MarketParams) -> "Institution":
        if D0 < 0:
            raise DomainError("initial debt must be non-negative")
        if g < mkt.r:
            raise DomainError(f"debt must accrue at least at the risk-free rate: g={g} < r={mkt.r}")
        return cls(x0=x0, DT=D0 * math.exp(g * mkt.T), D0=D0, g=g)


@dataclass(frozen=True)
class NoConstraint:
    pass


@dataclass(frozen=True)
class VaRConstraint:
    L: float
    alpha: float

    def __post_init__(self) -> None:
        if not self.L >= 0:
            raise DomainError("VaR threshold L must be non-negative")
        if not 0.0 <= self.alpha <= 1.0:
            raise DomainError(f"alpha must lie in [0, 1], got {self.alpha}")


@dataclass(frozen=True)
class ESConstraint:
    L: float
    epsilon: float

    def __post_init__(self) -> None:
        if not self.L >= 0:
            raise DomainError("ES threshold L must be non-negative")
        if not self.epsilon >= 0:
            raise DomainError(f"epsilon must be non-negative, got {self.epsilon}")


RiskConstraint = Union[NoConstraint, VaRConstraint, ESConstraint]


@dataclass(frozen=True)
class Solution:
    profile: WealthProfile
    lambda_budget: float
    lambda_risk: float | None
    regime: str
    diagnostics: dict
    market: MarketParams
    institution: Institution
    utility: CrraUtility
    constraint: RiskConstraint = field(default_factory=NoConstraint)

    @property
    def binding(self) -> bool:
        """True when the risk constraint is active (a constrained shape was selected)."""
        return not isinstance(self.constraint, NoConstraint) and not self.regime.endswith("benchmark")


# --------------------------------------------------------------------------
# Shared helpers
# --------------------------------------------------------------------------


def _div(k: float, lam: float) -> float:
    """k / lam with k = inf or lam = 0 mapped to inf."""
    if math.isinf(k) or lam == 0.0:
        return math.inf
    return k / lam


def solve_decreasing(
    cost: Callable[[float], float],
    target: float,
    lo: float = 0.0,
    hi: float = math.inf,
) -> float:
    """Find lam in (lo, hi) with cost(lam) = target, cost strictly decreasing.

    Works on log(lam) with Brent's method. Infinite or zero ends are replaced by
    the default bracket, expanded by factors of 1e3 until the root is enclosed.
    """

    def f(z: float) -> float:
        return cost(math.exp(z)) / target - 1.0

    a = math.log(lo) if lo > 0 else math.log(LAMBDA_BRACKET[0])
    b = math.log(hi) if math.isfinite(hi) else math.log(LAMBDA_BRACKET[1])
    if a >= b:
        a, b = (math.log(lo), math.log(lo) + 1.0) if lo > 0 else (b - 1.0, b)
    fa, fb = f(a), f(b)
    for _ in range(60):
        if fa >= 0:
            break
        if lo > 0 and a <= math.log(lo):
            raise RootFindingError("target exceeds the cost at the lower end of the bracket")
        a -= 7.0
        if lo > 0:
            a = max(a, math.log(lo))
        fa = f(a)
    for _ in range(60):
        if fb <= 0:
            break
        if math.isfinite(hi) and b >= math.log(hi):
            raise RootFindingError("target is below the cost at the upper end of the bracket")
        b += 7.0
        if math.isfinite(hi):
            b = min(b, math.log(hi))
        fb = f(b)
    if fa < 0 or fb > 0:
        raise RootFindingError("could not bracket the multiplier")
    if fa == 0:
        return math.exp(a)
    if fb == 0:
        return math.exp(b)
    z = optimize.brentq(f, a, b, xtol=1e-15, rtol=8.9e-16, maxiter=500)
    return math.exp(z)


def _case(inst: Institution, u: CrraUtility, L: float) -> str:
    if L <= inst.DT:
        return "a"
    if L <= tangent_point(u, inst.DT).hat_d:
        return "b"
    return "c"


def _insured_slope(u: CrraUtility, D: float, L: float, case: str) -> float:
    """Slope k_L whose ratio k_L / lam is where the power branch hands over to L."""
    if case == "a":
        # tangent point of the debt net of the threshold; inf when L = D
        return tangent_slope(u, D - L)
    return u.marginal(L - D)


def _diagnostics(profile: WealthProfile, law: LognormalLaw, u: CrraUtility, D: float, L: float | None) -> dict:
    out = {
        "budget": budget(profile, law),
        "default_prob": default_probability(profile, law),
        "expected_utility": expected_utility(profile, law, u, D),
    }
    if L is not None:
        out["shortfall_prob"] = shortfall_probability(profile, law, L)
        out["expected_shortfall"] = expected_shortfall(profile, law, L)
    return out


def _power(lam: float, D: float) -> PowerBranch:
    return PowerBranch(lam, D)


def benchmark_profile(lam: float, D: float, kD: float, gamma: float) -> WealthProfile:
    return WealthProfile.from_pieces([_div(kD, lam)], [_power(lam, D), Zero()], gamma)


def two_region_profile(lam: float, D: float, xi_bar: float, gamma: float) -> WealthProfile:
    return WealthProfile.from_pieces([xi_bar], [_power(lam, D), Zero()], gamma)


def three_region_profile(lam: float, D: float, kL: float, xi_bar: float, L: float, gamma: float) -> WealthProfile:
    return WealthProfile.from_pieces(
        [_div(kL, lam), xi_bar], [_power(lam, D), Constant(L), Zero()], gamma
    )


def es_four_region_profile(
    lam: float, mu: float, D: float, kL: float, kD: float, L: float, gamma: float
) -> WealthProfile:
    """Power(lam), then L, then Power(mu) with mu = lam - lam2 <= lam, then zero."""
    if mu == 0.0:
        return WealthProfile.from_pieces([_div(kL, lam)], [_power(lam, D), Constant(L)], gamma)
    return WealthProfile.from_pieces(
        [_div(kL, lam), _div(kL, mu), _div(kD, mu)],
        [_power(lam, D), Constant(L), _power(mu, D), Zero()],
        gamma,
    )


def var_four_region_profile(
    lam: float, D: float, kL: float, kD: float, xi_bar: float, L: float, gamma: float
) -> WealthProfile:
    """Power, L on [kL/lam, xi_bar), the same power again up to kD/lam, then zero."""
    return WealthProfile.from_pieces(
        [_div(kL, lam), xi_bar, _div(kD, lam)],
        [_power(lam, D), Constant(L), _power(lam, D), Zero()],
        gamma,
    )


# --------------------------------------------------------------------------
# Benchmark
# --------------------------------------------------------------------------


def _benchmark_lambda(law: LognormalLaw, inst: Institution, u: CrraUtility) -> float:
    D, g = inst.DT, u.gamma
    kD = tangent_slope(u, D)

    def cost(lam: float) -> float:
        return budget(benchmark_profile(lam, D, kD, g), law)

    return solve_decreasing(cost, inst.x0)


def solve_benchmark(mkt: MarketParams, inst: Institution, u: CrraUtility) -> Solution:
    """Unconstrained optimum: (I(lam xi) + D_T) on xi < U'(hat_D - D_T) / lam, zero beyond."""
    law = terminal_density_law(mkt)
    lam = _benchmark_lambda(law, inst, u)
    prof = benchmark_profile(lam, inst.DT, tangent_slope(u, inst.DT), u.gamma)
    diag = _diagnostics(prof, law, u, inst.DT, None)
    return Solution(prof, lam, None, "benchmark", diag, mkt, inst, u, NoConstraint())


def _slack(mkt, inst, u, constraint, label: str, thresholds: dict) -> Solution:
    law = terminal_density_law(mkt)
    lam = _benchmark_lambda(law, inst, u)
    prof = benchmark_profile(lam, inst.DT, tangent_slope(u, inst.DT), u.gamma)
    diag = _diagnostics(prof, law, u, inst.DT, constraint.L)
    diag.update(thresholds)
    return Solution(prof, lam, 0.0, label, diag, mkt, inst, u, constraint)


# --------------------------------------------------------------------------
# Feasibility
# --------------------------------------------------------------------------


def es_threshold(law: LognormalLaw, L: float, epsilon: float, discount: float) -> float:
    """xi_bar with L E[xi 1{xi >= xi_bar}] = epsilon; inf for epsilon = 0, 0 when vacuous."""
    if epsilon == 0.0:
        return math.inf
    if L == 0.0 or epsilon >= L * discount:
        return 0.0
    q = epsilon / (L * discount)
    return math.exp(law.m + law.s**2 - law.s * float(normal_quantile(q)))


def feasibility_min(mkt: MarketParams, constraint: RiskConstraint) -> float:
    """Smallest initial wealth for which the constraint can be met."""
    if isinstance(constraint, ESConstraint):
        return max(constraint.L * mkt.discount() - constraint.epsilon, 0.0)
    if isinstance(constraint, VaRConstraint):
        law = terminal_density_law(mkt)
        xi_bar = quantile_threshold(law, constraint.alpha)
        return constraint.L * float(truncated_mean(law, 1.0, 0.0, xi_bar))
    raise DomainError("feasibility_min needs a VaR or ES constraint")


def _check_feasible(x0: float, x0_min: float) -> None:
    # small relative slack so x0 computed as x0_min in floating point is accepted
    if x0 < x0_min * (1.0 - 1e-14):
        raise InfeasibleError(x0, x0_min)


# --------------------------------------------------------------------------
# Cases a and b: a single multiplier, with xi_bar known up front
# --------------------------------------------------------------------------


def _solve_ab(mkt, inst, u, constraint, kind: str, case: str, xi_bar: float, x0_min: float) -> Solution:
    law = terminal_density_law(mkt)
    D, g, L, x0 = inst.DT, u.gamma, constraint.L, inst.x0
    kD = tangent_slope(u, D)
    kL = _insured_slope(u, D, L, case)
    slack_name = {("ES", "a"): "x0_1", ("ES", "b"): "x0_2", ("VaR", "a"): "x0_4", ("VaR", "b"): "x0_5"}[(kind, case)]

    lam1 = 0.0 if math.isinf(xi_bar) else kD / xi_bar
    x0_slack = math.inf if lam1 == 0.0 else budget(benchmark_profile(lam1, D, kD, g), law)
    thresholds = {"x0_min": x0_min, slack_name: x0_slack}
    if x0 >= x0_slack:
        return _slack(mkt, inst, u, constraint, f"{kind}-{case}-benchmark", thresholds)

    if math.isinf(kL):
        lam_star = math.inf
    elif math.isinf(xi_bar):
        lam_star = 0.0
    else:
        lam_star = kL / xi_bar
    if math.isinf(lam_star):
        x_split = x0_min
    elif lam_star == 0.0:
        x_split = math.inf
    else:
        x_split = budget(two_region_profile(lam_star, D, xi_bar, g), law)
    thresholds["x0_split"] = x_split

    if x0 >= x_split:
        lam = solve_decreasing(lambda l: budget(two_region_profile(l, D, xi_bar, g), law), x0, lam1, lam_star)
        prof = two_region_profile(lam, D, xi_bar, g)
        shape = "tworegion"
        c_bar = conjugate(u, D, lam, xi_bar)
        lam2 = -c_bar / (xi_bar * L) if kind == "ES" else -c_bar
    else:
        if x0 <= x0_min:
            lam = math.inf
            prof = WealthProfile.from_pieces([xi_bar], [Constant(L), Zero()], g)
        else:
            lam = solve_decreasing(
                lambda l: budget(three_region_profile(l, D, kL, xi_bar, L, g), law), x0, lam_star
            )
            prof = three_region_profile(lam, D, kL, xi_bar, L, g)
        shape = "threeregion"
        u_ld = u.value(L - D) if case == "b" else 0.0
        if kind == "ES":
            lam2 = lam if math.isinf(xi_bar) else lam - u_ld / (xi_bar * L)
        else:
            lam2 = math.inf if math.isinf(xi_bar) else lam * xi_bar * L - u_ld

    diag = _diagnostics(prof, law, u, D, L)
    diag.update(thresholds)
    return Solution(prof, lam, lam2, f"{kind}-{case}-{shape}", diag, mkt, inst, u, constraint)


# --------------------------------------------------------------------------
# Expected shortfall
# --------------------------------------------------------------------------


def _case_c_slopes(u: CrraUtility, inst: Institution, L: float):
    D = inst.DT
    return D, tangent_slope(u, D), u.marginal(L - D)


def solve_es(mkt: MarketParams, inst: Institution, u: CrraUtility, constraint: ESConstraint) -> Solution:
    law = terminal_density_law(mkt)
    L, eps, x0 = constraint.L, constraint.epsilon, inst.x0
    x0_min = feasibility_min(mkt, constraint)
    _check_feasible(x0, x0_min)
    case = _case(inst, u, L)
    disc = mkt.discount()

    if L == 0.0 or eps >= L * disc:
        return _slack(mkt, inst, u, constraint, f"ES-{case}-benchmark", {"x0_min": x0_min})
    if case in ("a", "b"):
        xi_bar = es_threshold(law, L, eps, disc)
        return _solve_ab(mkt, inst, u, constraint, "ES", case, xi_bar, x0_min)
    return _solve_es_c(mkt, inst, u, constraint, law, x0_min)


def _solve_es_c(mkt, inst, u, constraint: ESConstraint, law: LognormalLaw, x0_min: float) -> Solution:
    L, eps, x0 = constraint.L, constraint.epsilon, inst.x0
    D, kD, kL = _case_c_slopes(u, inst, L)
    g = u.gamma

    # lam_bar: multiplier at which the benchmark's shortfall equals epsilon
    if eps == 0.0:
        lam_bar, x0_3 = 0.0, math.inf
    else:
        lam_bar = solve_increasing_shortfall(lambda l: expected_shortfall(benchmark_profile(l, D, kD, g), law, L), eps)
        x0_3 = budget(benchmark_profile(lam_bar, D, kD, g), law)
    thresholds = {"x0_min": x0_min, "x0_3": x0_3, "lambda_bar": lam_bar}
    if x0 >= x0_3:
        return _slack(mkt, inst, u, constraint, "ES-c-benchmark", thresholds)

    def inner_mu(lam: float) -> float:
        """mu = lam - lam2 making the shortfall bind, for a given outer lam."""
        if eps == 0.0:
            return 0.0

        def es_gap(logmu: float) -> float:
            prof = es_four_region_profile(lam, math.exp(logmu), D, kL, kD, L, g)
            return expected_shortfall(prof, law, L) / eps - 1.0

        hi = math.log(lam)
        if es_gap(hi) <= 0.0:
            return lam
        lo = hi - 1.0
        while es_gap(lo) > 0.0:
            lo -= 4.0
            if lo < -700:
                raise RootFindingError("inner shortfall search failed to bracket")
        return math.exp(optimize.brentq(es_gap, lo, hi, xtol=1e-15, rtol=8.9e-16, maxiter=500))

    def cost(lam: float) -> float:
        return budget(es_four_region_profile(lam, inner_mu(lam), D, kL, kD, L, g), law)

    lam = solve_decreasing(cost, x0, lam_bar if lam_bar > 0 else 0.0)
    mu = inner_mu(lam)
    prof = es_four_region_profile(lam, mu, D, kL, kD, L, g)
    diag = _diagnostics(prof, law, u, D, L)
    diag.update(thresholds)
    diag["lambda_effective"] = mu
    return Solution(prof, lam, lam - mu, "ES-c-fourregion", diag, mkt, inst, u, constraint)


def solve_increasing_shortfall(shortfall: Callable[[float], float], eps: float) -> float:
    """Invert a shortfall that increases in lam."""
    return solve_decreasing(lambda l: 1.0 / max(shortfall(l), 1e-300), 1.0 / eps)


# --------------------------------------------------------------------------
# Value at Risk
# --------------------------------------------------------------------------


def solve_var(mkt: MarketParams, inst: Institution, u: CrraUtility, constraint: VaRConstraint) -> Solution:
    law = terminal_density_law(mkt)
    L, alpha, x0 = constraint.L, constraint.alpha, inst.x0
    x0_min = feasibility_min(mkt, constraint)
    _check_feasible(x0, x0_min)
    case = _case(inst, u, L)
    if L == 0.0 or alpha == 1.0:
        return _slack(mkt, inst, u, constraint, f"VaR-{case}-benchmark", {"x0_min": x0_min})
    xi_bar = quantile_threshold(law, alpha)
    if case in ("a", "b"):
        return _solve_ab(mkt, inst, u, constraint, "VaR", case, xi_bar, x0_min)
    return _solve_var_c(mkt, inst, u, constraint, law, xi_bar, x0_min)


def _solve_var_c(mkt, inst, u, constraint: VaRConstraint, law, xi_bar: float, x0_min: float) -> Solution:
    L, x0 = constraint.L, inst.x0
    D, kD, kL = _case_c_slopes(u, inst, L)
    g = u.gamma

    lam6 = 0.0 if math.isinf(xi_bar) else kL / xi_bar
    # the benchmark meets the VaR constraint exactly when its L-crossing kL/lam lies beyond xi_bar
    x0_6 = math.inf if lam6 == 0.0 else budget(benchmark_profile(lam6, D, kD, g), law)
    x0_6_stated = math.inf if lam6 == 0.0 else budget(two_region_profile(lam6, D, xi_bar, g), law)
    thresholds = {"x0_min": x0_min, "x0_6": x0_6, "x0_6_stated": x0_6_stated}
    if x0 >= x0_6:
        return _slack(mkt, inst, u, constraint, "VaR-c-benchmark", thresholds)

    lam_ss = 0.0 if math.isinf(xi_bar) else kD / xi_bar
    if math.isinf(lam_ss):
        x_split = x0_min
    elif lam_ss == 0.0:
        x_split = math.inf
    else:
        x_split = budget(three_region_profile(lam_ss, D, kL, xi_bar, L, g), law)
    thresholds["x0_split"] = x_split

    if x0 >= x_split:
        lam = solve_decreasing(
            lambda l: budget(var_four_region_profile(l, D, kL, kD, xi_bar, L, g), law), x0, lam6, lam_ss
        )
        prof = var_four_region_profile(lam, D, kL, kD, xi_bar, L, g)
        y = lam * xi_bar
        i_y = u.inverse_marginal(y)
        lam2 = u.value(i_y) - y * i_y + y * (L - D) - u.value(L - D)
        shape = "fourregion"
    else:
        if x0 <= x0_min:
            lam = math.inf
            prof = WealthProfile.from_pieces([xi_bar], [Constant(L), Zero()], g)
        else:
            lam = solve_decreasing(
                lambda l: budget(three_region_profile(l, D, kL, xi_bar, L, g), law), x0, lam_ss
            )
            prof = three_region_profile(lam, D, kL, xi_bar, L, g)
        lam2 = math.inf if math.isinf(xi_bar) else lam * xi_bar * L - u.value(L - D)
        shape = "threeregion"

    diag = _diagnostics(prof, law, u, D, L)
    diag.update(thresholds)
    return Solution(prof, lam, lam2, f"VaR-c-{shape}", diag, mkt, inst, u, constraint)


# --------------------------------------------------------------------------
# Dispatch
# --------------------------------------------------------------------------


def solve(mkt: MarketParams, inst: Institution, u: CrraUtility, constraint: RiskConstraint | None = None) -> Solution:
    if constraint is None or isinstance(constraint, NoConstraint):
        return solve_benchmark(mkt, inst, u)
    if isinstance(constraint, VaRConstraint):
        return solve_var(mkt, inst, u, constraint)
    if isinstance(constraint, ESConstraint):
        return solve_es(mkt, inst, u, constraint)
    raise DomainError(f"unknown constraint {constraint!r}")


def perturbed(sol: Solution, factor: float) -> Solution:
    """Scale every power-branch multiplier by ``factor`` (boundaries move as k / lam).

    The result is feasible but suboptimal; it exists to show that the verifier notices.
    """
    regs = []
    for reg in sol.profile.regions:
        br = reg.branch
        if isinstance(br, PowerBranch):
            br = PowerBranch(br.lam * factor, br.shift)
        regs.append(Region(reg.lo / factor, reg.hi / factor, br))
    prof = WealthProfile(tuple(regs), sol.profile.gamma)
    law = terminal_density_law(sol.market)
    L = None if isinstance(sol.constraint, NoConstraint) else sol.constraint.L
    diag = _diagnostics(prof, law, sol.utility, sol.institution.DT, L)
    return Solution(
        prof, sol.lambda_budget * factor, sol.lambda_risk, sol.regime + "-perturbed", diag,
        sol.market, sol.institution, sol.utility, sol.constraint,
    )
