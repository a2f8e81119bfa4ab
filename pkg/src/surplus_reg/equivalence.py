"""Mapping between a VaR level alpha and the expected-shortfall budget epsilon with the same optimum.

For L below the tangent point of the debt, the VaR(L, alpha) and ES(L, epsilon)
problems share the optimal terminal wealth when the ES threshold xi_bar_eps equals
the VaR quantile xi_bar_alpha, i.e.

    epsilon(alpha) = E[xi_T L 1{xi_T > xi_bar_alpha}] = L e^{-rT} Phi(Phi^{-1}(alpha) + |theta| sqrt(T)).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from surplus_reg.errors import DomainError
from surplus_reg.market import MarketParams, normal_cdf, normal_quantile, terminal_density_law
from surplus_reg.solvers import Institution
from surplus_reg.utility import CrraUtility, tangent_point


def epsilon_for_alpha(mkt: MarketParams, L: float, alpha: float) -> float:
    if not 0.0 <= alpha <= 1.0:
        raise DomainError(f"alpha must lie in [0, 1], got {alpha}")
    if L < 0:
        raise DomainError("L must be non-negative")
    full = L * mkt.discount()
    if alpha == 0.0:
        return 0.0
    if alpha == 1.0:
        return full
    s = terminal_density_law(mkt).s
    return full * float(normal_cdf(float(normal_quantile(alpha)) + s))


def alpha_for_epsilon(mkt: MarketParams, L: float, epsilon: float) -> float:
    """Inverse of epsilon_for_alpha, in closed form."""
    full = L * mkt.discount()
    if not 0.0 <= epsilon <= full * (1.0 + 1e-15):
        raise DomainError(f"epsilon must lie in [0, L e^(-rT)] = [0, {full:.12g}], got {epsilon}")
    if epsilon == 0.0:
        return 0.0
    if epsilon >= full:
        return 1.0
    s = terminal_density_law(mkt).s
    return float(normal_cdf(float(normal_quantile(epsilon / full)) - s))


@dataclass(frozen=True)
class EquivalenceRow:
    alpha: float
    epsilon: float
    epsilon_pct: float  # epsilon as a percentage of x0
    guaranteed: bool  # False when L exceeds the tangent point of the debt


def equivalence_table(
    mkt: MarketParams, inst: Institution, L: float, alphas: Iterable[float], u: CrraUtility | None = None
) -> list[EquivalenceRow]:
    """One row per alpha. ``u`` is only needed to decide whether equivalence is guaranteed."""
    guaranteed = True
    if u is not None:
        guaranteed = L <= tangent_point(u, inst.DT).hat_d
    rows = []
    for a in alphas:
        eps = epsilon_for_alpha(mkt, L, a)
        rows.append(EquivalenceRow(a, eps, 100.0 * eps / inst.x0, guaranteed))
    return rows


def format_pct(row: EquivalenceRow) -> str:
    return f"{row.epsilon_pct:.2f}%"
