"""CRRA utility, conjugate functions and tangent points used for concavification.

The equity holders of a levered institution receive U((x - d)^+), which is not
concave in x. Its concave envelope is linear up to the tangent point hat_d, where
the chord from the origin touches U(x - d). For CRRA utility hat_d = d / gamma;
the generic root-finders below are kept alongside the closed forms so the two
can be checked against each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

from surplus_reg.errors import DomainError, RootFindingError
from surplus_reg.market import MarketParams


@dataclass(frozen=True)
class CrraUtility:
    """U(x) = x^(1-gamma) / (1-gamma) on x >= 0, with gamma in (0, 1) so U(0) = 0."""

    gamma: float

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma < 1.0:
            raise DomainError(f"relative risk aversion must lie in (0, 1), got {self.gamma}")

    def value(self, x: float) -> float:
        if x < 0:
            raise DomainError("utility is defined on x >= 0")
        return x ** (1.0 - self.gamma) / (1.0 - self.gamma)

    def marginal(self, x: float) -> float:
        if x < 0:
            raise DomainError("marginal utility is defined on x >= 0")
        if x == 0:
            return math.inf
        return x ** (-self.gamma)

    def inverse_marginal(self, y: float) -> float:
        return inverse_marginal(self, y)


def inverse_marginal(u: CrraUtility, y: float) -> float:
    """I(y) = (U')^{-1}(y) = y^(-1/gamma)."""
    if not y > 0:
        raise DomainError(f"inverse marginal utility requires y > 0, got {y}")
    if math.isinf(y):
        return 0.0
    return y ** (-1.0 / u.gamma)


# --------------------------------------------------------------------------
# Generic bracketed bisection
# --------------------------------------------------------------------------


def bisect_increasing(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    *,
    xtol: float = 1e-12,
    max_iter: int = 200,
) -> float:
    """Root of an increasing function on [lo, hi], expanding hi by factors of 2.

    ``lo`` must satisfy f(lo) <= 0. The upper end is doubled until f(hi) >= 0.
    """
    f_lo = f(lo)
    if f_lo > 0:
        raise RootFindingError(f"f(lo) = {f_lo} is positive; root not bracketed")
    for _ in range(max_iter):
        if f(hi) >= 0:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise RootFindingError("could not bracket root by expansion")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if hi - lo <= xtol * max(1.0, abs(mid)):
            return mid
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# --------------------------------------------------------------------------
# Tangent points and conjugates
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TangentPoint:
    """Tangent point hat_d of the chord from the origin to U(x - d)."""

    d: float
    hat_d: float

    @property
    def degenerate(self) -> bool:
        """True when d = 0: U(x - 0) is already concave, nothing to concavify."""
        return self.d == 0.0


def tangent_point(u: CrraUtility, d: float, *, method: str = "closed") -> TangentPoint:
    """Solve U(x - d) / x = U'(x - d) on (d, inf).

    ``method="closed"`` uses hat_d = d / gamma; ``method="bisect"`` finds the root
    of U(x - d) - x U'(x - d), which is increasing in x.
    """
    if d < 0:
        raise DomainError(f"shift d must be non-negative, got {d}")
    if d == 0:
        return TangentPoint(d=0.0, hat_d=0.0)
    if method == "closed":
        return TangentPoint(d=d, hat_d=d / u.gamma)
    if method != "bisect":
        raise ValueError(f"unknown method {method!r}")

    def gap(x: float) -> float:
        # Scaled by the positive factor z^(gamma-1) so the bisection stays well conditioned.
        z = x - d
        return (u.value(z) - x * u.marginal(z)) / (z ** (1.0 - u.gamma))

    lo = d * (1.0 + 1e-12)
    hat = bisect_increasing(gap, lo, 2.0 * d, xtol=1e-15)
    return TangentPoint(d=d, hat_d=hat)


def tangent_slope(u: CrraUtility, d: float) -> float:
    """U'(hat_d - d): the slope of the concave envelope below the tangent point.

    Infinite when d = 0, which sends the matching state-price boundary to inf.
    """
    tp = tangent_point(u, d)
    return u.marginal(tp.hat_d - tp.d)


def conjugate(u: CrraUtility, d: float, lam: float, y: float) -> float:
    """c(y) = sup_{x > d} {U(x - d) - x lam y} = U(I(lam y)) - lam y I(lam y) - lam y d."""
    if not (lam > 0 and y > 0):
        raise DomainError("conjugate requires lam > 0 and y > 0")
    ly = lam * y
    if math.isinf(ly):
        return -math.inf if d > 0 else 0.0
    g = u.gamma
    return (g / (1.0 - g)) * ly ** (-(1.0 - g) / g) - ly * d


def conjugate_zero(u: CrraUtility, d: float, lam: float) -> float:
    """The unique y with c(y) = 0, namely U'(hat_d - d) / lam."""
    return tangent_slope(u, d) / lam


def shifted_conjugate_zero(
    u: CrraUtility, d: float, lam: float, lam2: float, l: float, *, method: str = "closed"
) -> float | None:
    """Zero of sup_{x > d} {U(x - d) - x lam y + lam y lam2 l / lam}, or None.

    The shifted conjugate is c(y) with d replaced by d - lam2 l / lam, so it has a
    zero exactly when s = lam2 l / lam - d < 0.
    """
    if not lam > 0 or lam2 < 0 or l < 0:
        raise DomainError("requires lam > 0, lam2 >= 0, l >= 0")
    eff = d - lam2 * l / lam
    if eff <= 0:
        return None
    if method == "closed":
        return conjugate_zero(u, eff, lam)

    # c is decreasing in y, so -c(exp(.)) is increasing in log y.
    def neg(logy: float) -> float:
        return -conjugate(u, eff, lam, math.exp(logy))

    lo, hi = -1.0, 1.0
    while neg(lo) > 0:
        lo *= 2.0
    while neg(hi) < 0:
        hi *= 2.0
    return math.exp(_bisect_plain(neg, lo, hi))


def lifted_conjugate(u: CrraUtility, d: float, lam: float, y: float) -> float:
    """sup_x {U(x + d) - x lam y} = U(I(lam y)) - lam y I(lam y) + lam y d.

    Decreasing below y = U'(d) / lam and increasing above, with minimum U(d).
    """
    if not (lam > 0 and y > 0):
        raise DomainError("requires lam > 0 and y > 0")
    ly = lam * y
    g = u.gamma
    return (g / (1.0 - g)) * ly ** (-(1.0 - g) / g) + ly * d


def _bisect_plain(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-14) -> float:
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if hi - lo <= tol * max(1.0, abs(mid)):
            break
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# --------------------------------------------------------------------------
# Pre-horizon auxiliaries for the CRRA closed forms
# --------------------------------------------------------------------------


def _remaining(mkt: MarketParams, t: float) -> float:
    if not 0.0 <= t < mkt.T:
        raise DomainError(f"time must satisfy 0 <= t < T, got t={t}")
    return mkt.T - t


def v_factor(u: CrraUtility, mkt: MarketParams, t: float) -> float:
    """Log of E[(xi_T/xi_t)^(1-1/gamma)]."""
    tau = _remaining(mkt, t)
    th = mkt.theta
    k = 1.0 - 1.0 / u.gamma
    return -(mkt.r + 0.5 * th**2) * tau * k + 0.5 * th**2 * k**2 * tau


def j_arg(mkt: MarketParams, t: float, y: float) -> float:
    """Normal argument with e^{-r tau} Phi(j(y)) = E[(xi_T/xi_t) 1{xi_T/xi_t < y}]."""
    tau = _remaining(mkt, t)
    sq = mkt.theta * math.sqrt(tau)
    if y == 0:
        return -math.inf
    if math.isinf(y):
        return math.inf
    return (math.log(y) + (mkt.r + 0.5 * mkt.theta**2) * tau) / sq - sq


def j_arg_scaled(mkt: MarketParams, t: float, y: float, c: float) -> float:
    """j(y) + theta sqrt(T - t) / c; with c = gamma it drives the power-branch terms."""
    tau = _remaining(mkt, t)
    return j_arg(mkt, t, y) + mkt.theta * math.sqrt(tau) / c
