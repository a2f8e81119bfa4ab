"""Black-Scholes market primitives and lognormal state-price-density moments.

The state price density of a one-asset Black-Scholes market with constant
coefficients is lognormal, so every expectation the solvers need reduces to
truncated power moments of a lognormal variable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from surplus_reg.errors import DomainError

# Normal arguments beyond this are saturated; Phi(-38) is the last subnormal-safe value.
PHI_CLAMP = 38.0


@dataclass(frozen=True)
class MarketParams:
    """Constant-coefficient market with one risky asset.

    Attributes:
        mu: Drift of the risky asset, per year.
        r: Risk-free rate, per year.
        sigma: Volatility, per sqrt(year).
        T: Investment horizon in years.
    """

    mu: float
    r: float
    sigma: float
    T: float

    def __post_init__(self) -> None:
        if not self.sigma > 0:
            raise DomainError(f"sigma must be positive, got {self.sigma}")
        if not self.T > 0:
            raise DomainError(f"T must be positive, got {self.T}")
        if not math.isfinite(self.theta):
            raise DomainError("market price of risk is not finite")

    @property
    def theta(self) -> float:
        """Market price of risk (mu - r) / sigma."""
        return (self.mu - self.r) / self.sigma

    def discount(self, tau: float | None = None) -> float:
        tau = self.T if tau is None else tau
        return math.exp(-self.r * tau)


@dataclass(frozen=True)
class LognormalLaw:
    """Law of exp(m + s Z) with Z standard normal."""

    m: float
    s: float

    def __post_init__(self) -> None:
        if not self.s > 0:
            raise DomainError(f"log-standard-deviation must be positive, got {self.s}")
        if not math.isfinite(self.mean()):
            raise DomainError("lognormal mean is not finite")

    def mean(self) -> float:
        return math.exp(self.m + 0.5 * self.s**2)

    def cdf(self, x):
        """P(Y <= x), vectorised; x = 0 and x = inf are handled exactly."""
        return normal_cdf(self.z(x))

    def sf(self, x):
        return normal_cdf(-self.z(x))

    def z(self, x):
        """Standardised log level (ln x - m) / s, with 0 -> -inf and inf -> +inf."""
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            out = (np.log(x) - self.m) / self.s
        return out[()] if out.ndim == 0 else out


def terminal_density_law(mkt: MarketParams) -> LognormalLaw:
    """Law of the terminal state price density xi_T (xi_0 = 1)."""
    return conditional_density_law(mkt, mkt.T)


def conditional_density_law(mkt: MarketParams, tau: float) -> LognormalLaw:
    """Law of xi_{t+tau} / xi_t."""
    if not tau > 0:
        raise DomainError(f"remaining horizon must be positive, got {tau}")
    theta = mkt.theta
    return LognormalLaw(m=-(mkt.r + 0.5 * theta**2) * tau, s=abs(theta) * math.sqrt(tau))


# --------------------------------------------------------------------------
# Standard normal helpers
# --------------------------------------------------------------------------


def normal_cdf(x):
    x = np.clip(np.asarray(x, dtype=float), -PHI_CLAMP, PHI_CLAMP)
    out = special.ndtr(x)
    return out[()] if np.ndim(out) == 0 else out


def normal_pdf(x):
    x = np.asarray(x, dtype=float)
    out = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return out[()] if np.ndim(out) == 0 else out


def normal_quantile(p):
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0.0) | (p >= 1.0)) or np.any(np.isnan(p)):
        raise DomainError("normal quantile requires p in (0, 1)")
    out = special.ndtri(p)
    return out[()] if np.ndim(out) == 0 else out


def normal_cdf_diff(lo, hi):
    """Phi(hi) - Phi(lo) for lo <= hi, evaluated on the tail where it is accurate."""
    lo = np.clip(np.asarray(lo, dtype=float), -PHI_CLAMP, PHI_CLAMP)
    hi = np.clip(np.asarray(hi, dtype=float), -PHI_CLAMP, PHI_CLAMP)
    upper = special.ndtr(-lo) - special.ndtr(-hi)
    lower = special.ndtr(hi) - special.ndtr(lo)
    out = np.where(lo > 0.0, upper, lower)
    return out[()] if out.ndim == 0 else out


# --------------------------------------------------------------------------
# Lognormal moments
# --------------------------------------------------------------------------


def truncated_mean(law: LognormalLaw, power, a, b):
    """E[Y**power * 1{a < Y < b}] for Y ~ law.

    ``a`` may be 0 and ``b`` may be ``inf``; arguments broadcast. The result is
    exp(p m + p^2 s^2 / 2) * (Phi(z_b - p s) - Phi(z_a - p s)).
    """
    power = np.asarray(power, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(a < 0) or np.any(a > b):
        raise DomainError("truncated_mean requires 0 <= a <= b")
    shift = power * law.s
    scale = np.exp(power * law.m + 0.5 * (power * law.s) ** 2)
    out = scale * normal_cdf_diff(law.z(a) - shift, law.z(b) - shift)
    out = np.where(a == b, 0.0, out)
    return out[()] if out.ndim == 0 else out


def quantile_threshold(law: LognormalLaw, alpha: float) -> float:
    """Level q with P(Y > q) = alpha; alpha = 0 gives inf and alpha = 1 gives 0."""
    if not 0.0 <= alpha <= 1.0:
        raise DomainError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 0.0:
        return math.inf
    if alpha == 1.0:
        return 0.0
    # Phi^{-1}(1 - alpha) = -Phi^{-1}(alpha), which keeps precision for small alpha
    return math.exp(law.m - law.s * float(special.ndtri(alpha)))
