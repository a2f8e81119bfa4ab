"""Optimal asset allocation for a surplus-driven institution under VaR or expected-shortfall regulation."""

from __future__ import annotations

from surplus_reg.errors import DomainError, InfeasibleError, RootFindingError
from surplus_reg.market import LognormalLaw, MarketParams, terminal_density_law
from surplus_reg.profile import WealthProfile
from surplus_reg.solvers import (
    ESConstraint,
    Institution,
    NoConstraint,
    Solution,
    VaRConstraint,
    solve,
    solve_benchmark,
    solve_es,
    solve_var,
)
from surplus_reg.utility import CrraUtility

__all__ = [
    "CrraUtility",
    "DomainError",
    "ESConstraint",
    "InfeasibleError",
    "Institution",
    "LognormalLaw",
    "MarketParams",
    "NoConstraint",
    "RootFindingError",
    "Solution",
    "VaRConstraint",
    "WealthProfile",
    "solve",
    "solve_benchmark",
    "solve_es",
    "solve_var",
    "terminal_density_law",
]
