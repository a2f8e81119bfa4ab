"""Exception types raised across the package."""

from __future__ import annotations


class DomainError(ValueError):
    """An argument lies outside the domain of the requested operation."""


class InfeasibleError(ValueError):
    """The initial wealth cannot finance any admissible terminal wealth."""

    def __init__(self, x0: float, x0_min: float, message: str | None = None):
        self.x0 = x0
        self.x0_min = x0_min
        super().__init__(
            message or f"infeasible: x0={x0:.12g} is below the minimum x0_min={x0_min:.12g}"
        )


class RootFindingError(RuntimeError):
    """A bracketed root search could not be set up or did not converge."""
