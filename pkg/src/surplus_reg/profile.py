"""Piecewise terminal-wealth profiles X_T = f(xi_T) and their closed-form functionals.

Every optimal terminal wealth in this package is a left-closed, right-open
partition of [0, inf) in the state price density, with each piece one of

* ``PowerBranch(lam, shift)``:  X = (lam * xi)^(-1/gamma) + shift
* ``Constant(value)``:          X = value
* ``Zero()``:                   X = 0

so budgets, shortfalls and utilities are sums of truncated lognormal moments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from surplus_reg.errors import DomainError
from surplus_reg.market import LognormalLaw, truncated_mean
from surplus_reg.utility import CrraUtility


@dataclass(frozen=True)
class PowerBranch:
    lam: float
    shift: float


@dataclass(frozen=True)
class Constant:
    value: float


@dataclass(frozen=True)
class Zero:
    pass


Branch = Union[PowerBranch, Constant, Zero]


@dataclass(frozen=True)
class Region:
    lo: float
    hi: float
    branch: Branch


@dataclass(frozen=True)
class WealthProfile:
    regions: tuple[Region, ...]
    gamma: float

    def __post_init__(self) -> None:
        regs = self.regions
        if not regs:
            raise DomainError("a profile needs at least one region")
        if regs[0].lo != 0.0 or not math.isinf(regs[-1].hi):
            raise DomainError("regions must cover [0, inf)")
        for a, b in zip(regs, regs[1:]):
            if a.hi != b.lo:
                raise DomainError("regions must be contiguous")
        for reg in regs:
            if not reg.lo < reg.hi:
                raise DomainError(f"empty or reversed region [{reg.lo}, {reg.hi})")
            if isinstance(reg.branch, Constant) and reg.branch.value < 0:
                raise DomainError("wealth must be non-negative")
            if isinstance(reg.branch, PowerBranch) and (reg.branch.lam <= 0 or reg.branch.shift < 0):
                raise DomainError("power branch needs lam > 0 and shift >= 0")

    @classmethod
    def from_pieces(cls, breaks: Sequence[float], branches: Sequence[Branch], gamma: float) -> "WealthProfile":
        """Build from interior breakpoints; pieces of zero width are dropped.

        ``breaks`` has one entry fewer than ``branches``; adjacent pieces with the
        same branch are merged.
        """
        if len(breaks) != len(branches) - 1:
            raise ValueError("need len(breaks) == len(branches) - 1")
        edges = [0.0, *[float(b) for b in breaks], math.inf]
        regions: list[Region] = []
        for lo, hi, br in zip(edges, edges[1:], branches):
            lo = max(lo, regions[-1].hi if regions else 0.0)
            if not hi > lo:
                continue
            if regions and regions[-1].branch == br:
                regions[-1] = Region(regions[-1].lo, hi, br)
            else:
                regions.append(Region(lo if regions else 0.0, hi, br))
        return cls(tuple(regions), gamma)

    @property
    def boundaries(self) -> list[float]:
        return [reg.hi for reg in self.regions[:-1]]

    def to_dict(self) -> dict:
        out = []
        for reg in self.regions:
            br = reg.branch
            if isinstance(br, PowerBranch):
                b = {"type": "power", "lam": br.lam, "shift": br.shift}
            elif isinstance(br, Constant):
                b = {"type": "constant", "value": br.value}
            else:
                b = {"type": "zero"}
            out.append({"lo": reg.lo, "hi": _encode_inf(reg.hi), **b})
        return {"gamma": self.gamma, "regions": out}

    @classmethod
    def from_dict(cls, data: dict) -> "WealthProfile":
        regions = []
        for item in data["regions"]:
            kind = item["type"]
            if kind == "power":
                br: Branch = PowerBranch(float(item["lam"]), float(item["shift"]))
            elif kind == "constant":
                br = Constant(float(item["value"]))
            elif kind == "zero":
                br = Zero()
            else:
                raise DomainError(f"unknown branch type {kind!r}")
            regions.append(Region(float(item["lo"]), _decode_inf(item["hi"]), br))
        return cls(tuple(regions), float(data["gamma"]))


def _encode_inf(x: float):
    return "inf" if math.isinf(x) else x


def _decode_inf(x) -> float:
    return math.inf if x == "inf" else float(x)


# --------------------------------------------------------------------------
# Pointwise evaluation
# --------------------------------------------------------------------------


def branch_value(branch: Branch, xi, gamma: float):
    xi = np.asarray(xi, dtype=float)
    if isinstance(branch, PowerBranch):
        with np.errstate(divide="ignore", over="ignore"):
            return (branch.lam * xi) ** (-1.0 / gamma) + branch.shift
    if isinstance(branch, Constant):
        return np.full_like(xi, branch.value)
    return np.zeros_like(xi)


def evaluate(profile: WealthProfile, xi):
    """Terminal wealth at state price density level(s) ``xi``."""
    xi_arr = np.asarray(xi, dtype=float)
    if np.any(xi_arr < 0):
        raise DomainError("state price density must be non-negative")
    idx = np.searchsorted(np.asarray(profile.boundaries), xi_arr, side="right")
    out = np.zeros_like(xi_arr)
    for k, reg in enumerate(profile.regions):
        mask = idx == k
        if np.any(mask):
            out[mask] = branch_value(reg.branch, xi_arr[mask], profile.gamma)
    return float(out) if out.ndim == 0 else out


def edge_values(profile: WealthProfile, k: int) -> tuple[float, float]:
    """Wealth at the left end and the right-end limit of region ``k``."""
    reg = profile.regions[k]
    lo = float(branch_value(reg.branch, reg.lo, profile.gamma))
    hi = float(branch_value(reg.branch, reg.hi, profile.gamma)) if math.isfinite(reg.hi) else math.nan
    return lo, hi


# --------------------------------------------------------------------------
# Closed-form functionals
# --------------------------------------------------------------------------


def _power_moment(law: LognormalLaw, br: PowerBranch, gamma: float, a: float, b: float) -> float:
    """E[xi * (lam xi)^(-1/gamma) 1{a < xi < b}]."""
    if not b > a:
        return 0.0
    return br.lam ** (-1.0 / gamma) * float(truncated_mean(law, 1.0 - 1.0 / gamma, a, b))


def budget(profile: WealthProfile, law: LognormalLaw) -> float:
    """Initial cost E[xi_T X_T] of the terminal wealth."""
    total = 0.0
    for reg in profile.regions:
        br = reg.branch
        if isinstance(br, PowerBranch):
            total += _power_moment(law, br, profile.gamma, reg.lo, reg.hi)
            total += br.shift * float(truncated_mean(law, 1.0, reg.lo, reg.hi))
        elif isinstance(br, Constant):
            total += br.value * float(truncated_mean(law, 1.0, reg.lo, reg.hi))
    return total


def _below_level(br: PowerBranch, gamma: float, level: float) -> float:
    """State price density above which a power branch is below ``level``."""
    gap = level - br.shift
    if gap <= 0:
        return math.inf
    return gap ** (-gamma) / br.lam


def shortfall_probability(profile: WealthProfile, law: LognormalLaw, level: float) -> float:
    """P(X_T < level)."""
    total = 0.0
    for reg in profile.regions:
        br = reg.branch
        if isinstance(br, PowerBranch):
            a = max(reg.lo, _below_level(br, profile.gamma, level))
            if a < reg.hi:
                total += float(truncated_mean(law, 0.0, a, reg.hi))
        elif isinstance(br, Constant):
            if br.value < level:
                total += float(truncated_mean(law, 0.0, reg.lo, reg.hi))
        elif level > 0:
            total += float(truncated_mean(law, 0.0, reg.lo, reg.hi))
    return total


def default_probability(profile: WealthProfile, law: LognormalLaw) -> float:
    """Probability of complete default, P(X_T = 0)."""
    total = 0.0
    for reg in profile.regions:
        br = reg.branch
        if isinstance(br, Zero) or (isinstance(br, Constant) and br.value == 0.0):
            total += float(truncated_mean(law, 0.0, reg.lo, reg.hi))
    return total


def expected_shortfall(profile: WealthProfile, law: LognormalLaw, level: float) -> float:
    """Discounted expected shortfall E[xi_T (level - X_T) 1{X_T < level}]."""
    total = 0.0
    for reg in profile.regions:
        br = reg.branch
        if isinstance(br, PowerBranch):
            a = max(reg.lo, _below_level(br, profile.gamma, level))
            if a < reg.hi:
                total += (level - br.shift) * float(truncated_mean(law, 1.0, a, reg.hi))
                total -= _power_moment(law, br, profile.gamma, a, reg.hi)
        else:
            value = br.value if isinstance(br, Constant) else 0.0
            if value < level:
                total += (level - value) * float(truncated_mean(law, 1.0, reg.lo, reg.hi))
    return total


def expected_utility(profile: WealthProfile, law: LognormalLaw, u: CrraUtility, DT: float) -> float:
    """E[U((X_T - DT)^+)].

    Power branches must carry shift == DT, which holds for every optimal profile.
    """
    g = u.gamma
    total = 0.0
    for reg in profile.regions:
        br = reg.branch
        if isinstance(br, PowerBranch):
            if not math.isclose(br.shift, DT, rel_tol=1e-12, abs_tol=1e-12):
                raise NotImplementedError("closed-form utility needs power branches shifted by DT")
            # U((lam xi)^(-1/g)) = (lam xi)^(-(1-g)/g) / (1-g)
            p = -(1.0 - g) / g
            total += br.lam**p / (1.0 - g) * float(truncated_mean(law, p, reg.lo, reg.hi))
        elif isinstance(br, Constant) and br.value > DT:
            total += u.value(br.value - DT) * float(truncated_mean(law, 0.0, reg.lo, reg.hi))
    return total
