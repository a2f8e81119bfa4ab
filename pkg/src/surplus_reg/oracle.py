"""Brute-force dual verifier for the closed-form solutions.

The state space is replaced by equal-probability strata of the lognormal law of
xi_T, each represented by its conditional mean. For given multipliers every atom
picks the wealth maximising the pointwise Lagrangian

    U((x - D)^+) - lam xi x - penalty(x, xi)

over a fixed dense wealth grid plus a few per-atom candidates. Multipliers are
found by nested bisection (outer on the budget multiplier, inner on the risk
multiplier). At the end of each bisection the allocations at the two bracket
ends are mixed so that the constraint holds with equality; mixed atoms hold a
lottery over the two wealth levels, which keeps the discrete problem convex.

The grid maximum is evaluated through the upper concave hull of the grid points
(x_k, U((x_k - D)^+)) on each side of L. The maximum of a linear functional over
a finite point set is attained at a hull vertex, so this is the same maximum a
full matrix search would find, at a fraction of the cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from surplus_reg.errors import DomainError, InfeasibleError, RootFindingError
from surplus_reg.market import MarketParams, terminal_density_law, truncated_mean
from surplus_reg.profile import branch_value, evaluate
from surplus_reg.solvers import (
    ESConstraint,
    Institution,
    NoConstraint,
    RiskConstraint,
    Solution,
    VaRConstraint,
)
from surplus_reg.utility import CrraUtility

N_GRID = 2000
GRID_SPAN = 20.0  # top of the dense grid, in units of x0 e^{rT}


@dataclass(frozen=True)
class Atoms:
    xi: np.ndarray
    p: np.ndarray


def discretize(mkt: MarketParams, n_states: int) -> Atoms:
    """Equal-probability strata of xi_T, each atom at its conditional mean."""
    if n_states < 2:
        raise DomainError("need at least two states")
    law = terminal_density_law(mkt)
    q = np.linspace(0.0, 1.0, n_states + 1)
    with np.errstate(divide="ignore"):
        edges = np.exp(law.m + law.s * _ndtri_ext(q))
    mass = truncated_mean(law, 1.0, edges[:-1], edges[1:])
    p = np.full(n_states, 1.0 / n_states)
    return Atoms(xi=mass * n_states, p=p)


def _ndtri_ext(q: np.ndarray) -> np.ndarray:
    from scipy.special import ndtri

    out = np.empty_like(q)
    out[q <= 0] = -np.inf
    out[q >= 1] = np.inf
    mid = (q > 0) & (q < 1)
    out[mid] = ndtri(q[mid])
    return out


@dataclass(frozen=True)
class OracleInstance:
    xi: np.ndarray
    p: np.ndarray
    wealth_grid: np.ndarray
    constraint: RiskConstraint
    x0: float
    DT: float
    gamma: float

    def __post_init__(self) -> None:
        if abs(float(np.sum(self.p)) - 1.0) > 1e-12:
            raise DomainError("atom probabilities must sum to one")
        if np.any(np.diff(self.xi) <= 0):
            raise DomainError("atoms must be strictly increasing in xi")

    @classmethod
    def build(
        cls,
        mkt: MarketParams,
        inst: Institution,
        u: CrraUtility,
        constraint: RiskConstraint | None = None,
        n_states: int = 500,
        n_grid: int = N_GRID,
    ) -> "OracleInstance":
        constraint = constraint or NoConstraint()
        atoms = discretize(mkt, n_states)
        top = GRID_SPAN * inst.x0 * math.exp(mkt.r * mkt.T)
        levels = np.geomspace(1e-6 * inst.x0, top, n_grid)
        special = [0.0]
        if not isinstance(constraint, NoConstraint):
            special.append(constraint.L)
        grid = np.unique(np.concatenate([levels, special]))
        return cls(atoms.xi, atoms.p, grid, constraint, inst.x0, inst.DT, u.gamma)

    @property
    def L(self) -> float:
        return 0.0 if isinstance(self.constraint, NoConstraint) else self.constraint.L


# --------------------------------------------------------------------------
# Pointwise Lagrangian
# --------------------------------------------------------------------------


def _utility(x, D: float, gamma: float):
    z = np.maximum(np.asarray(x, dtype=float) - D, 0.0)
    return z ** (1.0 - gamma) / (1.0 - gamma)


@dataclass(frozen=True)
class _Hull:
    x: np.ndarray
    v: np.ndarray
    neg_slopes: np.ndarray  # ascending, -(edge slopes)

    @classmethod
    def of(cls, x: np.ndarray, v: np.ndarray) -> "_Hull | None":
        if x.size == 0:
            return None
        keep: list[int] = []
        for k in range(x.size):
            while len(keep) >= 2:
                i, j = keep[-2], keep[-1]
                # drop j if it lies on or below the chord from i to k
                if (v[j] - v[i]) * (x[k] - x[i]) <= (v[k] - v[i]) * (x[j] - x[i]):
                    keep.pop()
                else:
                    break
            keep.append(k)
        hx, hv = x[keep], v[keep]
        slopes = np.diff(hv) / np.diff(hx)
        return cls(hx, hv, -slopes)

    def argmax(self, y: np.ndarray) -> np.ndarray:
        """Vertex maximising v - y x for each slope y."""
        return np.searchsorted(self.neg_slopes, -y, side="left")


class Lagrangian:
    """Per-atom maximiser of the pointwise Lagrangian for an instance."""

    def __init__(self, inst: OracleInstance):
        self.inst = inst
        g, D, L = inst.wealth_grid, inst.DT, inst.L
        u = _utility(g, D, inst.gamma)
        self.below = _Hull.of(g[g < L], u[g < L])
        self.above = _Hull.of(g[g >= L], u[g >= L])
        self.kind = type(inst.constraint).__name__

    def objective(self, x: np.ndarray, lam: float, lam2: float) -> np.ndarray:
        inst = self.inst
        x = np.asarray(x, dtype=float)
        xi = inst.xi if x.ndim == 1 else inst.xi[:, None]
        val = _utility(x, inst.DT, inst.gamma) - lam * xi * x
        if self.kind == "ESConstraint":
            val = val - lam2 * xi * np.maximum(inst.L - x, 0.0)
        elif self.kind == "VaRConstraint":
            val = val - lam2 * (x < inst.L)
        return val

    def maximise(self, lam: float, lam2: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
        """Return (argmax wealth, max value) per atom."""
        inst = self.inst
        xi, D, g, L = inst.xi, inst.DT, inst.gamma, inst.L
        cands = [np.zeros_like(xi), np.full_like(xi, L), (lam * xi) ** (-1.0 / g) + D]
        if self.kind == "ESConstraint" and lam2 < lam:
            cands.append(((lam - lam2) * xi) ** (-1.0 / g) + D)
        if self.below is not None:
            slope = lam * xi if self.kind != "ESConstraint" else (lam - lam2) * xi
            idx = np.minimum(self.below.argmax(slope), self.below.x.size - 1)
            cands.append(self.below.x[idx])
        if self.above is not None:
            idx = np.minimum(self.above.argmax(lam * xi), self.above.x.size - 1)
            cands.append(self.above.x[idx])
        stack = np.stack(cands, axis=1)
        vals = self.objective(stack, lam, lam2)
        best = np.argmax(vals, axis=1)
        rows = np.arange(xi.size)
        return stack[rows, best], vals[rows, best]


# --------------------------------------------------------------------------
# Lottery allocations
# --------------------------------------------------------------------------


@dataclass
class Allocation:
    """Per-atom lottery: outcome rows ``x`` with probabilities ``w`` (columns sum to 1)."""

    x: np.ndarray
    w: np.ndarray

    @classmethod
    def pure(cls, x: np.ndarray) -> "Allocation":
        return cls(x[None, :].copy(), np.ones((1, x.size)))

    def mean(self) -> np.ndarray:
        return np.sum(self.w * self.x, axis=0)

    def expect(self, f) -> np.ndarray:
        return np.sum(self.w * f(self.x), axis=0)

    @staticmethod
    def mix(a: "Allocation", b: "Allocation", wb) -> "Allocation":
        wb = np.broadcast_to(np.asarray(wb, dtype=float), a.x.shape[1:])
        return Allocation(np.vstack([a.x, b.x]), np.vstack([a.w * (1.0 - wb), b.w * wb]))

    def is_lottery(self, rtol: float = 1e-7) -> np.ndarray:
        live = self.w > 0
        spread = np.max(np.where(live, self.x, -np.inf), axis=0) - np.min(np.where(live, self.x, np.inf), axis=0)
        return spread > rtol * np.maximum(1.0, np.max(np.abs(self.x), axis=0))


def _cost(inst: OracleInstance, alloc: Allocation) -> float:
    return float(np.sum(inst.p * inst.xi * alloc.mean()))


def _risk(inst: OracleInstance, alloc: Allocation) -> float:
    c = inst.constraint
    if isinstance(c, ESConstraint):
        return float(np.sum(inst.p * inst.xi * alloc.expect(lambda x: np.maximum(c.L - x, 0.0))))
    if isinstance(c, VaRConstraint):
        return float(np.sum(inst.p * alloc.expect(lambda x: (x < c.L).astype(float))))
    return 0.0


def _target(inst: OracleInstance) -> float:
    c = inst.constraint
    return c.epsilon if isinstance(c, ESConstraint) else c.alpha


def _switch_in_order(inst: OracleInstance, lo: Allocation, hi: Allocation, measure, target: float) -> Allocation:
    """Move atoms from ``lo`` to ``hi`` in increasing xi until measure(alloc) hits target.

    ``measure`` must be affine in the per-atom weights and move monotonically
    from above to below the target as atoms switch.
    """
    diff = np.any(lo.x != hi.x, axis=0) | np.any(lo.w != hi.w, axis=0)
    weights = np.zeros(inst.xi.size)
    start = measure(Allocation.mix(lo, hi, weights))
    if start <= target:
        return Allocation.mix(lo, hi, weights)
    for i in np.flatnonzero(diff):  # atoms are sorted by xi
        weights[i] = 1.0
        now = measure(Allocation.mix(lo, hi, weights))
        if now <= target:
            before = start
            # affine in the weight of atom i: interpolate
            weights[i] = (before - target) / (before - now) if before != now else 1.0
            return Allocation.mix(lo, hi, weights)
        start = now
    return Allocation.mix(lo, hi, weights)


# --------------------------------------------------------------------------
# Dual search
# --------------------------------------------------------------------------


@dataclass
class OracleResult:
    expected_utility: float
    dual_value: float
    allocation: np.ndarray  # expected wealth per atom
    lottery: np.ndarray  # atoms holding a two-point lottery
    lam: float
    lam2: float
    budget: float
    risk: float
    alloc: Allocation = field(repr=False)


def discrete_x0_min(inst: OracleInstance) -> float:
    c = inst.constraint
    if isinstance(c, ESConstraint):
        return max(c.L * float(np.sum(inst.p * inst.xi)) - c.epsilon, 0.0)
    if isinstance(c, VaRConstraint):
        # insure the cheapest (lowest xi) mass 1 - alpha, the last atom fractionally
        need = 1.0 - c.alpha
        cum = np.cumsum(inst.p)
        frac = np.clip((need - (cum - inst.p)) / inst.p, 0.0, 1.0)
        return c.L * float(np.sum(inst.p * inst.xi * frac))
    return 0.0


def _log_bisect(pred, lo: float, hi: float, rel_tol: float, max_iter: int = 200) -> tuple[float, float]:
    """Shrink [lo, hi] keeping pred(lo) False and pred(hi) True."""
    for _ in range(max_iter):
        if hi / lo - 1.0 <= rel_tol:
            break
        mid = math.sqrt(lo * hi)
        if pred(mid):
            hi = mid
        else:
            lo = mid
    return lo, hi


class _Solver:
    def __init__(self, inst: OracleInstance, rel_tol: float):
        self.inst = inst
        self.lag = Lagrangian(inst)
        self.rel_tol = rel_tol
        self.constrained = not isinstance(inst.constraint, NoConstraint)

    def inner(self, lam: float) -> tuple[Allocation, float]:
        """Allocation at budget multiplier lam with the risk constraint binding (or slack)."""
        x0, _ = self.lag.maximise(lam, 0.0)
        base = Allocation.pure(x0)
        if not self.constrained:
            return base, 0.0
        inst, target = self.inst, _target(self.inst)
        if _risk(inst, base) <= target:
            return base, 0.0

        def ok(l2: float) -> bool:
            return _risk(inst, Allocation.pure(self.lag.maximise(lam, l2)[0])) <= target

        hi = lam if isinstance(inst.constraint, ESConstraint) else lam * inst.x0
        for _ in range(200):
            if ok(hi):
                break
            hi *= 2.0
        else:
            raise RootFindingError("risk multiplier could not be bracketed")
        lo = hi * 1e-12
        if ok(lo):
            lo, hi = 0.0, lo
            a = base
        else:
            lo, hi = _log_bisect(ok, lo, hi, self.rel_tol)
            a = Allocation.pure(self.lag.maximise(lam, lo)[0])
        b = Allocation.pure(self.lag.maximise(lam, hi)[0])
        alloc = _switch_in_order(inst, a, b, lambda z: _risk(inst, z), target)
        return alloc, 0.5 * (lo + hi)

    def solve(self) -> OracleResult:
        inst = self.inst
        x_min = discrete_x0_min(inst)
        if inst.x0 < x_min:
            raise InfeasibleError(inst.x0, x_min, f"infeasible on the discrete states: x0_min={x_min:.12g}")

        def cheap(lam: float) -> bool:
            return _cost(inst, self.inner(lam)[0]) <= inst.x0

        lo, hi = 1.0, 1.0
        while cheap(lo):
            lo /= 4.0
            if lo < 1e-300:
                raise RootFindingError("budget multiplier could not be bracketed")
        while not cheap(hi):
            hi *= 4.0
            if hi > 1e300:
                raise RootFindingError("budget multiplier could not be bracketed")
        lo, hi = _log_bisect(cheap, lo, hi, self.rel_tol)
        a, l2a = self.inner(lo)
        b, l2b = self.inner(hi)
        ca, cb = _cost(inst, a), _cost(inst, b)
        wb = 0.0 if ca == cb else (ca - inst.x0) / (ca - cb)
        alloc = Allocation.mix(a, b, min(max(wb, 0.0), 1.0))

        lam, lam2 = 0.5 * (lo + hi), 0.5 * (l2a + l2b)
        eu = float(np.sum(inst.p * alloc.expect(lambda x: _utility(x, inst.DT, inst.gamma))))
        _, vmax = self.lag.maximise(lam, lam2)
        dual = float(np.sum(inst.p * vmax)) + lam * inst.x0
        if self.constrained:
            dual += lam2 * _target(inst)
        return OracleResult(
            expected_utility=eu,
            dual_value=dual,
            allocation=alloc.mean(),
            lottery=alloc.is_lottery(),
            lam=lam,
            lam2=lam2,
            budget=_cost(inst, alloc),
            risk=_risk(inst, alloc),
            alloc=alloc,
        )


def oracle_solve(inst: OracleInstance, *, rel_tol: float = 1e-10) -> OracleResult:
    return _Solver(inst, rel_tol).solve()


# --------------------------------------------------------------------------
# Cross-check against a closed-form solution
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CrosscheckReport:
    utility_gap: float
    profile_sup_gap: float
    excluded_atoms: int
    closed_utility: float
    oracle_utility: float
    dual_value: float
    passed: bool
    utility_tol: float
    profile_tol: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def discontinuities(sol: Solution) -> list[float]:
    """Region boundaries across which the closed-form wealth jumps."""
    prof = sol.profile
    out = []
    for left, right in zip(prof.regions, prof.regions[1:]):
        b = left.hi
        lv = float(branch_value(left.branch, b, prof.gamma))
        rv = float(branch_value(right.branch, b, prof.gamma))
        if abs(lv - rv) > 1e-9 * max(1.0, abs(lv), abs(rv)):
            out.append(b)
    return out


def crosscheck(
    sol: Solution,
    inst: OracleInstance,
    *,
    result: OracleResult | None = None,
    utility_tol: float = 1e-3,
    profile_tol: float = 1e-2,
) -> CrosscheckReport:
    res = result if result is not None else oracle_solve(inst)
    eu_closed = sol.diagnostics["expected_utility"]
    utility_gap = abs(eu_closed - res.expected_utility) / abs(eu_closed)

    xi = inst.xi
    lo = np.concatenate([[0.0], xi[:-1]])
    hi = np.concatenate([xi[1:], [np.inf]])
    near = np.zeros(xi.size, dtype=bool)
    for b in discontinuities(sol):
        near |= (lo <= b) & (b <= hi)
    gaps = np.abs(evaluate(sol.profile, xi) - res.allocation) / inst.x0
    kept = gaps[~near]
    sup = float(np.max(kept)) if kept.size else 0.0
    return CrosscheckReport(
        utility_gap=utility_gap,
        profile_sup_gap=sup,
        excluded_atoms=int(np.sum(near)),
        closed_utility=eu_closed,
        oracle_utility=res.expected_utility,
        dual_value=res.dual_value,
        passed=bool(utility_gap <= utility_tol and sup <= profile_tol),
        utility_tol=utility_tol,
        profile_tol=profile_tol,
    )


def band_structure(allocation: np.ndarray, L: float, skip: np.ndarray | None = None, rtol: float = 1e-9) -> list[str]:
    """Run-length labels of an allocation in atom order, ignoring atoms flagged in ``skip``.

    Labels: "above" (above L), "at" (held at L), "below" (positive but below L)
    and "zero".
    """
    labels: list[str] = []
    for i, x in enumerate(allocation):
        if skip is not None and skip[i]:
            continue
        if x <= rtol:
            lab = "zero"
        elif abs(x - L) <= rtol * max(1.0, L):
            lab = "at"
        elif x > L:
            lab = "above"
        else:
            lab = "below"
        if not labels or labels[-1] != lab:
            labels.append(lab)
    return labels
