"""Command-line front end.

    surplus-reg solve        --config run.yaml [--out solution.json]
    surplus-reg figure NAME  --config run.yaml --grid 0.2,2.5,200 [--t 0.5]
    surplus-reg equivalence  --config run.yaml [--alphas 0.005,0.01,0.05]
    surplus-reg verify       --config run.yaml [--n-states 500] [--n-paths 100000] [--seed 42]

Exit codes: 0 ok, 1 configuration error, 2 infeasible, 3 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from surplus_reg import equivalence, hedging
from surplus_reg.errors import DomainError, InfeasibleError
from surplus_reg.market import MarketParams, conditional_density_law
from surplus_reg.oracle import OracleInstance, band_structure, crosscheck, oracle_solve
from surplus_reg.profile import evaluate
from surplus_reg.solvers import (
    ESConstraint,
    Institution,
    NoConstraint,
    RiskConstraint,
    Solution,
    VaRConstraint,
    perturbed,
    solve,
    solve_benchmark,
)
from surplus_reg.utility import CrraUtility, tangent_point

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_VERIFY = 0, 1, 2, 3
FIGURES = ("terminal", "wealth_t", "strategy_t", "exposure_t")
REPLICATION_STEPS = 250


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    market: MarketParams
    institution: Institution
    utility: CrraUtility
    constraint: RiskConstraint
    out_format: str = "json"
    out_path: str | None = None


# --------------------------------------------------------------------------
# Config parsing
# --------------------------------------------------------------------------


def _num(section: dict, key: str, where: str) -> float:
    if key not in section:
        raise ConfigError(f"{where}.{key}: missing")
    try:
        return float(section[key])
    except (TypeError, ValueError):
        raise ConfigError(f"{where}.{key}: expected a number, got {section[key]!r}") from None


def _section(data: dict, key: str) -> dict:
    sec = data.get(key)
    if not isinstance(sec, dict):
        raise ConfigError(f"{key}: missing or not a mapping")
    return sec


def parse_config(text: str) -> RunConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        line = f"line {mark.line + 1}: " if mark is not None else ""
        raise ConfigError(f"{line}{exc.problem}") from None
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping")
    try:
        m = _section(data, "market")
        mkt = MarketParams(_num(m, "mu", "market"), _num(m, "r", "market"), _num(m, "sigma", "market"), _num(m, "T", "market"))
        i = _section(data, "institution")
        x0 = _num(i, "x0", "institution")
        if "DT" in i:
            inst = Institution(x0=x0, DT=_num(i, "DT", "institution"))
        else:
            inst = Institution.from_accrual(x0, _num(i, "D0", "institution"), _num(i, "g", "institution"), mkt)
        u = CrraUtility(_num(_section(data, "utility"), "gamma", "utility"))
        constraint = _parse_constraint(data.get("constraint"), inst)
        outputs = data.get("outputs") or {}
        fmt = outputs.get("format", "json")
        if fmt not in ("json", "csv"):
            raise ConfigError(f"outputs.format: expected json or csv, got {fmt!r}")
        return RunConfig(mkt, inst, u, constraint, fmt, outputs.get("path"))
    except DomainError as exc:
        raise ConfigError(str(exc)) from None


def _parse_constraint(c, inst: Institution) -> RiskConstraint:
    if c is None:
        return NoConstraint()
    if not isinstance(c, dict):
        raise ConfigError("constraint: expected a mapping")
    kind = str(c.get("type", "none")).lower()
    if kind == "none":
        return NoConstraint()
    L = _num(c, "L", "constraint")
    if kind == "var":
        return VaRConstraint(L, _num(c, "alpha", "constraint"))
    if kind == "es":
        if "epsilon" in c:
            return ESConstraint(L, _num(c, "epsilon", "constraint"))
        if "epsilon_pct" in c:
            return ESConstraint(L, _num(c, "epsilon_pct", "constraint") / 100.0 * inst.x0)
        raise ConfigError("constraint.epsilon: missing (or give epsilon_pct, percent of x0)")
    raise ConfigError(f"constraint.type: expected none, var or es, got {kind!r}")


def load_config(path: str) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text)


def parse_grid(spec: str) -> tuple[float, float, int]:
    try:
        lo, hi, n = spec.split(",")
        lo_f, hi_f, n_i = float(lo), float(hi), int(n)
    except ValueError:
        raise ConfigError(f"--grid: expected 'min,max,n', got {spec!r}") from None
    if n_i < 1:
        raise ConfigError("--grid: n must be at least 1")
    if not 0 < lo_f <= hi_f:
        raise ConfigError("--grid: need 0 < min <= max")
    return lo_f, hi_f, n_i


# --------------------------------------------------------------------------
# Output helpers
# --------------------------------------------------------------------------


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.12g}"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def _dump_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def _csv(header: list[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) if not isinstance(v, str) else v for v in row])
    return buf.getvalue()


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def solution_record(sol: Solution) -> dict:
    return {
        "regime": sol.regime,
        "binding": sol.binding,
        "lambda_budget": sol.lambda_budget,
        "lambda_risk": sol.lambda_risk,
        "boundaries": sol.profile.boundaries,
        "profile": sol.profile.to_dict(),
        "diagnostics": sol.diagnostics,
    }


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def cmd_solve(cfg: RunConfig, out: str | None) -> int:
    sol = solve(cfg.market, cfg.institution, cfg.utility, cfg.constraint)
    rec = solution_record(sol)
    if cfg.out_format == "csv":
        rows = [(k, v) for k, v in sorted(sol.diagnostics.items())]
        rows = [("regime", sol.regime), ("lambda_budget", sol.lambda_budget), ("lambda_risk", sol.lambda_risk)] + rows
        _emit(_csv(["key", "value"], rows), out)
    else:
        _emit(_dump_json(rec), out)
    return EXIT_OK


def cmd_figure(cfg: RunConfig, figure: str, grid: tuple[float, float, int], t: float | None, out: str | None) -> int:
    if figure not in FIGURES:
        raise ConfigError(f"unknown figure {figure!r}; expected one of {', '.join(FIGURES)}")
    lo, hi, n = grid
    xi = np.geomspace(lo, hi, n) if n > 1 else np.array([lo])
    mkt, u = cfg.market, cfg.utility
    sol = solve(mkt, cfg.institution, u, cfg.constraint)
    bench = solve_benchmark(mkt, cfg.institution, u)
    t = 0.5 * mkt.T if t is None else t
    if not 0 <= t < mkt.T:
        raise ConfigError(f"--t must satisfy 0 <= t < T, got {t}")

    if figure == "terminal":
        cols = [evaluate(sol.profile, xi), evaluate(bench.profile, xi)]
    elif figure == "wealth_t":
        cols = [hedging.wealth_pre_horizon(sol, mkt, u, t, xi), hedging.wealth_pre_horizon(bench, mkt, u, t, xi)]
    elif figure == "strategy_t":
        cols = [hedging.strategy_pre_horizon(sol, mkt, u, t, xi), hedging.strategy_pre_horizon(bench, mkt, u, t, xi)]
    else:
        cols = [hedging.relative_risk_exposure(sol, bench, mkt, u, t, xi)]
    header = ["xi", "value"] + (["benchmark_value"] if len(cols) == 2 else [])
    rows = zip(xi, *[np.atleast_1d(c) for c in cols])
    _emit(_csv(header, rows), out)
    return EXIT_OK


def cmd_equivalence(cfg: RunConfig, alphas: list[float], L: float | None, out: str | None) -> int:
    inst = cfg.institution
    if L is None:
        L = cfg.constraint.L if not isinstance(cfg.constraint, NoConstraint) else 0.9 * inst.DT
    rows = equivalence.equivalence_table(cfg.market, inst, L, alphas, cfg.utility)
    body = [(r.alpha, r.epsilon, r.epsilon_pct) for r in rows]
    text = _csv(["alpha", "epsilon", "epsilon_pct_of_x0"], body)
    if L > tangent_point(cfg.utility, inst.DT).hat_d:
        text += "# equivalence not guaranteed: L exceeds the tangent point of the debt\n"
        print("warning: equivalence not guaranteed for L above the tangent point", file=sys.stderr)
    _emit(text, out)
    return EXIT_OK


def fd_delta_check(sol: Solution, n_points: int, seed: int, *, h_rel: float = 1e-5, tol: float = 1e-4) -> dict:
    """Compare the closed-form exposure with a central difference of X_t in xi_t."""
    mkt, u = sol.market, sol.utility
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    worst = 0.0
    checked = 0
    bounds = np.asarray(sol.profile.boundaries)
    while checked < n_points:
        t = float(rng.uniform(0.05, 0.95) * mkt.T)
        law = conditional_density_law(mkt, t)
        xi = float(np.exp(law.m + law.s * rng.standard_normal()))
        if bounds.size and np.min(np.abs(np.log(xi / bounds))) < 1e-3:
            continue
        h = h_rel * xi
        up = hedging.wealth_pre_horizon(sol, mkt, u, t, xi + h)
        dn = hedging.wealth_pre_horizon(sol, mkt, u, t, xi - h)
        fd = -mkt.theta * xi * (up - dn) / (2 * h) / mkt.sigma
        an = hedging.risky_exposure(sol, mkt, t, xi)
        worst = max(worst, abs(an - fd) / (1.0 + abs(an)))
        checked += 1
    return {"points": checked, "worst_scaled_error": worst, "tolerance": tol, "passed": worst <= tol}


def cmd_verify(cfg: RunConfig, n_states: int, n_paths: int, seed: int, perturb: float | None, out: str | None) -> int:
    mkt, u = cfg.market, cfg.utility
    sol = solve(mkt, cfg.institution, u, cfg.constraint)
    checked = perturbed(sol, perturb) if perturb else sol
    inst = OracleInstance.build(mkt, cfg.institution, u, cfg.constraint, n_states=n_states)
    res = oracle_solve(inst)
    report = {"regime": checked.regime, "checks": {}}
    xc = crosscheck(checked, inst, result=res)
    report["checks"]["oracle"] = xc.to_dict() | {"passed": xc.passed}
    if checked.regime.endswith("fourregion") and not isinstance(cfg.constraint, NoConstraint):
        bands = band_structure(res.allocation, cfg.constraint.L, res.lottery)
        report["checks"]["four_band_structure"] = {
            "bands": bands,
            "passed": bands == ["above", "at", "below", "zero"],
        }
    report["checks"]["fd_delta"] = fd_delta_check(checked, 200, seed)
    if n_paths > 0:
        rep = hedging.simulate_replication(checked, mkt, u, n_paths, REPLICATION_STEPS, seed)
        tol = 0.01 * cfg.institution.x0
        report["checks"]["replication"] = rep.to_dict() | {"tolerance": tol, "passed": rep.rmse <= tol}
    else:
        report["checks"]["replication"] = {"skipped": True, "passed": True}
    ok = all(c["passed"] for c in report["checks"].values())
    report["passed"] = ok
    _emit(_dump_json(report), out)
    return EXIT_OK if ok else EXIT_VERIFY


# --------------------------------------------------------------------------
# Entry point
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="surplus-reg", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="YAML run configuration")
        sp.add_argument("--out", default=None, help="output path (default: stdout)")
        sp.add_argument("--seed", type=int, default=42)

    common(sub.add_parser("solve", help="solve the configured problem"))
    f = sub.add_parser("figure", help="emit figure data as CSV")
    f.add_argument("name", help=", ".join(FIGURES))
    f.add_argument("--grid", default="0.2,2.5,200", help="xi grid 'min,max,n' (log-spaced)")
    f.add_argument("--t", type=float, default=None, help="time for pre-horizon figures (default T/2)")
    common(f)
    e = sub.add_parser("equivalence", help="VaR level to ES budget table")
    e.add_argument("--alphas", default="0.005,0.01,0.05")
    e.add_argument("--L", type=float, default=None, help="threshold (default: constraint L, else 0.9 DT)")
    common(e)
    v = sub.add_parser("verify", help="oracle, delta and replication checks")
    v.add_argument("--n-states", type=int, default=500)
    v.add_argument("--n-paths", type=int, default=100000, help="0 skips the replication check")
    v.add_argument("--debug-perturb", type=float, default=None, help="scale the budget multiplier before checking")
    common(v)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        out = args.out or cfg.out_path
        if args.command == "solve":
            return cmd_solve(cfg, out)
        if args.command == "figure":
            return cmd_figure(cfg, args.name, parse_grid(args.grid), args.t, out)
        if args.command == "equivalence":
            try:
                alphas = [float(a) for a in args.alphas.split(",") if a.strip()]
            except ValueError:
                raise ConfigError(f"--alphas: expected comma-separated numbers, got {args.alphas!r}") from None
            return cmd_equivalence(cfg, alphas, args.L, out)
        if args.n_states < 2:
            raise ConfigError("--n-states must be at least 2")
        return cmd_verify(cfg, args.n_states, args.n_paths, args.seed, args.debug_perturb, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleError as exc:
        print(f"infeasible: x0={exc.x0:.12g} is below x0_min={exc.x0_min:.12g}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except DomainError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
