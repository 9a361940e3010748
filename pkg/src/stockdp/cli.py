"""
Command line front end.

    stockdp solve          --config run.json --out DIR
    stockdp structure      --config run.json --out DIR
    stockdp classify-sweep --config run.json --out DIR
    stockdp simulate       --config run.json --out DIR [--policy FILE] [--seed N]
    stockdp compare        --config run.json --out DIR [--policy FILE] [--seed N]

Exit codes: 0 success, 2 config error, 3 divergence verdict,
4 oracle disagreement, 5 missing or corrupted artifact.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import config as cfgio
from .config import ArtifactError, ConfigError, RunConfig, config_hash, write_policy, write_table
from .errors import DivergenceError, OracleDisagreementError, StockDPError, StructureUnsupportedError
from .simulate import SimConfig, compare_policies, evaluate_policy_mc
from .solver import PolicyTable, evaluate_policy_dp, solve_finite_horizon, solve_infinite_horizon
from .solver import default_ceiling, detect_divergence
from .structure import (alpha_star, build_structured_policy, classify_regime, k_convexity_check,
                        n_alpha_formula, n_alpha_oracle)

log = logging.getLogger("stockdp")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_ORACLE = 4
EXIT_ARTIFACT = 5


def threads() -> int:
    raw = os.environ.get("STOCKDP_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        n = os.cpu_count() or 1
    return max(1, n)


def _num(x):
    return "inf" if x == math.inf else x


def _write_json(path: Path, obj) -> Path:
    cfgio.atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


# -- solve -------------------------------------------------------------------

def cmd_solve(cfg: RunConfig, out: Path) -> int:
    spec, grid, fmt = cfg.model, cfg.grid, cfg.outputs.format
    chash = config_hash(cfg)
    N = cfg.solver.horizon
    ceiling = cfg.solver.v_max if cfg.solver.v_max is not None else default_ceiling(spec, grid)
    if N == math.inf:
        sol = solve_infinite_horizon(spec, grid, cfg.solver.tol, v_max=cfg.solver.v_max,
                                     max_iterations=cfg.solver.max_iterations)
        trace_rows = [(i, sup, sol.residuals[i - 1] if i else "") for i, sup in enumerate(sol.trace)]
        write_table(out / "trace", ["iteration", "sup_norm", "residual"], trace_rows, chash, fmt)
        if sol.verdict != "diverging":
            write_table(out / "value", ["x", "value"], list(zip(grid.points, sol.value.values)), chash, fmt)
            write_policy(out / "policy", sol.policy, chash, fmt)
        verdict, iterations = sol.verdict, sol.iterations
    else:
        sol = solve_finite_horizon(spec, grid, int(N))
        trace = [float(np.max(np.abs(v.values))) for v in sol.values]
        trace_rows = [(t, s) for t, s in enumerate(trace)]
        write_table(out / "trace", ["stage", "sup_norm"], trace_rows, chash, fmt)
        finite = all(np.all(np.isfinite(v.values)) for v in sol.values)
        verdict = detect_divergence(trace, ceiling) if finite else "diverging"
        if verdict != "diverging":
            verdict = "converged" if detect_divergence(trace, ceiling) == "converging" else "completed"
        if verdict != "diverging":
            for t, v in enumerate(sol.values):
                write_table(out / f"value_stage_{t}", ["x", "value"], list(zip(grid.points, v.values)), chash, fmt)
            for t, p in enumerate(sol.policies):
                write_policy(out / f"policy_stage_{t}", p, chash, fmt)
        iterations = int(N)
    _write_json(out / "verdict.json", {"config_hash": chash, "verdict": verdict, "iterations": iterations,
                                       "ceiling": ceiling})
    log.info("solve: %s after %d iterations (config %s)", verdict, iterations, chash)
    return EXIT_DIVERGED if verdict == "diverging" else EXIT_OK


# -- structure ---------------------------------------------------------------

def structure_report(cfg: RunConfig, oracle=None) -> dict:
    oracle = oracle or n_alpha_oracle
    spec, grid = cfg.model, cfg.grid
    a_star = alpha_star(spec.h, spec.c_bar)
    n_formula = n_alpha_formula(a_star, spec.alpha)
    horizon = "infinite" if cfg.solver.horizon == math.inf else "finite"
    report = {
        "config_hash": config_hash(cfg),
        "alpha_star": a_star,
        "k_h": spec.h.left_slope_magnitude,
        "alpha": spec.alpha,
        "N_alpha": _num(n_formula),
        "regime_label": classify_regime(a_star, spec.alpha, horizon),
        "horizon": _num(cfg.solver.horizon),
    }
    try:
        n_oracle = oracle(spec, cfg.structure.t_max, cfg.structure.x_probe)
        report["oracle_N_alpha"] = _num(n_oracle)
        report["oracle_agrees"] = n_oracle == n_formula
    except OracleDisagreementError as exc:
        report["oracle_N_alpha"] = None
        report["oracle_agrees"] = False
        report["oracle_error"] = str(exc)

    if horizon == "infinite":
        sol = solve_infinite_horizon(spec, grid, cfg.solver.tol, v_max=cfg.solver.v_max,
                                     max_iterations=cfg.solver.max_iterations)
        report["solver_verdict"] = sol.verdict
        if sol.verdict == "diverging":
            return report
        gs = [("converged", sol.g)]
        products, N = sol, "infinite"
    else:
        N = int(cfg.solver.horizon)
        sol = solve_finite_horizon(spec, grid, N)
        vals = [float(np.max(np.abs(v.values))) for v in sol.values]
        ceiling = cfg.solver.v_max if cfg.solver.v_max is not None else default_ceiling(spec, grid)
        diverged = not all(math.isfinite(x) for x in vals) or detect_divergence(vals, ceiling) == "diverging"
        report["solver_verdict"] = "diverging" if diverged else "completed"
        if diverged:
            return report
        gs = list(enumerate(sol.g_functions))
        products = sol
    kconv = []
    for stage, g in gs:
        scale = 1.0 + float(np.max(np.abs(g.values)))
        kc = k_convexity_check(g, spec.K, tolerance=1e-7 * scale)
        kconv.append({"stage": stage, "passed": kc.passed, "worst_violation": kc.worst_violation})
    report["kconvexity"] = kconv
    try:
        pol = build_structured_policy(spec, grid, N, products)
        report["policy_kind"] = pol.kind
        if pol.kind == "sS":
            report["thresholds"] = [{"stage": "all", "s": pol.s, "S": pol.S}]
        elif pol.kind == "sStN":
            report["thresholds"] = [{"stage": t, "s": s, "S": S} for t, (s, S) in enumerate(pol.thresholds)]
            report["never_order_stages"] = list(range(pol.N - pol.n, pol.N))
        else:
            report["thresholds"] = []
    except StructureUnsupportedError as exc:
        report["unsupported"] = str(exc)
    except StockDPError as exc:
        report["extraction_error"] = str(exc)
    return report


def cmd_structure(cfg: RunConfig, out: Path, oracle=None) -> int:
    report = structure_report(cfg, oracle)
    chash, fmt = report["config_hash"], cfg.outputs.format
    _write_json(out / "structure.json", report)
    rows = [(r["stage"], r["s"], r["S"]) for r in report.get("thresholds", [])]
    write_table(out / "thresholds", ["stage", "s", "S"], rows, chash, fmt)
    rows = [(r["stage"], r["passed"], r["worst_violation"]) for r in report.get("kconvexity", [])]
    write_table(out / "kconvexity", ["stage", "passed", "worst_violation"], rows, chash, fmt)
    if not report["oracle_agrees"]:
        log.error("N_alpha oracle disagrees with the formula")
        return EXIT_ORACLE
    if report.get("solver_verdict") == "diverging":
        return EXIT_DIVERGED
    return EXIT_OK


# -- classify-sweep -----------------------------------------------------------

def sweep_axes(n_star: int, n_alpha: int):
    """Cell-left grids: alpha_star over [-1, 1), alpha over [0, 1)."""
    if n_star < 2 or n_alpha < 2:
        raise ConfigError("sweep resolutions must be >= 2")
    return (np.linspace(-1.0, 1.0, n_star, endpoint=False),
            np.linspace(0.0, 1.0, n_alpha, endpoint=False))


def classify_sweep(n_star: int, n_alpha: int, horizon: str = "finite") -> list[tuple]:
    stars, alphas = sweep_axes(n_star, n_alpha)
    rows = []
    for a_star in stars:
        for alpha in alphas:
            a_star, alpha = float(a_star), float(alpha)
            rows.append((a_star, alpha, classify_regime(a_star, alpha, horizon), _num(n_alpha_formula(a_star, alpha))))
    return rows


def cmd_classify_sweep(cfg: RunConfig, out: Path) -> int:
    sw = cfg.sweep
    rows = classify_sweep(sw.alpha_star_points, sw.alpha_points, sw.horizon)
    write_table(out / f"regime_map_{sw.horizon}", ["alpha_star", "alpha", "label", "N_alpha"],
                rows, config_hash(cfg), cfg.outputs.format)
    return EXIT_OK


# -- simulate / compare -------------------------------------------------------

def _sim_config(cfg: RunConfig) -> SimConfig:
    s = cfg.sim
    return SimConfig(s.seed, s.n_paths, s.horizon_cap, s.discount_tail_epsilon)


def _load_or_solve_policy(cfg: RunConfig, policy_path: Path | None) -> PolicyTable:
    if policy_path is not None:
        pol = cfgio.read_policy(policy_path)
        if pol.grid != cfg.grid:
            raise ArtifactError(f"policy artifact grid {pol.grid} differs from config grid {cfg.grid}")
        return pol
    sol = solve_infinite_horizon(cfg.model, cfg.grid, cfg.solver.tol, v_max=cfg.solver.v_max,
                                 max_iterations=cfg.solver.max_iterations)
    if sol.verdict == "diverging":
        raise DivergenceError("no optimal policy: value iteration diverges", sol.trace)
    return sol.policy


def cmd_simulate(cfg: RunConfig, out: Path, policy_path: Path | None = None) -> int:
    if cfg.solver.horizon != math.inf:
        raise ConfigError("simulate evaluates stationary policies; set solver.horizon to \"inf\"")
    spec, grid = cfg.model, cfg.grid
    policy = _load_or_solve_policy(cfg, policy_path)
    sc = _sim_config(cfg)
    dp = evaluate_policy_dp(policy, spec, grid, cfg.solver.tol, v_max=cfg.solver.v_max,
                            max_iterations=cfg.solver.max_iterations)

    def one(x0):
        r = evaluate_policy_mc(x0, policy, spec, sc)
        dpv = float(dp(x0))
        diff = abs(r.mean - dpv)
        return (x0, r.mean, r.stderr, r.n_paths, r.truncation_bias_bound, r.horizon_cap, dpv, diff,
                diff <= 4 * r.stderr + r.truncation_bias_bound)

    with ThreadPoolExecutor(max_workers=threads()) as pool:
        rows = list(pool.map(one, cfg.sim.start_states))
    write_table(out / "simulate",
                ["x0", "mc_mean", "stderr", "n_paths", "truncation_bias_bound", "horizon", "dp_value",
                 "abs_diff", "within_4se_plus_bias"],
                rows, config_hash(cfg), cfg.outputs.format, {"seed": sc.seed})
    return EXIT_OK


def cmd_compare(cfg: RunConfig, out: Path, policy_path: Path | None = None) -> int:
    """Optimal (or supplied) table policy against never-order and, when available, the structured policy."""
    spec, grid = cfg.model, cfg.grid
    if cfg.solver.horizon != math.inf:
        raise ConfigError("compare evaluates stationary policies; set solver.horizon to \"inf\"")
    main = _load_or_solve_policy(cfg, policy_path)
    names = ["table", "never-order"]
    policies = [main, PolicyTable.never_order(grid)]
    try:
        sol = solve_infinite_horizon(spec, grid, cfg.solver.tol, v_max=cfg.solver.v_max,
                                     max_iterations=cfg.solver.max_iterations)
        structured = build_structured_policy(spec, grid, "infinite", sol)
        if structured.kind == "sS":
            names.append(f"sS({structured.s:g},{structured.S:g})")
            policies.append(structured)
    except StockDPError:
        pass
    sc = _sim_config(cfg)

    def one(x0):
        return [(x0, names[r.index], r.mean, r.stderr, r.diff_vs_best, r.diff_stderr, r.ci_low, r.ci_high)
                for r in compare_policies(x0, policies, spec, sc, grid)]

    with ThreadPoolExecutor(max_workers=threads()) as pool:
        rows = [row for rs in pool.map(one, cfg.sim.start_states) for row in rs]
    write_table(out / "compare",
                ["x0", "policy", "mc_mean", "stderr", "diff_vs_best", "diff_stderr", "ci_low", "ci_high"],
                rows, config_hash(cfg), cfg.outputs.format, {"seed": sc.seed})
    return EXIT_OK


# -- dispatch ----------------------------------------------------------------

COMMANDS = {
    "solve": cmd_solve,
    "structure": cmd_structure,
    "classify-sweep": cmd_classify_sweep,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stockdp", description="Discounted inventory control with setup costs.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, type=Path)
        sp.add_argument("--out", type=Path, help="output directory (default: outputs.dir of the config)")
        sp.add_argument("--seed", type=int, help="override sim.seed")
        sp.add_argument("--format", choices=["csv", "jsonl"], help="override outputs.format")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name in ("simulate", "compare"):
            sp.add_argument("--policy", type=Path, help="policy artifact written by `solve`")
    return p


def apply_overrides(cfg: RunConfig, seed=None, fmt=None) -> RunConfig:
    if seed is not None:
        if not 0 <= seed < 2**64:
            raise ConfigError("--seed must be a 64-bit unsigned integer")
        cfg = dataclasses.replace(cfg, sim=dataclasses.replace(cfg.sim, seed=seed))
    if fmt is not None:
        cfg = dataclasses.replace(cfg, outputs=dataclasses.replace(cfg.outputs, format=fmt))
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = apply_overrides(cfgio.load(args.config), args.seed, args.format)
        out = args.out if args.out is not None else Path(cfg.outputs.dir)
        print(f"config_hash={config_hash(cfg)}")
        fn = COMMANDS[args.command]
        if args.command in ("simulate", "compare"):
            return fn(cfg, out, args.policy)
        return fn(cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ArtifactError as exc:
        print(f"artifact error: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT
    except DivergenceError as exc:
        print(f"diverging: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OracleDisagreementError as exc:
        print(f"oracle disagreement: {exc}", file=sys.stderr)
        return EXIT_ORACLE


if __name__ == "__main__":
    sys.exit(main())
