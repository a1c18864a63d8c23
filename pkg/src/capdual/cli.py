"""``capdual`` command line: solve problems described by spec files and write results as text.

Every command writes ``summary.json`` (numbers rounded to 12 significant
digits) plus two-column ``.dat`` plot files into ``--out``.  Exit codes:
0 success, 2 unreadable or invalid spec / bad usage, 3 infeasible
constraint, 4 solver non-convergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import dmc_solver, feedback_solver, gp_solver, rd_solver
from .dual_engine import DualResult, minimize_dual, trace_region, with_primal
from .errors import CapdualError, ConvergenceError, EnumerationLimitError, InfeasibleError
from .prob_core import ChannelMatrix, CostSpec, DiscreteDistribution
from .specfile import Problem, SpecError, check_spec, grid_points, load_spec, parse_grid

log = logging.getLogger("capdual")

EXIT_OK, EXIT_SPEC, EXIT_INFEASIBLE, EXIT_CONVERGENCE = 0, 2, 3, 4
DEFAULT_FIG4_GRID = (0.01, 3.0, 200)
DEFAULT_LAMBDA_GRID = (0.0, 10.0, 201)
GRID_AUDIT_POINTS = 2_000_000


class UsageError(CapdualError):
    pass


# --- solving -----------------------------------------------------------------

def _gp_channel(t):
    return gp_solver.StateChannel(t["state"], t["transition"])


def _fb_channel(t):
    return feedback_solver.FeedbackChannel(t["state"], t["transition"], t["feedback_size"])


def _source(pb: Problem, level):
    return rd_solver.SourceSpec(pb.tables["source"], pb.tables["distortion"], level)


def oracle_for(pb: Problem):
    """Inner oracle and orientation of the dual for ``pb``."""
    t = pb.tables
    if pb.kind == "dmc":
        return dmc_solver.dmc_oracle(t["matrix"], t["cost"], pb.inner_tol), "max"
    if pb.kind == "gp":
        return gp_solver.gp_oracle(_gp_channel(t), t["cost"], gp_solver.GPSearchBudget(**pb.search)), "max"
    if pb.kind == "feedback":
        return feedback_solver.l3_oracle(_fb_channel(t), t["cost"], pb.inner_tol), "max"
    if pb.kind == "gaussian-onoff":
        return feedback_solver.onoff_oracle(tuple(t["state_probs"]), tuple(t["noise_vars"])), "max"
    return rd_solver.rd_oracle(_source(pb, float(t["distortion"].max())), pb.inner_tol), "min"


def solve(pb: Problem, level: float) -> DualResult:
    """Dual optimum at one constraint level, with the cheap primal witness filled in."""
    t = pb.tables
    if pb.kind == "dmc":
        res = dmc_solver.constrained_capacity(t["matrix"], CostSpec(t["cost"], level), pb.tol, pb.inner_tol)
        return with_primal(res, dmc_solver.dmc_primal(t["matrix"], res))
    if pb.kind == "gp":
        return gp_solver.gp_capacity(_gp_channel(t), CostSpec(t["cost"], level),
                                     gp_solver.GPSearchBudget(**pb.search), pb.tol)
    if pb.kind == "feedback":
        return feedback_solver.capacity_C3(_fb_channel(t), CostSpec(t["cost"], level), pb.tol, pb.inner_tol)
    if pb.kind == "gaussian-onoff":
        if level <= 0:
            raise InfeasibleError("the power budget must be positive")
        oracle, _ = oracle_for(pb)
        return minimize_dual(oracle, level, pb.tol)
    return rd_solver.rd_function(_source(pb, level), pb.tol, pb.inner_tol)


def audit_primal(pb: Problem, level: float, res: DualResult) -> float:
    """Independent primal optimum (best single strategy meeting the constraint)."""
    t = pb.tables
    if pb.kind == "dmc":
        W = t["matrix"]
        k = W.shape[0]
        if k > 4:
            raise EnumerationLimitError("the grid primal handles at most four channel inputs")
        resolution = 1000
        while math.comb(resolution + k - 1, k - 1) > GRID_AUDIT_POINTS:
            resolution //= 2
        return dmc_solver.primal_grid(W, CostSpec(t["cost"], level), resolution)
    if pb.kind == "gp":
        return gp_solver.gp_primal(_gp_channel(t), CostSpec(t["cost"], level), res)
    if pb.kind == "feedback":
        return feedback_solver.primal_R3(_fb_channel(t), CostSpec(t["cost"], level), pb.tol, pb.inner_tol)
    if pb.kind == "gaussian-onoff":
        sp, nv = tuple(t["state_probs"]), tuple(t["noise_vars"])
        return float(max(feedback_solver.onoff_curve(sp, nv, T, [level])[0] for T in feedback_solver.ONOFF_SETS))
    src = _source(pb, level)
    try:
        return rd_solver.rd_primal_grid(src, 1000 if src.distortion.shape == (2, 2) else 20)
    except EnumerationLimitError:
        return rd_solver.rd_primal(src, res)


def _solve_value(args):
    pb, level = args
    res = solve(pb, level)
    return level, res.value, res.lambda_star


# --- output ------------------------------------------------------------------

def _num(x):
    x = float(x)
    if not math.isfinite(x):
        return None
    return float(f"{x:.12g}")


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, str)) or obj is None:
        return obj
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    return _num(obj)


def describe_strategy(s):
    if isinstance(s, DiscreteDistribution):
        return {"input_law": s.probs}
    if isinstance(s, ChannelMatrix):
        return {"test_channel": s.probs}
    if isinstance(s, gp_solver.GPStrategy):
        return {"encoder": s.encoder, "u_given_s1": s.u_given_s1}
    if isinstance(s, feedback_solver.FeedbackStrategy):
        return {"phi": list(s.phi), "inputs": s.inputs}
    if isinstance(s, feedback_solver.GaussianOnOff):
        return {"active_set": s.label, "power": s.power}
    return {"repr": repr(s)}


def result_record(pb: Problem, res: DualResult) -> dict:
    cost_key = "distortion" if pb.kind == "rd" else "cost"
    return {
        pb.level_key: res.level,
        "rate_distortion" if pb.kind == "rd" else "capacity": res.value,
        "lambda_star": res.lambda_star,
        "bracket": list(res.bracket),
        "iterations": res.iterations,
        "primal": res.primal_value,
        "gap": res.gap,
        "time_share": [
            {"weight": c.weight, "rate": c.rate, cost_key: c.cost, "strategy": describe_strategy(c.strategy)}
            for c in res.solution.components
        ],
        "total_rate": res.solution.total_rate,
        "total_" + cost_key: res.solution.total_cost,
    }


def write_dat(path: Path, columns, header):
    cols = [np.asarray(c, dtype=float) for c in columns]
    lines = ["# " + " ".join(header)]
    lines += [" ".join(f"{v:.12g}" for v in row) for row in zip(*cols)]
    path.write_text("\n".join(lines) + "\n")


def write_summary(out: Path, summary: dict):
    text = json.dumps(_clean(summary), indent=2, sort_keys=True) + "\n"
    (out / "summary.json").write_text(text)
    return text


# --- commands ----------------------------------------------------------------

def _level(pb: Problem, args):
    flag = args.distortion if pb.kind == "rd" else args.rho0
    other = args.rho0 if pb.kind == "rd" else args.distortion
    if other is not None:
        raise UsageError(f"use --{pb.level_key} for kind {pb.kind!r}")
    level = flag if flag is not None else pb.level
    if level is None:
        raise UsageError(f"no constraint level: pass --{pb.level_key} or set constraint.{pb.level_key}")
    return float(level)


def _grid(args, default):
    return parse_grid(args.grid) if args.grid else default


def _need(pb: Problem, kinds, command):
    if pb.kind not in kinds:
        raise UsageError(f"command {command!r} does not apply to kind {pb.kind!r}")


def cmd_capacity(pb, args, out):
    _need(pb, ("dmc", "gp", "feedback", "gaussian-onoff"), "capacity")
    res = solve(pb, _level(pb, args))
    return {"command": "capacity", **result_record(pb, res)}, {}


def cmd_rd(pb, args, out):
    _need(pb, ("rd",), "rd")
    res = solve(pb, _level(pb, args))
    return {"command": "rd", **result_record(pb, res)}, {}


def cmd_gap(pb, args, out):
    level = _level(pb, args)
    res = solve(pb, level)
    res = with_primal(res, audit_primal(pb, level, res))
    return {"command": "gap", **result_record(pb, res)}, {}


def cmd_sweep(pb, args, out):
    grid = _grid(args, pb.grid)
    if grid is None:
        raise UsageError("no sweep grid: pass --grid a:b:n or set constraint.grid")
    levels = [float(x) for x in grid_points(grid)]
    work = [(pb, x) for x in levels]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            rows = list(ex.map(_solve_value, work))
    else:
        rows = [_solve_value(w) for w in work]
    value_key = "rate_distortion" if pb.kind == "rd" else "capacity"
    summary = {"command": "sweep", "grid": list(grid),
               "points": [{pb.level_key: x, value_key: v, "lambda_star": lam} for x, v, lam in rows]}
    files = {"sweep.dat": ([r[0] for r in rows], [r[1] for r in rows])}
    return summary, files


def cmd_region(pb, args, out):
    grid = _grid(args, pb.lambda_grid or DEFAULT_LAMBDA_GRID)
    if grid[0] < 0:
        raise UsageError("multipliers must be non-negative")
    oracle, sense = oracle_for(pb)
    pts = trace_region(oracle, grid_points(grid), sense)
    level_name = "distortion" if sense == "min" else "cost"
    summary = {"command": "region", "lambda_grid": list(grid),
               "boundary": [{"rate": r, level_name: c} for r, c in pts]}
    return summary, {"region.dat": (pts[:, 1], pts[:, 0])}


def cmd_fig4(pb, args, out):
    if pb is not None:
        _need(pb, ("gaussian-onoff",), "fig4")
    t = pb.tables if pb is not None else {}
    params = feedback_solver.GaussianOnOff(
        tuple(t.get("state_probs", feedback_solver.DEFAULT_STATE_PROBS)),
        tuple(t.get("noise_vars", feedback_solver.DEFAULT_NOISE_VARS)))
    grid = _grid(args, (pb.grid if pb is not None else None) or DEFAULT_FIG4_GRID)
    if grid[0] <= 0:
        raise InfeasibleError("power budgets must be positive")
    tol = args.tol or (pb.tol if pb is not None else 1e-10)
    curves = feedback_solver.gaussian_onoff_curves(params, grid_points(grid), tol)
    gap = curves.capacity - curves.primal
    i = int(np.argmax(gap))
    summary = {
        "command": "fig4",
        "state_probs": list(params.state_probs),
        "noise_vars": list(params.noise_vars),
        "grid": list(grid),
        "segment": [{"rho0": c, "rate": r, "strategy": lab}
                    for (c, r), lab in zip(curves.segment, curves.segment_labels)],
        "segment_slope": curves.segment_slope,
        "lambda_star": curves.segment_lambda,
        "gap_interval": list(feedback_solver.onoff_gap_interval(curves) or []),
        "max_gap": float(gap[i]),
        "max_gap_rho0": float(curves.levels[i]),
    }
    files = {
        "good_only.dat": (curves.levels, curves.curves["good"]),
        "good_moderate.dat": (curves.levels, curves.curves["good+moderate"]),
        "envelope.dat": (curves.levels, curves.capacity),
    }
    return summary, files


COMMANDS = {
    "capacity": cmd_capacity,
    "sweep": cmd_sweep,
    "region": cmd_region,
    "rd": cmd_rd,
    "fig4": cmd_fig4,
    "gap": cmd_gap,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="capdual", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS) + ["validate"])
    ap.add_argument("spec", nargs="?", help="problem spec file (TOML); optional for fig4")
    lv = ap.add_mutually_exclusive_group()
    lv.add_argument("--rho0", type=float, help="cost constraint level (channel kinds)")
    lv.add_argument("--distortion", type=float, help="distortion level (rd kind)")
    ap.add_argument("--grid", help="a:b:n sweep grid (levels, or multipliers for region)")
    ap.add_argument("--tol", type=float, help="tolerance on the multiplier bracket")
    ap.add_argument("--jobs", type=int, default=1, help="worker processes for sweep")
    ap.add_argument("--out", default="capdual-out", help="output directory")
    return ap


def _setup_logging():
    level = os.environ.get("CAPDUAL_LOG", "quiet").lower()
    levels = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.WARNING), stream=sys.stderr,
                        format="capdual %(levelname)s %(name)s: %(message)s")
    if level not in levels:
        log.warning("CAPDUAL_LOG=%s not recognised; using quiet", level)


def _fail(code, msg):
    print(f"capdual: {msg}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        return _fail(EXIT_SPEC, "--jobs must be at least 1")
    if args.tol is not None and args.tol <= 0:
        return _fail(EXIT_SPEC, "--tol must be positive")

    if args.command == "validate":
        if not args.spec:
            return _fail(EXIT_SPEC, "validate needs a spec file")
        problems = check_spec(args.spec)
        if not problems:
            print("ok")
            return EXIT_OK
        for p in problems:
            print(p)
        return EXIT_SPEC

    try:
        if args.spec:
            pb = load_spec(args.spec)
            if args.tol:
                pb = replace(pb, tol=args.tol)
        elif args.command == "fig4":
            pb = None
        else:
            raise UsageError(f"{args.command} needs a spec file")
        log.info("running %s on %s", args.command, args.spec or "default parameters")
        summary, files = COMMANDS[args.command](pb, args, args.out)
        if pb is not None:
            summary = {"kind": pb.kind, "name": pb.name, **summary}
    except (SpecError, UsageError, EnumerationLimitError) as e:
        return _fail(EXIT_SPEC, str(e))
    except InfeasibleError as e:
        return _fail(EXIT_INFEASIBLE, f"infeasible: {e}")
    except ConvergenceError as e:
        return _fail(EXIT_CONVERGENCE, f"did not converge: {e}")
    except (CapdualError, ValueError) as e:
        return _fail(EXIT_SPEC, str(e))

    # results are written only after every solve succeeded
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = ["distortion" if pb is not None and pb.kind == "rd" else "rho0", "rate"]
    for name, cols in files.items():
        write_dat(out / name, cols, header)
    print(write_summary(out, summary), end="")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
