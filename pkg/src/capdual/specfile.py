"""Problem-spec files: TOML documents describing one desk-scale problem.

The grammar is documented in ``docs/specfile.md``.  :func:`check_spec` lists
every problem it finds instead of stopping at the first one, and
:func:`load_spec` turns a valid document into a :class:`Problem`.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CapdualError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

KINDS = ("dmc", "gp", "feedback", "gaussian-onoff", "rd")
ROW_TOL = 1e-9

_TOP = {"kind", "name", "description", "channel", "state", "feedback", "gaussian", "source",
        "constraint", "solver", "search"}
_SECTIONS = {
    "dmc": {"channel": {"matrix", "cost"}},
    "gp": {"channel": {"transition", "cost"}, "state": {"probs"},
           "search": {"u_size", "n_starts", "seed", "grid_step", "tie_tol", "max_iter"}},
    "feedback": {"channel": {"transition", "cost"}, "state": {"probs"}, "feedback": {"size"}},
    "gaussian-onoff": {"gaussian": {"state_probs", "noise_vars"}},
    "rd": {"source": {"probs", "distortion"}},
}
_CONSTRAINT = {"rho0", "distortion", "grid", "lambda_grid"}
_SOLVER = {"tol", "inner_tol"}


class SpecError(CapdualError):
    """Spec file could not be read or violates the grammar; ``problems`` lists every violation."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True, eq=False)
class Problem:
    """A validated problem: kind, numeric tables and the optional constraint settings."""

    kind: str
    name: str
    tables: dict
    level: float | None = None
    grid: tuple | None = None
    lambda_grid: tuple | None = None
    tol: float = 1e-9
    inner_tol: float = 1e-10
    search: dict = field(default_factory=dict)

    @property
    def level_key(self):
        return "distortion" if self.kind == "rd" else "rho0"


def parse_grid(text) -> tuple:
    """``"a:b:n"`` -> ``(a, b, n)``: ``n`` evenly spaced points from ``a`` to ``b`` inclusive."""
    parts = str(text).split(":")
    if len(parts) != 3:
        raise ValueError(f"grid {text!r} is not of the form a:b:n")
    a, b = float(parts[0]), float(parts[1])
    n = int(parts[2])
    if n < 1 or not (np.isfinite(a) and np.isfinite(b)):
        raise ValueError(f"grid {text!r} needs finite ends and n >= 1")
    if n > 1 and b < a:
        raise ValueError(f"grid {text!r} must run upwards")
    return a, b, n


def grid_points(grid) -> np.ndarray:
    a, b, n = grid
    return np.linspace(a, b, n)


class _Checker:
    def __init__(self):
        self.problems = []

    def add(self, msg):
        self.problems.append(msg)

    def array(self, doc, where, ndim, required=True):
        sec, key = where.split(".")
        table = doc.get(sec, {})
        val = table.get(key) if isinstance(table, dict) else None
        if val is None:
            if required:
                self.add(f"{where}: missing")
            return None
        try:
            a = np.asarray(val, dtype=float)
        except (TypeError, ValueError):
            self.add(f"{where}: not a rectangular table of numbers")
            return None
        if a.ndim != ndim:
            self.add(f"{where}: expected {ndim} dimension(s), got {a.ndim}")
            return None
        if a.size == 0:
            self.add(f"{where}: empty")
            return None
        if not np.all(np.isfinite(a)):
            self.add(f"{where}: non-finite entries")
            return None
        return a

    def nonnegative(self, a, where):
        if a is None:
            return False
        bad = np.argwhere(a < 0)
        for idx in bad:
            self.add(f"{where}[{', '.join(map(str, idx))}] = {a[tuple(idx)]:g} is negative")
        return not len(bad)

    def stochastic(self, a, where, whole=False):
        """Rows along the last axis (or the whole table) must be distributions.

        Returns the table renormalized exactly, or ``None`` if it is invalid.
        Decimal tables are accepted to within ``ROW_TOL``.
        """
        if not self.nonnegative(a, where):
            return None
        if whole:
            s = a.sum()
            if abs(s - 1) > ROW_TOL:
                self.add(f"{where}: entries sum to {s:.12g}, not 1")
                return None
            return a / s
        sums = a.sum(axis=-1)
        bad = np.argwhere(np.abs(sums - 1) > ROW_TOL)
        for idx in bad:
            label = ", ".join(map(str, idx))
            self.add(f"{where} row [{label}] sums to {sums[tuple(idx)]:.12g}, not 1")
        return None if len(bad) else a / sums[..., None]


def _number(chk, table, key, where, positive=False):
    if key not in table:
        return None
    v = table[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not np.isfinite(v):
        chk.add(f"{where}.{key}: must be a finite number")
        return None
    if positive and v <= 0:
        chk.add(f"{where}.{key}: must be positive")
        return None
    return float(v)


def _check_tables(chk, doc, kind):
    t = {}
    if kind == "dmc":
        W = chk.array(doc, "channel.matrix", 2)
        c = chk.array(doc, "channel.cost", 1)
        if W is not None:
            W = chk.stochastic(W, "channel.matrix")
            if W is not None:
                t["matrix"] = W
        if c is not None and chk.nonnegative(c, "channel.cost"):
            t["cost"] = c
        if "matrix" in t and "cost" in t and c.shape[0] != W.shape[0]:
            chk.add(f"channel.cost: {c.shape[0]} entries for {W.shape[0]} channel inputs")
            t.pop("cost")
    elif kind == "gp":
        ps = chk.array(doc, "state.probs", 2)
        W = chk.array(doc, "channel.transition", 4)
        c = chk.array(doc, "channel.cost", 1)
        if ps is not None:
            ps = chk.stochastic(ps, "state.probs", whole=True)
            if ps is not None:
                t["state"] = ps
        if W is not None:
            W = chk.stochastic(W, "channel.transition")
            if W is not None:
                t["transition"] = W
        if c is not None and chk.nonnegative(c, "channel.cost"):
            t["cost"] = c
        if "state" in t and "transition" in t and W.shape[:2] != ps.shape:
            chk.add(f"channel.transition: state axes {W.shape[:2]} do not match state.probs {ps.shape}")
            t.pop("transition")
        if "transition" in t and "cost" in t and c.shape[0] != W.shape[2]:
            chk.add(f"channel.cost: {c.shape[0]} entries for {W.shape[2]} channel inputs")
            t.pop("cost")
    elif kind == "feedback":
        pv = chk.array(doc, "state.probs", 1)
        W = chk.array(doc, "channel.transition", 3)
        c = chk.array(doc, "channel.cost", 1)
        if pv is not None:
            pv = chk.stochastic(pv, "state.probs", whole=True)
            if pv is not None:
                t["state"] = pv
        if W is not None:
            W = chk.stochastic(W, "channel.transition")
            if W is not None:
                t["transition"] = W
        if c is not None and chk.nonnegative(c, "channel.cost"):
            t["cost"] = c
        if "state" in t and "transition" in t and W.shape[0] != pv.shape[0]:
            chk.add(f"channel.transition: {W.shape[0]} states but state.probs has {pv.shape[0]}")
            t.pop("transition")
        if "transition" in t and "cost" in t and c.shape[0] != W.shape[1]:
            chk.add(f"channel.cost: {c.shape[0]} entries for {W.shape[1]} channel inputs")
            t.pop("cost")
        size = doc.get("feedback", {}).get("size")
        if size is None:
            chk.add("feedback.size: missing")
        elif isinstance(size, bool) or not isinstance(size, int) or size < 1:
            chk.add("feedback.size: must be a positive integer")
        else:
            t["feedback_size"] = size
    elif kind == "gaussian-onoff":
        g = doc.get("gaussian", {})
        g = g if isinstance(g, dict) else {}
        from .feedback_solver import DEFAULT_NOISE_VARS, DEFAULT_STATE_PROBS
        p = chk.array(doc, "gaussian.state_probs", 1, required=False) if "state_probs" in g \
            else np.array(DEFAULT_STATE_PROBS)
        s = chk.array(doc, "gaussian.noise_vars", 1, required=False) if "noise_vars" in g \
            else np.array(DEFAULT_NOISE_VARS)
        if p is not None:
            if p.shape != (3,):
                chk.add("gaussian.state_probs: needs exactly three entries (good, moderate, bad)")
            else:
                p = chk.stochastic(p, "gaussian.state_probs", whole=True)
                if p is not None:
                    t["state_probs"] = p
        if s is not None:
            if s.shape != (3,):
                chk.add("gaussian.noise_vars: needs exactly three entries (good, moderate, bad)")
            elif np.any(s <= 0) or np.any(np.diff(s) <= 0):
                chk.add("gaussian.noise_vars: must be positive and strictly increasing")
            else:
                t["noise_vars"] = s
    elif kind == "rd":
        p = chk.array(doc, "source.probs", 1)
        d = chk.array(doc, "source.distortion", 2)
        if p is not None:
            p = chk.stochastic(p, "source.probs", whole=True)
            if p is not None:
                t["source"] = p
        if d is not None and chk.nonnegative(d, "source.distortion"):
            t["distortion"] = d
        if "source" in t and "distortion" in t and d.shape[0] != p.shape[0]:
            chk.add(f"source.distortion: {d.shape[0]} rows for {p.shape[0]} source letters")
            t.pop("distortion")
    return t


def _min_level(kind, t):
    if kind in ("dmc", "gp", "feedback"):
        return float(t["cost"].min()) if "cost" in t else None
    if kind == "gaussian-onoff":
        return 0.0
    if "source" in t and "distortion" in t:
        return float(t["source"] @ t["distortion"].min(axis=1))
    return None


def check_document(doc: dict):
    """Validate a parsed document.

    Returns ``(problems, infeasible, problem)``: structural violations,
    constraint levels that no strategy can meet, and the :class:`Problem`
    (``None`` when there are structural violations).
    """
    chk = _Checker()
    kind = doc.get("kind")
    if kind is None:
        chk.add("kind: missing (one of " + ", ".join(KINDS) + ")")
    elif kind not in KINDS:
        chk.add(f"kind: unknown value {kind!r} (one of " + ", ".join(KINDS) + ")")
        kind = None
    for key in doc:
        if key not in _TOP:
            chk.add(f"{key}: unknown field")
    for key in ("name", "description"):
        if key in doc and not isinstance(doc[key], str):
            chk.add(f"{key}: must be a string")

    sections = _SECTIONS.get(kind, {})
    for sec in ("channel", "state", "feedback", "gaussian", "source", "search"):
        if sec not in doc:
            continue
        if not isinstance(doc[sec], dict):
            chk.add(f"{sec}: must be a table")
            continue
        if kind is not None and sec not in sections:
            chk.add(f"{sec}: not used by kind {kind!r}")
            continue
        for key in doc[sec]:
            if kind is not None and key not in sections[sec]:
                chk.add(f"{sec}.{key}: unknown field")
    tables = _check_tables(chk, doc, kind) if kind else {}

    cons = doc.get("constraint", {})
    solver = doc.get("solver", {})
    level = grid = lgrid = None
    tol, inner_tol = 1e-9, 1e-10
    if not isinstance(cons, dict):
        chk.add("constraint: must be a table")
        cons = {}
    if not isinstance(solver, dict):
        chk.add("solver: must be a table")
        solver = {}
    level_key = "distortion" if kind == "rd" else "rho0"
    for key in cons:
        if key not in _CONSTRAINT or (kind and key in ("rho0", "distortion") and key != level_key):
            chk.add(f"constraint.{key}: unknown field" + (f" for kind {kind!r}" if kind else ""))
    if level_key in cons:
        level = _number(chk, cons, level_key, "constraint")
    for key in ("grid", "lambda_grid"):
        if key in cons:
            try:
                g = parse_grid(cons[key])
            except ValueError as e:
                chk.add(f"constraint.{key}: {e}")
                continue
            if key == "grid":
                grid = g
            elif g[0] < 0:
                chk.add("constraint.lambda_grid: multipliers must be non-negative")
            else:
                lgrid = g
    for key in solver:
        if key not in _SOLVER:
            chk.add(f"solver.{key}: unknown field")
    tol = _number(chk, solver, "tol", "solver", positive=True) or tol
    inner_tol = _number(chk, solver, "inner_tol", "solver", positive=True) or inner_tol

    search = {}
    for key, val in doc.get("search", {}).items() if isinstance(doc.get("search"), dict) else ():
        if key in ("u_size", "n_starts", "seed", "max_iter"):
            if isinstance(val, bool) or not isinstance(val, int) or val < (0 if key == "seed" else 1):
                chk.add(f"search.{key}: must be a {'non-negative' if key == 'seed' else 'positive'} integer")
                continue
        elif key in ("grid_step", "tie_tol"):
            if isinstance(val, bool) or not isinstance(val, (int, float)) or not 0 < val < 1:
                chk.add(f"search.{key}: must be a number in (0, 1)")
                continue
        else:
            continue
        search[key] = val

    # an unreachable level is reported by validate but left to the solver
    # otherwise, so that running it fails as infeasible rather than unparsable
    infeasible = []
    lo = _min_level(kind, tables)
    if lo is not None:
        what = "distortion" if kind == "rd" else "cost"
        if level is not None and level < lo - 1e-12:
            infeasible.append(
                f"constraint.{level_key}: {level:g} is below the smallest achievable {what} {lo:g}")
        if grid is not None and grid[0] < lo - 1e-12:
            infeasible.append(
                f"constraint.grid: starts at {grid[0]:g}, below the smallest achievable {what} {lo:g}")
    if kind == "gaussian-onoff":
        if level is not None and level <= 0:
            infeasible.append("constraint.rho0: the power budget must be positive")
        if grid is not None and grid[0] <= 0:
            infeasible.append("constraint.grid: power budgets must be positive")

    if chk.problems:
        return chk.problems, infeasible, None
    return [], infeasible, Problem(kind, doc.get("name", ""), tables, level, grid, lgrid, tol, inner_tol, search)


def read_document(path) -> dict:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            return tomllib.load(fh)
    except OSError as e:
        raise SpecError([f"{path}: cannot read ({e.strerror or e})"]) from e
    except tomllib.TOMLDecodeError as e:
        raise SpecError([f"{path}: not valid TOML ({e})"]) from e


def check_spec(path) -> list:
    """Every violation found in the file at ``path``; an empty list means the spec is valid."""
    try:
        doc = read_document(path)
    except SpecError as e:
        return e.problems
    problems, infeasible, _ = check_document(doc)
    return problems + infeasible


def load_spec(path) -> Problem:
    problems, _, prob = check_document(read_document(path))
    if problems:
        raise SpecError(problems)
    return prob
