"""Command-line front end.

Every command computes everything first and writes its outputs at the
end, atomically; on failure nothing is written and the exit status is 2
(bad input) or 3 (numerical failure).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import jsonschema
import numpy as np

from fracnoether import __version__, exprdsl
from fracnoether.errors import FracNoetherError, InputError, NumericalError
from fracnoether.fracops import (
    Grid,
    GridFunction,
    OperatorKind,
    apply,
    apply_oracle,
    riesz_caputo,
)
from fracnoether.noether import (
    SymmetryGenerators,
    check_invariance_numeric,
    invariance_residual,
    momentum_law_residual,
    noether_residual,
)
from fracnoether.optctrl import (
    ControlGenerators,
    ControlProblem,
    augmented_functional,
    autonomous_invariant,
    cost,
    hamiltonian_noether_residual,
    pontryagin_residual,
    solve_lq,
)
from fracnoether.variational import VariationalProblem, el_residual, solve_ritz

log = logging.getLogger("fracnoether")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3

_NUM = {"type": "number"}
_NUMS = {"oneOf": [_NUM, {"type": "array", "items": _NUM, "minItems": 1}]}
_EXPRS = {"type": "array", "items": {"type": "string"}}

PROBLEM_SCHEMA = {
    "type": "object",
    "required": ["schema", "kind", "alpha", "grid", "lagrangian", "boundary"],
    "additionalProperties": False,
    "properties": {
        "schema": {"const": 1},
        "kind": {"enum": ["variational", "control"]},
        "interval": {
            "type": "object",
            "required": ["a", "b"],
            "additionalProperties": False,
            "properties": {"a": _NUM, "b": _NUM},
        },
        "alpha": _NUM,
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "N": {"type": "integer", "minimum": 3},
                "N_list": {"type": "array", "items": {"type": "integer", "minimum": 3},
                           "minItems": 1},
            },
            "oneOf": [{"required": ["N"]}, {"required": ["N_list"]}],
        },
        "lagrangian": {"type": "string"},
        "dynamics": _EXPRS,
        "controls": {"type": "integer", "minimum": 1},
        "boundary": {
            "type": "object",
            "required": ["qa"],
            "additionalProperties": False,
            "properties": {"qa": _NUMS, "qb": _NUMS},
        },
        "generators": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"tau": {"type": "string"}, "xi": _EXPRS, "rho": _EXPRS,
                           "sigma": _EXPRS},
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"path": {"type": "string"}, "format": {"enum": ["csv", "json"]}},
        },
    },
}


# --------------------------------------------------------------------------
# reports


@dataclass
class Report:
    """Columns of equal length plus metadata and an optional refinement trace."""

    columns: dict[str, np.ndarray]
    meta: dict[str, Any]
    trace: list[dict[str, Any]] = field(default_factory=list)
    flagged: dict[str, np.ndarray] = field(default_factory=dict)


def _fmt(x) -> str:
    if x is None:
        return ""
    x = float(x)
    return "" if not math.isfinite(x) else f"{x:.17g}"


def _csv_text(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def report_csv(rep: Report) -> str:
    names = list(rep.columns)
    N = len(next(iter(rep.columns.values())))
    rows = []
    for i in range(N):
        row = []
        for name in names:
            mask = rep.flagged.get(name)
            row.append("" if mask is not None and mask[i] else _fmt(rep.columns[name][i]))
        rows.append(row)
    return _csv_text(names, rows)


def trace_csv(rep: Report) -> str:
    names = list(rep.trace[0])
    return _csv_text(names, [[_fmt(r[k]) if isinstance(r[k], float) else str(r[k])
                              for k in names] for r in rep.trace])


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.floating):
        return _jsonable(float(x))
    if isinstance(x, np.integer):
        return int(x)
    return x


def report_json(rep: Report) -> str:
    cols = {}
    for name, values in rep.columns.items():
        mask = rep.flagged.get(name)
        cols[name] = [None if (mask is not None and mask[i]) or not math.isfinite(v) else float(v)
                      for i, v in enumerate(values)]
    doc = {"meta": rep.meta, "columns": cols, "trace": rep.trace}
    return json.dumps(_jsonable(doc), indent=2, sort_keys=False) + "\n"


def _atomic_write_all(files: dict[Path, str]) -> None:
    temps = []
    try:
        for path, text in files.items():
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
            with os.fdopen(fd, "w", newline="") as fh:
                fh.write(text)
            temps.append((tmp, path))
        for tmp, path in temps:
            os.replace(tmp, path)
    finally:
        for tmp, _ in temps:
            if os.path.exists(tmp):
                os.unlink(tmp)


def emit(rep: Report, out: str | None, fmt: str) -> None:
    """Write the report; CSV gets companion ``.meta.json`` and ``.trace.csv`` files."""
    if fmt == "json":
        text = report_json(rep)
        if out is None:
            sys.stdout.write(text)
        else:
            _atomic_write_all({Path(out): text})
        return
    if out is None:
        sys.stdout.write(report_csv(rep))
        return
    path = Path(out)
    stem = path.with_suffix("") if path.suffix == ".csv" else path
    files = {path: report_csv(rep),
             Path(f"{stem}.meta.json"): json.dumps(_jsonable(rep.meta), indent=2) + "\n"}
    if rep.trace:
        files[Path(f"{stem}.trace.csv")] = trace_csv(rep)
    _atomic_write_all(files)


# --------------------------------------------------------------------------
# problem files


def load_problem(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read problem file: {exc}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"problem file is not valid JSON: {exc}") from None
    try:
        jsonschema.validate(doc, PROBLEM_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise InputError(f"problem file invalid at {where}: {exc.message}") from None
    if doc["kind"] == "control" and "dynamics" not in doc:
        raise InputError("control problems need 'dynamics'")
    return doc


def _grid_sizes(doc: dict, override: list[int] | None) -> list[int]:
    if override:
        return override
    g = doc["grid"]
    return list(g["N_list"]) if "N_list" in g else [g["N"]]


def _interval(doc: dict) -> tuple[float, float]:
    iv = doc.get("interval", {"a": 0.0, "b": 1.0})
    return float(iv["a"]), float(iv["b"])


def _build_variational(doc: dict, alpha: float, N: int) -> VariationalProblem:
    if doc["kind"] != "variational":
        raise InputError("this command needs a 'variational' problem file")
    a, b = _interval(doc)
    qa = np.atleast_1d(doc["boundary"]["qa"])
    qb = doc["boundary"].get("qb")
    return VariationalProblem(Grid(a, b, N), alpha, len(qa), doc["lagrangian"], qa, qb)


def _build_control(doc: dict, alpha: float, N: int) -> ControlProblem:
    if doc["kind"] != "control":
        raise InputError("this command needs a 'control' problem file")
    a, b = _interval(doc)
    qa = np.atleast_1d(doc["boundary"]["qa"])
    n = len(qa)
    m = doc.get("controls", n)
    return ControlProblem(Grid(a, b, N), alpha, n, m, doc["lagrangian"], doc["dynamics"],
                          qa, doc["boundary"].get("qb"))


def _sym_generators(doc: dict, n: int) -> SymmetryGenerators:
    g = doc.get("generators")
    if g is None:
        raise InputError("problem file has no 'generators' section")
    return SymmetryGenerators.create(g.get("tau", "0"), g.get("xi", ["0"] * n), n)


def _ctrl_generators(doc: dict, prob: ControlProblem) -> ControlGenerators:
    g = doc.get("generators")
    if g is None:
        raise InputError("problem file has no 'generators' section")
    return ControlGenerators.create(prob, g.get("tau", "0"), g.get("xi"), g.get("rho"),
                                    g.get("sigma"))


def _add_series(cols: dict, prefix: str, f: GridFunction, store=None) -> None:
    for i, row in enumerate(f.as_rows()):
        name = f"{prefix}{i}"
        cols[name] = row
        if store is not None and f.flagged.any():
            store[name] = f.flagged


def _ratios(trace: list[dict], key: str) -> None:
    for prev, cur in zip(trace, trace[1:]):
        cur[f"{key}_ratio"] = prev[key] / cur[key] if cur[key] > 0 else math.inf
    if trace:
        trace[0][f"{key}_ratio"] = math.nan


# --------------------------------------------------------------------------
# commands


def cmd_deriv(args) -> Report:
    if args.problem:
        raise InputError("deriv takes an inline --expr, not a problem file")
    if args.expr is None:
        raise InputError("deriv needs --expr")
    kind = OperatorKind.from_name(args.kind)
    e = exprdsl.parse(args.expr, {"t"})
    alpha = 0.5 if args.alpha is None else args.alpha
    N = (args.N or [129])[-1]
    grid = Grid(args.a, args.b, N)
    f = GridFunction(grid, exprdsl.evaluate_array(e, {"t": grid.t}, (N,)))
    out = apply(kind, alpha, f)
    cols = {"t": grid.t, "value": out.values}
    flagged = {"value": out.flagged} if out.flagged.any() else {}
    meta = {"command": "deriv", "expr": exprdsl.to_text(e), "kind": kind.value,
            "alpha": alpha, "N": N, "a": grid.a, "b": grid.b}
    if args.oracle is not None:
        ref = np.empty(N)
        bad = np.zeros(N, bool)
        for i, t in enumerate(grid.t):
            try:
                ref[i] = apply_oracle(kind, alpha, e, float(t), a=grid.a, b=grid.b, tol=args.oracle)
            except NumericalError:
                bad[i] = True
                ref[i] = math.nan
        cols["oracle"] = ref
        if bad.any():
            flagged["oracle"] = bad
        meta["oracle_tol"] = args.oracle
    return Report(cols, meta, flagged=flagged)


def _alpha(doc: dict | None, args) -> float:
    if args.alpha is not None:
        return args.alpha
    if doc is None:
        raise InputError("--alpha is required")
    return float(doc["alpha"])


def _need_problem(args) -> dict:
    if not args.problem:
        raise InputError(f"{args.command} needs a problem file")
    return load_problem(args.problem)


def cmd_solve_cv(args) -> Report:
    doc = _need_problem(args)
    alpha = _alpha(doc, args)
    trace, last = [], None
    for N in _grid_sizes(doc, args.N):
        prob = _build_variational(doc, alpha, N)
        ext = solve_ritz(prob)
        trace.append({"N": N, "objective": ext.objective, "iterations": ext.iterations,
                      "grad_norm": ext.grad_norm, "el_norm": ext.el_norm})
        last = (prob, ext)
    prob, ext = last
    el = el_residual(prob, ext.q)
    cols = {"t": prob.grid.t}
    flagged = {}
    _add_series(cols, "q", ext.q)
    _add_series(cols, "el_residual", el, store=flagged)
    meta = {"command": "solve-cv", "alpha": alpha, "N": prob.grid.N, **trace[-1]}
    return Report(cols, meta, trace if len(trace) > 1 else [], flagged)


def cmd_check_invariance(args) -> Report:
    doc = _need_problem(args)
    alpha = _alpha(doc, args)
    N = _grid_sizes(doc, args.N)[-1]
    prob = _build_variational(doc, alpha, N)
    gen = _sym_generators(doc, prob.n_components)
    q = solve_ritz(prob) if prob.qb is not None else None
    if q is None:
        raise InputError("check-invariance needs both boundary values to build a trajectory")
    res = invariance_residual(prob, gen, q)
    inv = check_invariance_numeric(prob, gen, q)
    cols = {"t": prob.grid.t}
    _add_series(cols, "q", q.q)
    cols["invariance_residual"] = res.values
    meta = {"command": "check-invariance", "alpha": alpha, "N": N,
            "invariant": inv.invariant, "base_value": inv.base_value,
            "eps": list(inv.eps), "transformed_values": list(inv.transformed_values),
            "slope": inv.slope, "residual_integral": inv.residual_integral,
            "slope_matches": inv.slope_matches}
    return Report(cols, meta)


def cmd_check_noether(args) -> Report:
    doc = _need_problem(args)
    alpha = _alpha(doc, args)
    trace, last = [], None
    for N in _grid_sizes(doc, args.N):
        prob = _build_variational(doc, alpha, N)
        gen = _sym_generators(doc, prob.n_components)
        ext = solve_ritz(prob)
        rep = noether_residual(prob, gen, ext)
        trace.append({"N": N, "interior_norm": rep.interior_norm,
                      "interior_max": rep.interior_max, "el_norm": ext.el_norm})
        last = (prob, ext, rep)
    _ratios(trace, "interior_norm")
    prob, ext, rep = last
    cols = {"t": prob.grid.t}
    _add_series(cols, "q", ext.q)
    cols["residual"] = rep.residual.values
    flagged = {"residual": rep.residual.flagged} if rep.residual.flagged.any() else {}
    meta = {"command": "check-noether", "alpha": alpha, **trace[-1]}
    return Report(cols, meta, trace, flagged)


def _triple_columns(prob: ControlProblem, trip) -> tuple[dict, dict]:
    cols = {"t": prob.grid.t}
    flagged: dict = {}
    _add_series(cols, "q", trip.q)
    _add_series(cols, "u", trip.u)
    _add_series(cols, "p", trip.p)
    state, costate, stat = pontryagin_residual(prob, trip)
    _add_series(cols, "state_res", state, store=flagged)
    _add_series(cols, "costate_res", costate, store=flagged)
    _add_series(cols, "stationarity_res", stat)
    env = {"t": prob.grid.t}
    for names, f in ((prob.state_names, trip.q), (prob.control_names, trip.u),
                     (prob.costate_names, trip.p)):
        env.update(zip(names, f.as_rows()))
    cols["H"] = exprdsl.evaluate_array(prob.H, env, (prob.grid.N,))
    return cols, flagged


def _pontryagin_max(prob, trip) -> float:
    return max(r.interior_max() for r in pontryagin_residual(prob, trip))


def cmd_solve_oc(args) -> Report:
    doc = _need_problem(args)
    alpha = _alpha(doc, args)
    trace, last = [], None
    for N in _grid_sizes(doc, args.N):
        prob = _build_control(doc, alpha, N)
        trip = solve_lq(prob)
        trace.append({"N": N, "cost": cost(prob, trip),
                      "augmented": augmented_functional(prob, trip),
                      "pontryagin_max": _pontryagin_max(prob, trip)})
        last = (prob, trip)
    prob, trip = last
    cols, flagged = _triple_columns(prob, trip)
    meta = {"command": "solve-oc", "alpha": alpha, **trace[-1]}
    return Report(cols, meta, trace if len(trace) > 1 else [], flagged)


def cmd_check_noether_oc(args) -> Report:
    doc = _need_problem(args)
    alpha = _alpha(doc, args)
    trace, last = [], None
    for N in _grid_sizes(doc, args.N):
        prob = _build_control(doc, alpha, N)
        gen = _ctrl_generators(doc, prob)
        trip = solve_lq(prob)
        rep = hamiltonian_noether_residual(prob, gen, trip)
        trace.append({"N": N, "interior_norm": rep.interior_norm,
                      "interior_max": rep.interior_max,
                      "pontryagin_max": _pontryagin_max(prob, trip)})
        last = (prob, trip, rep)
    _ratios(trace, "interior_norm")
    prob, trip, rep = last
    cols, flagged = _triple_columns(prob, trip)
    cols["residual"] = rep.residual.values
    if rep.residual.flagged.any():
        flagged["residual"] = rep.residual.flagged
    meta = {"command": "check-noether-oc", "alpha": alpha, **trace[-1]}
    return Report(cols, meta, trace, flagged)


# presets for the two worked examples

EXAMPLES = {
    "example1": {
        "description": "minimise (1/2) int_0^1 (RCD q)^2 dt, q(0)=0, q(1)=1; "
                       "conserved quantity (1-2 alpha) p^2 / 2",
        "lagrangian": "v0^2/2", "qa": 0.0, "qb": 1.0,
    },
    "example2": {
        "description": "minimise (1/2) int_0^1 (q^2 + u^2) dt, RCD q = -q + u, q(0)=1; "
                       "conserved quantity (q^2 + u^2)/2 + alpha p (-q + u)",
        "lagrangian": "(q0^2 + u0^2)/2", "dynamics": ["-q0 + u0"], "qa": 1.0,
    },
}


def _example1(alpha: float, N: int):
    prob = VariationalProblem.create("v0^2/2", N=N, alpha=alpha, qa=0.0, qb=1.0)
    ext = solve_ritz(prob)
    energy = noether_residual(prob, SymmetryGenerators.create("1", ["0"]), ext)
    momentum = momentum_law_residual(prob, SymmetryGenerators.create("0", ["1"]), ext)
    p = -riesz_caputo(alpha, ext.q).values
    cols = {"t": prob.grid.t, "q0": ext.q.values, "p0": p,
            "invariant": (1 - 2 * alpha) * p * p / 2,
            "residual": energy.residual.values,
            "momentum_residual": momentum.residual.values}
    flagged = {k: r.residual.flagged for k, r in (("residual", energy),
                                                  ("momentum_residual", momentum))
               if r.residual.flagged.any()}
    row = {"N": N, "interior_norm": energy.interior_norm,
           "momentum_norm": momentum.interior_norm, "el_norm": ext.el_norm}
    return cols, flagged, row


def _example2(alpha: float, N: int):
    prob = ControlProblem.create("(q0^2 + u0^2)/2", ["-q0 + u0"], N=N, alpha=alpha, qa=1.0)
    trip = solve_lq(prob)
    rep = hamiltonian_noether_residual(prob, ControlGenerators.create(prob, tau="1"), trip)
    cols, flagged = _triple_columns(prob, trip)
    cols["invariant"] = autonomous_invariant(prob, trip).values
    cols["residual"] = rep.residual.values
    if rep.residual.flagged.any():
        flagged["residual"] = rep.residual.flagged
    H = cols["H"]
    inner = prob.grid.interior()
    ref = H[prob.grid.N // 2]
    cols["H_drift"] = (H - ref) / (1.0 + abs(ref))
    spread = float(np.ptp(H[inner]) / (1.0 + abs(ref)))
    row = {"N": N, "interior_norm": rep.interior_norm,
           "pontryagin_max": _pontryagin_max(prob, trip), "H_drift": spread,
           "cost": cost(prob, trip)}
    return cols, flagged, row


def cmd_examples(args) -> Report:
    if args.name not in EXAMPLES:
        raise InputError(f"unknown example {args.name!r}; choose one of {sorted(EXAMPLES)}")
    alpha = 0.75 if args.alpha is None else args.alpha
    run = _example1 if args.name == "example1" else _example2
    trace, last = [], None
    for N in args.N or [129, 257]:
        cols, flagged, row = run(alpha, N)
        trace.append(row)
        last = (cols, flagged)
    _ratios(trace, "interior_norm")
    cols, flagged = last
    meta = {"command": "examples", "example": args.name, "alpha": alpha,
            "description": EXAMPLES[args.name]["description"], **trace[-1]}
    return Report(cols, meta, trace, flagged)


COMMANDS = {
    "deriv": cmd_deriv,
    "solve-cv": cmd_solve_cv,
    "check-invariance": cmd_check_invariance,
    "check-noether": cmd_check_noether,
    "solve-oc": cmd_solve_oc,
    "check-noether-oc": cmd_check_noether_oc,
    "examples": cmd_examples,
}


# --------------------------------------------------------------------------
# argument parsing


def _n_list(text: str) -> list[int]:
    try:
        values = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--N expects integers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("--N is empty")
    return values


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=float, help="fractional order in (0, 1]")
    p.add_argument("--N", type=_n_list, help="grid size, or comma list for a refinement study")
    p.add_argument("--out", help="output path (default: standard output)")
    p.add_argument("--format", choices=["csv", "json"], default=None)
    p.add_argument("--quiet", action="store_true", help="suppress the summary on standard error")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="frac-noether", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("deriv", help="apply a discrete fractional operator to an expression")
    p.add_argument("problem", nargs="?")
    p.add_argument("--expr", help="expression in t")
    p.add_argument("--kind", default="riesz-caputo",
                   help="operator kind: " + ", ".join(k.value for k in OperatorKind))
    p.add_argument("--a", type=float, default=0.0)
    p.add_argument("--b", type=float, default=1.0)
    p.add_argument("--oracle", type=float, metavar="TOL",
                   help="add a quadrature reference column computed to TOL")
    _common(p)

    for name, text in (("solve-cv", "Ritz extremal of a variational problem"),
                       ("check-invariance", "invariance residual and direct invariance check"),
                       ("check-noether", "Lagrangian-form conservation law along the extremal"),
                       ("solve-oc", "solve a linear-quadratic control problem"),
                       ("check-noether-oc", "Hamiltonian-form conservation law")):
        p = sub.add_parser(name, help=text)
        p.add_argument("problem", help="JSON problem file")
        _common(p)

    p = sub.add_parser("examples", help="run a worked example preset")
    p.add_argument("name", choices=sorted(EXAMPLES))
    _common(p)
    return parser


def _summary(rep: Report) -> str:
    parts = [f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}"
             for k, v in rep.meta.items() if not isinstance(v, (list, dict))]
    return " ".join(parts)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s: %(message)s")
    try:
        rep = COMMANDS[args.command](args)
        out, fmt = args.out, args.format
        if getattr(args, "problem", None) and args.command != "deriv":
            section = load_problem(args.problem).get("output", {})
            out = out or section.get("path")
            fmt = fmt or section.get("format")
        emit(rep, out, fmt or "csv")
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FracNoetherError as exc:  # pragma: no cover - every error is one of the two
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    if not args.quiet:
        print(_summary(rep), file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
