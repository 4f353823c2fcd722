"""Command-line driver.

Every subcommand reads a problem file (a path or the name of a bundled
problem), runs one method and writes a CSV table plus a JSON diagnostics
sidecar ``<output>.diag.json``.  Without ``--output`` the CSV goes to stdout
and the diagnostics to stderr.
"""
from __future__ import annotations

import argparse
import io
import json
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np

from . import chebyshev, defusing, fdcollocation, reference, steppers, variational
from .expr import ExprSyntaxError, to_fraction
from .operators import DataPoint, Grid, Problem, load_problem
from .precision import Precision, get_precision

COMMANDS = ("solve-ivp", "defuse", "fit-a", "fit-b", "fit-c", "spectral", "oracle", "perturb")
ORACLES = ("airy", "expdecay", "hkn", "hkn-gauged")


class UsageError(ValueError):
    """Bad input: exit code 2."""


@dataclass
class RunConfig:
    command: str
    problem: str | None = None
    output: str | None = None
    digits: int = 16
    oracle: str | None = None
    # steppers
    stepper: str = "rk4"
    stages: int = 2
    h: str | None = None
    N: int | None = None
    t0: str | None = None
    initial: list | None = None
    rtol: float = 1e-6
    atol: float = 0.0
    record_every: int = 1
    # defusing
    cut: str = "gap"
    tau: float = 1.0
    scaling: str = "match"
    window: int | None = None
    # fits
    basis: str = "chebyshev"
    count: int = 10
    quad: str = "trapezoid"
    quad_n: int | None = None
    mode: str = "constrained"
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 0.0
    offgrid: str = "error"
    data: list | None = None
    conditions: list | None = None
    n: int = 100
    eval_points: int = 401
    # perturbation
    method: str = "fit-b"
    trials: int = 30
    rel: float = 1e-3
    seed: int = 0
    workers: int | None = None
    # oracle command
    at: list = field(default_factory=list)
    deriv: int = 0
    hkn: list | None = None
    log10_ratio: bool = False
    threshold: float = 0.3


# ---------------------------------------------------------------------------
# problems and oracles


def resolve_problem(name: str) -> Problem:
    """Load ``name`` as inline JSON, a path, or a bundled problem (with or without ``.json``)."""
    if name.lstrip().startswith("{"):
        return load_problem(name)
    path = Path(name)
    if path.exists():
        return load_problem(path)
    stem = name[:-5] if name.endswith(".json") else name
    bundled = resources.files("hgmode").joinpath("problems", stem + ".json")
    if bundled.is_file():
        return load_problem(json.loads(bundled.read_text()))
    raise UsageError(f"no problem file {name!r} (and no bundled problem of that name)")


def bundled_problems() -> list[str]:
    root = resources.files("hgmode").joinpath("problems")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def _hkn_params(problem: Problem | None, hkn=None):
    if hkn:
        return tuple(to_fraction(v) for v in hkn)
    p = problem.params if problem is not None else {}
    try:
        return p["k"], p["n"], p["x"]
    except KeyError:
        raise UsageError("the hkn oracles need params k, n and x") from None


def make_oracle(name: str, problem: Problem | None, prec: Precision, hkn=None):
    """Callable ``(t, deriv=0) -> value`` for a named reference function."""
    scale = prec.real(to_fraction(problem.extras.get("oracle_scale", 1))) if problem else prec.real(1)
    if name == "airy":
        def oracle(t, deriv=0):
            if deriv == 0:
                return reference.airy_ai(t, prec) * scale
            return reference.airy_ai_jet(t, deriv, prec).coeffs[deriv] * math.factorial(deriv) * scale
    elif name == "expdecay":
        def oracle(t, deriv=0):
            return (-1) ** deriv * prec.exp(-prec.real(to_fraction(t))) * scale
    elif name == "hkn":
        k, n, x = _hkn_params(problem, hkn)

        def oracle(t, deriv=0):
            return reference.hkn_value(k, n, x, to_fraction(t), prec, deriv=deriv) * scale
    elif name == "hkn-gauged":
        k, n, x = _hkn_params(problem, hkn)
        base = reference.hkn_gauged_oracle(k, n, x, prec)

        def oracle(t, deriv=0):
            if deriv:
                raise UsageError("the hkn-gauged oracle provides values only")
            return base(to_fraction(t)) * scale
    else:
        raise UsageError(f"unknown oracle {name!r}; choose from {', '.join(ORACLES)}")
    oracle.name = name
    return oracle


def _oracle_for(cfg: RunConfig, problem: Problem, prec: Precision):
    name = cfg.oracle or problem.extras.get("oracle")
    return make_oracle(name, problem, prec) if name else None


def parse_point(text: str) -> tuple:
    """``p:q`` or ``p:q:deriv``."""
    parts = text.split(":")
    if len(parts) not in (2, 3):
        raise UsageError(f"data point {text!r} is not of the form p:q[:deriv]")
    try:
        return (to_fraction(parts[0]), parts[1].strip(), int(parts[2]) if len(parts) == 3 else 0)
    except (ValueError, ZeroDivisionError):
        raise UsageError(f"cannot read data point {text!r}") from None


def _points(entries, problem, prec, what):
    """Data points from a literal list or from ``{"points": ..., "from": "oracle"}``."""
    if isinstance(entries, dict):
        if entries.get("from") != "oracle":
            raise UsageError(f"{what}: only 'from': 'oracle' is supported")
        name = problem.extras.get("oracle")
        if not name:
            raise UsageError(f"{what} come from the oracle but the problem names none")
        oracle = make_oracle(name, problem, prec)
        scale = prec.real(to_fraction(entries.get("scale", 1)))
        own = prec.real(to_fraction(problem.extras.get("oracle_scale", 1)))
        out = []
        for e in entries["points"]:
            p, d = (e[0], int(e[1])) if isinstance(e, list) else (e, 0)
            p = to_fraction(p)
            out.append(DataPoint(p, oracle(p, d) / own * scale, d))
        return out
    out = []
    for e in entries:
        p, q, d = (e + [0])[:3] if isinstance(e, list) else e
        out.append(DataPoint(to_fraction(p), prec.real(to_fraction(q)), int(d)))
    return out


def _data(cfg, problem, prec, key="data"):
    given = cfg.data if key == "data" else cfg.conditions
    if given:
        return [DataPoint(p, prec.real(to_fraction(q)), d) for p, q, d in given]
    if key not in problem.extras:
        raise UsageError(f"no {key}: pass --{key} p:q[:deriv] or add '{key}' to the problem file")
    return _points(problem.extras[key], problem, prec, key)


def _initial(cfg, problem, prec, t0):
    if cfg.initial:
        return prec.array([prec.real(to_fraction(v)) for v in cfg.initial])
    init = problem.extras.get("initial")
    if init is None:
        raise UsageError("no initial vector: pass --initial or add 'initial' to the problem file")
    if init == "oracle":
        name = problem.extras.get("oracle")
        if name == "hkn-gauged":
            k, n, x = _hkn_params(problem)
            return reference.hkn_gauged_initial(k, n, x, t0, prec)
        if not name:
            raise UsageError("'initial': 'oracle' needs an oracle in the problem file")
        oracle = make_oracle(name, problem, prec)
        return prec.array([oracle(t0, d) for d in range(problem.first_order().dim)])
    return prec.array([prec.real(to_fraction(v)) for v in init])


# ---------------------------------------------------------------------------
# output


def failure_onset(table, oracle, threshold: float = 0.3, notes: list | None = None, component: int = 0) -> float:
    """First ``t_i`` whose relative error against ``oracle`` exceeds ``threshold``; ``inf`` when none does.

    Nodes where the oracle vanishes are skipped (and listed in ``notes``).
    NaN states (after a blow-up) count as failures.
    """
    values = table.states[:, component] if hasattr(table, "states") else table[1]
    ts = table.t if hasattr(table, "t") else table[0]
    for t, f in zip(ts, values):
        ref = oracle(t)
        if ref == 0:
            if notes is not None:
                notes.append(f"oracle vanishes at t = {float(t)!r}; node skipped")
            continue
        rel = abs(f - ref) / abs(ref)
        if not rel <= threshold:
            return float(t)
    return math.inf


def _fmt(prec: Precision, x) -> str:
    if x is None:
        return ""
    if prec.native:
        return repr(float(x))
    if prec.mp.isnan(x):
        return "nan"
    return prec.format(x)


def _column_names(count: int) -> list[str]:
    return ["f" + "'" * j for j in range(count)]


@dataclass
class Table:
    t: np.ndarray
    columns: dict
    prec: Precision


def write_outputs(cfg: RunConfig, table: Table, diag: dict, oracle=None, stdout=None):
    prec = table.prec
    names = list(table.columns)
    rows = [list(table.columns[c]) for c in names]
    if oracle is not None:
        refs, rels, notes = [], [], []
        f = table.columns[names[0]]
        for t, v in zip(table.t, f):
            ref = oracle(t)
            refs.append(ref)
            rels.append(abs(v - ref) / abs(ref) if ref != 0 else None)
        names += ["reference", "rel_error"]
        rows += [refs, rels]
        finite = [r for r in rels if r is not None and r == r]
        diag["max_rel_error"] = float(max(finite)) if finite else None
        onset = failure_onset((table.t, f), oracle, cfg.threshold, notes)
        diag["failure_onset"] = "inf" if math.isinf(onset) else onset
        if notes:
            diag.setdefault("notes", []).extend(notes)
    buf = io.StringIO()
    buf.write(f"# command: {cfg.command}\n")
    if cfg.problem:
        buf.write(f"# problem: {cfg.problem}\n")
    buf.write(f"# digits: {prec.digits}\n")
    if oracle is not None:
        buf.write(f"# oracle: {oracle.name}\n")
    buf.write(",".join(["t"] + names) + "\n")
    for i, t in enumerate(table.t):
        buf.write(",".join([_fmt(prec, t)] + [_fmt(prec, col[i]) for col in rows]) + "\n")
    text = buf.getvalue()
    diag_text = json.dumps(diag, indent=2, sort_keys=True, default=_json_default) + "\n"
    if cfg.output:
        Path(cfg.output).write_text(text)
        Path(cfg.output + ".diag.json").write_text(diag_text)
    else:
        (stdout or sys.stdout).write(text)
        sys.stderr.write(diag_text)


def _json_default(x):
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    return str(x)


def _eval_points(problem: Problem, cfg: RunConfig, prec: Precision) -> np.ndarray:
    a, b = problem.interval
    M = max(2, cfg.eval_points)
    return prec.array([a + (b - a) * Fraction(i, M - 1) for i in range(M)])


# ---------------------------------------------------------------------------
# commands


def _grid(cfg: RunConfig, problem: Problem) -> Grid:
    t0 = to_fraction(cfg.t0) if cfg.t0 is not None else problem.interval[0]
    h = to_fraction(cfg.h) if cfg.h is not None else Fraction(1, 1000)
    if cfg.N is not None:
        N = cfg.N
    else:
        N = int(round((problem.interval[1] - t0) / h))
    if N < 1:
        raise UsageError("the grid needs at least one step")
    return Grid(t0, h, N)


def _stepper(cfg: RunConfig) -> steppers.Stepper:
    try:
        return steppers.Stepper.parse(cfg.stepper, cfg.stages, cfg.rtol, cfg.atol)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _state_table(tab, prec) -> Table:
    cols = {name: tab.states[:, j] for j, name in enumerate(_column_names(tab.dim))}
    return Table(tab.t, cols, prec)


def cmd_solve_ivp(cfg, problem, prec):
    grid = _grid(cfg, problem)
    system = problem.first_order()
    F0 = _initial(cfg, problem, prec, grid.t_start)
    tab = steppers.solve_ivp(_stepper(cfg), system, F0, grid, prec, record_every=cfg.record_every)
    return _state_table(tab, prec), dict(tab.meta)


def cmd_defuse(cfg, problem, prec):
    grid = _grid(cfg, problem)
    system = problem.first_order()
    F0 = _initial(cfg, problem, prec, grid.t_start)
    stepper = _stepper(cfg)
    policy = defusing.DefusePolicy(cfg.cut, cfg.tau, cfg.scaling)
    if cfg.window:
        tab = defusing.windowed_defused_solve(stepper, system, grid, F0, cfg.window, policy, prec, cfg.record_every)
    else:
        tab = defusing.defused_solve(stepper, system, grid, F0, policy, prec, cfg.record_every)
    return _state_table(tab, prec), dict(tab.meta)


def cmd_fit_a(cfg, problem, prec, data=None):
    if problem.operator is None:
        raise UsageError("method A needs a scalar operator")
    a, b = problem.interval
    grid = Grid.over(a, b, cfg.N or 100) if cfg.h is None else Grid(a, to_fraction(cfg.h), int(round((b - a) / to_fraction(cfg.h))))
    data = data if data is not None else _data(cfg, problem, prec)
    system = fdcollocation.assemble_method_a(problem.operator, grid, data, prec=prec, offgrid=cfg.offgrid)
    tab = fdcollocation.solve_method_a(system)
    return Table(tab.t, {"f": tab.states[:, 0]}, prec), dict(tab.meta)


def _basis(cfg, problem):
    a, b = problem.interval
    if cfg.basis == "chebyshev":
        return variational.ChebyshevOn(cfg.count, a, b)
    if cfg.basis == "monomial":
        return variational.Monomial(cfg.count)
    if cfg.basis == "asymptotic":
        return variational.AsymptoticPower(cfg.count)
    if cfg.basis == "user":
        members = problem.extras.get("basis")
        if not members:
            raise UsageError("--basis user needs a 'basis' list of expressions in the problem file")
        return variational.UserExpr(members, problem.params)
    raise UsageError(f"unknown basis {cfg.basis!r}")


def _quad(cfg, problem, prec):
    a, b = problem.interval
    if cfg.quad == "trapezoid":
        N = cfg.quad_n or max(1, int(round((b - a) * 100)))
        return variational.trapezoid(a, b, N, prec)
    if cfg.quad == "chebyshev-weight":
        return variational.chebyshev_weight(a, b, cfg.quad_n or 200, prec)
    raise UsageError(f"unknown quadrature {cfg.quad!r}")


def _fit_table(fit, cfg, problem, prec, extra):
    ts = _eval_points(problem, cfg, prec)
    meta = dict(fit.meta)
    meta.update(extra)
    meta["basis"] = fit.basis.describe()
    meta["coefficients"] = [_fmt(prec, c) for c in fit.coefficients]
    if fit.loss is not None:
        meta["loss"] = float(fit.loss)
    if fit.objective is not None:
        meta["objective"] = float(fit.objective)
    if fit.constraint_residuals is not None and len(fit.constraint_residuals):
        meta["max_constraint_residual"] = float(max(abs(r) for r in fit.constraint_residuals))
    return Table(ts, {"f": fit(ts)}, prec), meta


def cmd_fit_b(cfg, problem, prec, data=None):
    if problem.operator is None:
        raise UsageError("method B needs a scalar operator")
    data = data if data is not None else _data(cfg, problem, prec)
    basis, quad = _basis(cfg, problem), _quad(cfg, problem, prec)
    if cfg.mode == "constrained":
        fit = variational.fit_method_b_constrained(problem.operator, basis, quad, data, prec)
    elif cfg.mode == "penalized":
        fit = variational.fit_method_b_penalized(problem.operator, basis, quad, data, prec,
                                                 cfg.alpha, cfg.beta, cfg.gamma)
    else:
        raise UsageError(f"unknown mode {cfg.mode!r}")
    return _fit_table(fit, cfg, problem, prec, {"quadrature": quad.kind})


def cmd_fit_c(cfg, problem, prec, data=None):
    if problem.operator is None:
        raise UsageError("method C needs a scalar operator")
    data = data if data is not None else _data(cfg, problem, prec)
    basis, quad = _basis(cfg, problem), _quad(cfg, problem, prec)
    S = variational.gram_matrix(problem.operator, basis, quad, prec)
    fit = variational.fit_method_c(S, basis, data, cfg.mode, prec)
    return _fit_table(fit, cfg, problem, prec, {"quadrature": quad.kind})


def cmd_spectral(cfg, problem, prec, data=None):
    if problem.operator is None:
        raise UsageError("the spectral method needs a scalar operator")
    a, b = problem.interval
    conds = data if data is not None else _data(cfg, problem, prec, "conditions")
    sol = chebyshev.solve_spectral(problem.operator, a, b, cfg.n, conds, prec)
    ts = _eval_points(problem, cfg, prec)
    meta = {"method": "spectral", "n": cfg.n, "residual": sol.residual}
    return Table(ts, {"f": sol(ts)}, prec), meta


_FITS = {"fit-a": cmd_fit_a, "fit-b": cmd_fit_b, "fit-c": cmd_fit_c, "spectral": cmd_spectral}


def cmd_perturb(cfg, problem, prec):
    """Repeat a fit with data values ``q (1 + eps)``; one column per trial."""
    if cfg.method not in _FITS:
        raise UsageError(f"perturb --method must be one of {', '.join(_FITS)}")
    if not 0 <= cfg.rel < 1:
        raise UsageError("--rel must lie in [0, 1)")
    run_fit = _FITS[cfg.method]
    key = "conditions" if cfg.method == "spectral" else "data"
    data = _data(cfg, problem, prec, key)
    base, meta = run_fit(cfg, problem, prec, data)
    gens = variational.trial_generators(cfg.seed, cfg.trials)

    def trial(rng):
        q = variational.perturbed_values([d.q for d in data], cfg.rel, rng, prec)
        pdata = [DataPoint(d.p, qi, d.deriv_order) for d, qi in zip(data, q)]
        return run_fit(cfg, problem, prec, pdata)[0].columns["f"]

    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        cols = list(pool.map(trial, gens))
    columns = {"f": base.columns["f"]}
    for i, c in enumerate(cols):
        columns[f"trial_{i + 1}"] = c
    meta = {"method": cfg.method, "base": meta, "trials": cfg.trials, "rel": cfg.rel, "seed": cfg.seed,
            "prng": "numpy PCG64 streams spawned from SeedSequence(seed)"}
    oracle = _oracle_for(cfg, problem, prec)
    target = (lambda i: oracle(base.t[i])) if oracle else (lambda i: base.columns["f"][i])
    refs = [target(i) for i in range(len(base.t))]
    per_trial = []
    for c in cols:
        errs = [abs(v - r) / abs(r) for v, r in zip(c, refs) if r != 0]
        per_trial.append(float(max(errs)) if errs else None)
    meta["trial_max_rel_error"] = per_trial
    meta["ensemble_max_rel_error"] = max((e for e in per_trial if e is not None), default=None)
    meta["ensemble_reference"] = oracle.name if oracle else "unperturbed fit"
    return Table(base.t, columns, prec), meta


def cmd_oracle(cfg, problem, prec):
    if not cfg.at:
        raise UsageError("oracle needs at least one --at value")
    if cfg.log10_ratio:
        k, n, x = _hkn_params(problem, cfg.hkn or [10, 1, "1/2"])
        cols = {"log10_ratio": [reference.log10_dominance_ratio(k, n, x, to_fraction(t)) for t in cfg.at]}
        return Table(cfg.at, cols, get_precision(16)), {"oracle": "dominance-ratio", "k": k, "n": n, "x": x}
    name = cfg.oracle or (problem.extras.get("oracle") if problem else None)
    if cfg.hkn and not name:
        name = "hkn"
    if not name:
        raise UsageError("name an oracle: --airy, --hkn K N X, --oracle NAME or a problem with one")
    oracle = make_oracle(name, problem, prec, cfg.hkn)
    ts = [to_fraction(t) for t in cfg.at]
    values = [oracle(t, cfg.deriv) for t in ts]
    return Table(prec.array(ts), {"f" + "'" * cfg.deriv: values}, prec), {"oracle": name}


HANDLERS = {
    "solve-ivp": cmd_solve_ivp,
    "defuse": cmd_defuse,
    "fit-a": cmd_fit_a,
    "fit-b": cmd_fit_b,
    "fit-c": cmd_fit_c,
    "spectral": cmd_spectral,
    "perturb": cmd_perturb,
    "oracle": cmd_oracle,
}


# ---------------------------------------------------------------------------
# entry points


def run(cfg: RunConfig, stdout=None) -> int:
    """Execute one command; returns the exit code (0 ok, 2 bad input, 3 numerical failure)."""
    diag: dict = {"command": cfg.command}
    try:
        prec = get_precision(cfg.digits)
        problem = resolve_problem(cfg.problem) if cfg.problem else None
        if problem is None and cfg.command != "oracle":
            raise UsageError(f"{cfg.command} needs --problem")
    except (UsageError, ExprSyntaxError, json.JSONDecodeError, KeyError, ValueError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    start = time.perf_counter()
    try:
        table, meta = HANDLERS[cfg.command](cfg, problem, prec)
        oracle = None
        if cfg.command not in ("oracle", "perturb"):
            oracle = _oracle_for(cfg, problem, prec)
    except UsageError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        diag.update(status="failed", error=f"{type(exc).__name__}: {exc}",
                    runtime_s=round(time.perf_counter() - start, 3))
        sys.stderr.write(json.dumps(diag, indent=2) + "\n")
        if cfg.output:
            Path(cfg.output + ".diag.json").write_text(json.dumps(diag, indent=2) + "\n")
        return 3
    except ValueError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    diag.update(meta)
    diag["digits"] = prec.digits
    diag["status"] = "ok"
    if cfg.command == "perturb" or "blowup" in meta or "failure" in meta:
        diag["status"] = "ok" if "blowup" not in meta else "blowup"
    write_outputs(cfg, table, diag, oracle, stdout)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hgmode", description="Stable evaluation of holonomic functions.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--problem", help="problem JSON path or bundled problem name")
        p.add_argument("--digits", type=int, default=16, help="working precision in decimal digits")
        p.add_argument("--output", help="CSV path; diagnostics go to <output>.diag.json")
        p.add_argument("--oracle", choices=ORACLES, help="reference function for error columns")
        p.add_argument("--threshold", type=float, default=0.3, help="relative error defining failure onset")

    def stepping(p):
        p.add_argument("--stepper", default="rk4", help="euler, rk4, gauss, gaussS or rk45")
        p.add_argument("--stages", type=int, default=2)
        p.add_argument("--h", help="step size (exact decimal or fraction)")
        p.add_argument("--N", type=int, help="number of steps")
        p.add_argument("--t0", help="start point (default: interval start)")
        p.add_argument("--initial", type=lambda s: s.split(","), help="comma separated initial vector")
        p.add_argument("--rtol", type=float, default=1e-6)
        p.add_argument("--atol", type=float, default=0.0)
        p.add_argument("--record-every", type=int, default=1)

    def fitting(p):
        p.add_argument("--data", type=parse_point, action="append", help="p:q[:deriv], repeatable")
        p.add_argument("--basis", default="chebyshev", choices=("chebyshev", "monomial", "asymptotic", "user"))
        p.add_argument("--count", type=int, default=10, help="number of basis members")
        p.add_argument("--quad", default="trapezoid", choices=("trapezoid", "chebyshev-weight"))
        p.add_argument("--quad-n", type=int, help="quadrature subintervals (default: 100 per unit length)")
        p.add_argument("--mode", default="constrained", choices=("constrained", "penalized"))
        p.add_argument("--alpha", type=float, default=1.0)
        p.add_argument("--beta", type=float, default=1.0)
        p.add_argument("--gamma", type=float, default=0.0)
        p.add_argument("--eval-points", type=int, default=401, help="output points across the interval")

    for name in ("solve-ivp", "defuse"):
        p = sub.add_parser(name)
        common(p)
        stepping(p)
        if name == "defuse":
            p.add_argument("--cut", default="gap", choices=("gap", "threshold"))
            p.add_argument("--tau", type=float, default=1.0)
            p.add_argument("--scaling", default="match", choices=("match", "unit"))
            p.add_argument("--window", type=int, help="re-defuse every WINDOW steps")

    p = sub.add_parser("fit-a")
    common(p)
    p.add_argument("--data", type=parse_point, action="append")
    p.add_argument("--N", type=int, help="grid intervals (default 100)")
    p.add_argument("--h", help="grid step (overrides --N)")
    p.add_argument("--offgrid", default="error", choices=("error", "nearest", "interpolate"))

    for name in ("fit-b", "fit-c"):
        p = sub.add_parser(name)
        common(p)
        fitting(p)

    p = sub.add_parser("spectral")
    common(p)
    p.add_argument("--conditions", type=parse_point, action="append", help="p:q[:deriv], repeatable")
    p.add_argument("--n", type=int, default=100, help="number of Chebyshev points")
    p.add_argument("--eval-points", type=int, default=401)

    p = sub.add_parser("perturb")
    common(p)
    fitting(p)
    p.add_argument("--method", default="fit-b", choices=tuple(_FITS))
    p.add_argument("--conditions", type=parse_point, action="append")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--N", type=int)
    p.add_argument("--h")
    p.add_argument("--offgrid", default="error", choices=("error", "nearest", "interpolate"))
    p.add_argument("--trials", type=int, default=30)
    p.add_argument("--rel", type=float, default=1e-3, help="relative half-width of the uniform noise")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, help="thread count for the trials")

    p = sub.add_parser("oracle")
    common(p)
    p.add_argument("--airy", dest="oracle", action="store_const", const="airy")
    p.add_argument("--hkn", nargs=3, metavar=("K", "N", "X"), help="H^k_n(x, t) parameters")
    p.add_argument("--at", action="append", default=[], help="evaluation point, repeatable")
    p.add_argument("--deriv", type=int, default=0)
    p.add_argument("--log10-ratio", action="store_true", help="log10 of the dominance ratio at each point")
    return parser


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    fields = RunConfig.__dataclass_fields__
    values = {k: v for k, v in vars(ns).items() if k in fields and v is not None}
    return RunConfig(**values)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    return run(config_from_args(ns))


if __name__ == "__main__":
    sys.exit(main())
