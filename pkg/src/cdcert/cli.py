"""Command-line entry point: ``cdcert {gen,fit,path,diagnose,curves}``.

Machine-readable output (JSON/CSV) goes to stdout or ``--out``; logs go to
stderr.

Exit codes
----------
0  success (fit: converged; diagnose: no violations)
1  invalid input or flags
2  fit/path stopped at --max-sweeps (result still written)
3  diagnose found certificate violations
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import diagnostics, problems
from .penalty import Family, PenaltySpec, derivative, threshold, value
from .solver import (
    CDState,
    ProblemError,
    SolverOptions,
    Status,
    cd_sweep,
    lambda_max,
    geometric_lambdas,
    regularization_path,
    solve,
)

log = logging.getLogger("cdcert")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_MAX_SWEEPS = 2
EXIT_VIOLATIONS = 3

ENV_TOL = "CDCERT_TOL"
ENV_THREADS = "CDCERT_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # flag errors share exit code 1 with other input errors; argparse uses 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _env_float(name: str, default: float) -> float:
    raw = os.environ.get(name)
    if raw is None:
        return default
    try:
        return float(raw)
    except ValueError:
        raise UsageError(f"{name}={raw!r} is not a number") from None


def _env_int(name: str, default: int) -> int:
    raw = os.environ.get(name)
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{name}={raw!r} is not an integer") from None


def _add_penalty_flags(p: argparse.ArgumentParser, need_lambda: bool = True, allow_ratio: bool = True) -> None:
    p.add_argument("--penalty", choices=[f.value for f in Family], required=True)
    if need_lambda and not allow_ratio:
        p.add_argument("--lambda", dest="lam", type=float, required=True, help="regularization weight")
    elif need_lambda:
        g = p.add_mutually_exclusive_group(required=True)
        g.add_argument("--lambda", dest="lam", type=float, help="regularization weight")
        g.add_argument("--lambda-ratio", type=float, help="lambda as a fraction of lambda_max")
    p.add_argument("--tau", type=float, default=None, help="concavity parameter (SCAD > 2, MCP > 1)")


def _add_problem_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--problem", help="combined CSV: column 0 = b, remaining columns = A")
    p.add_argument("--a", dest="path_a", help="design matrix CSV (with --b)")
    p.add_argument("--b", dest="path_b", help="response vector CSV (with --a)")


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tol", type=float, default=None, help=f"step-norm tolerance (default 1e-8, env {ENV_TOL})")
    p.add_argument("--max-sweeps", type=int, default=10_000)
    p.add_argument("--refresh", type=int, default=100, help="recompute the residual every N sweeps")
    p.add_argument("--certificates", action="store_true", help="record per-sweep H1/H2 certificates")
    p.add_argument("--out", help="write output here instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="cdcert",
        description="Coordinate descent for Lasso/SCAD/MCP least squares with convergence certificates.",
        epilog=f"Environment: {ENV_TOL} overrides the default --tol; "
        f"{ENV_THREADS} sets worker threads for diagnose --replay.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a seeded synthetic instance")
    g.add_argument("--n", type=int, default=100)
    g.add_argument("--p", type=int, default=400)
    g.add_argument("--sparsity", type=int, default=10)
    g.add_argument("--signal-low", type=float, default=1.0)
    g.add_argument("--signal-high", type=float, default=2.0)
    g.add_argument("--noise-sigma", type=float, default=0.1)
    g.add_argument("--correlation", type=float, default=0.0)
    g.add_argument("--design", choices=["gaussian", "orthogonal"], default="gaussian")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="output stem; writes <stem>.csv and <stem>.json")

    f = sub.add_parser("fit", help="solve one penalized problem")
    _add_problem_flags(f)
    _add_penalty_flags(f)
    _add_solver_flags(f)

    pa = sub.add_parser("path", help="warm-started regularization path")
    _add_problem_flags(pa)
    _add_penalty_flags(pa, need_lambda=False)
    pa.add_argument("--num", type=int, default=20, help="grid size")
    pa.add_argument("--min-ratio", type=float, default=0.01, help="smallest lambda / lambda_max")
    pa.add_argument("--lambdas", help="comma-separated descending lambdas (overrides the grid)")
    _add_solver_flags(pa)

    d = sub.add_parser("diagnose", help="re-check certificates in a stored fit result")
    d.add_argument("--result", required=True, help="JSON written by fit")
    _add_problem_flags(d)
    d.add_argument("--replay", action="store_true", help="re-run the sweeps and recompute witnesses")
    d.add_argument("--out")

    c = sub.add_parser("curves", help="sample penalty, derivative and threshold as CSV")
    _add_penalty_flags(c, allow_ratio=False)
    c.add_argument("--tmin", type=float, default=-3.0)
    c.add_argument("--tmax", type=float, default=3.0)
    c.add_argument("--num", type=int, default=601)
    c.add_argument("--out")
    return parser


def _penalty(args, problem=None) -> PenaltySpec:
    """Resolve penalty flags; without ``problem`` a ``--lambda-ratio`` is only validated."""
    tau = args.tau
    if tau is None:
        tau = {"scad": 3.7, "mcp": 3.0}.get(args.penalty, 0.0)
    lam = getattr(args, "lam", None)
    ratio = getattr(args, "lambda_ratio", None)
    try:
        spec = PenaltySpec(args.penalty, 1.0 if lam is None else lam, tau)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if ratio is not None:
        if not ratio > 0:
            raise UsageError("--lambda-ratio must be positive")
        if problem is not None:
            lmax = lambda_max(problem)
            if lmax == 0:
                raise UsageError("lambda_max is 0; --lambda-ratio is undefined")
            spec = spec.with_lambda(ratio * lmax)
    return spec


def _options(args) -> SolverOptions:
    tol = args.tol if args.tol is not None else _env_float(ENV_TOL, 1e-8)
    try:
        return SolverOptions(
            max_sweeps=args.max_sweeps,
            tol=tol,
            collect_certificates=args.certificates,
            residual_refresh_period=args.refresh,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _load(args):
    if args.problem is None and (args.path_a is None or args.path_b is None):
        raise UsageError("need --problem or both --a and --b")
    if args.problem is not None and (args.path_a or args.path_b):
        raise UsageError("--problem conflicts with --a/--b")
    if args.problem is not None:
        return problems.load_problem(args.problem)
    return problems.load_problem(path_a=args.path_a, path_b=args.path_b)


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _problem_config(args) -> dict:
    return {"problem": args.problem, "a": args.path_a, "b": args.path_b}


def run_gen(args) -> int:
    try:
        spec = problems.SyntheticSpec(
            n=args.n, p=args.p, sparsity=args.sparsity, signal_low=args.signal_low,
            signal_high=args.signal_high, noise_sigma=args.noise_sigma,
            correlation=args.correlation, seed=args.seed, design=args.design,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    problem, x_star = problems.generate(spec)
    csv_path, meta_path = problems.save_instance(spec, problem, x_star, args.out)
    log.info("wrote %s and %s", csv_path, meta_path)
    return EXIT_OK


def _rate_dict(result) -> dict | None:
    try:
        return diagnostics.estimate_rate(result.trace.step_norms).to_dict()
    except diagnostics.InsufficientDataError:
        return None


def run_fit(args) -> int:
    opts = _options(args)
    _penalty(args)
    problem = _load(args)
    spec = _penalty(args, problem)
    result = solve(problem, spec, opts)
    config = {"command": "fit", **_problem_config(args), "penalty": spec.to_dict(), "options": opts.to_dict()}
    doc = problems.result_to_dict(result, config)
    doc["rate"] = _rate_dict(result)
    fl = diagnostics.finite_length(result.trace.step_norms)
    doc["finite_length"] = {"total": fl.total, "last_ratio": None if math.isnan(fl.last_ratio) else fl.last_ratio,
                            "window_ratio": None if math.isnan(fl.window_ratio) else fl.window_ratio}
    _emit(problems.dumps(doc), args.out)
    log.info("%s after %d sweeps, F=%.12g, gap=%.3g, support=%d", result.status.value,
             result.sweeps, result.objective, result.stationarity_gap, result.support_size)
    return EXIT_OK if result.status is Status.CONVERGED else EXIT_MAX_SWEEPS


def run_path(args) -> int:
    opts = _options(args)
    base = _penalty(args)
    problem = _load(args)
    if args.lambdas:
        try:
            lambdas = [float(tok) for tok in args.lambdas.split(",")]
        except ValueError:
            raise UsageError("--lambdas must be comma-separated numbers") from None
    else:
        try:
            lambdas = list(geometric_lambdas(problem, args.num, args.min_ratio))
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    try:
        results = regularization_path(problem, base.family, base.tau, lambdas, opts)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    doc = {
        "schema": "cdcert.path",
        "version": problems.SCHEMA_VERSION,
        "config": {"command": "path", **_problem_config(args), "penalty": base.family.value,
                   "tau": base.tau, "lambdas": lambdas, "options": opts.to_dict()},
        "lambda_max": lambda_max(problem),
        "results": [
            {
                "lambda": r.penalty.lam,
                "status": r.status.value,
                "sweeps": r.sweeps,
                "objective": r.objective,
                "stationarity_gap": r.stationarity_gap,
                "support_size": r.support_size,
                "x_hat": [float(v) for v in r.x_hat],
            }
            for r in results
        ],
    }
    _emit(problems.dumps(doc), args.out)
    converged = all(r.status is Status.CONVERGED for r in results)
    return EXIT_OK if converged else EXIT_MAX_SWEEPS


def _replay(problem, result, threads: int) -> list[diagnostics.Violation]:
    """Re-run the stored fit sweep by sweep and recompute H2 witnesses."""
    spec = result.penalty
    opts = result.options
    state = CDState.start(problem, opts.init)
    steps = []
    for k in range(1, result.sweeps + 1):
        x_prev = state.x.copy()
        cd_sweep(state, problem, spec)
        if k % opts.residual_refresh_period == 0:
            state.refresh(problem)
        steps.append((k, x_prev, state.x.copy()))
    op = diagnostics.witness_operator(problem)
    recorded = {rec.sweep: rec for rec in result.trace.records}

    def check(item):
        k, x_prev, x_next = item
        out = []
        dx = x_next - x_prev
        d = op @ dx
        d_norm = float(np.linalg.norm(d))
        bound = problem.p * float(np.linalg.norm(dx))
        if d_norm > bound + diagnostics.SLACK:
            out.append(diagnostics.Violation(k, "h2", f"|d| = {d_norm:.6g} > p*|dx| = {bound:.6g}"))
        gap = diagnostics.membership_gap(problem, spec, x_next, d)
        if gap > diagnostics.MEMBERSHIP_TOL:
            out.append(diagnostics.Violation(k, "membership", f"witness gap {gap:.3g}"))
        rec = recorded.get(k)
        if rec is not None:
            step = float(np.linalg.norm(dx))
            if abs(step - rec.step_norm) > 1e-9 * (1.0 + step):
                out.append(diagnostics.Violation(k, "replay", f"step norm {step!r} != stored {rec.step_norm!r}"))
        return out

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        found = list(pool.map(check, steps))
    return [v for vs in found for v in vs]


def run_diagnose(args) -> int:
    try:
        result = problems.load_result(args.result)
    except (problems.SchemaError, OSError) as exc:
        raise UsageError(str(exc)) from None
    violations = diagnostics.audit_trace(result.trace)
    problem = None
    if args.problem or args.path_a or args.path_b:
        problem = _load(args)
        if problem.p != result.trace.p:
            raise UsageError(f"problem has p={problem.p}, trace was recorded with p={result.trace.p}")
    elif args.replay:
        raise UsageError("--replay needs the problem file")
    if args.replay:
        violations += _replay(problem, result, _env_int(ENV_THREADS, 1))
    violations.sort(key=lambda v: (v.sweep, v.check))
    certs = diagnostics.certify_sweeps(result.trace)
    doc = {
        "schema": "cdcert.diagnosis",
        "version": problems.SCHEMA_VERSION,
        "config": {"command": "diagnose", "result": args.result, "replay": bool(args.replay)},
        "sweeps": len(certs),
        "h1_checked": len(certs),
        "h2_checked": sum(c.h2_ok is not None for c in certs),
        "violations": [v.to_dict() for v in violations],
        "rate": _rate_dict(result),
    }
    if problem is not None:
        doc["stationarity_gap"] = diagnostics.stationarity_gap(problem, result.penalty, result.x_hat_normalized)
    _emit(problems.dumps(doc), args.out)
    for v in violations:
        log.warning("sweep %d: %s violated: %s", v.sweep, v.check, v.detail)
    return EXIT_VIOLATIONS if violations else EXIT_OK


def run_curves(args) -> int:
    spec = _penalty(args)
    if args.num < 1:
        raise UsageError("--num must be at least 1")
    if not (math.isfinite(args.tmin) and math.isfinite(args.tmax)) or args.tmax < args.tmin:
        raise UsageError("need finite --tmin <= --tmax")
    if args.num == 1:
        ts = [args.tmin]
    else:
        # offsets from the midpoint keep symmetric ranges exactly symmetric, with 0 on the grid
        h = (args.tmax - args.tmin) / (args.num - 1)
        mid, half = 0.5 * (args.tmin + args.tmax), 0.5 * (args.num - 1)
        ts = [mid + (i - half) * h for i in range(args.num)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "value", "derivative", "threshold"])
    for t in ts:
        dv = "" if t == 0.0 else repr(derivative(spec, t))
        w.writerow([repr(t), repr(value(spec, t)), dv, repr(threshold(spec, t))])
    _emit(buf.getvalue(), args.out)
    return EXIT_OK


COMMANDS = {
    "gen": run_gen,
    "fit": run_fit,
    "path": run_path,
    "diagnose": run_diagnose,
    "curves": run_curves,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"cdcert {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ProblemError as exc:
        print(f"cdcert {args.command}: error [{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"cdcert {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
