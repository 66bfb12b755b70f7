"""Cyclic coordinate descent for penalized least squares.

Minimizes ``F(x) = 0.5 * ||A x - b||**2 + sum_i rho(x_i)`` over a design
with unit-norm columns. Each coordinate update is one call to
:func:`cdcert.penalty.threshold` on ``c_i = A_i^T r + x_i`` with the
residual ``r = b - A x`` maintained in O(n) per coordinate.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import diagnostics
from .penalty import Family, PenaltySpec, penalty_sum, theta, threshold

log = logging.getLogger(__name__)

COLUMN_NORM_TOL = 1e-10


class ProblemError(ValueError):
    """Invalid problem data. ``code`` names the failure class."""

    code = "invalid"


class ZeroColumnError(ProblemError):
    code = "zero_column"


class NonFiniteError(ProblemError):
    code = "non_finite"


class DimensionError(ProblemError):
    code = "dimension"


@dataclass(frozen=True, eq=False)
class Problem:
    """Design matrix with unit-norm columns and response vector.

    Build through :func:`normalize_columns` unless the columns are already
    normalized; the constructor only validates.
    """

    a: np.ndarray
    b: np.ndarray
    column_scales: np.ndarray

    def __post_init__(self):
        a = np.array(self.a, dtype=float, order="F")
        b = np.array(self.b, dtype=float).ravel()
        scales = np.array(self.column_scales, dtype=float).ravel()
        if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
            raise DimensionError(f"design must be a non-empty 2-d array, got shape {a.shape}")
        if b.shape[0] != a.shape[0]:
            raise DimensionError(f"response has {b.shape[0]} rows, design has {a.shape[0]}")
        if scales.shape[0] != a.shape[1]:
            raise DimensionError("column_scales length differs from column count")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b)) and np.all(np.isfinite(scales))):
            raise NonFiniteError("problem data contains non-finite entries")
        norms = np.linalg.norm(a, axis=0)
        bad = np.flatnonzero(np.abs(norms - 1.0) > COLUMN_NORM_TOL)
        if bad.size:
            raise ProblemError(f"column {bad[0]} has norm {norms[bad[0]]!r}, expected 1")
        for arr in (a, b, scales):
            arr.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "column_scales", scales)

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def p(self) -> int:
        return self.a.shape[1]

    def to_original_scale(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) / self.column_scales


def normalize_columns(raw_a, raw_b) -> Problem:
    """Scale every column of ``raw_a`` to unit Euclidean norm.

    ``column_scales`` keeps the original norms, so a coefficient on the
    normalized scale maps back as ``x_orig = x_norm / column_scales``.
    """
    a = np.array(raw_a, dtype=float)
    b = np.array(raw_b, dtype=float).ravel()
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.size == 0:
        raise DimensionError(f"design must be a non-empty 2-d array, got shape {a.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise NonFiniteError("problem data contains non-finite entries")
    norms = np.linalg.norm(a, axis=0)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ZeroColumnError(f"column {zero[0]} is identically zero")
    return Problem(a / norms, b, norms)


def objective(problem: Problem, spec: PenaltySpec, x) -> float:
    """``0.5 * ||A x - b||**2 + sum_i rho(x_i)`` on the normalized scale."""
    x = np.asarray(x, dtype=float)
    if x.shape != (problem.p,):
        raise DimensionError(f"x has shape {x.shape}, expected ({problem.p},)")
    r = problem.a @ x - problem.b
    return 0.5 * float(r @ r) + penalty_sum(spec, x)


def lambda_max(problem: Problem) -> float:
    """Smallest lambda for which ``x = 0`` is stationary: ``max |A^T b|``."""
    return float(np.max(np.abs(problem.a.T @ problem.b)))


@dataclass
class CDState:
    """Iterate and its residual ``b - A x``; mutated in place by sweeps."""

    x: np.ndarray
    r: np.ndarray
    c: Optional[np.ndarray] = None

    @classmethod
    def start(cls, problem: Problem, x0=None) -> "CDState":
        x = np.zeros(problem.p) if x0 is None else np.array(x0, dtype=float)
        if x.shape != (problem.p,):
            raise DimensionError(f"initial point has shape {x.shape}, expected ({problem.p},)")
        if not np.all(np.isfinite(x)):
            raise NonFiniteError("initial point has non-finite entries")
        return cls(x, problem.b - problem.a @ x)

    def refresh(self, problem: Problem) -> None:
        self.r = problem.b - problem.a @ self.x


def cd_sweep(state: CDState, problem: Problem, spec: PenaltySpec, order: Sequence[int] | None = None) -> CDState:
    """One pass of exact coordinate minimization, cyclic unless ``order`` given.

    Updates ``state`` in place and returns it. ``state.c`` holds the
    scalar inputs ``c_i`` used for each coordinate in this pass.
    """
    a, x, r = problem.a, state.x, state.r
    p = problem.p
    c = np.empty(p)
    for i in range(p) if order is None else order:
        col = a[:, i]
        old = x[i]
        ci = float(col @ r) + old
        new = threshold(spec, ci)
        c[i] = ci
        if new != old:
            x[i] = new
            r -= (new - old) * col
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(r))):
        raise FloatingPointError("non-finite value produced during coordinate sweep")
    state.c = c
    return state


class Status(str, enum.Enum):
    CONVERGED = "converged"
    MAX_SWEEPS = "max_sweeps"


@dataclass
class SolverOptions:
    """Stopping rule and bookkeeping knobs for :func:`solve`.

    ``tol`` bounds the Euclidean norm of the change in ``x`` over one
    sweep. ``random_order`` permutes coordinates each sweep; certificates
    are only guaranteed for the cyclic order.
    """

    max_sweeps: int = 10_000
    tol: float = 1e-8
    init: Optional[np.ndarray] = None
    collect_certificates: bool = False
    residual_refresh_period: int = 100
    random_order: bool = False
    seed: Optional[int] = None

    def __post_init__(self):
        if not (isinstance(self.max_sweeps, (int, np.integer)) and self.max_sweeps >= 1):
            raise ValueError(f"max_sweeps must be a positive integer, got {self.max_sweeps!r}")
        if not (self.tol > 0 and math.isfinite(self.tol)):
            raise ValueError(f"tol must be positive, got {self.tol!r}")
        if not (isinstance(self.residual_refresh_period, (int, np.integer)) and self.residual_refresh_period >= 1):
            raise ValueError("residual_refresh_period must be a positive integer")
        if self.random_order and self.collect_certificates:
            raise ValueError("certificates are only defined for the cyclic sweep order")
        if self.init is not None:
            self.init = np.asarray(self.init, dtype=float)
            if not np.all(np.isfinite(self.init)):
                raise ValueError("init has non-finite entries")

    def to_dict(self) -> dict:
        return {
            "max_sweeps": int(self.max_sweeps),
            "tol": float(self.tol),
            "init": None if self.init is None else [float(v) for v in self.init],
            "collect_certificates": bool(self.collect_certificates),
            "residual_refresh_period": int(self.residual_refresh_period),
            "random_order": bool(self.random_order),
            "seed": self.seed,
        }


@dataclass
class SweepRecord:
    sweep: int
    objective: float
    step_norm: float
    h1_lhs: float
    h1_rhs: float
    d_norm: Optional[float] = None
    d_bound: Optional[float] = None
    d_bound_tight: Optional[float] = None
    d_membership_gap: Optional[float] = None


@dataclass
class SolveTrace:
    """Per-sweep history. ``objective_initial`` is ``F(x^0)``."""

    objective_initial: float
    theta: float
    p: int
    records: list[SweepRecord] = field(default_factory=list)

    @property
    def objectives(self) -> np.ndarray:
        return np.array([self.objective_initial] + [rec.objective for rec in self.records])

    @property
    def step_norms(self) -> np.ndarray:
        return np.array([rec.step_norm for rec in self.records])


@dataclass
class SolveResult:
    x_hat: np.ndarray
    x_hat_normalized: np.ndarray
    status: Status
    sweeps: int
    objective: float
    trace: SolveTrace
    stationarity_gap: float
    penalty: PenaltySpec
    options: SolverOptions
    c_last: Optional[np.ndarray] = None

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.x_hat_normalized)

    @property
    def support_size(self) -> int:
        return int(np.count_nonzero(self.x_hat_normalized))


def solve(problem: Problem, spec: PenaltySpec, opts: SolverOptions | None = None) -> SolveResult:
    """Run coordinate descent sweeps until the step norm drops to ``opts.tol``."""
    opts = SolverOptions() if opts is None else opts
    state = CDState.start(problem, opts.init)
    th = theta(spec)
    f_prev = objective(problem, spec, state.x)
    trace = SolveTrace(objective_initial=f_prev, theta=th, p=problem.p)
    rng = np.random.default_rng(opts.seed) if opts.random_order else None
    witness_op = diagnostics.witness_operator(problem) if opts.collect_certificates else None

    status = Status.MAX_SWEEPS
    sweeps = 0
    for k in range(1, opts.max_sweeps + 1):
        x_prev = state.x.copy()
        order = rng.permutation(problem.p) if rng is not None else None
        cd_sweep(state, problem, spec, order)
        if k % opts.residual_refresh_period == 0:
            state.refresh(problem)
        dx = state.x - x_prev
        step_sq = float(dx @ dx)
        f_next = objective(problem, spec, state.x)
        rec = SweepRecord(k, f_next, math.sqrt(step_sq), f_prev - f_next, th * step_sq)
        if witness_op is not None:
            d = witness_op @ dx
            rec.d_norm = float(np.linalg.norm(d))
            rec.d_bound = problem.p * rec.step_norm
            rec.d_bound_tight = diagnostics.tight_witness_bound(dx)
            rec.d_membership_gap = diagnostics.membership_gap(problem, spec, state.x, d)
        trace.records.append(rec)
        f_prev = f_next
        sweeps = k
        if rec.step_norm <= opts.tol:
            status = Status.CONVERGED
            break

    x = state.x.copy()
    gap = diagnostics.stationarity_gap(problem, spec, x)
    log.debug("solve: %s after %d sweeps, F=%.17g, gap=%.3g", status.value, sweeps, f_prev, gap)
    return SolveResult(
        x_hat=problem.to_original_scale(x),
        x_hat_normalized=x,
        status=status,
        sweeps=sweeps,
        objective=objective(problem, spec, x),
        trace=trace,
        stationarity_gap=gap,
        penalty=spec,
        options=opts,
        c_last=state.c,
    )


def regularization_path(
    problem: Problem,
    family: Family | str,
    tau: float,
    lambdas: Sequence[float],
    opts: SolverOptions | None = None,
) -> list[SolveResult]:
    """Solve over a strictly descending grid of lambdas with warm starts."""
    lambdas = [float(v) for v in lambdas]
    if not lambdas:
        raise ValueError("empty lambda grid")
    if any(v <= 0 for v in lambdas):
        raise ValueError("lambdas must be positive")
    if any(b > a for a, b in zip(lambdas, lambdas[1:])):
        raise ValueError("lambdas must be descending")
    base = SolverOptions() if opts is None else opts
    results = []
    x0 = base.init
    prev_support = 0
    for lam in lambdas:
        step_opts = SolverOptions(**{**vars(base), "init": x0})
        res = solve(problem, PenaltySpec(family, lam, tau), step_opts)
        if res.support_size < prev_support:
            log.info("support shrank from %d to %d at lambda=%.6g", prev_support, res.support_size, lam)
        prev_support = res.support_size
        x0 = res.x_hat_normalized
        results.append(res)
    return results


def geometric_lambdas(problem: Problem, num: int = 20, min_ratio: float = 0.01) -> np.ndarray:
    """Descending geometric grid from ``lambda_max`` down to ``min_ratio * lambda_max``."""
    lmax = lambda_max(problem)
    if lmax == 0:
        raise ValueError("lambda_max is 0 (response orthogonal to every column)")
    if num < 1 or not 0 < min_ratio <= 1:
        raise ValueError("need num >= 1 and 0 < min_ratio <= 1")
    return lmax * np.geomspace(1.0, min_ratio, num)
