"""Convergence certificates for coordinate descent runs.

Checks, per sweep, that the objective drops by at least
``theta * ||dx||**2`` and that the cross-coordinate vector ``d`` built from
the step is a genuine subgradient of ``F`` at the new iterate with
``||d|| <= p * ||dx||``. Also measures distance to stationarity and fits
the geometric decay rate of the step norms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .penalty import PenaltySpec, derivative

SLACK = 1e-10
MEMBERSHIP_TOL = 1e-8


class WitnessError(ArithmeticError):
    """The subgradient witness is not in the subdifferential."""


class InsufficientDataError(ValueError):
    pass


@dataclass
class SweepCertificate:
    sweep: int
    delta_f: float
    step_norm_sq: float
    theta: float
    h1_ok: bool
    d_norm: Optional[float] = None
    d_bound: Optional[float] = None
    h2_ok: Optional[bool] = None
    d_membership_gap: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RateEstimate:
    """Log-linear fit ``step_k ~ eta_hat * nu_hat**k`` over a window of sweeps."""

    nu_hat: float
    eta_hat: float
    r_squared: float
    window: tuple[int, int]
    conclusive: bool

    def to_dict(self) -> dict:
        d = asdict(self)
        d["window"] = list(self.window)
        return d


class FiniteLength(NamedTuple):
    total: float
    last_ratio: float
    window_ratio: float


def check_sufficient_decrease(f_prev: float, f_next: float, step_norm_sq: float, theta: float) -> tuple[bool, float]:
    """Return ``(ok, margin)`` with ``margin = f_prev - f_next - theta * step_norm_sq``."""
    if not theta > 0:
        raise ValueError(f"theta must be positive, got {theta}")
    margin = (f_prev - f_next) - theta * step_norm_sq
    return margin >= -SLACK, margin


def witness_operator(problem) -> np.ndarray:
    """Strictly upper-triangular part of ``A^T A``; maps a step ``dx`` to ``d``."""
    return np.triu(problem.a.T @ problem.a, k=1)


def subgradient_witness(problem, x_prev, x_next, spec: PenaltySpec | None = None) -> np.ndarray:
    """Subgradient of ``F`` at ``x_next`` certified by one cyclic sweep.

    ``d_i = sum_{j > i} (x_next_j - x_prev_j) * A_i^T A_j``. With ``spec``
    given, membership ``d in dF(x_next)`` is verified and a violation raises
    :class:`WitnessError`.
    """
    dx = np.asarray(x_next, dtype=float) - np.asarray(x_prev, dtype=float)
    d = witness_operator(problem) @ dx
    if spec is not None:
        gap = membership_gap(problem, spec, x_next, d)
        if gap > MEMBERSHIP_TOL:
            raise WitnessError(f"witness is {gap:.3g} away from the subdifferential")
    return d


def tight_witness_bound(dx: np.ndarray) -> float:
    """Coordinatewise bound ``sqrt(sum_i (p-1-i) * sum_{j>i} dx_j**2)`` (0-based i)."""
    sq = np.asarray(dx, dtype=float) ** 2
    p = sq.shape[0]
    tail = np.concatenate([np.cumsum(sq[::-1])[::-1][1:], [0.0]])
    return math.sqrt(float(np.sum((p - 1 - np.arange(p)) * tail)))


def _subgradient_residual(grad: np.ndarray, spec: PenaltySpec, x: np.ndarray) -> np.ndarray:
    # distance from -grad_i to the penalty's subdifferential at x_i
    out = np.empty_like(grad)
    for i, (g, xi) in enumerate(zip(grad, x)):
        if xi == 0.0:
            out[i] = max(0.0, abs(g) - spec.lam)
        else:
            out[i] = abs(g + derivative(spec, xi))
    return out


def membership_gap(problem, spec: PenaltySpec, x, d) -> float:
    """Largest violation of ``d_i - A_i^T (A x - b) in d rho(x_i)``."""
    x = np.asarray(x, dtype=float)
    grad = problem.a.T @ (problem.a @ x - problem.b)
    res = _subgradient_residual(grad - np.asarray(d, dtype=float), spec, x)
    return float(np.max(res)) if res.size else 0.0


def stationarity_gap(problem, spec: PenaltySpec, x) -> float:
    """Euclidean distance from 0 to the coordinatewise subdifferential of ``F`` at ``x``."""
    x = np.asarray(x, dtype=float)
    grad = problem.a.T @ (problem.a @ x - problem.b)
    return float(np.linalg.norm(_subgradient_residual(grad, spec, x)))


def estimate_rate(
    step_norms: Sequence[float],
    tail_fraction: float = 0.5,
    min_points: int = 5,
    r2_min: float = 0.9,
) -> RateEstimate:
    """Least-squares fit of ``log(step_k)`` against ``k`` on the tail of a trace.

    Sweeps are numbered from 1. The window is the last ``tail_fraction`` of
    the trace; entries below ``100 * eps`` are dropped as round-off.
    """
    s = np.asarray(step_norms, dtype=float)
    if not 0 < tail_fraction <= 1:
        raise ValueError("tail_fraction must be in (0, 1]")
    start = int(math.floor(len(s) * (1.0 - tail_fraction)))
    k = np.arange(1, len(s) + 1)[start:]
    tail = s[start:]
    keep = tail > 100 * np.finfo(float).eps
    k, tail = k[keep], tail[keep]
    if tail.size < min_points:
        raise InsufficientDataError(f"{tail.size} usable step norms in the tail, need {min_points}")
    y = np.log(tail)
    slope, intercept = np.polyfit(k, y, 1)
    resid = y - (slope * k + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    nu = math.exp(slope)
    return RateEstimate(
        nu_hat=nu,
        eta_hat=math.exp(intercept),
        r_squared=r2,
        window=(int(k[0]), int(k[-1])),
        conclusive=bool(r2 >= r2_min and 0 < nu < 1),
    )


def finite_length(step_norms: Sequence[float], window: int = 10) -> FiniteLength:
    """Partial sum of step norms plus two decay ratios.

    ``last_ratio`` is ``s[-1] / s[-2]``; ``window_ratio`` is the geometric
    mean of consecutive ratios over the last ``window`` entries. Both are
    ``nan`` when there is not enough data or a zero denominator.
    """
    s = np.asarray(step_norms, dtype=float)
    total = float(np.sum(s))
    last = float(s[-1] / s[-2]) if s.size >= 2 and s[-2] > 0 else math.nan
    w = min(window, s.size)
    if w >= 2 and s[-w] > 0:
        win = float((s[-1] / s[-w]) ** (1.0 / (w - 1)))
    else:
        win = math.nan
    return FiniteLength(total, last, win)


def certify_sweeps(trace) -> list[SweepCertificate]:
    """Build certificates from a recorded :class:`~cdcert.solver.SolveTrace`."""
    certs = []
    f_prev = trace.objective_initial
    for rec in trace.records:
        sq = rec.step_norm**2
        ok, _ = check_sufficient_decrease(f_prev, rec.objective, sq, trace.theta)
        cert = SweepCertificate(rec.sweep, f_prev - rec.objective, sq, trace.theta, ok)
        if rec.d_norm is not None:
            cert.d_norm = rec.d_norm
            cert.d_bound = trace.p * rec.step_norm
            cert.h2_ok = rec.d_norm <= cert.d_bound + SLACK
            cert.d_membership_gap = rec.d_membership_gap
        certs.append(cert)
        f_prev = rec.objective
    return certs


@dataclass
class Violation:
    sweep: int
    check: str
    detail: str

    def to_dict(self) -> dict:
        return asdict(self)


def audit_trace(trace, h1_consistency_tol: float = 1e-9) -> list[Violation]:
    """List every violated certificate inequality in a stored trace.

    Recomputes decrease from the recorded objectives and also checks that
    the stored ``h1_lhs``/``h1_rhs`` agree with the recomputation.
    """
    out = []
    f_prev = trace.objective_initial
    for rec, cert in zip(trace.records, certify_sweeps(trace)):
        if not cert.h1_ok:
            out.append(Violation(rec.sweep, "h1", f"F drop {cert.delta_f:.6g} < theta*|dx|^2 = {cert.theta * cert.step_norm_sq:.6g}"))
        scale = 1.0 + abs(f_prev)
        if abs(rec.h1_lhs - cert.delta_f) > h1_consistency_tol * scale:
            out.append(Violation(rec.sweep, "h1_lhs", f"stored F drop {rec.h1_lhs!r} != recomputed {cert.delta_f!r}"))
        elif rec.h1_lhs < rec.h1_rhs - SLACK:
            out.append(Violation(rec.sweep, "h1", f"stored F drop {rec.h1_lhs:.6g} < stored bound {rec.h1_rhs:.6g}"))
        if abs(rec.h1_rhs - cert.theta * cert.step_norm_sq) > h1_consistency_tol * (1.0 + rec.h1_rhs):
            out.append(Violation(rec.sweep, "h1_rhs", f"stored bound {rec.h1_rhs!r} != theta*|dx|^2"))
        if cert.h2_ok is False:
            out.append(Violation(rec.sweep, "h2", f"|d| = {cert.d_norm:.6g} > p*|dx| = {cert.d_bound:.6g}"))
        if cert.d_membership_gap is not None and cert.d_membership_gap > MEMBERSHIP_TOL:
            out.append(Violation(rec.sweep, "membership", f"witness gap {cert.d_membership_gap:.3g}"))
        f_prev = rec.objective
    return out
