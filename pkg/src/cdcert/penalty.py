"""Scalar penalties for sparse least squares: Lasso, SCAD and MCP.

Every function here acts on a single real number. ``value`` and
``derivative`` follow the integral definitions of SCAD/MCP, ``threshold``
is the closed-form minimizer of ``0.5 * (t - v)**2 + value(t)`` and
``prox_oracle`` finds that same minimizer by search over a uniform grid,
independently of the closed forms.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "Family",
    "PenaltySpec",
    "value",
    "penalty_sum",
    "derivative",
    "subdifferential_at_zero",
    "threshold",
    "prox_oracle",
    "concavity_floor",
    "theta",
]


class Family(str, enum.Enum):
    LASSO = "lasso"
    SCAD = "scad"
    MCP = "mcp"


@dataclass(frozen=True)
class PenaltySpec:
    """Penalty family with its regularization weight and concavity parameter.

    Parameters
    ----------
    family : Family or str
        One of ``"lasso"``, ``"scad"``, ``"mcp"``.
    lam : float
        Regularization weight, strictly positive.
    tau : float
        Concavity parameter. SCAD needs ``tau > 2``, MCP needs ``tau > 1``;
        stored but unused for Lasso.
    """

    family: Family
    lam: float
    tau: float = 0.0

    def __post_init__(self):
        try:
            family = Family(self.family)
        except ValueError:
            raise ValueError(f"unknown penalty family {self.family!r}") from None
        object.__setattr__(self, "family", family)
        lam, tau = float(self.lam), float(self.tau)
        if not (math.isfinite(lam) and math.isfinite(tau)):
            raise ValueError("penalty parameters must be finite")
        if lam <= 0:
            raise ValueError(f"lambda must be > 0, got {lam}")
        if family is Family.SCAD and tau <= 2:
            raise ValueError(f"SCAD requires tau > 2, got {tau}")
        if family is Family.MCP and tau <= 1:
            raise ValueError(f"MCP requires tau > 1, got {tau}")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "tau", tau)

    def with_lambda(self, lam: float) -> "PenaltySpec":
        return PenaltySpec(self.family, lam, self.tau)

    def to_dict(self) -> dict:
        return {"family": self.family.value, "lambda": self.lam, "tau": self.tau}

    @classmethod
    def from_dict(cls, d: dict) -> "PenaltySpec":
        try:
            return cls(d["family"], d["lambda"], d.get("tau", 0.0))
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed penalty record: {d!r}") from exc


def _value_abs(spec: PenaltySpec, a: float) -> float:
    lam, tau = spec.lam, spec.tau
    if spec.family is Family.LASSO:
        return lam * a
    if spec.family is Family.SCAD:
        if a <= lam:
            return lam * a
        if a <= lam * tau:
            return (lam * tau * a - 0.5 * (a * a + lam * lam)) / (tau - 1.0)
        return 0.5 * lam * lam * (tau + 1.0)
    if a < lam * tau:
        return lam * (a - a * a / (2.0 * lam * tau))
    return 0.5 * lam * lam * tau


def value(spec: PenaltySpec, t: float) -> float:
    """Penalty value at ``t``; even, non-negative, zero at the origin."""
    return _value_abs(spec, abs(float(t)))


def penalty_sum(spec: PenaltySpec, x: np.ndarray) -> float:
    """Sum of ``value`` over the entries of ``x`` (vectorized)."""
    a = np.abs(np.asarray(x, dtype=float))
    lam, tau = spec.lam, spec.tau
    if spec.family is Family.LASSO:
        v = lam * a
    elif spec.family is Family.SCAD:
        v = np.where(
            a <= lam,
            lam * a,
            np.where(
                a <= lam * tau,
                (lam * tau * a - 0.5 * (a * a + lam * lam)) / (tau - 1.0),
                0.5 * lam * lam * (tau + 1.0),
            ),
        )
    else:
        v = np.where(a < lam * tau, lam * (a - a * a / (2.0 * lam * tau)), 0.5 * lam * lam * tau)
    return float(np.sum(v))


def derivative(spec: PenaltySpec, t: float) -> float:
    """Derivative of the penalty at ``t != 0``.

    Raises
    ------
    ValueError
        If ``t == 0``; use :func:`subdifferential_at_zero` there.
    """
    t = float(t)
    if t == 0.0:
        raise ValueError("penalty is not differentiable at 0")
    a = abs(t)
    lam, tau = spec.lam, spec.tau
    if spec.family is Family.LASSO:
        g = lam
    elif spec.family is Family.SCAD:
        g = lam * min(1.0, max(0.0, lam * tau - a) / (lam * (tau - 1.0)))
    else:
        g = lam * max(0.0, 1.0 - a / (lam * tau))
    return math.copysign(g, t) if g != 0.0 else 0.0


def subdifferential_at_zero(spec: PenaltySpec) -> tuple[float, float]:
    """Closed interval ``(lo, hi)`` of the subdifferential at the origin."""
    return (-spec.lam, spec.lam)


# Each branch is (upper bound on |v|, map from |v| to |S(v)|); a branch
# covers the half-open range (previous bound, upper bound].
Branch = tuple[float, Callable[[float], float]]


def branches(spec: PenaltySpec) -> list[Branch]:
    """Piecewise description of the thresholding operator on ``|v|``."""
    lam, tau = spec.lam, spec.tau
    zero = lambda a: 0.0  # noqa: E731
    soft = lambda a: a - lam  # noqa: E731
    ident = lambda a: a  # noqa: E731
    if spec.family is Family.LASSO:
        return [(lam, zero), (math.inf, soft)]
    if spec.family is Family.SCAD:
        return [
            (lam, zero),
            (2.0 * lam, soft),
            (lam * tau, lambda a: ((tau - 1.0) * a - lam * tau) / (tau - 2.0)),
            (math.inf, ident),
        ]
    return [
        (lam, zero),
        (lam * tau, lambda a: tau * (a - lam) / (tau - 1.0)),
        (math.inf, ident),
    ]


def threshold(spec: PenaltySpec, v: float) -> float:
    """Minimizer of ``0.5 * (t - v)**2 + value(spec, t)`` over real ``t``."""
    v = float(v)
    a = abs(v)
    lam, tau = spec.lam, spec.tau
    if a <= lam:
        return 0.0
    if spec.family is Family.LASSO:
        s = a - lam
    elif spec.family is Family.SCAD:
        if a <= 2.0 * lam:
            s = a - lam
        elif a <= lam * tau:
            s = ((tau - 1.0) * a - lam * tau) / (tau - 2.0)
        else:
            return v
    else:
        if a <= lam * tau:
            s = tau * (a - lam) / (tau - 1.0)
        else:
            return v
    return s if v > 0 else -s


def prox_oracle(
    spec: PenaltySpec,
    v: float,
    half_width: float | None = None,
    step: float = 1e-5,
) -> float:
    """Grid minimizer of ``0.5 * (t - v)**2 + value(spec, t)``.

    The grid is ``-half_width + k * step``. Because the scalar objective is
    strictly convex, its restriction to the grid is a discrete convex
    sequence, so the grid argmin is located by bisection on forward
    differences instead of evaluating every grid point. The answer is
    within ``step`` of the true minimizer. Only ``value`` is used; the
    closed-form thresholds are never consulted.
    """
    v = float(v)
    reach = spec.lam * (1.0 if spec.family is Family.LASSO else spec.tau)
    guard = abs(v) + reach
    if half_width is None:
        half_width = guard
    if not (step > 0 and math.isfinite(step)):
        raise ValueError(f"grid step must be positive, got {step}")
    if not half_width >= guard:
        raise ValueError(f"half_width {half_width} below the required |v| + reach = {guard}")
    n = int(math.ceil(2.0 * half_width / step))

    def f(k: int) -> float:
        t = -half_width + k * step
        return 0.5 * (t - v) ** 2 + value(spec, t)

    lo, hi = 0, n
    # invariant: the grid argmin lies in [lo, hi]
    while hi - lo > 2:
        mid = (lo + hi) // 2
        if f(mid + 1) < f(mid):
            lo = mid + 1
        else:
            hi = mid
    best = min(range(lo, hi + 1), key=f)
    return -half_width + best * step


def prox_oracle_brute(spec: PenaltySpec, v: float, half_width: float, step: float) -> float:
    """Exhaustive version of :func:`prox_oracle`; evaluates every grid point."""
    n = int(math.ceil(2.0 * half_width / step))
    t = -half_width + np.arange(n + 1) * step
    vals = np.vectorize(lambda s: _value_abs(spec, s), otypes=[float])(np.abs(t))
    return float(t[np.argmin(0.5 * (t - v) ** 2 + vals)])


def concavity_floor(spec: PenaltySpec) -> float:
    """Most negative second derivative of the penalty (0 if convex)."""
    if spec.family is Family.LASSO:
        return 0.0
    if spec.family is Family.SCAD:
        return -1.0 / (spec.tau - 1.0)
    return -1.0 / spec.tau


def theta(spec: PenaltySpec) -> float:
    """Sufficient-decrease constant ``(1 + concavity_floor) / 2``."""
    return 0.5 * (1.0 + concavity_floor(spec))
