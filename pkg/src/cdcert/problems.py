"""Synthetic instances, CSV ingestion and JSON persistence.

Synthetic data follow ``b = A x* + xi`` with a Gaussian design whose columns
are optionally equi-correlated, then normalized to unit length.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .penalty import PenaltySpec
from .solver import (
    DimensionError,
    NonFiniteError,
    Problem,
    ProblemError,
    SolveResult,
    SolverOptions,
    SolveTrace,
    Status,
    SweepRecord,
    normalize_columns,
)

RESULT_SCHEMA = "cdcert.result"
INSTANCE_SCHEMA = "cdcert.instance"
SCHEMA_VERSION = 1


class ParseError(ProblemError):
    code = "parse"


class SchemaError(ValueError):
    pass


class UnsupportedVersionError(SchemaError):
    pass


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a seeded synthetic regression instance.

    ``design`` is ``"gaussian"`` (i.i.d. normal entries, equi-correlated
    through ``correlation``) or ``"orthogonal"`` (Q factor of a Gaussian
    matrix; requires ``n >= p``).
    """

    n: int = 100
    p: int = 400
    sparsity: int = 10
    signal_low: float = 1.0
    signal_high: float = 2.0
    noise_sigma: float = 0.1
    correlation: float = 0.0
    seed: int = 0
    design: str = "gaussian"

    def __post_init__(self):
        if self.n < 1 or self.p < 1:
            raise ValueError("n and p must be positive")
        if not 0 <= self.sparsity <= self.p:
            raise ValueError(f"sparsity must lie in [0, p], got {self.sparsity}")
        if not 0 <= self.signal_low <= self.signal_high:
            raise ValueError("need 0 <= signal_low <= signal_high")
        if not self.noise_sigma >= 0:
            raise ValueError("noise_sigma must be >= 0")
        if not 0 <= self.correlation < 1:
            raise ValueError("correlation must lie in [0, 1)")
        if self.design not in ("gaussian", "orthogonal"):
            raise ValueError(f"unknown design {self.design!r}")
        if self.design == "orthogonal" and self.n < self.p:
            raise ValueError("orthogonal design needs n >= p")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def generate(spec: SyntheticSpec) -> tuple[Problem, np.ndarray]:
    """Draw ``(problem, x_star)``; bit-identical for equal specs.

    ``x_star`` is expressed on the unit-column scale of ``problem.a``.
    """
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    n, p = spec.n, spec.p
    z = rng.standard_normal((n, p))
    if spec.design == "orthogonal":
        q, _ = np.linalg.qr(z)
        a = q
    else:
        common = rng.standard_normal((n, 1))
        a = math.sqrt(1.0 - spec.correlation) * z + math.sqrt(spec.correlation) * common
    problem_a = a / np.linalg.norm(a, axis=0)

    x_star = np.zeros(p)
    support = rng.choice(p, size=spec.sparsity, replace=False)
    signs = rng.choice([-1.0, 1.0], size=spec.sparsity)
    mags = rng.uniform(spec.signal_low, spec.signal_high, size=spec.sparsity)
    x_star[support] = signs * mags
    noise = rng.standard_normal(n)
    b = problem_a @ x_star + spec.noise_sigma * noise
    return Problem(problem_a, b, np.ones(p)), x_star


def checksum(problem: Problem, x_star: Optional[np.ndarray] = None) -> str:
    """SHA-256 over the raw bytes of ``A``, ``b`` and optionally ``x_star``."""
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(problem.a).tobytes())
    h.update(problem.b.tobytes())
    if x_star is not None:
        h.update(np.ascontiguousarray(x_star, dtype=float).tobytes())
    return h.hexdigest()


# --- CSV -------------------------------------------------------------------


def _is_number(tok: str) -> bool:
    try:
        float(tok)
    except ValueError:
        return False
    return True


def read_matrix_csv(path) -> np.ndarray:
    """Rectangular numeric CSV to a 2-d array; a non-numeric first row is a header."""
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row and any(tok.strip() for tok in row)]
    if not rows:
        raise ParseError(f"{path}: no data rows")
    start = 0
    if not all(_is_number(tok) for tok in rows[0]):
        start = 1
    width = len(rows[0])
    data = []
    for lineno, row in enumerate(rows[start:], start=start + 1):
        if len(row) != width:
            raise ParseError(f"{path}: row {lineno} has {len(row)} fields, expected {width}")
        try:
            data.append([float(tok) for tok in row])
        except ValueError:
            raise ParseError(f"{path}: row {lineno} has a non-numeric field") from None
    if not data:
        raise ParseError(f"{path}: header but no data rows")
    arr = np.array(data)
    if not np.all(np.isfinite(arr)):
        bad = int(np.argwhere(~np.isfinite(arr))[0, 0]) + start + 1
        raise NonFiniteError(f"{path}: non-finite entry in row {bad}")
    return arr


def load_problem(combined_path=None, *, path_a=None, path_b=None) -> Problem:
    """Load a problem from one CSV (column 0 = b, rest = A) or two CSV files.

    Columns are normalized; original norms are kept in ``column_scales``.
    """
    if combined_path is not None:
        if path_a is not None or path_b is not None:
            raise ValueError("give either a combined file or path_a/path_b, not both")
        m = read_matrix_csv(combined_path)
        if m.shape[1] < 2:
            raise DimensionError(f"{combined_path}: need a response column and at least one feature")
        return normalize_columns(m[:, 1:], m[:, 0])
    if path_a is None or path_b is None:
        raise ValueError("need both path_a and path_b")
    a = read_matrix_csv(path_a)
    b = read_matrix_csv(path_b)
    if b.ndim == 2 and b.shape[1] != 1:
        if b.shape[0] == 1:
            b = b.T
        else:
            raise DimensionError(f"{path_b}: response must be a single column")
    if b.shape[0] != a.shape[0]:
        raise DimensionError(f"response has {b.shape[0]} rows, design has {a.shape[0]}")
    return normalize_columns(a, b[:, 0])


def save_problem(problem: Problem, path, *, original_scale: bool = False) -> None:
    """Write ``b`` and ``A`` to one CSV with a header row, floats in full precision."""
    a = problem.a * problem.column_scales if original_scale else problem.a
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["b"] + [f"a{j}" for j in range(problem.p)])
    for bi, row in zip(problem.b, a):
        w.writerow([repr(float(bi))] + [repr(float(v)) for v in row])
    Path(path).write_text(buf.getvalue())


# --- JSON ------------------------------------------------------------------


def _floats(arr) -> list:
    return [float(v) for v in arr]


def _record_to_dict(rec: SweepRecord) -> dict:
    return asdict(rec)


def result_to_dict(result: SolveResult, config: Optional[dict] = None) -> dict:
    tr = result.trace
    doc = {
        "schema": RESULT_SCHEMA,
        "version": SCHEMA_VERSION,
        "penalty": result.penalty.to_dict(),
        "options": result.options.to_dict(),
        "status": result.status.value,
        "sweeps": result.sweeps,
        "objective": float(result.objective),
        "stationarity_gap": float(result.stationarity_gap),
        "support_size": result.support_size,
        "x_hat": _floats(result.x_hat),
        "x_hat_normalized": _floats(result.x_hat_normalized),
        "c_last": None if result.c_last is None else _floats(result.c_last),
        "trace_meta": {"objective_initial": tr.objective_initial, "theta": tr.theta, "p": tr.p},
        "trace": [_record_to_dict(rec) for rec in tr.records],
    }
    if config is not None:
        doc["config"] = config
    return doc


def dumps(doc: dict) -> str:
    # repr-based float formatting round-trips exactly
    return json.dumps(doc, indent=1, allow_nan=False) + "\n"


def save_result(result: SolveResult, path, config: Optional[dict] = None) -> None:
    Path(path).write_text(dumps(result_to_dict(result, config)))


_RECORD_FIELDS = {f.name for f in fields(SweepRecord)}
_REQUIRED = ("penalty", "options", "status", "sweeps", "objective", "stationarity_gap",
             "x_hat", "x_hat_normalized", "trace_meta", "trace")


def _read_doc(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(doc, dict) or doc.get("schema") != RESULT_SCHEMA:
        raise SchemaError(f"{path}: not a {RESULT_SCHEMA} document")
    if doc.get("version") != SCHEMA_VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported version {doc.get('version')!r}, expected {SCHEMA_VERSION}")
    missing = [k for k in _REQUIRED if k not in doc]
    if missing:
        raise SchemaError(f"{path}: missing fields {missing}")
    return doc


def _trace_from_doc(doc: dict) -> SolveTrace:
    meta = doc["trace_meta"]
    try:
        records = []
        for item in doc["trace"]:
            extra = set(item) - _RECORD_FIELDS
            if extra:
                raise SchemaError(f"unknown trace fields {sorted(extra)}")
            records.append(SweepRecord(**item))
        return SolveTrace(float(meta["objective_initial"]), float(meta["theta"]), int(meta["p"]), records)
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"malformed trace: {exc}") from None


def load_trace(path) -> SolveTrace:
    return _trace_from_doc(_read_doc(path))


def load_result(path) -> SolveResult:
    doc = _read_doc(path)
    try:
        opts = dict(doc["options"])
        return SolveResult(
            x_hat=np.array(doc["x_hat"], dtype=float),
            x_hat_normalized=np.array(doc["x_hat_normalized"], dtype=float),
            status=Status(doc["status"]),
            sweeps=int(doc["sweeps"]),
            objective=float(doc["objective"]),
            trace=_trace_from_doc(doc),
            stationarity_gap=float(doc["stationarity_gap"]),
            penalty=PenaltySpec.from_dict(doc["penalty"]),
            options=SolverOptions(**opts),
            c_last=None if doc.get("c_last") is None else np.array(doc["c_last"], dtype=float),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError(f"{path}: {exc}") from None


def save_instance(spec: SyntheticSpec, problem: Problem, x_star: np.ndarray, stem) -> tuple[Path, Path]:
    """Write ``<stem>.csv`` (problem) and ``<stem>.json`` (recipe and ground truth)."""
    stem = Path(stem)
    csv_path = stem.with_suffix(".csv")
    meta_path = stem.with_suffix(".json")
    os.makedirs(csv_path.parent, exist_ok=True)
    save_problem(problem, csv_path)
    doc = {
        "schema": INSTANCE_SCHEMA,
        "version": SCHEMA_VERSION,
        "spec": spec.to_dict(),
        "x_star": _floats(x_star),
        "sha256": checksum(problem, x_star),
    }
    meta_path.write_text(dumps(doc))
    return csv_path, meta_path
