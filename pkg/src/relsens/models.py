"""Performance functions and sample construction.

``LinearGaussian`` is the analytic limit state ``g(x) = c0 - sum(c_i x_i)``;
``Tabulated`` wraps an externally produced sample (simulator or surrogate
outputs) read from a CSV file.  The system fails when ``g <= 0``.
"""

from __future__ import annotations

import io
import math
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import special

from . import distributions as D
from .distributions import DistributionSpec, Family
from .errors import IngestError, ParameterError, UnsupportedOperationError
from .estimation import EvaluatedSample


@dataclass(frozen=True)
class LinearGaussian:
    intercept: float
    coefficients: tuple[float, ...]

    def __post_init__(self):
        coefs = tuple(float(c) for c in self.coefficients)
        if not coefs:
            raise ParameterError("a linear model needs at least one coefficient")
        if not any(coefs):
            raise ParameterError("a linear model needs at least one nonzero coefficient")
        object.__setattr__(self, "coefficients", coefs)
        object.__setattr__(self, "intercept", float(self.intercept))

    @property
    def dim(self) -> int:
        return len(self.coefficients)

    def evaluate(self, x: Sequence[float]) -> float:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ParameterError(f"expected a point of dimension {self.dim}, got shape {x.shape}")
        return float(self.evaluate_batch(x[None, :])[0])

    def evaluate_batch(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if points.ndim != 2 or points.shape[1] != self.dim:
            raise ParameterError(f"expected an N x {self.dim} matrix, got shape {points.shape}")
        return self.intercept - points @ np.asarray(self.coefficients)


# three-variable reference case: g = 3 - 0.1 x1 - 0.5 x2 - 1.0 x3, x_i ~ N(0, 1)
REFERENCE_MODEL = LinearGaussian(3.0, (0.1, 0.5, 1.0))
REFERENCE_MARGINALS = (D.normal(0, 1), D.normal(0, 1), D.normal(0, 1))


@dataclass(frozen=True)
class Tabulated:
    """Precomputed sample; carries g-values only and cannot be evaluated."""

    sample: EvaluatedSample

    @property
    def dim(self) -> int:
        return self.sample.dim

    def evaluate(self, x):
        raise UnsupportedOperationError("a tabulated model has no performance function to evaluate")

    evaluate_batch = evaluate


class FunctionModel:
    """Wrap a Python callable ``g(x) -> float`` evaluated one point at a time."""

    def __init__(self, func: Callable[[np.ndarray], float], dim: int):
        self.func = func
        self.dim = int(dim)

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ParameterError(f"expected a point of dimension {self.dim}, got shape {x.shape}")
        return float(self.func(x))

    def evaluate_batch(self, points):
        return np.array([self.evaluate(row) for row in np.asarray(points, dtype=float)])


class CountingModel:
    """Delegate to ``model`` while counting performance-function evaluations."""

    def __init__(self, model):
        self.model = model
        self.dim = model.dim
        self.calls = 0
        self._lock = threading.Lock()

    def _add(self, k: int) -> None:
        with self._lock:
            self.calls += k

    def evaluate(self, x):
        value = self.model.evaluate(x)
        self._add(1)
        return value

    def evaluate_batch(self, points):
        values = self.model.evaluate_batch(points)
        self._add(len(values))
        return values


def evaluate(model, x) -> float:
    return model.evaluate(x)


def analytic_pf_linear(model: LinearGaussian, marginals: Sequence[DistributionSpec]) -> float:
    """Exact P(g <= 0) for a linear model with independent normal inputs."""
    if not isinstance(model, LinearGaussian):
        raise UnsupportedOperationError("closed-form failure probability needs a linear model")
    if len(marginals) != model.dim:
        raise ParameterError(f"model has {model.dim} inputs but {len(marginals)} marginals were given")
    for k, m in enumerate(marginals):
        if m.family is not Family.NORMAL:
            raise UnsupportedOperationError(f"marginal {k + 1} is {m.family.value}, not normal")
    c = np.asarray(model.coefficients)
    mu = np.array([m.params[0] for m in marginals])
    sd = np.array([m.params[1] for m in marginals])
    mean = model.intercept - float(c @ mu)
    scale = math.sqrt(float(np.sum((c * sd) ** 2)))
    return float(special.ndtr(-mean / scale))


def column_rngs(seed: int, d: int) -> list[np.random.Generator]:
    """Independent counter-based (Philox) streams, one per input column, from one seed."""
    children = np.random.SeedSequence(seed).spawn(d)
    return [np.random.Generator(np.random.Philox(child)) for child in children]


def draw_points(marginals: Sequence[DistributionSpec], n: int, seed: int) -> np.ndarray:
    if n < 1:
        raise ParameterError(f"sample size must be >= 1, got {n}")
    rngs = column_rngs(seed, len(marginals))
    cols = [D.sample(m, rng, n) for m, rng in zip(marginals, rngs)]
    return np.column_stack(cols)


def build_sample(model, marginals: Sequence[DistributionSpec], n: int, seed: int) -> EvaluatedSample:
    """Draw ``n`` points from the product of ``marginals`` and evaluate ``g`` once per point."""
    if isinstance(model, Tabulated):
        raise UnsupportedOperationError("tabulated samples come from ingest_sample, not build_sample")
    if len(marginals) != model.dim:
        raise ParameterError(f"model has {model.dim} inputs but {len(marginals)} marginals were given")
    points = draw_points(marginals, int(n), seed)
    g = model.evaluate_batch(points)
    return EvaluatedSample(points, g, tuple(marginals), seed=seed)


# ---------------------------------------------------------------------------
# Sample files: header x1,...,xd,g then one comma-separated row per point
# ---------------------------------------------------------------------------


def write_sample(sample: EvaluatedSample, path) -> None:
    """Write ``sample`` with shortest round-trip float formatting (LF endings)."""
    buf = io.StringIO()
    header = [f"x{k + 1}" for k in range(sample.dim)] + ["g"]
    buf.write(",".join(header) + "\n")
    for row, g in zip(sample.points, sample.g_values):
        buf.write(",".join(repr(float(v)) for v in row) + "," + repr(float(g)) + "\n")
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="\n")


def _parse_float(tok: str, row: int, col: str) -> float:
    tok = tok.strip()
    try:
        value = float(tok)
    except ValueError:
        raise IngestError(f"row {row} (line {row + 1}): column {col}: not a number: {tok!r}") from None
    if not math.isfinite(value):
        raise IngestError(f"row {row} (line {row + 1}): column {col}: non-finite value {tok!r}")
    return value


def ingest_sample(path, marginals: Sequence[DistributionSpec]) -> EvaluatedSample:
    """Read a tabulated sample; ``marginals`` are the laws the points were drawn from.

    A column whose empirical mean sits more than 6 standard errors from the
    declared mean is flagged (``marginal_mismatch:xK``), not rejected.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise IngestError(f"{path}: not UTF-8 text ({exc})") from None
    lines = text.splitlines()
    if not lines:
        raise IngestError(f"{path}: empty file")
    header = [h.strip() for h in lines[0].split(",")]
    d = len(marginals)
    expected = [f"x{k + 1}" for k in range(d)] + ["g"]
    if header != expected:
        raise IngestError(f"{path}: header {','.join(header)!r} does not match {','.join(expected)!r}")
    rows = []
    for r, line in enumerate(lines[1:], start=1):
        if not line.strip():
            continue
        toks = line.split(",")
        if len(toks) != d + 1:
            raise IngestError(f"row {r} (line {r + 1}): expected {d + 1} fields, got {len(toks)}")
        rows.append([_parse_float(t, r, expected[k]) for k, t in enumerate(toks)])
    if not rows:
        raise IngestError(f"{path}: no data rows")
    data = np.array(rows, dtype=float)
    flags = []
    n = data.shape[0]
    for k, m in enumerate(marginals):
        sd = math.sqrt(D.variance(m))
        if n > 1 and abs(data[:, k].mean() - D.mean(m)) > 6.0 * sd / math.sqrt(n):
            flags.append(f"marginal_mismatch:x{k + 1}")
    return EvaluatedSample(data[:, :d], data[:, d], tuple(marginals), seed=None, flags=tuple(flags))
