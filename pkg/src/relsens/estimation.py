"""Failure-probability estimators and sensitivity indices.

The reference probability is a plain Monte Carlo count.  Perturbed
probabilities reuse the same points: each failure point is weighted by the
density ratio of the perturbed and original marginal, so no performance
function evaluations are needed beyond the initial ``N``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy import special

from . import distributions as D
from .distributions import DistributionSpec, Family
from .errors import NoSolutionError, ParameterError, UndefinedIndexError
from .tilt import Branch, PerturbationMode, TiltSolution, check_mode, identity_solution, solve_tau

# log-weights below this are flushed to a weight of exactly 0
LOG_WEIGHT_FLOOR = -700.0
LOW_ESS = 5.0


def pairwise_sum(values) -> float:
    """Tree summation in fixed index order; the result does not depend on threading."""
    a = np.array(values, dtype=float).ravel()
    if a.size == 0:
        return 0.0
    size = 1 << (a.size - 1).bit_length()
    if size != a.size:
        a = np.concatenate([a, np.zeros(size - a.size)])
    while a.size > 1:
        a = a[0::2] + a[1::2]
    return float(a[0])


@dataclass(frozen=True, eq=False)
class EvaluatedSample:
    """N points in d dimensions with their performance-function values."""

    points: np.ndarray
    g_values: np.ndarray
    marginals: tuple[DistributionSpec, ...]
    seed: int | None = None
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        pts = np.array(self.points, dtype=float, copy=True)
        g = np.array(self.g_values, dtype=float, copy=True).ravel()
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if pts.ndim != 2:
            raise ParameterError("points must be an N x d matrix")
        n, d = pts.shape
        if n < 1:
            raise ParameterError("a sample needs N >= 1 points")
        if g.size != n:
            raise ParameterError(f"{n} points but {g.size} performance values")
        if len(self.marginals) != d:
            raise ParameterError(f"{d} input columns but {len(self.marginals)} marginals")
        pts.flags.writeable = False
        g.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "g_values", g)
        object.__setattr__(self, "marginals", tuple(self.marginals))
        object.__setattr__(self, "flags", tuple(self.flags))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @cached_property
    def failure_index(self) -> np.ndarray:
        """Row indices with g <= 0, in increasing order."""
        idx = np.flatnonzero(self.g_values <= 0.0)
        idx.flags.writeable = False
        return idx

    @cached_property
    def failure_points(self) -> np.ndarray:
        pts = np.ascontiguousarray(self.points[self.failure_index])
        pts.flags.writeable = False
        return pts


@dataclass(frozen=True)
class FailureEstimate:
    p_hat: float
    n: int
    var_hat: float
    failures: int
    ess: float | None = None
    flags: tuple[str, ...] = ()

    @property
    def stderr(self) -> float:
        return math.sqrt(self.var_hat)


def _from_weights(weights: np.ndarray, n: int, flags=()) -> FailureEstimate:
    s1 = pairwise_sum(weights)
    s2 = pairwise_sum(weights * weights)
    p = s1 / n
    var = max((s2 / n - p * p) / n, 0.0)
    ess = s1 * s1 / s2 if s2 > 0 else 0.0
    flags = list(flags)
    if ess < LOW_ESS:
        flags.append("low_ess")
    return FailureEstimate(p, n, var, int(weights.size), ess, tuple(flags))


def estimate_pf(sample: EvaluatedSample) -> FailureEstimate:
    """Plain Monte Carlo estimate: fraction of points with g <= 0."""
    # unit weights: same arithmetic as the reweighted path, so delta = 0 matches bit for bit
    return _from_weights(np.ones(sample.failure_index.size), sample.n)


def _check_tilt(sample: EvaluatedSample, i: int, tilt: TiltSolution) -> None:
    if not 0 <= i < sample.dim:
        raise ParameterError(f"variable index {i} out of range for d={sample.dim}")
    if tilt.original != sample.marginals[i]:
        raise ParameterError(
            f"perturbation of {tilt.original} does not match marginal {i} ({sample.marginals[i]})"
        )


def log_weights(sample: EvaluatedSample, i: int, tilt: TiltSolution) -> np.ndarray:
    """log f_perturbed(x_ki) - log f_original(x_ki) over the failure points."""
    _check_tilt(sample, i, tilt)
    x = sample.failure_points[:, i]
    if tilt.perturbed == tilt.original:
        return np.zeros(x.size)
    with np.errstate(invalid="ignore"):
        lw = np.asarray(D.log_density(tilt.perturbed, x)) - np.asarray(D.log_density(tilt.original, x))
    # points outside the perturbed support get weight 0
    return np.where(np.isnan(lw), -np.inf, lw)


def likelihood_weights(sample: EvaluatedSample, i: int, tilt: TiltSolution) -> np.ndarray:
    """Density ratios f_perturbed/f_original at the failure points (0 off the perturbed support)."""
    p, q = tilt.perturbed, tilt.original
    if p != q and p.family is Family.UNIFORM and q.family is Family.UNIFORM:
        # ratio of two constants: keep it exact instead of exp(log(...))
        _check_tilt(sample, i, tilt)
        x = sample.failure_points[:, i]
        (a, b), (qa, qb) = p.params, q.params
        return np.where((x >= a) & (x <= b), (qb - qa) / (b - a), 0.0)
    lw = log_weights(sample, i, tilt)
    return np.where(lw < LOG_WEIGHT_FLOOR, 0.0, np.exp(np.minimum(lw, 700.0)))


def estimate_perturbed_pf(sample: EvaluatedSample, i: int, tilt: TiltSolution) -> FailureEstimate:
    """Likelihood-ratio reweighted failure probability when marginal ``i`` is perturbed."""
    return _from_weights(likelihood_weights(sample, i, tilt), sample.n)


def estimate_interaction_pf(
    sample: EvaluatedSample, i: int, j: int, tilt_i: TiltSolution, tilt_j: TiltSolution
) -> FailureEstimate:
    """Failure probability with marginals ``i`` and ``j`` perturbed together."""
    if i == j:
        raise ParameterError("interaction needs two distinct variables; use estimate_perturbed_pf")
    w = likelihood_weights(sample, i, tilt_i) * likelihood_weights(sample, j, tilt_j)
    return _from_weights(w, sample.n)


def covariance_pf_pdelta(p_f: FailureEstimate, p_delta: FailureEstimate) -> float:
    """Plug-in COV(p_f_hat, p_delta_hat) = p_delta (1 - p_f) / N."""
    return p_delta.p_hat * (1.0 - p_f.p_hat) / p_f.n


def _index_variance_raw(p_f: FailureEstimate, p_delta: FailureEstimate) -> float:
    if not p_f.p_hat > 0.0:
        raise UndefinedIndexError("reference failure probability is 0 on this sample")
    pf, pd, n = p_f.p_hat, p_delta.p_hat, p_f.n
    return (p_delta.var_hat - pd * pd * (1.0 - pf) / (n * pf)) / (pf * pf)


def index_variance(p_f: FailureEstimate, p_delta: FailureEstimate) -> float:
    """Delta-method variance of S_hat = p_delta_hat / p_f_hat - 1, floored at 0.

    VAR[S] ~ VAR[p_delta_hat] / p_f**2 - p_delta**2 (1 - p_f) / (N p_f**3)
    """
    return max(_index_variance_raw(p_f, p_delta), 0.0)


@dataclass(frozen=True)
class IndexEstimate:
    s_hat: float
    stderr: float
    ci_lo: float
    ci_hi: float
    flags: tuple[str, ...] = ()


def sensitivity_index(
    p_delta: FailureEstimate, p_f: FailureEstimate, confidence: float = 0.95
) -> IndexEstimate:
    """S_hat = p_delta/p_f - 1 with a normal-approximation confidence interval."""
    if not 0.0 < confidence < 1.0:
        raise ParameterError(f"confidence must lie in (0, 1), got {confidence}")
    raw = _index_variance_raw(p_f, p_delta)
    flags = []
    # tolerate rounding-level negatives (e.g. unit weights) without a flag
    if raw < -1e-12 * p_delta.var_hat / p_f.p_hat**2:
        flags.append("variance_floored")
    var = max(raw, 0.0)
    s = p_delta.p_hat / p_f.p_hat - 1.0
    se = math.sqrt(var)
    z = float(special.ndtri(0.5 + 0.5 * confidence))
    return IndexEstimate(s, se, s - z * se, s + z * se, tuple(flags))


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PlanEntry:
    variable: int
    mode: PerturbationMode
    branch: Branch
    deltas: tuple[float, ...]


@dataclass(frozen=True)
class SensitivityRecord:
    variable: int
    mode: PerturbationMode
    branch: Branch
    delta: float
    tau: float
    p_delta_hat: float
    s_hat: float
    stderr: float
    ci_lo: float
    ci_hi: float
    ess: float
    flags: tuple[str, ...] = field(default=())
    feasible: bool = True
    note: str = ""

    def sort_key(self):
        return (self.variable, str(self.mode), self.branch.value, self.delta)


def _cell(sample, p_f, entry: PlanEntry, delta: float, confidence: float) -> SensitivityRecord:
    nan = math.nan
    dist = sample.marginals[entry.variable]
    if delta == 0.0:
        sol = identity_solution(dist, entry.mode, entry.branch)
    else:
        try:
            sol = solve_tau(dist, entry.mode, delta, entry.branch)
        except NoSolutionError as exc:
            return SensitivityRecord(
                entry.variable, entry.mode, entry.branch, delta, nan, nan, nan, nan, nan, nan, nan,
                ("infeasible",), feasible=False, note=str(exc),
            )
    est = estimate_perturbed_pf(sample, entry.variable, sol)
    idx = sensitivity_index(est, p_f, confidence)
    flags = tuple(sol.flags) + tuple(est.flags) + tuple(idx.flags)
    return SensitivityRecord(
        entry.variable, entry.mode, entry.branch, delta, sol.tau, est.p_hat,
        idx.s_hat, idx.stderr, idx.ci_lo, idx.ci_hi, est.ess, flags,
    )


def validate_plan(sample: EvaluatedSample, plan: Sequence[PlanEntry]) -> None:
    for entry in plan:
        if not 0 <= entry.variable < sample.dim:
            raise ParameterError(f"variable index {entry.variable} out of range for d={sample.dim}")
        check_mode(sample.marginals[entry.variable], entry.mode)
        for d in entry.deltas:
            if not (math.isfinite(d) and d >= 0.0):
                raise ParameterError(f"delta must be finite and >= 0, got {d}")


def sweep(
    sample: EvaluatedSample,
    plan: Sequence[PlanEntry],
    confidence: float = 0.95,
    threads: int = 1,
) -> list[SensitivityRecord]:
    """One record per (entry, delta) cell, sorted by (variable, mode, branch, delta).

    Cells whose branch has no solution are kept with ``feasible=False``.
    Results are identical for any ``threads``.
    """
    plan = list(plan)
    if not plan:
        return []
    validate_plan(sample, plan)
    p_f = estimate_pf(sample)
    if p_f.p_hat == 0.0:
        raise UndefinedIndexError("no failure points in the sample: sensitivity indices are undefined")
    cells = [(entry, float(d)) for entry in plan for d in entry.deltas]
    if threads == 1 or len(cells) < 2:
        records = [_cell(sample, p_f, e, d, confidence) for e, d in cells]
    else:
        with ThreadPoolExecutor(max_workers=threads or None) as pool:
            records = list(pool.map(lambda c: _cell(sample, p_f, c[0], c[1], confidence), cells))
    return sorted(records, key=SensitivityRecord.sort_key)
