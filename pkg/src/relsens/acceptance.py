"""Built-in acceptance checks run by ``relsens verify``.

Each check returns a :class:`CriterionResult`.  Statistical checks use fixed
seeds, so a given build always produces the same report.  ``fast=True``
divides the sample size of the single-sample checks by 10; the repeated-trial
checks (6 and 7) keep their scale because fewer failures per run would bias
the ratio estimator they examine.
"""

from __future__ import annotations

import contextlib
import io
import math
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import special, stats

from . import distributions as D
from .distributions import Family
from .errors import DomainError, NoSolutionError, NumericalError, RelsensError
from .estimation import (
    PlanEntry,
    estimate_interaction_pf,
    estimate_perturbed_pf,
    estimate_pf,
    index_variance,
    likelihood_weights,
    sweep,
)
from .lambertw import LambertBranch, lambert_w
from .models import (
    REFERENCE_MARGINALS,
    REFERENCE_MODEL,
    CountingModel,
    LinearGaussian,
    analytic_pf_linear,
    build_sample,
)
from .tilt import MODES, Branch, _lambert_tau, kl_divergence, solve_root, solve_tau

SEED = 20240611
BRANCHES = (Branch.NEG, Branch.POS)
DELTA_GRID = tuple(round(0.1 * k, 10) for k in range(1, 11))


@dataclass(frozen=True)
class CriterionResult:
    number: int
    title: str
    passed: bool
    detail: str
    seconds: float = 0.0
    budget: float = math.inf

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        # timing stays out of the line so repeated reports are identical
        return f"[{status}] {self.number:2d} {self.title}: {self.detail}"


def _n(full: int, fast: bool) -> int:
    return full // 10 if fast else full


def _replace(marginals, i, dist):
    out = list(marginals)
    out[i] = dist
    return tuple(out)


# ---------------------------------------------------------------------------
# 1. reference probability
# ---------------------------------------------------------------------------


def reference_probability(fast: bool = False, threads: int = 1):
    p = analytic_pf_linear(REFERENCE_MODEL, REFERENCE_MARGINALS)
    # independent route: complementary error function from the standard library
    beta = 3.0 / math.sqrt(1.26)
    oracle = 0.5 * math.erfc(beta / math.sqrt(2.0))
    n = _n(1_000_000, fast)
    est = estimate_pf(build_sample(REFERENCE_MODEL, REFERENCE_MARGINALS, n, SEED))
    tol = 3.0 * math.sqrt(p * (1.0 - p) / n)
    checks = {
        "analytic matches erfc to 1e-12": abs(p - oracle) <= 1e-12 * oracle,
        "quoted 3.7e-3 (leading digits)": math.floor(p * 1e4) == 37,
        "MC within 3 sd": abs(est.p_hat - p) <= tol,
    }
    detail = (
        f"analytic {p:.6g} (3 s.f. {p:.3g}), MC {est.p_hat:.6g} at N={n}, "
        f"|diff| {abs(est.p_hat - p):.2e} <= {tol:.2e}"
    )
    return all(checks.values()), _failed(checks, detail)


def _failed(checks: dict, detail: str) -> str:
    bad = [k for k, ok in checks.items() if not ok]
    return detail if not bad else detail + "; failed: " + ", ".join(bad)


# ---------------------------------------------------------------------------
# 2. closed forms against the root finder
# ---------------------------------------------------------------------------


def closed_forms(fast: bool = False, threads: int = 1):
    worst_normal = 0.0
    for sigma in (0.5, 1.0, 2.0):
        dist = D.normal(0.0, sigma)
        for delta in (0.01, 0.1, 0.5, 1.0):
            for b in BRANCHES:
                closed = b.sign * math.sqrt(2.0 * delta) / sigma
                worst_normal = max(worst_normal, abs(closed - solve_root(dist, delta, b)))

    worst_lambert = 0.0
    mismatches = []
    cells = 0
    dists = [D.exponential(r) for r in (0.5, 1.0, 2.0)] + [D.poisson(r) for r in (1.0, 2.0, 5.0)]
    for dist in dists:
        for delta in (0.01, 0.1, 0.5, 1.0, 2.0, 5.0):
            for b in BRANCHES:
                try:
                    ref = solve_root(dist, delta, b)
                except NoSolutionError:
                    ref = None
                try:
                    lw = _lambert_tau(dist, delta, b)
                except NoSolutionError:
                    lw = None
                except (DomainError, NumericalError) as exc:
                    mismatches.append(f"{dist} {b.value} d={delta}: {exc}")
                    continue
                if (ref is None) != (lw is None):
                    mismatches.append(f"{dist} {b.value} d={delta}: feasibility disagrees")
                    continue
                if ref is None:
                    continue
                cells += 1
                err = abs(lw - ref) / max(1.0, abs(ref))
                worst_lambert = max(worst_lambert, err)
                if err > 1e-9:
                    mismatches.append(f"{dist} {b.value} d={delta}: {lw!r} vs {ref!r}")

    # defining identity w e^w = x on both branches, including next to -1/e
    worst_identity = 0.0
    for x in (-math.exp(-1.0 - 1e-10), -math.exp(-1.0 - 1e-4), -0.3, -0.1, -1e-3):
        for br in LambertBranch:
            try:
                w = lambert_w(br, x)
            except RelsensError as exc:
                mismatches.append(f"W {br.value}({x}): {exc}")
                continue
            worst_identity = max(worst_identity, abs(w * math.exp(w) - x) / abs(x))
    checks = {
        "normal closed form 1e-10": worst_normal <= 1e-10,
        "lambert vs root finder 1e-9": not mismatches,
        "lambert identity": worst_identity <= 1e-13,
    }
    detail = (
        f"normal max |diff| {worst_normal:.1e}; {cells} feasible lambert cells, "
        f"max rel diff {worst_lambert:.1e}; identity residual {worst_identity:.1e}"
    )
    if mismatches:
        detail += "; " + "; ".join(mismatches[:3])
    return all(checks.values()), _failed(checks, detail)


# ---------------------------------------------------------------------------
# 3. KL budget
# ---------------------------------------------------------------------------

TILT_CASES = (
    (D.normal(0.0, 1.0), "tilt.mean"),
    (D.normal(1.0, 2.0), "tilt.variance"),
    (D.lognormal(0.0, 0.5), "tilt.mean"),
    (D.lognormal(0.2, 0.4), "tilt.variance"),
    (D.exponential(1.5), "tilt.rate"),
    (D.poisson(3.0), "tilt.rate"),
    (D.uniform(0.0, 2.0), "tilt.exp"),
    (D.truncnormal(0.0, 1.0, -1.0, 1.0), "tilt.mean"),
)


def kl_budget(fast: bool = False, threads: int = 1):
    worst = 0.0
    where = ""
    count = 0
    for dist, mode in TILT_CASES:
        for b in BRANCHES:
            for delta in (0.1, 0.5):
                sol = solve_tau(dist, MODES[mode], delta, b)
                err = abs(kl_divergence(sol.perturbed, dist) - delta)
                count += 1
                if err >= worst:
                    worst, where = err, f"{dist} {mode} {b.value} d={delta}"
    ok = worst <= 1e-6
    return ok, f"{count} tilts, max |KL - delta| {worst:.1e} ({where})"


# ---------------------------------------------------------------------------
# 4. reweighting oracle
# ---------------------------------------------------------------------------


def reweighting_oracle(fast: bool = False, threads: int = 1):
    n = _n(100_000, fast)
    sample = build_sample(REFERENCE_MODEL, REFERENCE_MARGINALS, n, SEED + 1)
    worst = 0.0
    bad = []
    for i in range(3):
        for k, b in enumerate(BRANCHES):
            sol = solve_tau(REFERENCE_MARGINALS[i], MODES["tilt.mean"], 0.5, b)
            est = estimate_perturbed_pf(sample, i, sol)
            shifted = _replace(REFERENCE_MARGINALS, i, sol.perturbed)
            exact = analytic_pf_linear(REFERENCE_MODEL, shifted)
            direct = estimate_pf(build_sample(REFERENCE_MODEL, shifted, n, SEED + 100 + 2 * i + k))
            za = abs(est.p_hat - exact) / est.stderr
            zd = abs(est.p_hat - direct.p_hat) / math.hypot(est.stderr, direct.stderr)
            worst = max(worst, za, zd)
            if not (za <= 3.0 and zd <= 3.0):
                bad.append(f"x{i + 1} {b.value}: z_exact={za:.2f}, z_direct={zd:.2f}")
    detail = f"N={n}, 6 cells, max standardized gap {worst:.2f} (limit 3)"
    if bad:
        detail += "; " + "; ".join(bad)
    return not bad, detail


# ---------------------------------------------------------------------------
# 5. ranking
# ---------------------------------------------------------------------------


def ranking_reproduction(fast: bool = False, threads: int = 1):
    n = _n(1_000_000, fast)
    sample = build_sample(REFERENCE_MODEL, REFERENCE_MARGINALS, n, SEED + 2)
    problems = []
    for mode in ("tilt.mean", "tilt.variance"):
        plan = [PlanEntry(i, MODES[mode], b, DELTA_GRID) for i in range(3) for b in BRANCHES]
        table: dict[tuple, dict[int, float]] = {}
        for r in sweep(sample, plan, threads=threads):
            table.setdefault((r.branch, r.delta), {})[r.variable] = abs(r.s_hat)
        for (b, delta), s in sorted(table.items()):
            if mode == "tilt.mean":
                ok = s[2] > s[1] > s[0]
            else:
                ok = s[2] > max(s[0], s[1]) and s[0] < min(s[1], s[2])
            if not ok:
                problems.append(f"{mode} {b.value} d={delta}: |S| = {[round(s[k], 4) for k in range(3)]}")
    detail = f"N={n}, {2 * 2 * len(DELTA_GRID)} grid points checked"
    if problems:
        detail += "; " + "; ".join(problems[:4])
    return not problems, detail


# ---------------------------------------------------------------------------
# 6, 7. repeated trials
# ---------------------------------------------------------------------------


def repeated_trials(n: int, seeds: int, base_seed: int, variable: int = 2, delta: float = 0.5):
    """(p_f, p_delta, s_hat, plug-in var of s_hat) for ``seeds`` independent samples."""
    sol = solve_tau(REFERENCE_MARGINALS[variable], MODES["tilt.mean"], delta, Branch.POS)
    out = np.empty((seeds, 4))
    for k in range(seeds):
        sample = build_sample(REFERENCE_MODEL, REFERENCE_MARGINALS, n, base_seed + k)
        pf = estimate_pf(sample)
        pd = estimate_perturbed_pf(sample, variable, sol)
        out[k] = (pf.p_hat, pd.p_hat, pd.p_hat / pf.p_hat - 1.0, index_variance(pf, pd))
    return sol, out


def covariance_check(fast: bool = False, threads: int = 1):
    n, seeds = 10_000, 200
    sol, t = repeated_trials(n, seeds, SEED + 1000)
    pf = analytic_pf_linear(REFERENCE_MODEL, REFERENCE_MARGINALS)
    pd = analytic_pf_linear(REFERENCE_MODEL, _replace(REFERENCE_MARGINALS, 2, sol.perturbed))
    predicted = pd * (1.0 - pf) / n
    empirical = float(np.cov(t[:, 0], t[:, 1], ddof=1)[0, 1])
    ratio = empirical / predicted
    return abs(ratio - 1.0) <= 0.3, (
        f"{seeds} seeds at N={n}: empirical cov {empirical:.3e}, formula {predicted:.3e}, ratio {ratio:.3f} (limit 1 +- 0.3)"
    )


def delta_method_check(fast: bool = False, threads: int = 1):
    n, seeds = 10_000, 200
    _, t = repeated_trials(n, seeds, SEED + 1000)
    var_emp = float(np.var(t[:, 2], ddof=1))
    var_plugin = float(np.mean(t[:, 3]))
    ratio = var_emp / var_plugin

    # normality of the standardized index needs enough failures per run
    # for the ratio to be close to its linearization
    n_ad, seeds_ad = 100_000, 500
    _, t_ad = repeated_trials(n_ad, seeds_ad, SEED + 5000)
    s = t_ad[:, 2]
    z = (s - s.mean()) / s.std(ddof=1)
    ad = stats.anderson(z, "norm")
    crit = float(ad.critical_values[list(ad.significance_level).index(1.0)])
    checks = {"variance ratio": abs(ratio - 1.0) <= 0.3, "anderson-darling 1%": ad.statistic < crit}
    detail = (
        f"{seeds} seeds at N={n}: var ratio {ratio:.3f} (limit 1 +- 0.3); "
        f"AD over {seeds_ad} seeds at N={n_ad}: {ad.statistic:.3f} < {crit:.3f}"
    )
    return all(checks.values()), _failed(checks, detail)


# ---------------------------------------------------------------------------
# 8. boundary shift
# ---------------------------------------------------------------------------


def uniform_normal_pf(c: float, a: float, b: float) -> float:
    """P(c - U - Z <= 0) for U ~ Uniform(a, b), Z ~ N(0, 1): mean of Phi(u - c) over [a, b]."""

    def antideriv(t):
        # integral of Phi is t*Phi(t) + phi(t)
        return t * special.ndtr(t) + math.exp(-0.5 * t * t) / math.sqrt(2.0 * math.pi)

    return float((antideriv(b - c) - antideriv(a - c)) / (b - a))


def boundary_shift(fast: bool = False, threads: int = 1):
    u = D.uniform(-1.0, 1.0)
    upper = solve_tau(u, MODES["boundary.upper"], 0.5, Branch.NEG)
    lower = solve_tau(u, MODES["boundary.lower"], 0.5, Branch.POS)
    c = 2.0
    model = LinearGaussian(c, (1.0, 1.0))
    marginals = (u, D.normal(0.0, 1.0))
    n = _n(100_000, fast)
    sample = build_sample(model, marginals, n, SEED + 3)
    w = likelihood_weights(sample, 0, upper)
    x = sample.failure_points[:, 0]
    kept = x <= 0.5
    checks = {
        "perturbed is uniform(-1,0.5)": upper.perturbed.family is Family.UNIFORM
        and upper.perturbed.params == (-1.0, 0.5),
        "retained weights == 4/3": bool(np.all(w[kept] == 4.0 / 3.0)),
        "dropped weights == 0": bool(np.all(w[~kept] == 0.0)),
    }
    gaps = []
    for sol in (upper, lower):
        est = estimate_perturbed_pf(sample, 0, sol)
        a, b = sol.perturbed.params
        exact = uniform_normal_pf(c, a, b)
        z = abs(est.p_hat - exact) / est.stderr
        gaps.append(z)
        checks[f"{sol.mode} within 3 se"] = z <= 3.0
    detail = (
        f"{int(kept.sum())} retained failure weights all 4/3; N={n}, "
        f"standardized gaps upper {gaps[0]:.2f}, lower {gaps[1]:.2f} (limit 3)"
    )
    return all(checks.values()), _failed(checks, detail)


# ---------------------------------------------------------------------------
# 9. economy
# ---------------------------------------------------------------------------


def economy(fast: bool = False, threads: int = 1):
    n = _n(100_000, fast)
    model = CountingModel(REFERENCE_MODEL)
    sample = build_sample(model, REFERENCE_MARGINALS, n, SEED + 4)
    plan = [
        PlanEntry(i, MODES[mode], b, (0.0,) + DELTA_GRID)
        for i in range(3)
        for mode in ("tilt.mean", "tilt.variance")
        for b in BRANCHES
    ]
    records = sweep(sample, plan, threads=threads)
    sols = [solve_tau(REFERENCE_MARGINALS[i], MODES["tilt.mean"], 0.5, Branch.POS) for i in range(3)]
    for i in range(3):
        for j in range(i + 1, 3):
            estimate_interaction_pf(sample, i, j, sols[i], sols[j])
    ok = model.calls == n
    return ok, f"{len(records)} sweep cells + 3 interactions, {model.calls} evaluations for N={n}"


# ---------------------------------------------------------------------------
# 10. determinism
# ---------------------------------------------------------------------------

_DETERMINISM_CONFIG = """\
marginals = ["normal(0,1)", "normal(0,1)", "normal(0,1)"]

[model]
name = "linear"
intercept = 3.0
coefficients = [0.1, 0.5, 1.0]

[sample]
n = {n}
seed = 7

[[plan]]
variables = "all"
mode = "tilt.mean"
branches = ["neg", "pos"]
deltas = {{start = 0.0, stop = 1.0, steps = 11}}

[[plan]]
variables = [1, 3]
mode = "tilt.variance"
branches = ["neg", "pos"]
deltas = [0.05, 0.5, 2.0]

[output]
path = "out.csv"
format = "{fmt}"
series = "series"
"""


def determinism(fast: bool = False, threads: int = 1):
    from .cli import main

    n = _n(100_000, fast)
    blobs = {}
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        for fmt in ("csv", "json"):
            cfg = tmp / f"run_{fmt}.toml"
            cfg.write_text(_DETERMINISM_CONFIG.format(n=n, fmt=fmt), encoding="utf-8")
            for t in (1, 8, 1, 8):
                out = tmp / f"out_{fmt}_{t}_{len(blobs)}"
                with contextlib.redirect_stdout(io.StringIO()):
                    code = main(["run", "--config", str(cfg), "--threads", str(t), "--output", str(out)])
                if code != 0:
                    return False, f"run exited with {code}"
                series = sorted((tmp / "series").iterdir())
                blobs[(fmt, t, len(blobs))] = out.read_bytes() + b"".join(p.read_bytes() for p in series)
    distinct = {fmt: len({v for k, v in blobs.items() if k[0] == fmt}) for fmt in ("csv", "json")}
    ok = all(v == 1 for v in distinct.values())
    return ok, f"N={n}, 4 runs per format at threads 1/8: distinct outputs {distinct}"


# ---------------------------------------------------------------------------

CRITERIA: tuple[tuple[int, str, float, Callable], ...] = (
    (1, "reference probability", 10, reference_probability),
    (2, "closed forms vs root finder", 1, closed_forms),
    (3, "KL budget exactness", 5, kl_budget),
    (4, "reweighting oracle", 30, reweighting_oracle),
    (5, "ranking reproduction", 60, ranking_reproduction),
    (6, "estimator covariance", 120, covariance_check),
    (7, "delta-method variance", 300, delta_method_check),
    (8, "boundary shift semantics", 10, boundary_shift),
    (9, "evaluation economy", 10, economy),
    (10, "determinism across threads", 30, determinism),
)


def run_criterion(number: int, fast: bool = False, threads: int = 1) -> CriterionResult:
    num, title, budget, func = next(c for c in CRITERIA if c[0] == number)
    t0 = time.perf_counter()
    try:
        passed, detail = func(fast=fast, threads=threads)
    except Exception as exc:  # a crash is a failed criterion, not an aborted report
        passed, detail = False, f"error: {type(exc).__name__}: {exc}"
    seconds = time.perf_counter() - t0
    if passed and seconds > budget:
        passed, detail = False, detail + f"; over the {budget:g}s budget"
    return CriterionResult(num, title, bool(passed), detail, seconds, budget)


def run_all(fast: bool = False, threads: int = 1) -> list[CriterionResult]:
    return [run_criterion(c[0], fast, threads) for c in CRITERIA]
