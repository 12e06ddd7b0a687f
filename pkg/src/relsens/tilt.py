"""KL-budgeted perturbations of a marginal distribution.

A tilt multiplies the density by ``exp(tau*T(x) - psi(tau))``; its KL
divergence from the original is ``G(tau) + delta = tau*psi'(tau) - psi(tau)``,
which is zero at tau = 0 and strictly monotone on each side.  For a budget
``delta`` there is therefore at most one negative root and one positive root.

A boundary shift instead moves one end of a bounded support inward by
``delta`` (a displacement in the variable's units, not nats).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import integrate, optimize

from . import distributions as D
from .distributions import Component, DistributionSpec, Family
from .errors import DomainError, NoSolutionError, NumericalError, ParameterError
from .lambertw import LambertBranch, lambert_w

ROOT_XTOL = 1e-12
ROOT_MAXITER = 200
RESIDUAL_TOL = 1e-10
LAMBERT_AGREEMENT = 1e-9

# Largest |tau| tried while bracketing an unbounded side of the domain; the
# exponential negative branch needs |tau| ~ rate*exp(1 + delta).
_BRACKET_LIMIT = 1e300


class Branch(str, Enum):
    NEG = "neg"
    POS = "pos"

    @property
    def sign(self) -> int:
        return -1 if self is Branch.NEG else 1


class Side(str, Enum):
    LOWER = "lower"
    UPPER = "upper"


@dataclass(frozen=True)
class PerturbationMode:
    """Either a tilt of one sufficient-statistic component or a boundary shift.

    ``name`` is the configuration literal (``tilt.mean``, ``boundary.upper``,
    ...); it narrows the families a mode accepts beyond the generic rule.
    """

    kind: str
    component: Component | None = None
    side: Side | None = None
    name: str = ""

    @property
    def is_tilt(self) -> bool:
        return self.kind == "tilt"

    def __str__(self):
        if self.name:
            return self.name
        if self.is_tilt:
            return f"tilt.{self.component.name.lower()}"
        return f"boundary.{self.side.value}"


def tilt_mode(component: Component = Component.FIRST) -> PerturbationMode:
    return PerturbationMode("tilt", component=component)


def boundary_mode(side: Side | str) -> PerturbationMode:
    side = Side(side)
    return PerturbationMode("boundary", side=side, name=f"boundary.{side.value}")


MODES = {
    "tilt.mean": PerturbationMode("tilt", Component.FIRST, name="tilt.mean"),
    "tilt.variance": PerturbationMode("tilt", Component.SECOND, name="tilt.variance"),
    "tilt.rate": PerturbationMode("tilt", Component.FIRST, name="tilt.rate"),
    "tilt.exp": PerturbationMode("tilt", Component.FIRST, name="tilt.exp"),
    "boundary.lower": boundary_mode(Side.LOWER),
    "boundary.upper": boundary_mode(Side.UPPER),
}

_LITERAL_FAMILIES = {
    "tilt.mean": {Family.NORMAL, Family.LOGNORMAL, Family.TRUNCNORMAL},
    "tilt.variance": {Family.NORMAL, Family.LOGNORMAL},
    "tilt.rate": {Family.EXPONENTIAL, Family.POISSON},
    "tilt.exp": {Family.UNIFORM},
}

BOUNDARY_FAMILIES = frozenset({Family.UNIFORM, Family.TRIANGULAR, Family.TRUNCNORMAL})


def parse_mode(text: str) -> PerturbationMode:
    try:
        return MODES[text.strip().lower()]
    except KeyError:
        raise ParameterError(f"unknown mode {text!r} (known: {', '.join(MODES)})") from None


def mode_problem(dist: DistributionSpec, mode: PerturbationMode) -> str | None:
    """Why ``mode`` cannot be applied to ``dist``, or None if it can."""
    fam = dist.family
    if mode.is_tilt:
        if fam not in D.TILTABLE:
            return f"{mode} is not defined for {fam.value}"
        if mode.component is Component.SECOND and fam not in (Family.NORMAL, Family.LOGNORMAL):
            return f"{mode} (second component) is defined only for normal and lognormal, not {fam.value}"
    elif fam not in BOUNDARY_FAMILIES:
        return f"{mode} needs a bounded-support family, not {fam.value}"
    allowed = _LITERAL_FAMILIES.get(mode.name)
    if allowed is not None and fam not in allowed:
        names = ", ".join(sorted(f.value for f in allowed))
        return f"{mode} applies to {names}, not {fam.value}"
    return None


def check_mode(dist: DistributionSpec, mode: PerturbationMode) -> None:
    problem = mode_problem(dist, mode)
    if problem:
        raise ParameterError(problem)


@dataclass(frozen=True)
class TiltSolution:
    """A solved perturbation of one marginal.

    For tilts ``tau`` is the natural-parameter shift and ``delta`` the KL
    budget; for boundary shifts ``tau`` is the signed displacement of the
    moved bound and ``psi_tau`` is 0.  ``branch`` records the sign actually
    found.
    """

    tau: float
    delta: float
    psi_tau: float
    perturbed: DistributionSpec
    original: DistributionSpec
    mode: PerturbationMode
    branch: Branch | None
    method: str = "identity"
    flags: tuple[str, ...] = field(default=())


def identity_solution(dist: DistributionSpec, mode: PerturbationMode, branch: Branch | None = None):
    """The delta = 0 perturbation: tau = 0 and the original distribution."""
    return TiltSolution(0.0, 0.0, 0.0, dist, dist, mode, branch)


def tilted(dist: DistributionSpec, tau: float, comp: Component = Component.FIRST) -> DistributionSpec:
    """The distribution with density exp(tau*T(x) - psi(tau)) f(x)."""
    D._check_tau(dist, tau, comp)
    f, p = dist.family, dist.params
    if f in (Family.NORMAL, Family.LOGNORMAL):
        mu, s = p
        if comp is Component.FIRST:
            return DistributionSpec(f, (mu + tau * s * s, s))
        u = 1.0 - 2.0 * tau * s * s
        return DistributionSpec(f, (mu / u, s / math.sqrt(u)))
    if f is Family.EXPONENTIAL:
        return D.exponential(p[0] - tau)
    if f is Family.POISSON:
        return D.poisson(p[0] * math.exp(tau))
    if f is Family.UNIFORM:
        return D.tilted_uniform(p[0], p[1], tau)
    mu, s, a, b = p
    return D.truncnormal(mu + tau * s * s, s, a, b)


def kl_residual(dist: DistributionSpec, tau: float, delta: float, comp: Component = Component.FIRST) -> float:
    """G(tau) = tau*psi'(tau) - psi(tau) - delta."""
    if tau == 0.0:
        return -delta
    d1, _ = D.psi_derivatives(dist, tau, comp)
    return tau * d1 - D.cumulant_psi(dist, tau, comp) - delta


def _bracket(G, sign: int, limit: float) -> tuple[float, float]:
    """Walk away from 0 until G changes sign; approach a finite domain edge by halving the gap."""
    inside, t = 0.0, sign * 1e-6
    for _ in range(2000):
        if math.isfinite(limit) and abs(t) >= abs(limit):
            t = inside + 0.5 * (limit - inside)
            if t == inside:
                break
        try:
            g = G(t)
        except (DomainError, OverflowError):
            g = math.inf
        if math.isnan(g):
            raise NumericalError(f"KL residual is NaN at tau={t}")
        # strict: G is increasing in |tau|, so a genuine root is followed by G > 0,
        # while G == 0 in rounding only means the residual tends to 0 asymptotically
        if g > 0.0:
            return (inside, t) if sign > 0 else (t, inside)
        inside = t
        if not math.isfinite(limit) and abs(t) > _BRACKET_LIMIT:
            break
        t = 2.0 * t
    raise NoSolutionError(
        f"no {'positive' if sign > 0 else 'negative'} root: the KL divergence stays below the budget "
        f"on this side of the tilt domain"
    )


def solve_root(dist: DistributionSpec, delta: float, branch: Branch, comp: Component = Component.FIRST) -> float:
    """Generic bracketed Brent solve of tau*psi'(tau) - psi(tau) = delta."""
    lo, hi = D.tilt_domain(dist, comp)
    limit = hi if branch is Branch.POS else lo

    def G(t):
        return kl_residual(dist, t, delta, comp)

    a, b = _bracket(G, branch.sign, limit)
    try:
        tau, info = optimize.brentq(
            G, a, b, xtol=ROOT_XTOL, maxiter=ROOT_MAXITER, full_output=True, disp=False
        )
    except ValueError as exc:  # pragma: no cover - bracket guarantees a sign change
        raise NumericalError(str(exc)) from exc
    if not info.converged:
        raise NumericalError(f"Brent iteration did not converge in {ROOT_MAXITER} iterations ({info.flag})")
    return _polish(G, dist, tau, comp, a, b)


def _polish(G, dist, tau, comp, a, b):
    # A few guarded Newton steps (G' = tau*psi'') once the bracket is tight.
    best, gbest = tau, abs(G(tau))
    for _ in range(3):
        if gbest < 1e-13:
            break
        slope = tau * D.psi_derivatives(dist, tau, comp)[1]
        if slope == 0.0:
            break
        cand = tau - G(tau) / slope
        if not (min(a, b) <= cand <= max(a, b)):
            break
        gc = abs(G(cand))
        if gc >= gbest:
            break
        tau, best, gbest = cand, cand, gc
    return best


def _lambert_tau(dist: DistributionSpec, delta: float, branch: Branch) -> float:
    """Closed-form roots via Lambert W (exponential and Poisson).

    Branch mapping (checked by sign of the result): exponential W0 -> tau < 0,
    W-1 -> tau > 0; Poisson W0 -> tau > 0, W-1 -> tau < 0.
    """
    lam = dist.params[0]
    if dist.family is Family.EXPONENTIAL:
        wb = LambertBranch.W0 if branch is Branch.NEG else LambertBranch.WM1
        # -exp(-1-delta) computed as -(1/e)*exp(-delta)
        w = lambert_w(wb, -math.exp(-1.0 - delta))
        return lam * (w + 1.0) / w
    arg = -(lam - delta) / (math.e * lam)
    if branch is Branch.NEG:
        if arg >= 0.0:
            raise NoSolutionError(
                f"poisson({lam}): negative branch needs delta < rate, got delta={delta}"
            )
        return lambert_w(LambertBranch.WM1, arg) + 1.0
    return lambert_w(LambertBranch.W0, arg) + 1.0


def _solve_boundary(dist: DistributionSpec, mode: PerturbationMode, delta: float, branch: Branch) -> TiltSolution:
    check_mode(dist, mode)
    lo, hi = dist.support
    width = hi - lo
    if delta >= width:
        raise NoSolutionError(f"boundary shift {delta} must be smaller than the support width {width}")
    if mode.side is Side.LOWER:
        if branch is Branch.NEG:
            raise NoSolutionError("boundary.lower only moves inward (pos); neg would widen the support")
        new_lo, new_hi, tau = lo + delta, hi, delta
    else:
        if branch is Branch.POS:
            raise NoSolutionError("boundary.upper only moves inward (neg); pos would widen the support")
        new_lo, new_hi, tau = lo, hi - delta, -delta
    f, p = dist.family, dist.params
    if f is Family.UNIFORM:
        new = D.uniform(new_lo, new_hi)
    elif f is Family.TRUNCNORMAL:
        new = D.truncnormal(p[0], p[1], new_lo, new_hi)
    else:
        new = D.triangular(new_lo, min(max(p[1], new_lo), new_hi), new_hi)
    return TiltSolution(tau, delta, 0.0, new, dist, mode, branch, method="boundary")


def solve_tau(
    dist: DistributionSpec,
    mode: PerturbationMode,
    delta: float,
    branch: Branch | str,
) -> TiltSolution:
    """Find the perturbation of ``dist`` with budget ``delta`` on ``branch``.

    Raises
    ------
    ParameterError
        ``delta <= 0`` or the mode does not apply to this family.
    NoSolutionError
        The requested branch has no root inside the tilt domain.
    NumericalError
        The root finder failed to converge.
    """
    branch = Branch(branch)
    delta = float(delta)
    if not delta > 0.0 or not math.isfinite(delta):
        raise ParameterError(f"delta must be a finite value > 0, got {delta}")
    if not mode.is_tilt:
        return _solve_boundary(dist, mode, delta, branch)
    check_mode(dist, mode)
    comp = mode.component
    fam = dist.family
    flags: list[str] = []
    if fam in (Family.NORMAL, Family.LOGNORMAL) and comp is Component.FIRST:
        tau = branch.sign * math.sqrt(2.0 * delta) / dist.params[1]
        method = "closed_form"
    elif fam in (Family.EXPONENTIAL, Family.POISSON):
        tau = _lambert_tau(dist, delta, branch)
        method = "lambert"
        ref = solve_root(dist, delta, branch, comp)
        if abs(tau - ref) > LAMBERT_AGREEMENT * max(1.0, abs(ref)):
            flags.append("lambert_mismatch")
            tau, method = ref, "brent"
    else:
        tau = solve_root(dist, delta, branch, comp)
        method = "brent"
    found = Branch.NEG if tau < 0 else Branch.POS
    if found is not branch:
        flags.append(f"branch_{found.value}_only")
    if not 2.0 * tau < D.tilt_domain(dist, comp)[1]:
        # E_f[w^2] = exp(psi(2 tau) - 2 psi(tau)) diverges: the reweighted
        # estimator has infinite variance and its standard error is meaningless
        flags.append("weight_variance_infinite")
    resid = kl_residual(dist, tau, delta, comp)
    if abs(resid) > RESIDUAL_TOL:
        raise NumericalError(f"KL residual {resid:.3g} exceeds {RESIDUAL_TOL} at tau={tau}")
    return TiltSolution(
        tau=tau,
        delta=delta,
        psi_tau=D.cumulant_psi(dist, tau, comp),
        perturbed=tilted(dist, tau, comp),
        original=dist,
        mode=mode,
        branch=found,
        method=method,
        flags=tuple(flags),
    )


# ---------------------------------------------------------------------------
# Divergences
# ---------------------------------------------------------------------------

_QUAD = dict(epsabs=1e-14, epsrel=1e-12, limit=400)


def _poisson_terms(p: DistributionSpec, q: DistributionSpec) -> np.ndarray:
    lam = max(p.params[0], q.params[0])
    return np.arange(0.0, math.ceil(lam + 40.0 * math.sqrt(lam) + 60.0))


def _edges(p: DistributionSpec) -> list[float]:
    f, par = p.family, p.params
    if f is Family.NORMAL:
        mu, s = par
        return [mu + s * z for z in (-40, -12, -6, -3, -1, 0, 1, 3, 6, 12, 40)]
    if f is Family.EXPONENTIAL:
        return [z / par[0] for z in (0, 0.5, 1, 3, 8, 20, 60, 745)]
    lo, hi = p.support
    pts = [lo, hi]
    if f is Family.TRIANGULAR:
        pts.append(par[1])
    if f is Family.TRUNCNORMAL:
        pts += [x for x in (par[0] - par[1], par[0], par[0] + par[1]) if lo < x < hi]
    return sorted(set(pts))


def kl_divergence(p: DistributionSpec, q: DistributionSpec) -> float:
    """KL(p || q) = integral of p*log(p/q), by adaptive quadrature (a sum for Poisson)."""
    fams = {p.family, q.family}
    if p.family is not q.family and fams != {Family.UNIFORM, Family.TILTED_UNIFORM}:
        raise DomainError(f"KL between {p.family.value} and {q.family.value} is not supported")
    plo, phi = p.support
    qlo, qhi = q.support
    if plo < qlo or phi > qhi:
        raise DomainError(f"support of {p} is not contained in the support of {q}")
    if p == q:
        return 0.0
    if p.is_discrete:
        k = _poisson_terms(p, q)
        lp = D.log_density(p, k)
        terms = np.exp(lp) * (lp - D.log_density(q, k))
        return float(math.fsum(terms))

    if p.family is Family.LOGNORMAL:
        # integrate over y = log x; the Jacobian cancels inside the log ratio
        mu, s = p.params

        def integrand(y):
            x = math.exp(y)
            lp = float(D.log_density(p, x))
            return math.exp(lp + y) * (lp - float(D.log_density(q, x)))

        edges = [mu + s * z for z in (-40, -12, -6, -3, -1, 0, 1, 3, 6, 12, 40)]
    else:

        def integrand(x):
            lp = float(D.log_density(p, x))
            if lp == -math.inf:
                return 0.0
            return math.exp(lp) * (lp - float(D.log_density(q, x)))

        edges = _edges(p)
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        val, _ = integrate.quad(integrand, a, b, **_QUAD)
        total += val
    return max(total, 0.0)


def delta_max(p: DistributionSpec, q: DistributionSpec, grid: int = 10_000) -> float:
    """Upper bound (R - r)**2 / (4 r R) on KL(p || q) from bounds r <= p/q <= R on support(p).

    Returns ``inf`` when the likelihood ratio is unbounded (or reaches 0).
    """
    if p == q:
        return 0.0
    plo, phi = p.support
    if math.isinf(plo) or math.isinf(phi):
        # On an unbounded support the log-ratio of two members of these
        # families is a non-constant polynomial in T(x) unless p == q, so
        # the ratio is unbounded. A constant ratio means the same law.
        if p.is_discrete:
            xs = _poisson_terms(p, q)[:200]
        else:
            xs = D.quantile(p, np.linspace(1e-6, 1.0 - 1e-6, 64))
        lr = np.asarray(D.log_density(p, xs)) - np.asarray(D.log_density(q, xs))
        return 0.0 if np.ptp(lr) < 1e-12 else math.inf
    if p.family in (Family.UNIFORM, Family.TILTED_UNIFORM) and q.family is Family.UNIFORM:
        # ratio is constant or monotone in x: the extremes sit at the ends
        xs = np.array([plo, phi])
    else:
        xs = np.linspace(plo, phi, grid)
    lp = np.asarray(D.log_density(p, xs))
    lq = np.asarray(D.log_density(q, xs))
    inside = np.isfinite(lp)
    if not inside.all():
        # density vanishes at an end of support(p): the ratio reaches 0
        return math.inf
    if not np.isfinite(lq).all():
        raise DomainError(f"support of {p} is not contained in the support of {q}")
    lr = lp - lq
    log_r, log_R = float(lr.min()), float(lr.max())
    # (R - r)^2 / (4 r R) = sinh^2((log R - log r) / 2)
    return math.sinh(0.5 * (log_R - log_r)) ** 2
