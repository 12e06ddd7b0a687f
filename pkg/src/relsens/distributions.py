"""Marginal input distributions.

Each marginal is a :class:`DistributionSpec`: a family tag plus a tuple of
parameters.  The module provides log-densities, inverse-CDF sampling, moments,
sufficient statistics and the cumulant function ``psi(tau)`` of the
exponentially tilted density ``exp(tau*T(x) - psi(tau)) f(x)`` together with
its first two derivatives.

The normal CDF and its inverse come from ``scipy.special`` (``ndtr``,
``log_ndtr`` and ``ndtri``; Cephes rational/erf based approximations with
close to double precision over the central region).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import special

from .errors import DomainError, ParameterError

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

# Below this |tau| the uniform cumulant uses its Taylor series (0/0 at tau=0).
UNIFORM_SERIES_TAU = 1e-6


class Family(str, Enum):
    NORMAL = "normal"
    LOGNORMAL = "lognormal"
    EXPONENTIAL = "exponential"
    POISSON = "poisson"
    UNIFORM = "uniform"
    TRIANGULAR = "triangular"
    TRUNCNORMAL = "truncnormal"
    TILTED_UNIFORM = "tiltuniform"


class Component(Enum):
    """Which entry of the sufficient-statistic vector is tilted."""

    FIRST = 1
    SECOND = 2


_ARITY = {
    Family.NORMAL: ("mu", "sigma"),
    Family.LOGNORMAL: ("mu", "sigma"),
    Family.EXPONENTIAL: ("rate",),
    Family.POISSON: ("rate",),
    Family.UNIFORM: ("a", "b"),
    Family.TRIANGULAR: ("a", "c", "b"),
    Family.TRUNCNORMAL: ("mu", "sigma", "a", "b"),
    Family.TILTED_UNIFORM: ("a", "b", "tau"),
}

EXPONENTIAL_FAMILIES = frozenset(
    {Family.NORMAL, Family.LOGNORMAL, Family.EXPONENTIAL, Family.POISSON}
)
BOUNDED_FAMILIES = frozenset(
    {Family.UNIFORM, Family.TRIANGULAR, Family.TRUNCNORMAL, Family.TILTED_UNIFORM}
)


@dataclass(frozen=True)
class DistributionSpec:
    """A validated marginal distribution.

    Use the module-level constructors (:func:`normal`, :func:`uniform`, ...)
    or :func:`parse_distribution` rather than building one by hand.
    """

    family: Family
    params: tuple[float, ...]

    def __post_init__(self):
        family = Family(self.family)
        object.__setattr__(self, "family", family)
        names = _ARITY[family]
        if len(self.params) != len(names):
            raise ParameterError(
                f"{family.value} takes {len(names)} parameters {names}, got {len(self.params)}"
            )
        params = tuple(float(p) for p in self.params)
        object.__setattr__(self, "params", params)
        if not all(math.isfinite(p) for p in params):
            raise ParameterError(f"{family.value} parameters must be finite: {params}")
        _validate(family, params)

    def __getattr__(self, name):
        # named parameter access: dist.mu, dist.sigma, dist.rate, dist.a, ...
        try:
            names = _ARITY[object.__getattribute__(self, "family")]
        except AttributeError:
            raise AttributeError(name) from None
        if name in names:
            return self.params[names.index(name)]
        raise AttributeError(name)

    def __str__(self):
        return f"{self.family.value}({','.join(_fmt(p) for p in self.params)})"

    @property
    def is_discrete(self) -> bool:
        return self.family is Family.POISSON

    @property
    def support(self) -> tuple[float, float]:
        f, p = self.family, self.params
        if f is Family.NORMAL:
            return (-math.inf, math.inf)
        if f in (Family.LOGNORMAL, Family.EXPONENTIAL, Family.POISSON):
            return (0.0, math.inf)
        if f is Family.TRIANGULAR:
            return (p[0], p[2])
        if f is Family.TRUNCNORMAL:
            return (p[2], p[3])
        return (p[0], p[1])


def _fmt(x: float) -> str:
    return repr(x) if x != int(x) else str(int(x))


def _validate(family: Family, p: tuple[float, ...]) -> None:
    if family in (Family.NORMAL, Family.LOGNORMAL, Family.TRUNCNORMAL) and p[1] <= 0:
        raise ParameterError(f"{family.value}: sigma must be > 0, got {p[1]}")
    if family in (Family.EXPONENTIAL, Family.POISSON) and p[0] <= 0:
        raise ParameterError(f"{family.value}: rate must be > 0, got {p[0]}")
    if family in (Family.UNIFORM, Family.TILTED_UNIFORM) and not p[1] > p[0]:
        raise ParameterError(f"{family.value}: need b > a, got a={p[0]}, b={p[1]}")
    if family is Family.TRUNCNORMAL and not p[3] > p[2]:
        raise ParameterError(f"truncnormal: need b > a, got a={p[2]}, b={p[3]}")
    if family is Family.TRIANGULAR:
        a, c, b = p
        if not (a < b and a <= c <= b):
            raise ParameterError(f"triangular: need a <= c <= b and a < b, got {p}")


def normal(mu: float, sigma: float) -> DistributionSpec:
    return DistributionSpec(Family.NORMAL, (mu, sigma))


def lognormal(mu: float, sigma: float) -> DistributionSpec:
    return DistributionSpec(Family.LOGNORMAL, (mu, sigma))


def exponential(rate: float) -> DistributionSpec:
    return DistributionSpec(Family.EXPONENTIAL, (rate,))


def poisson(rate: float) -> DistributionSpec:
    return DistributionSpec(Family.POISSON, (rate,))


def uniform(a: float, b: float) -> DistributionSpec:
    return DistributionSpec(Family.UNIFORM, (a, b))


def triangular(a: float, c: float, b: float) -> DistributionSpec:
    return DistributionSpec(Family.TRIANGULAR, (a, c, b))


def truncnormal(mu: float, sigma: float, a: float, b: float) -> DistributionSpec:
    return DistributionSpec(Family.TRUNCNORMAL, (mu, sigma, a, b))


def tilted_uniform(a: float, b: float, tau: float) -> DistributionSpec:
    """Uniform on [a, b] tilted by exp(tau*x); density tau*e^(tau*x)/(e^(tau*b)-e^(tau*a))."""
    return DistributionSpec(Family.TILTED_UNIFORM, (a, b, tau))


_LITERAL = re.compile(r"^\s*([a-z_]+)\s*\(([^()]*)\)\s*$")


def parse_distribution(text: str) -> DistributionSpec:
    """Parse a literal such as ``normal(0,1)`` or ``truncnormal(0,1,-1,1)``."""
    m = _LITERAL.match(text.lower())
    if not m:
        raise ParameterError(f"cannot parse distribution literal {text!r}")
    name, body = m.groups()
    try:
        family = Family(name)
    except ValueError:
        known = ", ".join(f.value for f in Family)
        raise ParameterError(f"unknown distribution {name!r} (known: {known})") from None
    try:
        params = tuple(float(tok) for tok in body.split(",")) if body.strip() else ()
    except ValueError:
        raise ParameterError(f"non-numeric parameter in {text!r}") from None
    return DistributionSpec(family, params)


# ---------------------------------------------------------------------------
# Normal helpers
# ---------------------------------------------------------------------------


def _log_phi(z):
    return -0.5 * np.square(z) - LOG_SQRT_2PI


def _log_ndtr_scaled(x: float) -> float:
    """log(Phi(x)) + x**2/2 for x <= 0, free of the quadratic term."""
    return math.log(0.5 * special.erfcx(-x / math.sqrt(2.0)))


def _logz_parts(alpha: float, beta: float) -> tuple[str | None, float]:
    """Split log(Phi(beta) - Phi(alpha)) as -c**2/2 + rest.

    ``c`` is beta when the interval lies in the lower tail (key "b"), alpha
    in the upper tail (key "a"), and the quadratic term is absent when the
    interval straddles 0 (key None).  Keeping -c**2/2 symbolic lets callers
    cancel it exactly against other quadratic terms in far-tail tilts.
    """
    if beta <= 0.0:
        ratio = _log_ndtr_scaled(alpha) - _log_ndtr_scaled(beta) - 0.5 * (alpha - beta) * (alpha + beta)
        return "b", _log_ndtr_scaled(beta) + math.log1p(-math.exp(ratio))
    if alpha >= 0.0:
        key, rest = _logz_parts(-beta, -alpha)
        return "a", rest
    return None, math.log1p(-float(special.ndtr(alpha)) - float(special.ndtr(-beta)))


def _log_diff_ndtr(alpha: float, beta: float) -> float:
    """log(Phi(beta) - Phi(alpha)) for alpha < beta, stable in both tails."""
    key, rest = _logz_parts(alpha, beta)
    c = {"a": alpha, "b": beta}.get(key, 0.0)
    return rest - 0.5 * c * c


def _truncnorm_logz(mu: float, sigma: float, a: float, b: float) -> float:
    return _log_diff_ndtr((a - mu) / sigma, (b - mu) / sigma)


def _truncnorm_moments(mu: float, sigma: float, a: float, b: float) -> tuple[float, float]:
    alpha, beta = (a - mu) / sigma, (b - mu) / sigma
    key, rest = _logz_parts(alpha, beta)
    # log(phi(x)/Z) with the quadratic of the anchoring bound cancelled exactly
    if key == "b":
        la, lb = -0.5 * (alpha - beta) * (alpha + beta), 0.0
    elif key == "a":
        la, lb = 0.0, -0.5 * (beta - alpha) * (beta + alpha)
    else:
        la, lb = -0.5 * alpha * alpha, -0.5 * beta * beta
    ra = math.exp(la - LOG_SQRT_2PI - rest)
    rb = math.exp(lb - LOG_SQRT_2PI - rest)
    m = mu + sigma * (ra - rb)
    v = sigma**2 * (1.0 + alpha * ra - beta * rb - (ra - rb) ** 2)
    return m, v


def _truncnorm_psi(mu: float, s: float, a: float, b: float, tau: float) -> float:
    # psi = mu*tau + tau^2 s^2/2 + log Z(mu + tau s^2) - log Z(mu); with
    # beta_tau = beta_0 - tau*s the quadratic terms combine without cancellation
    bounds0 = {"a": (a - mu) / s, "b": (b - mu) / s}
    shifted = mu + tau * s * s
    key_t, rest_t = _logz_parts((a - shifted) / s, (b - shifted) / s)
    key_0, rest_0 = _logz_parts(bounds0["a"], bounds0["b"])
    if key_t is None:
        quad_t = 0.5 * tau * tau * s * s
    else:
        c = bounds0[key_t]
        quad_t = tau * s * c - 0.5 * c * c
    quad_0 = 0.5 * bounds0[key_0] ** 2 if key_0 is not None else 0.0
    return mu * tau + quad_t + quad_0 + rest_t - rest_0


# ---------------------------------------------------------------------------
# Tilted-uniform helpers: phi(z) = log(expm1(z)/z), phi(0) = 0
# ---------------------------------------------------------------------------


def _log_expm1_ratio(z: float) -> float:
    if z == 0.0:
        return 0.0
    if z > 0.0:
        # phi(z) = z + phi(-z) avoids overflow of expm1 for large z
        return z + math.log(math.expm1(-z) / -z)
    return math.log(math.expm1(z) / z)


def _dlog_expm1_ratio(z: float) -> tuple[float, float]:
    """First and second derivative of phi(z) = log(expm1(z)/z)."""
    s = abs(z)
    if s < 0.05:
        z2 = z * z
        d1 = 0.5 + z * (1 / 12 - z2 * (1 / 720 - z2 * (1 / 30240 - z2 / 1209600)))
        d2 = 1 / 12 - z2 * (1 / 240 - z2 * (1 / 6048 - z2 / 172800))
        return d1, d2
    e = math.exp(-s)
    d1 = 1.0 / -math.expm1(-s) - 1.0 / s
    d2 = 1.0 / (s * s) - e / math.expm1(-s) ** 2
    if z < 0.0:
        d1 = 1.0 - d1
    return d1, d2


# ---------------------------------------------------------------------------
# Densities
# ---------------------------------------------------------------------------


def log_density(dist: DistributionSpec, x):
    """Natural log of the density (pmf for Poisson) at ``x``; ``-inf`` off support.

    Accepts a scalar or an array and returns the same shape.
    """
    xa = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = _log_density(dist, xa)
    out = np.where(np.isnan(xa), np.nan, out)
    return float(out) if np.ndim(out) == 0 else out


def _log_density(dist: DistributionSpec, x: np.ndarray) -> np.ndarray:
    f, p = dist.family, dist.params
    ninf = -np.inf
    if f is Family.NORMAL:
        mu, s = p
        return _log_phi((x - mu) / s) - math.log(s)
    if f is Family.LOGNORMAL:
        mu, s = p
        pos = x > 0
        lx = np.log(np.where(pos, x, 1.0))
        return np.where(pos, _log_phi((lx - mu) / s) - math.log(s) - lx, ninf)
    if f is Family.EXPONENTIAL:
        (lam,) = p
        return np.where(x >= 0, math.log(lam) - lam * x, ninf)
    if f is Family.POISSON:
        (lam,) = p
        ok = (x >= 0) & (x == np.floor(x))
        k = np.where(ok, x, 0.0)
        return np.where(ok, k * math.log(lam) - lam - special.gammaln(k + 1.0), ninf)
    if f is Family.UNIFORM:
        a, b = p
        return np.where((x >= a) & (x <= b), -math.log(b - a), ninf)
    if f is Family.TILTED_UNIFORM:
        a, b, tau = p
        inside = (x >= a) & (x <= b)
        val = tau * (x - a) - math.log(b - a) - _log_expm1_ratio(tau * (b - a))
        return np.where(inside, val, ninf)
    if f is Family.TRIANGULAR:
        a, c, b = p
        w = b - a
        left = np.log(2.0 * (x - a) / (w * (c - a))) if c > a else np.full_like(x, ninf)
        right = np.log(2.0 * (b - x) / (w * (b - c))) if b > c else np.full_like(x, ninf)
        val = np.where(x < c, left, right)
        if c == a:
            val = np.where(x == a, math.log(2.0 / w), val)
        if c == b:
            val = np.where(x == b, math.log(2.0 / w), val)
        return np.where((x >= a) & (x <= b), val, ninf)
    if f is Family.TRUNCNORMAL:
        mu, s, a, b = p
        logz = _truncnorm_logz(mu, s, a, b)
        val = _log_phi((x - mu) / s) - math.log(s) - logz
        return np.where((x >= a) & (x <= b), val, ninf)
    raise ParameterError(f"unsupported family {f}")  # pragma: no cover


def mean(dist: DistributionSpec) -> float:
    f, p = dist.family, dist.params
    if f is Family.NORMAL:
        return p[0]
    if f is Family.LOGNORMAL:
        return math.exp(p[0] + 0.5 * p[1] ** 2)
    if f is Family.EXPONENTIAL:
        return 1.0 / p[0]
    if f is Family.POISSON:
        return p[0]
    if f is Family.UNIFORM:
        return 0.5 * (p[0] + p[1])
    if f is Family.TRIANGULAR:
        return sum(p) / 3.0
    if f is Family.TRUNCNORMAL:
        return _truncnorm_moments(*p)[0]
    a, b, tau = p
    return a + (b - a) * _dlog_expm1_ratio(tau * (b - a))[0]


def variance(dist: DistributionSpec) -> float:
    f, p = dist.family, dist.params
    if f is Family.NORMAL:
        return p[1] ** 2
    if f is Family.LOGNORMAL:
        mu, s = p
        return math.expm1(s * s) * math.exp(2 * mu + s * s)
    if f is Family.EXPONENTIAL:
        return p[0] ** -2
    if f is Family.POISSON:
        return p[0]
    if f is Family.UNIFORM:
        return (p[1] - p[0]) ** 2 / 12.0
    if f is Family.TRIANGULAR:
        a, c, b = p
        return (a * a + b * b + c * c - a * b - a * c - b * c) / 18.0
    if f is Family.TRUNCNORMAL:
        return _truncnorm_moments(*p)[1]
    a, b, tau = p
    return (b - a) ** 2 * _dlog_expm1_ratio(tau * (b - a))[1]


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def quantile(dist: DistributionSpec, u):
    """Inverse CDF for the continuous families (vectorized over ``u``)."""
    u = np.asarray(u, dtype=float)
    f, p = dist.family, dist.params
    if f is Family.NORMAL:
        return p[0] + p[1] * special.ndtri(u)
    if f is Family.LOGNORMAL:
        return np.exp(p[0] + p[1] * special.ndtri(u))
    if f is Family.EXPONENTIAL:
        return -np.log1p(-u) / p[0]
    if f is Family.UNIFORM:
        return p[0] + u * (p[1] - p[0])
    if f is Family.TRIANGULAR:
        a, c, b = p
        fc = (c - a) / (b - a)
        left = a + np.sqrt(u * (b - a) * (c - a))
        right = b - np.sqrt((1.0 - u) * (b - a) * (b - c))
        return np.where(u < fc, left, right)
    if f is Family.TRUNCNORMAL:
        mu, s, a, b = p
        alpha, beta = (a - mu) / s, (b - mu) / s
        if alpha >= 0.0:
            # upper tail: invert the survival function for accuracy
            sa, sb = special.ndtr(-alpha), special.ndtr(-beta)
            z = -special.ndtri(sa - u * (sa - sb))
        else:
            fa, fb = special.ndtr(alpha), special.ndtr(beta)
            z = special.ndtri(fa + u * (fb - fa))
        return np.clip(mu + s * z, a, b)
    if f is Family.TILTED_UNIFORM:
        a, b, tau = p
        if tau == 0.0:
            return a + u * (b - a)
        z = tau * (b - a)
        if tau > 0.0:
            x = b + np.log(u + (1.0 - u) * math.exp(-z)) / tau
        else:
            x = a + np.log1p(u * math.expm1(z)) / tau
        return np.clip(x, a, b)
    raise ParameterError(f"{f.value} has no continuous quantile function")


def sample(dist: DistributionSpec, rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw ``n`` i.i.d. values.

    Normal uses numpy's ziggurat sampler and Poisson numpy's sampler
    (inversion for small rates, PTRS rejection for large ones); every other
    family is sampled by inverse CDF from one uniform per draw.
    """
    if n < 1:
        raise ParameterError(f"sample size must be >= 1, got {n}")
    f, p = dist.family, dist.params
    if f is Family.NORMAL:
        return p[0] + p[1] * rng.standard_normal(n)
    if f is Family.LOGNORMAL:
        return np.exp(p[0] + p[1] * rng.standard_normal(n))
    if f is Family.POISSON:
        return rng.poisson(p[0], n).astype(float)
    return quantile(dist, rng.random(n))


# ---------------------------------------------------------------------------
# Sufficient statistics and the tilted cumulant function
# ---------------------------------------------------------------------------

TILTABLE = EXPONENTIAL_FAMILIES | {Family.UNIFORM, Family.TRUNCNORMAL}
_TWO_COMPONENT = frozenset({Family.NORMAL, Family.LOGNORMAL})


def _check_tiltable(dist: DistributionSpec, comp: Component) -> None:
    if dist.family not in TILTABLE:
        raise DomainError(f"{dist.family.value} has no exponential tilt")
    if comp is Component.SECOND and dist.family not in _TWO_COMPONENT:
        raise DomainError(
            f"{dist.family.value} has a scalar sufficient statistic; "
            "the second component exists only for normal and lognormal"
        )


def sufficient_statistic(dist: DistributionSpec, x, comp: Component = Component.FIRST):
    """T-component value: x or x**2 (log x, (log x)**2 for lognormal)."""
    _check_tiltable(dist, comp)
    x = np.asarray(x, dtype=float)
    t = np.log(x) if dist.family is Family.LOGNORMAL else x
    out = t if comp is Component.FIRST else t * t
    return float(out) if out.ndim == 0 else out


def tilt_domain(dist: DistributionSpec, comp: Component) -> tuple[float, float]:
    """Open interval of tau values for which psi(tau) is finite."""
    _check_tiltable(dist, comp)
    if comp is Component.SECOND:
        return (-math.inf, 0.5 / dist.params[1] ** 2)
    if dist.family is Family.EXPONENTIAL:
        return (-math.inf, dist.params[0])
    return (-math.inf, math.inf)


def _check_tau(dist: DistributionSpec, tau: float, comp: Component) -> None:
    lo, hi = tilt_domain(dist, comp)
    if not math.isfinite(tau):
        raise DomainError(f"tau must be finite, got {tau}")
    if not tau < hi:
        if comp is Component.SECOND:
            raise DomainError(
                f"tau={tau} violates 1 - 2*tau*sigma^2 > 0 (tau < {hi}) for {dist}"
            )
        raise DomainError(f"tau={tau} violates tau < rate={hi} for {dist}")


def cumulant_psi(dist: DistributionSpec, tau: float, comp: Component = Component.FIRST) -> float:
    """psi(tau) = log E[exp(tau*T(X))]."""
    _check_tau(dist, tau, comp)
    f, p = dist.family, dist.params
    if f in _TWO_COMPONENT:
        mu, s = p
        if comp is Component.FIRST:
            return mu * tau + 0.5 * tau * tau * s * s
        u = 1.0 - 2.0 * tau * s * s
        return mu * mu * tau / u - 0.5 * math.log(u)
    if f is Family.EXPONENTIAL:
        return -math.log1p(-tau / p[0])
    if f is Family.POISSON:
        return p[0] * math.expm1(tau)
    if f is Family.UNIFORM:
        a, b = p
        if abs(tau) < UNIFORM_SERIES_TAU:
            return tau * (a + b) / 2.0 + tau * tau * (b - a) ** 2 / 24.0
        return tau * a + _log_expm1_ratio(tau * (b - a))
    return _truncnorm_psi(*p, tau)


def psi_derivatives(
    dist: DistributionSpec, tau: float, comp: Component = Component.FIRST
) -> tuple[float, float]:
    """(psi'(tau), psi''(tau)): mean and variance of T under the tilted law."""
    _check_tau(dist, tau, comp)
    f, p = dist.family, dist.params
    if f in _TWO_COMPONENT:
        mu, s = p
        s2 = s * s
        if comp is Component.FIRST:
            return mu + tau * s2, s2
        u = 1.0 - 2.0 * tau * s2
        return mu * mu / u**2 + s2 / u, 4.0 * mu * mu * s2 / u**3 + 2.0 * s2 * s2 / u**2
    if f is Family.EXPONENTIAL:
        r = 1.0 / (p[0] - tau)
        return r, r * r
    if f is Family.POISSON:
        m = p[0] * math.exp(tau)
        return m, m
    if f is Family.UNIFORM:
        a, b = p
        w = b - a
        d1, d2 = _dlog_expm1_ratio(tau * w)
        return a + w * d1, w * w * d2
    mu, s, a, b = p
    return _truncnorm_moments(mu + tau * s * s, s, a, b)
