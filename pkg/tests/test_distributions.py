import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from relsens import distributions as D
from relsens.distributions import Component, Family
from relsens.errors import DomainError, ParameterError

FIRST, SECOND = Component.FIRST, Component.SECOND

ALL_DISTS = [
    D.normal(0, 1),
    D.normal(3, 2),
    D.lognormal(0.2, 0.5),
    D.exponential(2.0),
    D.poisson(3.0),
    D.poisson(40.0),
    D.uniform(-1, 1),
    D.triangular(0, 0.3, 2),
    D.truncnormal(0, 1, -1, 1),
    D.truncnormal(2, 0.5, -1, 1.5),
    D.tilted_uniform(-1, 1, 1.5),
    D.tilted_uniform(0, 2, -3.0),
]

# (dist, tau, component) points inside the tilt domain
PSI_CASES = [
    (D.normal(0, 1), 0.7, FIRST),
    (D.normal(3, 2), -0.4, FIRST),
    (D.normal(1, 2), 0.1, SECOND),
    (D.normal(1, 2), -0.8, SECOND),
    (D.normal(-2, 0.5), 1.5, SECOND),
    (D.lognormal(0.2, 0.5), 0.9, FIRST),
    (D.lognormal(0.2, 0.5), 1.2, SECOND),
    (D.lognormal(0.2, 0.5), -2.0, SECOND),
    (D.exponential(2.0), 1.5, FIRST),
    (D.exponential(2.0), -3.0, FIRST),
    (D.poisson(3.0), 0.8, FIRST),
    (D.poisson(3.0), -1.3, FIRST),
    (D.uniform(-1, 1), 2.5, FIRST),
    (D.uniform(0, 3), -0.6, FIRST),
    (D.uniform(0, 1), 1e-7, FIRST),
    (D.truncnormal(0, 1, -1, 1), 2.0, FIRST),
    (D.truncnormal(0.5, 2, -1, 3), -1.1, FIRST),
]

TILT_FAMILIES_AT_ZERO = [
    (D.normal(3, 2), FIRST),
    (D.lognormal(0.2, 0.5), FIRST),
    (D.exponential(2.0), FIRST),
    (D.poisson(3.0), FIRST),
    (D.uniform(-1, 3), FIRST),
    (D.truncnormal(0.5, 2, -1, 3), FIRST),
]


def _integrate(func, dist):
    lo, hi = dist.support
    if dist.family is Family.LOGNORMAL:
        mu, s = dist.params
        # integrate over y = log x
        val, _ = integrate.quad(lambda y: func(math.exp(y)) * math.exp(y), mu - 40 * s, mu + 40 * s,
                                epsabs=1e-13, epsrel=1e-12, limit=200)
        return val
    if math.isfinite(lo) and math.isinf(hi):
        val, _ = integrate.quad(func, lo, math.inf, epsabs=1e-13, epsrel=1e-12, limit=200)
        return val
    if math.isinf(lo) or math.isinf(hi):
        m, sd = D.mean(dist), math.sqrt(D.variance(dist))
        lo = max(lo, m - 40 * sd)
        hi = min(hi, m + 60 * sd)
    pts = [p for p in (D.mean(dist),) if lo < p < hi]
    val, _ = integrate.quad(func, lo, hi, points=pts or None, epsabs=1e-13, epsrel=1e-12, limit=200)
    return val


# --- log_density ---------------------------------------------------------------


def test_log_density_examples():
    assert D.log_density(D.normal(0, 1), 0.0) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-15)
    assert D.log_density(D.uniform(-1, 1), 0.0) == pytest.approx(math.log(0.5), abs=1e-15)
    assert D.log_density(D.exponential(2.0), 1.0) == pytest.approx(math.log(2) - 2, abs=1e-15)


def test_log_density_off_support_is_minus_inf():
    assert D.log_density(D.uniform(-1, 1), 1.5) == -math.inf
    assert D.log_density(D.exponential(1.0), -0.1) == -math.inf
    assert D.log_density(D.poisson(2.0), 1.5) == -math.inf
    assert D.log_density(D.truncnormal(0, 1, -1, 1), -1.01) == -math.inf


def test_log_density_is_vectorized():
    x = np.array([-2.0, 0.0, 0.5, 3.0])
    out = D.log_density(D.uniform(-1, 1), x)
    assert out.shape == x.shape
    assert np.array_equal(np.isfinite(out), [False, True, True, False])


@pytest.mark.parametrize("dist", ALL_DISTS, ids=str)
def test_density_normalizes(dist):
    if dist.is_discrete:
        lam = dist.params[0]
        k = np.arange(0, math.ceil(lam + 20 * math.sqrt(lam)) + 1)
        total = math.fsum(np.exp(D.log_density(dist, k)))
    else:
        total = _integrate(lambda x: math.exp(D.log_density(dist, x)), dist)
    assert total == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("dist", [d for d in ALL_DISTS if not d.is_discrete], ids=str)
def test_mean_and_variance_match_quadrature(dist):
    m = _integrate(lambda x: x * math.exp(D.log_density(dist, x)), dist)
    v = _integrate(lambda x: (x - m) ** 2 * math.exp(D.log_density(dist, x)), dist)
    assert D.mean(dist) == pytest.approx(m, rel=1e-8, abs=1e-10)
    assert D.variance(dist) == pytest.approx(v, rel=1e-7)


# --- construction and literals ---------------------------------------------------


@pytest.mark.parametrize(
    "text, expected",
    [
        ("normal(0,1)", D.normal(0, 1)),
        (" LogNormal( 0.5 , 0.25 ) ", D.lognormal(0.5, 0.25)),
        ("exponential(2)", D.exponential(2)),
        ("poisson(3.5)", D.poisson(3.5)),
        ("uniform(-1,1)", D.uniform(-1, 1)),
        ("triangular(0,1,4)", D.triangular(0, 1, 4)),
        ("truncnormal(0,1,-1,1)", D.truncnormal(0, 1, -1, 1)),
        ("tiltuniform(-1,1,0.5)", D.tilted_uniform(-1, 1, 0.5)),
    ],
)
def test_parse_distribution(text, expected):
    dist = D.parse_distribution(text)
    assert dist == expected
    assert D.parse_distribution(str(dist)) == dist


@pytest.mark.parametrize(
    "text",
    ["normal(0)", "normal(0,-1)", "uniform(1,1)", "exponential(0)", "triangular(0,5,4)",
     "truncnormal(0,1,2,1)", "cauchy(0,1)", "normal(a,1)", "normal 0 1", "normal(nan,1)"],
)
def test_parse_distribution_rejects(text):
    with pytest.raises(ParameterError):
        D.parse_distribution(text)


def test_named_parameters():
    d = D.truncnormal(0.5, 2, -1, 3)
    assert (d.mu, d.sigma, d.a, d.b) == (0.5, 2.0, -1.0, 3.0)
    assert D.exponential(2).rate == 2.0
    with pytest.raises(AttributeError):
        D.normal(0, 1).rate


# --- sampling --------------------------------------------------------------------


def test_sample_uniform_mean():
    x = D.sample(D.uniform(0, 1), np.random.default_rng(1), 100_000)
    assert abs(x.mean() - 0.5) < 0.01


def test_sample_truncnormal_support():
    x = D.sample(D.truncnormal(0, 1, -1, 1), np.random.default_rng(2), 100_000)
    assert x.min() >= -1 and x.max() <= 1


def test_sample_poisson_mean():
    x = D.sample(D.poisson(3.0), np.random.default_rng(3), 100_000)
    assert abs(x.mean() - 3.0) < 0.02


@pytest.mark.parametrize("dist", ALL_DISTS, ids=str)
def test_sample_moments(dist):
    n = 200_000
    x = D.sample(dist, np.random.default_rng(4), n)
    sd = math.sqrt(D.variance(dist))
    assert abs(x.mean() - D.mean(dist)) < 4 * sd / math.sqrt(n)
    lo, hi = dist.support
    assert x.min() >= lo and x.max() <= hi


def test_sample_rejects_empty():
    with pytest.raises(ParameterError):
        D.sample(D.normal(0, 1), np.random.default_rng(0), 0)


@pytest.mark.parametrize("dist", [d for d in ALL_DISTS if not d.is_discrete], ids=str)
def test_quantile_inverts_cdf(dist):
    u = np.array([1e-6, 0.01, 0.3, 0.5, 0.77, 0.999])
    x = D.quantile(dist, u)
    lo = dist.support[0]
    dens = lambda t: math.exp(D.log_density(dist, t))
    if dist.family is Family.LOGNORMAL:
        lo, dens = -math.inf, lambda y: math.exp(D.log_density(dist, math.exp(y)) + y)
        x = np.log(x)
    cdf = [integrate.quad(dens, lo, xi, epsabs=1e-14, epsrel=1e-12, limit=200)[0] for xi in x]
    assert np.allclose(cdf, u, rtol=1e-8, atol=1e-10)


# --- sufficient statistic and cumulant function ---------------------------------


def test_sufficient_statistic_examples():
    assert D.sufficient_statistic(D.normal(0, 1), 2.0, SECOND) == 4.0
    assert D.sufficient_statistic(D.lognormal(0, 1), math.e, FIRST) == pytest.approx(1.0, abs=1e-15)
    assert D.sufficient_statistic(D.exponential(1), 0.7, FIRST) == 0.7


def test_sufficient_statistic_rejects_untiltable():
    with pytest.raises(DomainError):
        D.sufficient_statistic(D.triangular(0, 1, 2), 0.5)
    with pytest.raises(DomainError):
        D.sufficient_statistic(D.exponential(1), 0.5, SECOND)


def test_psi_examples():
    assert D.cumulant_psi(D.normal(3, 2), 1.0) == pytest.approx(5.0, abs=1e-15)
    assert D.cumulant_psi(D.uniform(-1, 1), 1.0) == pytest.approx(
        math.log((math.e - 1 / math.e) / 2), abs=1e-14
    )
    assert D.cumulant_psi(D.uniform(-1, 1), 1.0) == pytest.approx(0.1614, abs=1e-4)


@pytest.mark.parametrize("dist, comp", TILT_FAMILIES_AT_ZERO + [(D.normal(1, 2), SECOND)], ids=str)
def test_psi_zero_at_zero(dist, comp):
    assert D.cumulant_psi(dist, 0.0, comp) == 0.0


@pytest.mark.parametrize("dist, comp", TILT_FAMILIES_AT_ZERO, ids=str)
def test_psi_derivatives_at_zero_are_moments(dist, comp):
    d1, d2 = D.psi_derivatives(dist, 0.0, comp)
    t_mean = D.mean(dist) if dist.family is not Family.LOGNORMAL else dist.mu
    t_var = D.variance(dist) if dist.family is not Family.LOGNORMAL else dist.sigma**2
    assert d1 == pytest.approx(t_mean, abs=1e-10)
    assert d2 == pytest.approx(t_var, abs=1e-10)


def test_psi_derivative_examples():
    assert D.psi_derivatives(D.normal(2, 3), 0.0) == (2.0, 9.0)
    assert D.psi_derivatives(D.exponential(1), 0.0) == (1.0, 1.0)
    u = D.uniform(0, 1)
    h = 1e-5
    fd = (D.cumulant_psi(u, 0.5 + h) - D.cumulant_psi(u, 0.5 - h)) / (2 * h)
    assert abs(D.psi_derivatives(u, 0.5)[0] - fd) < 1e-6


def test_second_component_at_zero():
    # T = x^2: E[X^2] = mu^2 + s^2 and Var[X^2] = 4 mu^2 s^2 + 2 s^4
    mu, s = 1.0, 2.0
    d1, d2 = D.psi_derivatives(D.normal(mu, s), 0.0, SECOND)
    assert d1 == pytest.approx(mu**2 + s**2)
    assert d2 == pytest.approx(4 * mu**2 * s**2 + 2 * s**4)


def _psi_by_quadrature(dist, tau, comp):
    if dist.is_discrete:
        lam = dist.params[0]
        k = np.arange(0, math.ceil(lam * math.exp(tau) + 40 * math.sqrt(lam * math.exp(tau)) + 60))
        return math.log(math.fsum(np.exp(tau * k + D.log_density(dist, k))))
    val = _integrate(
        lambda x: math.exp(tau * D.sufficient_statistic(dist, x, comp) + D.log_density(dist, x)), dist
    )
    return math.log(val)


@pytest.mark.parametrize("dist, tau, comp", PSI_CASES, ids=str)
def test_psi_matches_quadrature(dist, tau, comp):
    assert D.cumulant_psi(dist, tau, comp) == pytest.approx(_psi_by_quadrature(dist, tau, comp), abs=1e-7)


@pytest.mark.parametrize("dist, tau, comp", PSI_CASES, ids=str)
def test_psi_derivatives_match_finite_differences(dist, tau, comp):
    h = 1e-5
    psi = lambda t: D.cumulant_psi(dist, t, comp)
    fd1 = (psi(tau + h) - psi(tau - h)) / (2 * h)
    fd2 = (psi(tau + h) - 2 * psi(tau) + psi(tau - h)) / h**2
    d1, d2 = D.psi_derivatives(dist, tau, comp)
    assert d1 == pytest.approx(fd1, rel=1e-5, abs=1e-8)
    # the second difference loses about half the digits; compare on the first derivative instead
    fd2 = (D.psi_derivatives(dist, tau + h, comp)[0] - D.psi_derivatives(dist, tau - h, comp)[0]) / (2 * h)
    assert d2 == pytest.approx(fd2, rel=1e-5, abs=1e-8)


def test_second_component_psi_sign():
    # psi(tau) = mu^2 tau / u - log(u)/2 with u = 1 - 2 tau s^2, checked against quadrature;
    # the opposite sign on the log term does not normalize the tilted density
    dist, tau = D.normal(1.0, 0.8), 0.3
    u = 1 - 2 * tau * 0.64
    assert D.cumulant_psi(dist, tau, SECOND) == pytest.approx(tau / u - 0.5 * math.log(u), abs=1e-15)
    assert D.cumulant_psi(dist, tau, SECOND) == pytest.approx(_psi_by_quadrature(dist, tau, SECOND), abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(
    st.sampled_from(TILT_FAMILIES_AT_ZERO + [(D.normal(1, 2), SECOND), (D.lognormal(0.2, 0.5), SECOND)]),
    st.floats(-0.999, 0.999),
)
def test_psi_is_convex(case, frac):
    dist, comp = case
    lo, hi = D.tilt_domain(dist, comp)
    tau = frac * (hi if frac > 0 and math.isfinite(hi) else 8.0)
    assert D.psi_derivatives(dist, tau, comp)[1] > 0


@settings(max_examples=200, deadline=None)
@given(st.floats(-1e-5, 1e-5), st.floats(-3, 3), st.floats(0.1, 5))
def test_uniform_psi_continuous_across_series_switch(tau, a, w):
    # the Taylor branch and the closed form must agree where they meet
    dist = D.uniform(a, a + w)
    psi = D.cumulant_psi(dist, tau)
    z = mpmath.mpf(tau) * mpmath.mpf(w)
    exact = float(tau * a + mpmath.log(mpmath.expm1(z) / z)) if z != 0 else 0.0
    assert psi == pytest.approx(exact, abs=1e-14 * max(1, abs(a)) + 1e-15)


def test_tau_outside_domain_raises():
    with pytest.raises(DomainError):
        D.cumulant_psi(D.exponential(2.0), 2.0)
    with pytest.raises(DomainError):
        D.cumulant_psi(D.normal(0, 1), 0.5, SECOND)
    with pytest.raises(DomainError):
        D.cumulant_psi(D.triangular(0, 1, 2), 0.1)
    with pytest.raises(DomainError):
        D.psi_derivatives(D.poisson(1), 0.1, SECOND)
