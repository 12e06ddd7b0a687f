import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from relsens import distributions as D
from relsens import tilt as T
from relsens.distributions import Component, Family
from relsens.errors import DomainError, NoSolutionError, ParameterError
from relsens.tilt import MODES, Branch, delta_max, kl_divergence, solve_tau

NEG, POS = Branch.NEG, Branch.POS

TILT_CASES = [
    (D.normal(0, 1), "tilt.mean"),
    (D.normal(2, 0.5), "tilt.mean"),
    (D.normal(1, 2), "tilt.variance"),
    (D.normal(0, 1), "tilt.variance"),
    (D.lognormal(0, 0.5), "tilt.mean"),
    (D.lognormal(0.3, 0.4), "tilt.variance"),
    (D.exponential(0.5), "tilt.rate"),
    (D.exponential(2.0), "tilt.rate"),
    (D.poisson(2.0), "tilt.rate"),
    (D.poisson(5.0), "tilt.rate"),
    (D.uniform(-1, 1), "tilt.exp"),
    (D.uniform(0, 5), "tilt.exp"),
    (D.truncnormal(0, 1, -1, 1), "tilt.mean"),
    (D.truncnormal(1, 2, -3, 0), "tilt.mean"),
]


def _residual(sol):
    return T.kl_residual(sol.original, sol.tau, sol.delta, sol.mode.component)


def test_normal_mean_example():
    sol = solve_tau(D.normal(0, 1), MODES["tilt.mean"], 0.5, POS)
    assert sol.tau == pytest.approx(1.0, abs=1e-15)
    assert sol.perturbed == D.normal(1, 1)
    assert sol.method == "closed_form"


def test_continuity_at_small_delta():
    for dist, mode in TILT_CASES:
        for b in (NEG, POS):
            sol = solve_tau(dist, MODES[mode], 1e-8, b)
            assert abs(sol.tau) < 1e-3


def _bisect(G, a, b, iters=200):
    ga = G(a)
    for _ in range(iters):
        m = 0.5 * (a + b)
        gm = G(m)
        if (gm > 0) == (ga > 0):
            a, ga = m, gm
        else:
            b = m
    return 0.5 * (a + b)


@pytest.mark.parametrize("branch", [NEG, POS])
def test_poisson_lambert_against_bisection(branch):
    lam, delta = 2.0, 0.3
    psi = lambda t: lam * math.expm1(t)
    dpsi = lambda t: lam * math.exp(t)
    G = lambda t: t * dpsi(t) - psi(t) - delta
    ref = _bisect(G, -20.0, 0.0) if branch is NEG else _bisect(G, 0.0, 20.0)
    sol = solve_tau(D.poisson(lam), MODES["tilt.rate"], delta, branch)
    assert sol.method == "lambert"
    assert abs(G(sol.tau)) < 1e-10
    assert sol.tau == pytest.approx(ref, abs=1e-12)


def test_uniform_boundary_upper_example():
    sol = solve_tau(D.uniform(-1, 1), MODES["boundary.upper"], 0.5, NEG)
    assert sol.perturbed == D.uniform(-1, 0.5)
    assert sol.tau == -0.5


def test_uniform_boundary_lower():
    sol = solve_tau(D.uniform(-1, 1), MODES["boundary.lower"], 0.5, POS)
    assert sol.perturbed == D.uniform(-0.5, 1)


@pytest.mark.parametrize("mode, branch", [("boundary.upper", POS), ("boundary.lower", NEG)])
def test_boundary_outward_branch_has_no_solution(mode, branch):
    with pytest.raises(NoSolutionError):
        solve_tau(D.uniform(-1, 1), MODES[mode], 0.5, branch)


def test_boundary_shift_must_stay_inside_support():
    with pytest.raises(NoSolutionError):
        solve_tau(D.uniform(-1, 1), MODES["boundary.upper"], 2.0, NEG)


def test_boundary_triangular_clamps_mode():
    sol = solve_tau(D.triangular(0, 0.9, 1), MODES["boundary.upper"], 0.3, NEG)
    assert sol.perturbed == D.triangular(0, 0.7, 0.7)
    sol = solve_tau(D.triangular(0, 0.5, 1), MODES["boundary.lower"], 0.2, POS)
    assert sol.perturbed == D.triangular(0.2, 0.5, 1)


def test_boundary_truncnormal():
    sol = solve_tau(D.truncnormal(0, 1, -1, 1), MODES["boundary.upper"], 0.3, NEG)
    assert sol.perturbed == D.truncnormal(0, 1, -1, 0.7)


@pytest.mark.parametrize("dist, mode", TILT_CASES, ids=str)
@pytest.mark.parametrize("delta", [0.01, 0.1, 0.5, 1.0, 3.0])
@pytest.mark.parametrize("branch", [NEG, POS])
def test_root_residual_and_branch_sign(dist, mode, delta, branch):
    try:
        sol = solve_tau(dist, MODES[mode], delta, branch)
    except NoSolutionError:
        # only the Poisson negative branch runs out of room (delta >= rate)
        assert dist.family is Family.POISSON and branch is NEG and delta >= dist.rate
        return
    assert abs(_residual(sol)) < 1e-10
    assert sol.branch is branch
    assert (sol.tau < 0) == (branch is NEG)
    assert set(sol.flags) <= {"weight_variance_infinite"}


@pytest.mark.parametrize("dist, mode", TILT_CASES, ids=str)
@pytest.mark.parametrize("branch", [NEG, POS])
@pytest.mark.parametrize("delta", [0.1, 0.5])
def test_kl_of_solution_equals_budget(dist, mode, branch, delta):
    sol = solve_tau(dist, MODES[mode], delta, branch)
    assert kl_divergence(sol.perturbed, dist) == pytest.approx(delta, abs=1e-6)


@pytest.mark.parametrize(
    "dist, mode",
    [c for c in TILT_CASES if c[0].family in (Family.NORMAL, Family.LOGNORMAL, Family.EXPONENTIAL, Family.POISSON)],
    ids=str,
)
def test_family_closure(dist, mode):
    for b in (NEG, POS):
        assert solve_tau(dist, MODES[mode], 0.3, b).perturbed.family is dist.family


def test_uniform_tilt_yields_tilted_uniform():
    sol = solve_tau(D.uniform(0, 2), MODES["tilt.exp"], 0.2, POS)
    assert sol.perturbed.family is Family.TILTED_UNIFORM
    assert sol.perturbed.params[:2] == (0.0, 2.0)


@pytest.mark.parametrize("dist, mode", TILT_CASES, ids=str)
@pytest.mark.parametrize("branch", [NEG, POS])
def test_tau_monotone_in_delta(dist, mode, branch):
    deltas = [0.01, 0.05, 0.1, 0.3, 0.6, 0.9, 1.5]
    if dist.family is Family.POISSON and branch is NEG:
        deltas = [d for d in deltas if d < dist.rate]
    taus = [abs(solve_tau(dist, MODES[mode], d, branch).tau) for d in deltas]
    assert all(a < b for a, b in zip(taus, taus[1:]))


@pytest.mark.parametrize("sigma", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("delta", [0.01, 0.1, 0.5, 1.0])
@pytest.mark.parametrize("branch", [NEG, POS])
def test_normal_closed_form_matches_root_finder(sigma, delta, branch):
    closed = solve_tau(D.normal(1.0, sigma), MODES["tilt.mean"], delta, branch).tau
    assert closed == pytest.approx(T.solve_root(D.normal(1.0, sigma), delta, branch), abs=1e-10)


@pytest.mark.parametrize("dist", [D.exponential(r) for r in (0.5, 1, 2)] + [D.poisson(r) for r in (1, 2, 5)], ids=str)
@pytest.mark.parametrize("delta", [0.01, 0.1, 0.5, 0.99, 1.0, 2.0, 5.0, 20.0])
@pytest.mark.parametrize("branch", [NEG, POS])
def test_lambert_matches_root_finder(dist, delta, branch):
    try:
        ref = T.solve_root(dist, delta, branch)
    except NoSolutionError:
        with pytest.raises(NoSolutionError):
            T._lambert_tau(dist, delta, branch)
        return
    assert T._lambert_tau(dist, delta, branch) == pytest.approx(ref, rel=1e-9, abs=1e-9)


@pytest.mark.parametrize("delta", [1.0, 1.5, 10.0])
def test_poisson_negative_branch_needs_delta_below_rate(delta):
    with pytest.raises(NoSolutionError, match="delta < rate"):
        solve_tau(D.poisson(1.0), MODES["tilt.rate"], delta, NEG)
    # the positive branch always exists
    sol = solve_tau(D.poisson(1.0), MODES["tilt.rate"], delta, POS)
    assert abs(_residual(sol)) < 1e-10


def test_lambert_mismatch_falls_back_to_root_finder(monkeypatch):
    monkeypatch.setattr(T, "_lambert_tau", lambda dist, delta, branch: 0.123)
    sol = solve_tau(D.exponential(1.0), MODES["tilt.rate"], 0.5, POS)
    assert "lambert_mismatch" in sol.flags
    assert sol.method == "brent"
    assert abs(_residual(sol)) < 1e-10


def test_second_component_has_both_roots():
    dist = D.normal(0.5, 1.2)
    taus = [solve_tau(dist, MODES["tilt.variance"], 0.4, b).tau for b in (NEG, POS)]
    lo, hi = D.tilt_domain(dist, Component.SECOND)
    assert taus[0] < 0 < taus[1] < hi


def test_variance_tilt_scales_spread():
    dist = D.normal(0, 1)
    wide = solve_tau(dist, MODES["tilt.variance"], 0.2, POS).perturbed
    narrow = solve_tau(dist, MODES["tilt.variance"], 0.2, NEG).perturbed
    assert wide.sigma > 1 > narrow.sigma


@pytest.mark.parametrize(
    "dist, mode",
    [(D.exponential(1), "tilt.variance"), (D.exponential(1), "tilt.mean"), (D.normal(0, 1), "tilt.rate"),
     (D.triangular(0, 1, 2), "tilt.mean"), (D.normal(0, 1), "boundary.upper"), (D.uniform(0, 1), "tilt.mean")],
)
def test_mode_family_rules(dist, mode):
    assert T.mode_problem(dist, MODES[mode])
    with pytest.raises(ParameterError):
        solve_tau(dist, MODES[mode], 0.1, POS)


@pytest.mark.parametrize("delta", [0.0, -0.1, math.nan, math.inf])
def test_delta_must_be_positive(delta):
    with pytest.raises(ParameterError):
        solve_tau(D.normal(0, 1), MODES["tilt.mean"], delta, POS)


def test_parse_mode():
    assert T.parse_mode(" Tilt.Mean ") is MODES["tilt.mean"]
    with pytest.raises(ParameterError):
        T.parse_mode("tilt.skew")


@settings(max_examples=150, deadline=None)
@given(
    st.sampled_from(TILT_CASES),
    st.floats(1e-6, 5.0),
    st.sampled_from([NEG, POS]),
)
def test_residual_property(case, delta, branch):
    dist, mode = case
    try:
        sol = solve_tau(dist, MODES[mode], delta, branch)
    except NoSolutionError:
        assert dist.family is Family.POISSON and branch is NEG
        return
    assert abs(_residual(sol)) < 1e-10


# --- KL divergence -----------------------------------------------------------------


def test_kl_examples():
    assert kl_divergence(D.normal(0, 1), D.normal(0, 1)) == 0.0
    assert kl_divergence(D.normal(1, 1), D.normal(0, 1)) == pytest.approx(0.5, abs=1e-10)


def test_kl_gaussian_closed_form():
    p, q = D.normal(0.3, 1.7), D.normal(-1, 0.9)
    exact = math.log(0.9 / 1.7) + (1.7**2 + 1.3**2) / (2 * 0.81) - 0.5
    assert kl_divergence(p, q) == pytest.approx(exact, abs=1e-9)


def test_kl_boundary_shift_is_log_width_ratio():
    assert kl_divergence(D.uniform(-1, 0.5), D.uniform(-1, 1)) == pytest.approx(math.log(2 / 1.5), abs=1e-12)


def test_kl_rejects_bad_pairs():
    with pytest.raises(DomainError):
        kl_divergence(D.normal(0, 1), D.exponential(1))
    with pytest.raises(DomainError):
        kl_divergence(D.uniform(-1, 2), D.uniform(-1, 1))


# --- delta_max -------------------------------------------------------------------------


def test_delta_max_identical():
    assert delta_max(D.uniform(0, 1), D.uniform(0, 1)) == 0.0


def test_delta_max_constant_ratio_on_support():
    assert delta_max(D.uniform(0, 1), D.uniform(0, 2)) == pytest.approx(0.0, abs=1e-15)


def test_delta_max_tilted_uniform():
    t = 1.0
    r = 2 * t * math.exp(-t) / (math.exp(t) - math.exp(-t))
    big = 2 * t * math.exp(t) / (math.exp(t) - math.exp(-t))
    expected = (big - r) ** 2 / (4 * r * big)
    assert delta_max(D.tilted_uniform(-1, 1, t), D.uniform(-1, 1)) == pytest.approx(expected, rel=1e-12)
    # grid extremization on the general path agrees
    assert T.delta_max(D.tilted_uniform(-1, 1, t), D.uniform(-1, 1), grid=101) == pytest.approx(expected, rel=1e-12)


def test_delta_max_bounds_kl():
    p, q = D.tilted_uniform(-1, 1, 1.3), D.uniform(-1, 1)
    assert kl_divergence(p, q) <= delta_max(p, q)
    p, q = D.truncnormal(0.4, 1, -1, 1), D.truncnormal(0, 1, -1, 1)
    assert kl_divergence(p, q) <= delta_max(p, q)


def test_delta_max_unbounded_support_is_infinite():
    assert delta_max(D.normal(1, 1), D.normal(0, 1)) == math.inf
    assert delta_max(D.poisson(2), D.poisson(1)) == math.inf


def test_delta_max_vanishing_density_is_infinite():
    assert delta_max(D.triangular(0, 0.5, 1), D.uniform(0, 1)) == math.inf
