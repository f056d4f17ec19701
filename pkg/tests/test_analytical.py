import math
from dataclasses import replace

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from irshcn import analytical as an
from irshcn import channel
from irshcn.exceptions import NumericFailure, PreconditionError
from irshcn.specialfn import LaplaceInverter
from irshcn.netmodel import (
    EvalConfig,
    IrsConfig,
    Scenario,
    TierConfig,
    dbm_to_watts,
    linearize,
    table1_scenario,
)

PI = math.pi
NO_IRS = IrsConfig(1.0, 1000, 0.0, 3.0, 50.0)


def classical(threshold_db=0.0, density=1e-5, power_dbm=30.0):
    ev = replace(EvalConfig(noise_dbm=-math.inf), sinr_threshold=10 ** (threshold_db / 10))
    return Scenario((TierConfig(power_dbm, 0.0, density, 4.0),), NO_IRS, ev)


def classical_coverage(g):
    return 1.0 / (1.0 + math.sqrt(g) * (PI / 2 - math.atan(1 / math.sqrt(g))))


def two_tier(t1, t2, irs=NO_IRS, **ev):
    return Scenario((t1, t2), irs, EvalConfig(**ev))


# --- association ------------------------------------------------------------

def test_single_tier_always_joined():
    assert an.association_probability(classical(), 0) == pytest.approx(1.0, abs=1e-9)


def test_identical_tiers_split_evenly():
    t = TierConfig(40.0, 15.0, 2e-5, 3.7)
    sc = two_tier(t, t)
    assert an.association_probability(sc, 0) == pytest.approx(0.5, abs=1e-9)
    assert an.association_probability(sc, 1) == pytest.approx(0.5, abs=1e-9)


def test_equal_exponent_ground_level_closed_form():
    t1 = TierConfig(46.0, 0.0, 1e-5, 4.0)
    t2 = TierConfig(30.0, 0.0, 8e-5, 4.0)
    p1, p2 = dbm_to_watts(46.0), dbm_to_watts(30.0)
    w1, w2 = 1e-5 * math.sqrt(p1), 8e-5 * math.sqrt(p2)
    sc = two_tier(t1, t2)
    assert an.association_probability(sc, 0) == pytest.approx(w1 / (w1 + w2), rel=1e-7)
    assert an.association_probability(sc, 1) == pytest.approx(w2 / (w1 + w2), rel=1e-7)


@pytest.mark.parametrize("bias_db", [0, 10, 30])
def test_reference_association_sums_to_one(bias_db):
    sc = table1_scenario(pico_bias=10 ** (bias_db / 10))
    total = sum(an.association_probability(sc, k) for k in range(2))
    assert total == pytest.approx(1.0, abs=1e-7)


def test_association_tier_range():
    with pytest.raises(PreconditionError):
        an.association_probability(table1_scenario(), 2)


# --- distance densities -----------------------------------------------------

def test_serving_pdf_rayleigh_for_single_ground_tier():
    lam = 1e-5
    x = np.linspace(0, 600, 61)
    np.testing.assert_allclose(an.serving_distance_pdf(classical(density=lam), 0, x),
                               2 * PI * lam * x * np.exp(-PI * lam * x ** 2), rtol=1e-9, atol=1e-300)


@pytest.mark.parametrize("k", [0, 1])
def test_serving_pdf_normalized(k):
    sc = table1_scenario()
    h = sc.tiers[k].height_m
    val, _ = integrate.quad(lambda x: an.serving_distance_pdf(sc, k, x), h, np.inf, limit=400)
    assert val == pytest.approx(1.0, abs=1e-6)
    assert an.serving_distance_pdf(sc, k, h - 1.0) == 0.0


def test_irs_distance_pdf():
    irs = table1_scenario().irs
    assert an.irs_distance_pdf(irs, 0.0) == 0.0
    total, _ = integrate.quad(lambda d: an.irs_distance_pdf(irs, d), 0, np.inf)
    assert total == pytest.approx(1.0, abs=1e-9)
    median = math.sqrt(math.log(2) / (PI * irs.density_per_m2))
    half, _ = integrate.quad(lambda d: an.irs_distance_pdf(irs, d), 0, median)
    assert half == pytest.approx(0.5, abs=1e-12)
    # the rounded figure quoted with this example is 14.86; the expression gives 14.854
    assert median == pytest.approx(14.86, abs=1e-2)


# --- signal Gamma -----------------------------------------------------------

def test_signal_without_irs_is_exponential():
    sc = classical(power_dbm=30.0)
    beta = linearize(sc).beta
    z = (beta / 0.25) ** 0.25
    g = an.signal_gamma(sc, 0, z)
    assert g.shape == 1.0
    assert g.scale == pytest.approx(0.25, rel=1e-12)


def test_gamma_from_moments():
    g = an.GammaParams.from_moments(2.0, 4.0)
    assert (g.shape, g.scale) == (pytest.approx(1.0), pytest.approx(2.0))
    with pytest.raises(NumericFailure):
        an.GammaParams.from_moments(1.0, 0.0)


def test_signal_gamma_rejects_distance_below_height():
    with pytest.raises(PreconditionError):
        an.signal_gamma(table1_scenario(), 0, 5.0, 10.0)


def _serving_signal_samples(sc, k, z, d0, samples, rng, chunk=10_000):
    """|direct + aligned IRS + scattering|^2 with independently drawn fading."""
    lin = linearize(sc)
    t, irs = lin.tiers[k], lin.irs
    l_d = lin.beta * z ** -t.alpha
    l_r0 = float(channel.l_irs_to_ue(d0, irs.height_m, irs.pathloss_exponent, lin.beta))
    out = []
    for start in range(0, samples, chunk):
        m = min(chunk, samples - start)
        cascade = np.sqrt(rng.exponential(size=(m, irs.elements))
                          * rng.exponential(size=(m, irs.elements))).sum(axis=1)
        f1 = np.sqrt(l_d) * (np.sqrt(rng.exponential(size=m)) + np.sqrt(l_r0) * cascade)
        counts = rng.poisson(irs.density_per_m2 * PI * (irs.local_radius_m ** 2 - d0 ** 2), m)
        d = np.sqrt(rng.uniform(d0 ** 2, irs.local_radius_m ** 2, counts.sum()))
        lr = lin.beta * (d ** 2 + irs.height_m ** 2) ** (-irs.pathloss_exponent / 2)
        var = l_d * lr * rng.gamma(irs.elements, size=lr.size)
        owner = np.repeat(np.arange(m), counts)
        re = np.bincount(owner, np.sqrt(var / 2) * rng.standard_normal(lr.size), minlength=m)
        im = np.bincount(owner, np.sqrt(var / 2) * rng.standard_normal(lr.size), minlength=m)
        out.append(t.power_w * ((f1 + re) ** 2 + im ** 2))
    return np.concatenate(out)


def test_signal_gamma_matches_fading_distribution():
    sc = table1_scenario()
    s = _serving_signal_samples(sc, 1, 100.0, 10.0, 100_000, np.random.default_rng(21))
    g = an.signal_gamma(sc, 1, 100.0, 10.0)
    ks = stats.kstest(s, stats.gamma(g.shape, scale=g.scale).cdf).statistic
    assert ks <= 0.05
    assert s.mean() == pytest.approx(g.mean, rel=0.02)


# --- U function and derivatives ---------------------------------------------

def _u_quad(x, alpha, z_j, beta):
    # v = (z_j / z)^(alpha - 2) turns the tail into a smooth integral over (0, 1]
    with mp.workdps(30):
        c = mp.mpf(x) * beta * mp.mpf(z_j) ** -alpha
        p = mp.mpf(alpha) / (alpha - 2)
        knee = c ** (-1 / p)
        pts = [0, knee, 1] if knee < 1 else [0, 1]
        return float(z_j ** 2 * c / (alpha - 2) * mp.quad(lambda v: 1 / (1 + c * v ** p), pts))


def test_u_at_zero():
    assert an.u_function(0.0, 4.0, 1.0, 1.0) == 0.0


def test_u_arctan_case():
    assert an.u_function(1.0, 4.0, 1.0, 1.0) == pytest.approx(PI / 8, rel=1e-13)


@settings(max_examples=60, deadline=None)
@given(st.floats(-3, 12), st.floats(2.2, 6.0), st.floats(1.0, 3000.0))
def test_u_matches_quadrature(log_x, alpha, z_j):
    beta = 1.4248e-4
    x = 10.0 ** log_x * z_j ** alpha / beta * 1e-6
    ref = _u_quad(x, alpha, z_j, beta)
    assert an.u_function(x, alpha, z_j, beta) == pytest.approx(ref, rel=1e-8)


def test_u_increasing_in_x():
    x = np.logspace(-4, 8, 200)
    u = an.u_function(x, 3.5, 10.0, 1.0)
    assert np.all(np.diff(u) > 0)


@pytest.mark.parametrize("alpha", [3.0, 3.5, 4.0])
def test_u_derivatives_against_integral_oracle(alpha):
    # d^n/dx^n of the integrand is (-1)^(n+1) n! c^n (1 + x c)^-(n+1) z, c = beta z^-alpha
    beta, z_j, x = 1.4248e-4, 35.0, 2.0e7
    got = an._u_derivatives(20, x, alpha, z_j, beta)
    with mp.workdps(40):
        for n in range(1, 21):
            c = lambda z: beta * z ** -alpha  # noqa: E731
            ref = (-1) ** (n + 1) * mp.factorial(n) * mp.quad(
                lambda z: c(z) ** n * (1 + x * c(z)) ** -(n + 1) * z, [z_j, 10 * z_j, mp.inf])
            assert got[n - 1] == pytest.approx(float(ref), rel=1e-10)


# --- Laplace transform ------------------------------------------------------

def test_laplace_at_origin():
    assert an.laplace_interference(table1_scenario(), 1, 0.0, 100.0, 10.0) == 1.0


def test_laplace_without_interferers():
    sc = table1_scenario(load_factor=0.0)
    s = np.logspace(0, 14, 8)
    np.testing.assert_array_equal(an.laplace_interference(sc, 1, s, 100.0, 10.0), 1.0)


def test_laplace_matches_monte_carlo():
    sc = table1_scenario()
    lin = linearize(sc)
    k, z, d0, s = 1, 100.0, 10.0, 1e10
    rho = an._rho_bar(lin, d0)
    radius, drops = 1500.0, 30_000
    rng = np.random.default_rng(4)
    log_tail = 0.0
    interference = np.zeros(drops)
    for t, e in zip(lin.tiers, an._exclusions(lin, k, z)):
        r_in = math.sqrt(max(float(e) ** 2 - t.height_m ** 2, 0.0))
        counts = rng.poisson(t.density * PI * (radius ** 2 - r_in ** 2), drops)
        r = np.sqrt(rng.uniform(r_in ** 2, radius ** 2, counts.sum()))
        p = t.power_w * rho * lin.beta * (r ** 2 + t.height_m ** 2) ** (-t.alpha / 2)
        interference += np.bincount(np.repeat(np.arange(drops), counts),
                                    p * rng.exponential(size=p.size), minlength=drops)
        # interferers beyond the simulated disc enter through the exact PGFL tail
        g = lambda r: (1 - 1 / (1 + s * t.power_w * rho * lin.beta  # noqa: E731
                                * (r ** 2 + t.height_m ** 2) ** (-t.alpha / 2))) * r
        log_tail -= 2 * PI * t.density * integrate.quad(g, radius, np.inf, epsrel=1e-10, limit=200)[0]
    empirical = np.exp(-s * interference).mean() * math.exp(log_tail)
    assert an.laplace_interference(sc, k, s, z, d0) == pytest.approx(empirical, rel=0.03)


# --- conditional coverage ---------------------------------------------------

def test_conditional_coverage_vanishing_threshold():
    sc = table1_scenario(sinr_threshold_db=-80.0)
    assert an.conditional_coverage(sc, 1, 150.0, 10.0) == pytest.approx(1.0, abs=1e-6)
    assert an.conditional_coverage(sc, 0, 300.0) == pytest.approx(1.0, abs=1e-6)


def test_exponential_branch_is_laplace_times_noise_term():
    sc = table1_scenario(sinr_threshold_db=3.0)
    lin = linearize(sc)
    z = 180.0
    theta = an.signal_gamma(sc, 0, z).scale
    s = lin.sinr_threshold / theta
    ref = an.laplace_interference(sc, 0, s, z) * math.exp(-s * lin.noise_w)
    assert an.conditional_coverage(sc, 0, z) == pytest.approx(ref, rel=1e-12)


def _d0_for_shape(lin, tau):
    from scipy.optimize import brentq
    return brentq(lambda d: an._unit_gamma(lin, d)[0] - tau, 0.0, 10.0, xtol=1e-13)


def _cdf_branch(sc, threshold=19):
    return replace(sc, eval=replace(sc.eval, tau_threshold=threshold))


@pytest.mark.parametrize("threshold_db", [-10.0, 0.0, 10.0, 20.0])
@pytest.mark.parametrize("k", [0, 1])
def test_branches_agree_after_serving_distance_average(k, threshold_db):
    # at d0 with shape exactly 20: derivative branch vs interference-CDF branch
    sc = table1_scenario(sinr_threshold_db=threshold_db)
    lin = linearize(sc)
    d0 = _d0_for_shape(lin, 20.0)
    alt = linearize(_cdf_branch(sc))
    series = an._z_integral(lin, k, d0) / an._association(lin, k)
    cdf = an._z_integral(alt, k, d0) / an._association(alt, k)
    assert cdf == pytest.approx(series, abs=0.02)


@pytest.mark.xfail(strict=True, reason="mean-signal CDF branch sharpens the coverage transition; "
                                       "pointwise gap reaches 0.12 (see decisions ledger)")
def test_branches_agree_pointwise_on_spot_grid():
    sc = table1_scenario()
    d0 = _d0_for_shape(linearize(sc), 20.0)
    gaps = [abs(an.conditional_coverage(sc, k, z, d0) - an.conditional_coverage(_cdf_branch(sc), k, z, d0))
            for k, zs in ((0, (50.0, 100.0, 150.0, 200.0, 300.0)), (1, (30.0, 60.0, 100.0, 200.0)))
            for z in zs]
    assert max(gaps) <= 0.02


def test_omega_weights():
    assert an._omega(1.5, 0.6) == pytest.approx(0.375)
    assert an._omega(2.999999, 0.6) == pytest.approx(0.0, abs=1e-5)
    assert an._omega(2.000001, 0.6) == pytest.approx(1.0, abs=1e-5)


def test_cdf_branch_unreachable_mean_gives_zero():
    sc = table1_scenario(sinr_threshold_db=90.0)
    sc = replace(sc, eval=replace(sc.eval, tau_threshold=1))
    assert an.conditional_coverage(sc, 1, 400.0, 0.5) == 0.0


@pytest.mark.parametrize("d0", [None, 0.5, 3.0, 10.0, 40.0])
def test_conditional_coverage_decreasing_in_threshold(d0):
    vals = [an.conditional_coverage(table1_scenario(sinr_threshold_db=g), 1, 120.0, d0)
            for g in range(-10, 25, 5)]
    assert all(0 <= v <= 1 for v in vals)
    assert all(b <= a + 1e-9 for a, b in zip(vals, vals[1:]))


@pytest.mark.parametrize("d0", [None, 2.0, 15.0])
def test_conditional_coverage_scale_invariant(d0):
    sc = table1_scenario(sinr_threshold_db=2.0)
    up = replace(sc,
                 tiers=tuple(replace(t, transmit_power_dbm=t.transmit_power_dbm + 17.0) for t in sc.tiers),
                 eval=replace(sc.eval, noise_dbm=sc.eval.noise_dbm + 17.0))
    a = an.conditional_coverage(sc, 1, 90.0, d0)
    b = an.conditional_coverage(up, 1, 90.0, d0)
    assert b == pytest.approx(a, rel=1e-8)


def test_conditional_coverage_rejects_nonpositive_threshold():
    sc = table1_scenario()
    with pytest.raises(PreconditionError):
        an.conditional_coverage(replace(sc, eval=replace(sc.eval, sinr_threshold=0.0)), 0, 100.0)
    with pytest.raises(PreconditionError):
        an.conditional_coverage(sc, 0, 100.0, 60.0)


# --- unconditioned coverage and throughput ----------------------------------

@pytest.mark.parametrize("threshold_db", [0.0, -5.0, 10.0])
def test_classical_closed_form(threshold_db):
    b = an.overall_coverage(classical(threshold_db))
    ref = classical_coverage(10 ** (threshold_db / 10))
    assert b.overall_coverage == pytest.approx(ref, abs=0.005)
    assert b.overall_coverage == pytest.approx(ref, abs=1e-6)


def test_classical_is_density_and_power_free():
    a = an.overall_coverage(classical(density=1e-5, power_dbm=30.0)).overall_coverage
    b = an.overall_coverage(classical(density=7e-4, power_dbm=55.0)).overall_coverage
    assert b == pytest.approx(a, rel=1e-8)


def test_no_irs_breakdown_is_consistent():
    b = an.overall_coverage(table1_scenario(irs_density=0.0))
    assert sum(b.per_tier_association) == pytest.approx(1.0, abs=1e-7)
    assert b.overall_coverage == pytest.approx(
        sum(a * c for a, c in zip(b.per_tier_association, b.per_tier_coverage)))
    assert b.throughput == pytest.approx(sum(b.per_tier_throughput))
    assert b.empty_delta_prob == 1.0
    assert b.overall_ci is None


def test_throughput_linear_in_load_with_frozen_coverage():
    args = ((0.3, 0.7), (0.8, 0.5), 1.0)
    dens = (5e-5, 2.5e-4)
    base = an.throughput_from_coverage(*args, (1e-4, 1e-4), dens)
    scaled = an.throughput_from_coverage(*args, (3e-4, 3e-4), dens)
    np.testing.assert_allclose(scaled, 3 * np.asarray(base), rtol=1e-15)
    assert base[0] == pytest.approx(0.3 * 0.8 * 1e-4 * 5e-5)


def test_serving_pdf_undefined_for_dominated_tier():
    weak = TierConfig(20.0, 3.0, 5e-4, 3.0, 0.125)
    strong = TierConfig(55.0, 0.0, 3.4e-4, 3.0, 7.0)
    sc = two_tier(weak, strong)
    assert an.association_probability(sc, 0) == 0.0
    with pytest.raises(PreconditionError):
        an.serving_distance_pdf(sc, 0, 10.0)


def test_sharp_interference_cdf_is_resolved():
    # the mean-signal branch near the edge of pico coverage needs extra inversion nodes
    sc = table1_scenario(sinr_threshold_db=-1.0)
    vals = [an.conditional_coverage(sc, 1, z, 0.0) for z in (240.0, 245.0, 250.0, 280.0)]
    assert all(b <= a for a, b in zip(vals, vals[1:]))
    talbot = replace(sc, eval=replace(sc.eval, laplace=LaplaceInverter("talbot_contour", terms=80)))
    assert an.conditional_coverage(talbot, 1, 245.0, 0.0) == pytest.approx(vals[1], abs=1e-6)
