"""Closed-form coverage and throughput of an IRS-assisted K-tier network.

The typical user sits at the origin. Conditioned on the serving distance
``z`` and the distance ``d0`` to the nearest IRS in the local region, the
signal power is matched to a Gamma law and the interference is handled
through its Laplace transform. Unconditioning integrates over ``d0``
(adaptive quadrature) and over ``z`` (Gauss-Legendre nodes evaluated in
one vectorized pass, order doubled until converged).

Tier indices are 0-based here; outputs list tiers in configuration order.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy import integrate, optimize

from . import channel
from .exceptions import NumericFailure, PreconditionError
from .netmodel import LinearScenario, Scenario, linearize
from .specialfn import composition_derivatives, hyp2f1_complex, inverse_laplace_cdf

log = logging.getLogger(__name__)

PI = math.pi

__all__ = [
    "CoverageBreakdown",
    "GammaParams",
    "association_probability",
    "conditional_coverage",
    "irs_distance_pdf",
    "laplace_interference",
    "overall_coverage",
    "serving_distance_pdf",
    "signal_gamma",
    "spatial_throughput",
    "throughput_from_coverage",
    "u_function",
]


@dataclass(frozen=True)
class GammaParams:
    shape: float
    scale: float

    @classmethod
    def from_moments(cls, mean, variance):
        if not variance > 0 or not mean > 0:
            raise NumericFailure("moment matching needs positive mean and variance",
                                 mean=mean, variance=variance)
        return cls(shape=mean ** 2 / variance, scale=variance / mean)

    @property
    def mean(self):
        return self.shape * self.scale

    @property
    def variance(self):
        return self.shape * self.scale ** 2


@dataclass(frozen=True)
class CoverageBreakdown:
    """Coverage and throughput summary; CI fields are filled by the simulator only."""

    per_tier_association: tuple
    per_tier_coverage: tuple
    overall_coverage: float
    throughput: float
    per_tier_throughput: tuple
    empty_delta_prob: float
    sinr_threshold: float
    overall_ci: Optional[tuple] = None
    per_tier_coverage_ci: Optional[tuple] = None
    throughput_ci: Optional[tuple] = None
    per_tier_throughput_ci: Optional[tuple] = None


def _linear(scenario):
    return scenario if isinstance(scenario, LinearScenario) else linearize(scenario)


# ---------------------------------------------------------------------------
# Association
# ---------------------------------------------------------------------------

def _power_ratio(lin, j, k):
    tj, tk = lin.tiers[j], lin.tiers[k]
    return (tj.power_w * tj.bias) / (tk.power_w * tk.bias)


def _exclusion(lin, j, k, z):
    """Distance beyond which tier-j BSs must lie when tier k serves at 3D distance z."""
    tj, tk = lin.tiers[j], lin.tiers[k]
    return _power_ratio(lin, j, k) ** (1.0 / tj.alpha) * np.asarray(z) ** (tk.alpha / tj.alpha)


def _assoc_exponent(lin, k, x, densities=None):
    total = 0.0
    for j, t in enumerate(lin.tiers):
        lam = t.density if densities is None else densities[j]
        total = total + lam * np.maximum(_exclusion(lin, j, k, x) ** 2 - t.height_m ** 2, 0.0)
    return PI * total


def _kinks(lin, k):
    """Serving distances where some tier's exclusion radius reaches its BS height."""
    hk = lin.tiers[k].height_m
    out = []
    for j, t in enumerate(lin.tiers):
        if t.height_m <= 0:
            continue
        x = (t.height_m / _power_ratio(lin, j, k) ** (1.0 / t.alpha)) ** (t.alpha / lin.tiers[k].alpha)
        if x > hk:
            out.append(float(x))
    return sorted(set(out))


@lru_cache(maxsize=256)
def _z_cutoff(lin, k):
    target = lin.eval.tail_cutoff_exponent
    hk = lin.tiers[k].height_m
    if _assoc_exponent(lin, k, hk) >= target:
        # tier is dominated everywhere; its association probability is below exp(-target)
        return hk
    hi = hk + 1.0
    while _assoc_exponent(lin, k, hi) < target:
        hi = hk + 2.0 * (hi - hk)
    return optimize.brentq(lambda x: _assoc_exponent(lin, k, x) - target, hk, hi, xtol=1e-9)


def _serving_weight(lin, k, x):
    """2 pi lambda_k x exp(-...), i.e. A_k times the serving-distance density."""
    lam = lin.tiers[k].density
    x = np.asarray(x, dtype=float)
    return 2.0 * PI * lam * x * np.exp(-_assoc_exponent(lin, k, x))


@lru_cache(maxsize=256)
def _association(lin, k):
    hk = lin.tiers[k].height_m
    cut = _z_cutoff(lin, k)
    points = [p for p in _kinks(lin, k) if hk < p < cut]
    val, err = integrate.quad(lambda x: float(_serving_weight(lin, k, x)), hk, cut,
                              points=points or None, epsrel=lin.eval.quad_rel_tol,
                              epsabs=1e-13, limit=200)
    if not np.isfinite(val) or err > 1e3 * lin.eval.quad_rel_tol * max(val, 1e-12):
        raise NumericFailure("association quadrature did not converge", k=k, value=val, error=err)
    return val


def association_probability(scenario, k):
    """Probability that the typical user joins tier ``k`` (0-based)."""
    lin = _linear(scenario)
    if not 0 <= k < lin.n_tiers:
        raise PreconditionError("tier index out of range", k=k)
    return _association(lin, k)


def serving_distance_pdf(scenario, k, x):
    """Density of the 3D distance to the serving BS given association with tier ``k``."""
    lin = _linear(scenario)
    x = np.asarray(x, dtype=float)
    a = _association(lin, k)
    if not a > 0:
        raise PreconditionError("tier is never joined; its serving distance has no density", k=k)
    pdf = np.where(x >= lin.tiers[k].height_m, _serving_weight(lin, k, np.maximum(x, 0.0)) / a, 0.0)
    return pdf if pdf.ndim else float(pdf)


def irs_distance_pdf(irs, d):
    """Density of the horizontal distance to the nearest IRS (unconditioned)."""
    d = np.asarray(d, dtype=float)
    lam = irs.density_per_m2
    out = np.where(d >= 0, 2.0 * PI * lam * d * np.exp(-PI * lam * d ** 2), 0.0)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Signal power
# ---------------------------------------------------------------------------

def _unit_moments(lin, d0):
    """Signal mean and second moment for unit transmit power and unit direct gain."""
    irs = lin.irs
    l_r0 = channel.l_irs_to_ue(d0, irs.height_m, irs.pathloss_exponent, lin.beta)
    m = channel.signal_moments(1.0, 1.0, l_r0, irs.elements,
                               channel.er1(d0, irs, lin.beta), channel.er3(d0, irs, lin.beta))
    return float(m.mean), float(m.second_moment)


def _unit_gamma(lin, d0):
    mean, second = _unit_moments(lin, d0)
    var = second - mean ** 2
    if not var > 0:
        raise NumericFailure("signal variance is not positive", d0=d0, mean=mean, second=second)
    return mean ** 2 / var, var / mean, mean


def _rho_bar(lin, d0):
    if d0 is None:
        return 1.0
    irs = lin.irs
    l_r0 = channel.l_irs_to_ue(d0, irs.height_m, irs.pathloss_exponent, lin.beta)
    return float(channel.scattering_factor(l_r0, irs.elements, channel.er1(d0, irs, lin.beta)))


def signal_gamma(scenario, k, z, d0=None) -> GammaParams:
    """Gamma law matched to the serving signal power at distance ``z``.

    ``d0=None`` means the local region holds no IRS; the signal is then
    exponential with mean P_k * l_d.
    """
    lin = _linear(scenario)
    t = lin.tiers[k]
    if z < t.height_m:
        raise PreconditionError("serving distance below BS height", z=z, height=t.height_m)
    l_d = float(channel.l_direct(z, t.alpha, lin.beta, t.height_m))
    if d0 is None:
        return GammaParams(1.0, t.power_w * l_d)
    try:
        mean, second = _unit_moments(lin, d0)
        return GammaParams.from_moments(t.power_w * l_d * mean,
                                        (t.power_w * l_d) ** 2 * (second - mean ** 2))
    except NumericFailure as exc:
        raise NumericFailure("signal moment matching failed", k=k, z=z, d0=d0, **exc.context)


# ---------------------------------------------------------------------------
# Interference
# ---------------------------------------------------------------------------

def u_function(x, alpha_j, z_j, beta):
    """Integral over [z_j, inf) of (1 - 1/(1 + x beta z^-alpha)) z dz, via 2F1.

    ``x`` may be complex (right half plane) for use inside Laplace inversion.
    """
    x = np.asarray(x)
    delta = 2.0 / alpha_j
    zero = x == 0
    xs = np.where(zero, 1.0, x)
    y = beta * np.asarray(z_j, dtype=float) ** -alpha_j * xs
    head = PI / (alpha_j * math.sin(2.0 * PI / alpha_j)) * (beta * xs) ** delta
    tail = np.asarray(z_j, dtype=float) ** 2 / 2.0 * hyp2f1_complex(1.0, delta, 1.0 + delta, -1.0 / y)
    out = np.where(zero, 0.0, head - tail)
    return out if out.ndim else out[()]


def _u_derivatives(n_max, x, alpha_j, z_j, beta):
    """U^(n)(x) for n = 1..n_max, stacked on a new leading axis.

    Differentiating under the integral and substituting u = (z_j/z)^alpha gives
    U^(n)(x) = (-1)^(n+1) n! beta^n z_j^(2 - n alpha) / (alpha (n - delta))
               * 2F1(n + 1, n - delta; n + 1 - delta; -beta z_j^-alpha x).
    Euler's transformation turns the 2F1 into (1 + y)^-n 2F1(-delta, 1; n + 1 - delta; -y),
    whose small upper parameters avoid the cancellation the original suffers at high n.
    """
    x = np.asarray(x, dtype=float)
    z_j = np.asarray(z_j, dtype=float)
    delta = 2.0 / alpha_j
    n = np.arange(1, n_max + 1, dtype=float).reshape((-1,) + (1,) * x.ndim)
    y = beta * z_j ** -alpha_j * x
    sign = np.where(n % 2 == 1, 1.0, -1.0)
    fact = np.array([math.factorial(int(i)) for i in n.ravel()], dtype=float).reshape(n.shape)
    pref = sign * fact * beta ** n * z_j ** (2.0 - n * alpha_j) / (alpha_j * (n - delta))
    return pref * (1.0 + y) ** -n * hyp2f1_complex(-delta, 1.0, n + 1.0 - delta, -y)


def _exclusions(lin, k, z):
    return [np.maximum(_exclusion(lin, j, k, z), t.height_m) for j, t in enumerate(lin.tiers)]


def _log_laplace(lin, k, s, z, rho):
    """log E[exp(-s I)] given serving distance z; broadcasts s against z."""
    total = 0.0
    for j, (t, e) in enumerate(zip(lin.tiers, _exclusions(lin, k, z))):
        if t.active_density == 0:
            continue
        total = total + t.active_density * u_function(s * rho * t.power_w, t.alpha, e, lin.beta)
    return -2.0 * PI * total


def laplace_interference(scenario, k, s, z_k, d0=None):
    """Laplace transform of the interference at the typical user.

    Scattering through the IRSs in the local region is folded in through
    its mean relative gain; ``d0=None`` means no IRS is present.
    """
    lin = _linear(scenario)
    rho = _rho_bar(lin, d0)
    val = np.exp(_log_laplace(lin, k, np.asarray(s), z_k, rho))
    return val if np.ndim(val) else val[()]


# ---------------------------------------------------------------------------
# Conditional coverage
# ---------------------------------------------------------------------------

def _omega(tau, m):
    lo, hi = math.floor(tau), math.ceil(tau)
    return m * (hi - tau) / (m * (hi - tau) + (tau - lo))


def _is_integer(tau):
    return abs(tau - round(tau)) < 1e-9


def _v_derivatives(lin, k, z, theta, rho, n_max):
    """V(1) and V^(i)(1), i = 1..n_max, for V(s) = log E[exp(-s g (I + noise)/theta)]."""
    g = lin.sinr_threshold
    v0 = -g * lin.noise_w / theta
    derivs = np.zeros((n_max,) + np.shape(z))
    if n_max:
        derivs[0] -= g * lin.noise_w / theta
    for t, e in zip(lin.tiers, _exclusions(lin, k, z)):
        if t.active_density == 0:
            continue
        c = g * rho * t.power_w / theta
        v0 = v0 - 2.0 * PI * t.active_density * u_function(c, t.alpha, e, lin.beta)
        if n_max:
            powers = c ** np.arange(1, n_max + 1).reshape((-1,) + (1,) * np.ndim(c))
            derivs -= 2.0 * PI * t.active_density * powers * _u_derivatives(n_max, c, t.alpha, e, lin.beta)
    return v0, derivs


def _coverage_integer(v0, derivs, tau_int):
    d = composition_derivatives(derivs, tau_int - 1, v0)
    return sum(((-1) ** i / math.factorial(i)) * d[i] for i in range(tau_int))


def _coverage_nodes(lin, k, z, d0):
    """Conditional coverage for an array of serving distances at fixed d0."""
    z = np.asarray(z, dtype=float)
    t = lin.tiers[k]
    l_d = lin.beta * z ** -t.alpha
    if d0 is None:
        tau, theta_unit, mean_unit = 1.0, 1.0, 1.0
    else:
        tau, theta_unit, mean_unit = _unit_gamma(lin, d0)
    theta = t.power_w * l_d * theta_unit
    rho = _rho_bar(lin, d0)
    thr = lin.eval.tau_threshold

    if tau <= thr + 1e-9:
        if _is_integer(tau):
            n = int(round(tau))
            v0, derivs = _v_derivatives(lin, k, z, theta, rho, n - 1)
            out = _coverage_integer(v0, derivs, n)
        else:
            lo, hi = math.floor(tau), math.ceil(tau)
            v0, derivs = _v_derivatives(lin, k, z, theta, rho, hi - 1)
            p_hi = _coverage_integer(v0, derivs, hi)
            p_lo = _coverage_integer(v0, derivs, lo) if lo >= 1 else 0.0
            w = _omega(tau, lin.eval.priority_factor)
            out = w * p_lo + (1.0 - w) * p_hi
        return np.clip(out, 0.0, 1.0)

    # large shape: the signal is close to its mean, use the interference CDF
    y = t.power_w * l_d * mean_unit / lin.sinr_threshold - lin.noise_w
    out = np.zeros(z.shape)
    pos = y > 0
    if pos.any():
        zp = z[pos]

        def transform(s):
            return np.exp(_log_laplace(lin, k, s, zp, rho))

        out[pos] = inverse_laplace_cdf(transform, y[pos], lin.eval.laplace)
    return out


def conditional_coverage(scenario, k, z_k, d0=None):
    """P[SINR > threshold] given tier ``k`` serves at distance ``z_k`` and nearest IRS at ``d0``."""
    lin = _linear(scenario)
    if lin.sinr_threshold <= 0:
        raise PreconditionError("SINR threshold must be positive")
    if d0 is not None:
        channel._check_d0(d0, lin.irs)
    try:
        return float(_coverage_nodes(lin, k, np.array([z_k], dtype=float), d0)[0])
    except NumericFailure as exc:
        raise NumericFailure("conditional coverage failed", k=k, z=z_k, d0=d0, **exc.context)


# ---------------------------------------------------------------------------
# Unconditioning
# ---------------------------------------------------------------------------

@lru_cache(maxsize=16)
def _legendre(n):
    return np.polynomial.legendre.leggauss(n)


def _z_segments(lin, k):
    hk = lin.tiers[k].height_m
    cut = _z_cutoff(lin, k)
    return [hk] + [p for p in _kinks(lin, k) if hk < p < cut] + [cut]


_Z_ORDERS = (24, 48, 96, 192, 384)


def _z_quadrature(lin, k, d0, order):
    edges = np.asarray(_z_segments(lin, k))
    x, w = _legendre(order)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return float(weights @ (_serving_weight(lin, k, nodes) * _coverage_nodes(lin, k, nodes, d0)))


def _z_order(lin, k, d0):
    """Smallest Gauss-Legendre order whose doubling changes the z-integral by at most rtol."""
    rtol = lin.eval.quad_rel_tol
    prev = _z_quadrature(lin, k, d0, _Z_ORDERS[0])
    for lo, hi in zip(_Z_ORDERS, _Z_ORDERS[1:]):
        cur = _z_quadrature(lin, k, d0, hi)
        if abs(cur - prev) <= rtol * abs(cur) + 1e-14:
            return hi
        prev = cur
    log.warning("z-integral for tier %d at d0=%s not converged at order %d (change %.3g)",
                k + 1, d0, hi, abs(cur - prev))
    return hi


def _z_integral(lin, k, d0, order=None):
    """Integral over z of A_k f_X(z) times the conditional coverage.

    With ``order=None`` the order is found by doubling; callers that
    integrate over d0 fix it once from probe points instead.
    """
    return _z_quadrature(lin, k, d0, _z_order(lin, k, d0) if order is None else order)


def _tau_breakpoints(lin):
    """d0 values where the matched shape crosses an integer or the branch threshold."""
    irs = lin.irs
    grid = np.linspace(0.0, irs.local_radius_m, 257)
    taus = np.array([_unit_gamma(lin, d)[0] for d in grid])
    levels = range(1, lin.eval.tau_threshold + 1)
    out = []
    for lvl in levels:
        diff = taus - lvl
        for i in np.nonzero(np.sign(diff[:-1]) * np.sign(diff[1:]) < 0)[0]:
            out.append(optimize.brentq(lambda d: _unit_gamma(lin, d)[0] - lvl,
                                       grid[i], grid[i + 1], xtol=1e-10))
    return sorted(out)


def _tier_joint(lin, k):
    """A_k times the per-tier coverage."""
    irs = lin.irs
    p_empty = irs.empty_probability
    total = p_empty * _z_integral(lin, k, None) if p_empty > 0 else 0.0
    if irs.density_per_m2 > 0:
        d_max = irs.local_radius_m
        pts = [p for p in _tau_breakpoints(lin) if 0 < p < d_max]
        # the integrand is smooth between breakpoints; one probe per piece fixes the z order
        edges = [0.0] + pts + [d_max]
        probes = [0.5 * (a + b) for a, b in zip(edges, edges[1:])] + [0.0, d_max]
        order = max(_z_order(lin, k, p) for p in probes)

        def f(d0):
            return irs_distance_pdf(irs, d0) * _z_quadrature(lin, k, d0, order)

        val, err = integrate.quad(f, 0.0, d_max, points=pts or None,
                                  epsrel=lin.eval.quad_rel_tol, epsabs=1e-10, limit=200)
        total += val
    return total


def throughput_from_coverage(associations, coverages, rate, loads, densities):
    """Per-tier spatial throughput A_k P_k R0 p_k lambda_k, in bit/s/Hz/m^2."""
    return tuple(a * c * rate * p * lam
                 for a, c, p, lam in zip(associations, coverages, loads, densities))


def overall_coverage(scenario) -> CoverageBreakdown:
    """Association, per-tier and overall coverage, and spatial throughput."""
    lin = _linear(scenario)
    assoc, cov = [], []
    for k in range(lin.n_tiers):
        try:
            a = _association(lin, k)
            joint = _tier_joint(lin, k)
        except NumericFailure as exc:
            raise NumericFailure("coverage evaluation failed", k=k, **exc.context)
        assoc.append(a)
        cov.append(min(max(joint / a, 0.0), 1.0) if a > 0 else 0.0)
    tiers = lin.tiers
    per_tier_t = throughput_from_coverage(assoc, cov, lin.rate_threshold,
                                          [t.load_factor for t in tiers],
                                          [t.density for t in tiers])
    return CoverageBreakdown(
        per_tier_association=tuple(assoc),
        per_tier_coverage=tuple(cov),
        overall_coverage=float(sum(a * c for a, c in zip(assoc, cov))),
        throughput=float(sum(per_tier_t)),
        per_tier_throughput=per_tier_t,
        empty_delta_prob=lin.irs.empty_probability,
        sinr_threshold=lin.sinr_threshold,
    )


def spatial_throughput(scenario) -> float:
    return overall_coverage(scenario).throughput
