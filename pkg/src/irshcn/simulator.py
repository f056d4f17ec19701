"""Monte Carlo reference engine.

Each trial draws a fresh network around a user at the origin (the centre of
a square window), associates the user and computes its SINR with exact
per-path distances. Nothing here relies on the mean-field or equal-gain
shortcuts of the analytical engine.

Fading of the cascaded paths is realized through a conditional identity:
given the IRS-to-UE magnitudes of IRS q, a random-phase reflection of any
BS's signal is complex Gaussian with variance l_i * l_r,q * sum_n |h_q,n|^2.
The per-element sum therefore only has to be drawn once per IRS and trial,
and the same draws feed the coherent serving IRS.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats

from .analytical import CoverageBreakdown, throughput_from_coverage
from .exceptions import EmptyNetworkError, PreconditionError
from .netmodel import LinearScenario, Scenario, linearize

__all__ = [
    "Association",
    "NetworkRealization",
    "SimulationRun",
    "SinrSample",
    "associate",
    "draw_realization",
    "estimate",
    "guard_margin",
    "run",
    "sample_ppp",
    "simulate_sample",
    "trial_rng",
]

DEFAULT_HALF_WIDTH_M = 2000.0
_CHUNK = 256
_MAX_RESAMPLE = 100


def worker_count():
    """Worker pool size, capped by the ``IRSHCN_THREADS`` environment variable."""
    env = os.environ.get("IRSHCN_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def trial_rng(seed, trial):
    """Independent stream for one trial: a Philox generator keyed by (trial, seed)."""
    mask = (1 << 64) - 1
    key = np.array([trial & mask, seed & mask], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------

def sample_ppp(density, half_width_m, rng):
    """Homogeneous PPP on the square [-w, w]^2, as an (n, 2) array."""
    if density < 0:
        raise PreconditionError("density must be non-negative", density=density)
    n = rng.poisson(density * (2.0 * half_width_m) ** 2) if density > 0 else 0
    return rng.uniform(-half_width_m, half_width_m, size=(n, 2))


def _sample_disc(density, radius, rng):
    n = rng.poisson(density * math.pi * radius ** 2) if density > 0 else 0
    r = radius * np.sqrt(rng.random(n))
    phi = 2.0 * math.pi * rng.random(n)
    return np.column_stack((r * np.cos(phi), r * np.sin(phi)))


def guard_margin(scenario):
    """max(5 x mean nearest-BS distance, D_max): the clearance the window must leave."""
    lin = _linear(scenario)
    total = sum(t.density for t in lin.tiers)
    nearest = 0.5 / math.sqrt(total) if total > 0 else math.inf
    return max(5.0 * nearest, lin.irs.local_radius_m)


@dataclass(frozen=True)
class NetworkRealization:
    """One network drop around the typical user at the origin.

    Only IRSs inside the local region are kept, since no other IRS takes
    part in the received signal.
    """

    bs_xy: tuple
    active: tuple
    irs_xy: np.ndarray
    half_width_m: float
    guard_m: float
    seed: Optional[int] = None

    @property
    def n_bs(self):
        return sum(len(b) for b in self.bs_xy)


def _linear(scenario):
    return scenario if isinstance(scenario, LinearScenario) else linearize(scenario)


def draw_realization(scenario, rng, half_width_m=DEFAULT_HALF_WIDTH_M, seed=None):
    lin = _linear(scenario)
    guard = guard_margin(lin)
    if half_width_m < guard:
        raise PreconditionError("window half-width is smaller than the guard margin",
                                half_width_m=half_width_m, guard_m=guard)
    bs, active = [], []
    for t in lin.tiers:
        pts = sample_ppp(t.density, half_width_m, rng)
        bs.append(pts)
        active.append(rng.random(len(pts)) < t.load_factor)
    irs = _sample_disc(lin.irs.density_per_m2, lin.irs.local_radius_m, rng)
    return NetworkRealization(tuple(bs), tuple(active), irs, half_width_m, guard, seed)


@dataclass(frozen=True)
class Association:
    tier: int
    index: int
    z: float


def associate(realization, scenario):
    """Serving BS: the one maximizing P_k B_k Z^-alpha_k (3D distance Z); ties go to the lower tier."""
    lin = _linear(scenario)
    best = None
    for k, (t, pts) in enumerate(zip(lin.tiers, realization.bs_xy)):
        if len(pts) == 0:
            continue
        r2 = np.einsum("ij,ij->i", pts, pts)
        i = int(np.argmin(r2))
        z = math.sqrt(r2[i] + t.height_m ** 2)
        metric = math.log(t.power_w * t.bias) - t.alpha * math.log(z) if z > 0 else math.inf
        if best is None or metric > best[0]:
            best = (metric, Association(k, i, z))
    if best is None:
        raise EmptyNetworkError("realization contains no base station")
    return best[1]


# ---------------------------------------------------------------------------
# SINR of one drop
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SinrSample:
    tier: int
    z: float
    d0: Optional[float]
    signal: float
    interference: float
    sinr: float


def _bs_irs_gain(lin, tier, dist2d):
    # r^2 + H_j^2 - H_I^2 is floored at the 1 m reference distance
    t = lin.tiers[tier]
    base = np.maximum(dist2d ** 2 + t.height_m ** 2 - lin.irs.height_m ** 2, 1.0)
    return lin.beta * base ** (-t.alpha / 2.0)


def simulate_sample(realization, scenario, rng, fading="rayleigh"):
    """SINR at the origin for one realization.

    ``fading="unit"`` replaces every random gain by its mean-square value
    (amplitudes 1, element sums N) and adds random-phase terms in power;
    it exists to check the deterministic amplitude bookkeeping.
    """
    lin = _linear(scenario)
    unit = fading == "unit"
    if not unit and fading != "rayleigh":
        raise PreconditionError("fading must be 'rayleigh' or 'unit'", fading=fading)
    assoc = associate(realization, lin)
    k, t = assoc.tier, lin.tiers[assoc.tier]
    server = realization.bs_xy[k][assoc.index]
    irs = lin.irs
    n_el = irs.elements
    l_d = lin.beta * assoc.z ** -t.alpha

    irs_xy = realization.irs_xy
    amp_d = 1.0 if unit else math.sqrt(rng.exponential())
    if len(irs_xy) == 0:
        d0 = None
        coherent = amp_d * math.sqrt(l_d)
        scatter_var = 0.0
        gains = np.zeros(0)
    else:
        d = np.hypot(irs_xy[:, 0], irs_xy[:, 1])
        q0 = int(np.argmin(d))
        d0 = float(d[q0])
        l_r = lin.beta * (d ** 2 + irs.height_m ** 2) ** (-irs.pathloss_exponent / 2.0)
        if unit:
            amp_sum, h_pow = float(n_el), np.full(len(d), float(n_el))
        else:
            h0 = rng.exponential(size=n_el)
            g0 = rng.exponential(size=n_el)
            amp_sum = float(np.sqrt(g0 * h0).sum())
            h_pow = rng.gamma(n_el, size=len(d))
            h_pow[q0] = h0.sum()
        gains = l_r * h_pow
        l_i_srv = _bs_irs_gain(lin, k, np.hypot(*(irs_xy - server).T))
        coherent = amp_d * math.sqrt(l_d) + math.sqrt(l_i_srv[q0] * l_r[q0]) * amp_sum
        scatter_var = float(l_i_srv @ gains - l_i_srv[q0] * gains[q0])

    if unit:
        signal = t.power_w * (coherent ** 2 + scatter_var)
    else:
        sc = math.sqrt(scatter_var / 2.0) * rng.standard_normal(2)
        signal = t.power_w * ((coherent + sc[0]) ** 2 + sc[1] ** 2)

    interference = 0.0
    for j, tj in enumerate(lin.tiers):
        act = realization.active[j].copy()
        if j == k:
            act[assoc.index] = False
        pts = realization.bs_xy[j][act]
        if len(pts) == 0:
            continue
        r2 = np.einsum("ij,ij->i", pts, pts)
        gain = lin.beta * (r2 + tj.height_m ** 2) ** (-tj.alpha / 2.0)
        if len(gains):
            diff = pts[:, None, :] - irs_xy[None, :, :]
            gain = gain + _bs_irs_gain(lin, j, np.hypot(diff[..., 0], diff[..., 1])) @ gains
        fade = 1.0 if unit else rng.exponential(size=len(pts))
        interference += tj.power_w * float(np.sum(fade * gain))

    denom = interference + lin.noise_w
    sinr = signal / denom if denom > 0 else math.inf
    return SinrSample(k, assoc.z, d0, signal, interference, sinr)


def _one_trial(lin, seed, trial, half_width_m):
    rng = trial_rng(seed, trial)
    for _ in range(_MAX_RESAMPLE):
        real = draw_realization(lin, rng, half_width_m, seed)
        if real.n_bs:
            return simulate_sample(real, lin, rng)
    raise EmptyNetworkError("no base station in any resampled realization", trial=trial)


# ---------------------------------------------------------------------------
# Estimation
# ---------------------------------------------------------------------------

def _wilson(successes, n):
    if n == 0:
        return (0.0, 1.0)
    ci = stats.binomtest(int(successes), int(n)).proportion_ci(0.95, method="wilson")
    return (float(ci.low), float(ci.high))


@dataclass(frozen=True)
class SimulationRun:
    """Per-trial SINR samples; coverage at any threshold is read off without re-simulating."""

    scenario: LinearScenario
    tier: np.ndarray
    z: np.ndarray
    d0: np.ndarray  # NaN where the local region held no IRS
    signal: np.ndarray
    interference: np.ndarray
    sinr: np.ndarray
    seed: int

    @property
    def trials(self):
        return len(self.sinr)

    def breakdown(self, sinr_threshold=None) -> CoverageBreakdown:
        lin = self.scenario
        g = lin.sinr_threshold if sinr_threshold is None else float(sinr_threshold)
        rate = math.log2(1.0 + g)
        n = self.trials
        covered = self.sinr > g
        assoc, cov, cov_ci, joint_counts = [], [], [], []
        for k in range(lin.n_tiers):
            in_k = self.tier == k
            nk, ck = int(in_k.sum()), int((covered & in_k).sum())
            assoc.append(nk / n)
            cov.append(ck / nk if nk else 0.0)
            cov_ci.append(_wilson(ck, nk))
            joint_counts.append(ck)
        loads = [t.load_factor for t in lin.tiers]
        dens = [t.density for t in lin.tiers]
        per_t = throughput_from_coverage(assoc, cov, rate, loads, dens)
        scale = [rate * p * lam for p, lam in zip(loads, dens)]
        per_t_ci = tuple(tuple(s * b for b in _wilson(c, n)) for s, c in zip(scale, joint_counts))
        # overall throughput is a weighted sum of indicators: normal interval
        x = np.zeros(n)
        for k, s in enumerate(scale):
            x[(self.tier == k) & covered] = s
        half = 1.959963984540054 * float(x.std(ddof=1)) / math.sqrt(n) if n > 1 else math.inf
        total = float(sum(per_t))
        return CoverageBreakdown(
            per_tier_association=tuple(assoc),
            per_tier_coverage=tuple(cov),
            overall_coverage=float(covered.mean()),
            throughput=total,
            per_tier_throughput=per_t,
            empty_delta_prob=float(np.isnan(self.d0).mean()),
            sinr_threshold=g,
            overall_ci=_wilson(int(covered.sum()), n),
            per_tier_coverage_ci=tuple(cov_ci),
            throughput_ci=(max(total - half, 0.0), total + half),
            per_tier_throughput_ci=per_t_ci,
        )


def run(scenario, trials, seed=0, half_width_m=DEFAULT_HALF_WIDTH_M, workers=None) -> SimulationRun:
    """Simulate ``trials`` independent drops; the result does not depend on ``workers``."""
    if trials < 1:
        raise PreconditionError("trials must be at least 1", trials=trials)
    lin = _linear(scenario)
    guard = guard_margin(lin)
    if half_width_m < guard:
        raise PreconditionError("window half-width is smaller than the guard margin",
                                half_width_m=half_width_m, guard_m=guard)
    seed = int(seed)

    def chunk(start):
        return [_one_trial(lin, seed, i, half_width_m)
                for i in range(start, min(start + _CHUNK, trials))]

    starts = range(0, trials, _CHUNK)
    workers = worker_count() if workers is None else max(1, int(workers))
    if workers == 1 or len(starts) == 1:
        parts = [chunk(s) for s in starts]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(chunk, starts))
    samples = [s for part in parts for s in part]
    return SimulationRun(
        scenario=lin,
        tier=np.array([s.tier for s in samples], dtype=int),
        z=np.array([s.z for s in samples]),
        d0=np.array([np.nan if s.d0 is None else s.d0 for s in samples]),
        signal=np.array([s.signal for s in samples]),
        interference=np.array([s.interference for s in samples]),
        sinr=np.array([s.sinr for s in samples]),
        seed=seed,
    )


def estimate(scenario, trials, seed=0, half_width_m=DEFAULT_HALF_WIDTH_M) -> CoverageBreakdown:
    """Coverage and throughput with Wilson 95% intervals at the scenario's threshold."""
    return run(scenario, trials, seed, half_width_m).breakdown()
