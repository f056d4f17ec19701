"""Path-loss kernels, IRS gain coefficients and signal-power moments.

The moment expressions treat the serving BS-IRS link as having the same
average gain as the direct BS-UE link, which is what makes them depend on
the direct gain ``l_d`` and the IRS-UE gain ``l_r0`` only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import PreconditionError

PI = math.pi
# variance factor of a double-Rayleigh amplitude relative to l_i * l_r
_DR_VAR = 1.0 - PI ** 2 / 16.0


def l_direct(dist3d_m, alpha, beta, height_m=0.0):
    """Average direct-link gain beta * X^-alpha."""
    x = np.asarray(dist3d_m, dtype=float)
    if np.any(x < height_m) or np.any(x <= 0):
        raise PreconditionError("3D distance must be positive and at least the BS height",
                                dist3d_m=dist3d_m, height_m=height_m)
    return beta * x ** -alpha


def l_irs_to_ue(dist2d_m, height_m, alpha, beta):
    """Average IRS-to-UE gain beta * (d^2 + H_I^2)^(-alpha/2)."""
    d = np.asarray(dist2d_m, dtype=float)
    if np.any(d < 0):
        raise PreconditionError("distance must be non-negative", dist2d_m=dist2d_m)
    return beta * (d ** 2 + height_m ** 2) ** (-alpha / 2.0)


def l_bs_to_irs(dist2d_m, bs_height_m, irs_height_m, alpha, beta):
    """Average BS-to-IRS gain beta * (r^2 + H_j^2 - H_I^2)^(-alpha/2).

    The height term is kept in the form the model defines it; the base must
    stay positive, so an IRS mounted above the BS needs a horizontal clearance
    of at least sqrt(H_I^2 - H_j^2).
    """
    base = np.asarray(dist2d_m, dtype=float) ** 2 + bs_height_m ** 2 - irs_height_m ** 2
    if np.any(base <= 0):
        raise PreconditionError("BS-IRS kernel base r^2 + H_j^2 - H_I^2 must be positive",
                                dist2d_m=dist2d_m)
    return beta * base ** (-alpha / 2.0)


def beamforming_gain(n_elements):
    """Power gain of an N-element IRS with phases aligned to the direct path."""
    n = n_elements
    if np.any(np.asarray(n) < 1):
        raise PreconditionError("need at least one element", n_elements=n_elements)
    return PI ** 2 / 16.0 * n ** 2 + _DR_VAR * n


def scattering_gain(n_elements):
    """Power gain of an N-element IRS reflecting with random phases."""
    if np.any(np.asarray(n_elements) < 1):
        raise PreconditionError("need at least one element", n_elements=n_elements)
    return n_elements


@dataclass(frozen=True)
class PathKernels:
    """Path-loss kernels bound to one scenario's geometry."""

    beta: float
    alphas: tuple
    heights: tuple
    irs_alpha: float
    irs_height: float

    @classmethod
    def from_linear(cls, lin):
        return cls(
            beta=lin.beta,
            alphas=tuple(t.alpha for t in lin.tiers),
            heights=tuple(t.height_m for t in lin.tiers),
            irs_alpha=lin.irs.pathloss_exponent,
            irs_height=lin.irs.height_m,
        )

    def direct(self, tier, dist3d_m):
        return l_direct(dist3d_m, self.alphas[tier], self.beta, self.heights[tier])

    def irs_to_ue(self, dist2d_m):
        return l_irs_to_ue(dist2d_m, self.irs_height, self.irs_alpha, self.beta)

    def bs_to_irs(self, tier, dist2d_m):
        return l_bs_to_irs(dist2d_m, self.heights[tier], self.irs_height,
                           self.alphas[tier], self.beta)


@dataclass(frozen=True)
class SignalMoments:
    mean: float
    second_moment: float

    @property
    def variance(self):
        return self.second_moment - self.mean ** 2


def _check_d0(d0_m, irs):
    d0 = np.asarray(d0_m, dtype=float)
    if np.any(d0 < 0) or np.any(d0 > irs.local_radius_m * (1 + 1e-12)):
        raise PreconditionError("d0 must lie in [0, local_radius_m]", d0_m=d0_m)
    return np.minimum(d0, irs.local_radius_m)


def er1(d0_m, irs, beta):
    """Mean of the summed IRS-to-UE gain of the non-serving IRSs in the local region."""
    d0 = _check_d0(d0_m, irs)
    a, h2 = irs.pathloss_exponent, irs.height_m ** 2
    e = (2.0 - a) / 2.0
    return (2.0 * PI * irs.density_per_m2 * beta / (a - 2.0)
            * ((d0 ** 2 + h2) ** e - (irs.local_radius_m ** 2 + h2) ** e))


def er2(d0_m, irs, beta):
    """Variance of the summed IRS-to-UE gain (Campbell second-order term)."""
    d0 = _check_d0(d0_m, irs)
    a, h2 = irs.pathloss_exponent, irs.height_m ** 2
    return (PI * irs.density_per_m2 * beta ** 2 / (a - 1.0)
            * ((d0 ** 2 + h2) ** (1.0 - a) - (irs.local_radius_m ** 2 + h2) ** (1.0 - a)))


def er3(d0_m, irs, beta):
    """Second moment of the summed IRS-to-UE gain: er1^2 + er2."""
    return er1(d0_m, irs, beta) ** 2 + er2(d0_m, irs, beta)


def f1_moments(l_d, l_r0, n):
    """E|f1|^2 and E|f1|^4 for the direct path plus the phase-aligned serving IRS.

    The cascaded amplitude is approximated as Gaussian (sum of N double-Rayleigh
    terms) and added coherently to the Rayleigh direct amplitude.
    """
    g_bf = beamforming_gain(n)
    sr = np.sqrt(l_r0)
    m2 = l_d * (1.0 + n * PI / 4.0 * np.sqrt(PI * l_r0) + g_bf * l_r0)
    m4 = l_d ** 2 * (
        2.0
        + 0.75 * PI ** 1.5 * n * sr
        + 6.0 * g_bf * l_r0
        + 2.0 * math.sqrt(PI) * (PI ** 3 * n ** 3 / 64.0 + 3.0 * PI * n ** 2 * _DR_VAR / 4.0) * sr ** 3
        + (PI ** 4 * n ** 4 / 256.0 + 3.0 * PI ** 2 * n ** 3 * _DR_VAR / 8.0
           + 3.0 * n ** 2 * _DR_VAR ** 2) * l_r0 ** 2
    )
    return m2, m4


def f2_moments(l_d, n, er1_val, er3_val):
    """E|f2|^2 and E|f2|^4 for the randomly scattering non-serving IRSs."""
    return n * l_d * er1_val, 2.0 * n ** 2 * l_d ** 2 * er3_val


def signal_moments(power_w, l_d, l_r0, n, er1_val, er3_val):
    """First two moments of the serving signal power (direct + IRS paths)."""
    a2, a4 = f1_moments(l_d, l_r0, n)
    b2, b4 = f2_moments(l_d, n, er1_val, er3_val)
    return SignalMoments(
        mean=power_w * (a2 + b2),
        second_moment=power_w ** 2 * (a4 + b4 + 4.0 * a2 * b2),
    )


def scattering_factor(l_r0, n, er1_val):
    """Mean relative power gain of interference paths, 1 + N l_r0 + N er1."""
    return 1.0 + n * l_r0 + n * er1_val
