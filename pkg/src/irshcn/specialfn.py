"""Special-function kernels used by the analytical engine.

Gauss hypergeometric 2F1 on the closed left half plane, the regularized
incomplete gamma function, derivatives of ``exp(V(s))`` through complete
Bell polynomials, and numerical inversion of Laplace transforms of CDFs.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import comb, factorial, log

import numpy as np
from scipy import special

from .exceptions import NumericFailure, OrderOverflowError, PreconditionError

__all__ = [
    "LaplaceInverter",
    "MAX_BELL_ORDER",
    "bell_polynomials",
    "composition_derivatives",
    "gauss_2f1",
    "hyp2f1_complex",
    "inverse_laplace_cdf",
    "lower_gamma_reg",
    "upper_gamma_reg",
]

MAX_BELL_ORDER = 20

_EPS = 1e-17
_MAX_TERMS = 4000
# beyond this |z| the 1/z connection formula converges at least as fast as 2^-n
_CONNECT_RADIUS = 2.0
_DIRECT_RADIUS = 0.5
_PFAFF_RADIUS = 0.9
# integer a - b: Pfaff is the only series route; beyond this it needs too many terms
_SLOW_PFAFF_RADIUS = 0.97
# second-chance radii for points none of the fast routes accept
_WIDE_DIRECT = 0.85
_WIDE_CONNECT = 1.15


# ---------------------------------------------------------------------------
# Gauss hypergeometric function
# ---------------------------------------------------------------------------

def _series(a, b, c, z, max_terms=_MAX_TERMS):
    """Sum the defining power series elementwise until every term is negligible."""
    term = np.ones(np.broadcast(a, b, c, z).shape, dtype=np.result_type(z, float))
    total = term.copy()
    for n in range(max_terms):
        term = term * ((a + n) * (b + n) / ((c + n) * (n + 1.0))) * z
        total = total + term
        if n % 4 == 3 and np.all(np.abs(term) <= _EPS * np.abs(total)):
            return total
    raise NumericFailure("2F1 series did not converge", a=a, b=b, c=c, z=z)


def _connection(a, b, c, z):
    """1/z connection formula; requires a - b to be non-integer."""
    w = 1.0 / z
    mz = -z
    t1 = (special.gamma(c) * special.gamma(b - a) * special.rgamma(b) * special.rgamma(c - a)
          * mz ** (-a) * _series(a, a - c + 1.0, a - b + 1.0, w))
    t2 = (special.gamma(c) * special.gamma(a - b) * special.rgamma(a) * special.rgamma(c - b)
          * mz ** (-b) * _series(b, b - c + 1.0, b - a + 1.0, w))
    return t1 + t2


def _pfaff(a, b, c, z):
    u = z / (z - 1.0)
    return (1.0 - z) ** (-a) * _series(a, c - b, c, u)


def hyp2f1_complex(a, b, c, z):
    """2F1(a, b; c; z) for real parameters and real or complex ``z``.

    Arrays broadcast. Each element is routed to the direct series, the 1/z
    connection formula or the Pfaff transformation, whichever converges
    fastest. Points none of them handle (right half plane near |z| = 1)
    are delegated to mpmath.
    """
    a, b, c = (np.asarray(p, dtype=float) for p in (a, b, c))
    z = np.asarray(z)
    if not np.iscomplexobj(z):
        z = z.astype(float)
    a, b, c, z = np.broadcast_arrays(a, b, c, z)
    shape = z.shape
    a, b, c, z = (np.ravel(v) for v in (a, b, c, z))
    out = np.empty(z.shape, dtype=z.dtype)

    az = np.abs(z)
    integer_gap = np.isclose(a - b, np.round(a - b), rtol=0.0, atol=1e-12)
    with np.errstate(divide="ignore", invalid="ignore"):
        pfaff_ratio = np.abs(z / (z - 1.0))
    direct = az <= _DIRECT_RADIUS
    connect = ~direct & (az >= _CONNECT_RADIUS) & ~integer_gap
    pfaff = ~direct & ~connect & (pfaff_ratio <= _PFAFF_RADIUS)
    slow = ~direct & ~connect & ~pfaff & (pfaff_ratio <= _SLOW_PFAFF_RADIUS) & integer_gap
    rest = ~(direct | connect | pfaff | slow)
    wide_direct = rest & (az <= _WIDE_DIRECT)
    wide_connect = rest & (az >= _WIDE_CONNECT) & ~integer_gap
    rest &= ~(wide_direct | wide_connect)

    for mask, fn in ((direct, _series), (connect, _connection), (pfaff, _pfaff), (slow, _pfaff),
                     (wide_direct, _series), (wide_connect, _connection)):
        if mask.any():
            out[mask] = fn(a[mask], b[mask], c[mask], z[mask])
    if rest.any():
        import mpmath

        for i in np.flatnonzero(rest):
            val = mpmath.hyp2f1(a[i], b[i], c[i], complex(z[i]))
            out[i] = complex(val) if np.iscomplexobj(out) else float(mpmath.re(val))
    out = out.reshape(shape)
    return out if out.ndim else out[()]


def gauss_2f1(a, b, c, x):
    """Gauss hypergeometric function 2F1(a, b; c; x) for real ``x <= 0``.

    Parameters
    ----------
    a, b, c : float or array_like
        Real parameters; ``c`` must be positive.
    x : float or array_like
        Non-positive argument.

    Returns
    -------
    float or ndarray
        Value to roughly 1e-10 relative accuracy.

    Raises
    ------
    PreconditionError
        If ``c <= 0`` or any ``x > 0``.
    NumericFailure
        If no series reaches the tolerance within the term budget.
    """
    x = np.asarray(x, dtype=float)
    c_arr = np.asarray(c, dtype=float)
    if np.any(c_arr <= 0):
        raise PreconditionError("2F1 requires c > 0", c=c)
    if np.any(x > 0):
        raise PreconditionError("gauss_2f1 is defined here for x <= 0 only", x=x)
    return hyp2f1_complex(a, b, c, x)


# ---------------------------------------------------------------------------
# Incomplete gamma
# ---------------------------------------------------------------------------

def upper_gamma_reg(tau, x):
    """Regularized upper incomplete gamma Q(tau, x), the Gamma(tau, 1) CCDF."""
    if np.any(np.asarray(tau) <= 0) or np.any(np.asarray(x) < 0):
        raise PreconditionError("need tau > 0 and x >= 0", tau=tau, x=x)
    return special.gammaincc(tau, x)


def lower_gamma_reg(tau, x):
    """Regularized lower incomplete gamma P(tau, x) = 1 - Q(tau, x)."""
    if np.any(np.asarray(tau) <= 0) or np.any(np.asarray(x) < 0):
        raise PreconditionError("need tau > 0 and x >= 0", tau=tau, x=x)
    return special.gammainc(tau, x)


# ---------------------------------------------------------------------------
# Faa di Bruno through complete Bell polynomials
# ---------------------------------------------------------------------------

def _partitions(n, largest=None):
    """Yield partitions of n as non-increasing tuples of parts."""
    if largest is None:
        largest = n
    if n == 0:
        yield ()
        return
    for part in range(min(n, largest), 0, -1):
        for rest in _partitions(n - part, part):
            yield (part,) + rest


@lru_cache(maxsize=None)
def _bell_table(n):
    """Multiplicity matrix and integer coefficients of the order-n complete Bell polynomial.

    Row r of the matrix holds (m_1, ..., m_n) for one partition of n; the
    coefficient is n! / prod(m_j! (j!)^m_j).
    """
    rows, coefs = [], []
    for parts in _partitions(n):
        mult = [0] * n
        for p in parts:
            mult[p - 1] += 1
        denom = 1
        for j, m in enumerate(mult, start=1):
            denom *= factorial(m) * factorial(j) ** m
        rows.append(mult)
        coefs.append(factorial(n) // denom)
    mult = np.array(rows, dtype=float).reshape(len(rows), n)
    mult.setflags(write=False)
    coef = np.array(coefs, dtype=float)
    coef.setflags(write=False)
    return mult, coef


def bell_polynomials(x, n):
    """Complete Bell polynomials B_0..B_n evaluated at x = (x_1, ..., x_n).

    ``x`` may carry trailing axes (shape ``(n, ...)``); the polynomials are
    then evaluated elementwise along them and each B_i has the trailing shape.
    """
    if n > MAX_BELL_ORDER:
        raise OrderOverflowError(
            f"derivative order {n} exceeds {MAX_BELL_ORDER}; use the interference-CDF branch",
            order=n,
        )
    x = np.asarray(x, dtype=float)[:n]
    tail = x.shape[1:]
    flat = x.reshape(n, int(np.prod(tail, dtype=int)))
    with np.errstate(divide="ignore"):
        log_abs = np.log(np.abs(flat))
    is_zero = (flat == 0).astype(float)
    is_neg = (flat < 0).astype(float)
    log_abs[flat == 0] = 0.0
    out = [np.ones(tail) if tail else 1.0]
    for i in range(1, n + 1):
        mult, coef = _bell_table(i)
        # prod_j x_j^m_j per partition, via logs; sign from the parity of negative factors
        mag = np.exp(mult @ log_abs[:i])
        sign = 1.0 - 2.0 * np.mod(mult @ is_neg[:i], 2.0)
        zero = (mult @ is_zero[:i]) > 0
        val = coef @ np.where(zero, 0.0, sign * mag)
        out.append(val.reshape(tail) if tail else float(val[0]))
    return out


def composition_derivatives(v_derivs, n, v0):
    """Derivatives of exp(V(s)) of orders 0..n from the derivatives of V.

    ``v_derivs[i - 1]`` holds V^(i)(s); only the first ``n`` entries are used.
    Returns a list whose entry i is d^i/ds^i exp(V(s)).
    """
    if n < 0:
        raise PreconditionError("order must be non-negative", n=n)
    if len(v_derivs) < n:
        raise PreconditionError("need at least n derivatives of V", n=n, given=len(v_derivs))
    base = np.exp(v0)
    return [base * b for b in bell_polynomials(v_derivs, n)]


# ---------------------------------------------------------------------------
# Numerical Laplace inversion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LaplaceInverter:
    """Settings for numerical inversion of a Laplace transform.

    ``terms`` is the number of transform evaluations per inversion (roughly;
    the Euler scheme uses ``2 * (terms // 2) + 1`` nodes).
    """

    method: str = "euler_summation"
    terms: int = 40
    precision_target: float = 1e-6

    def __post_init__(self):
        if self.method not in ("euler_summation", "talbot_contour"):
            raise PreconditionError("unknown inversion method", method=self.method)
        if self.terms < 10:
            raise PreconditionError("need at least 10 terms", terms=self.terms)
        if not 0.0 < self.precision_target <= 1e-3:
            raise PreconditionError("precision_target must lie in (0, 1e-3]",
                                    precision_target=self.precision_target)


@lru_cache(maxsize=None)
def _euler_nodes(m):
    xi = np.zeros(2 * m + 1)
    xi[0] = 0.5
    xi[1:m + 1] = 1.0
    xi[2 * m] = 2.0 ** -m
    for k in range(1, m):
        xi[2 * m - k] = xi[2 * m - k + 1] + 2.0 ** -m * comb(m, k)
    k = np.arange(2 * m + 1)
    eta = (-1.0) ** k * xi
    nodes = m * log(10.0) / 3.0 + 1j * np.pi * k
    return nodes, eta * 10.0 ** (m / 3.0)


@lru_cache(maxsize=None)
def _talbot_nodes(m):
    k = np.arange(1, m)
    cot = 1.0 / np.tan(k * np.pi / m)
    delta = np.concatenate([[2.0 * m / 5.0], 2.0 * k * np.pi / 5.0 * (cot + 1j)])
    gamma = np.concatenate([
        [0.5 * np.exp(delta[0])],
        (1.0 + 1j * (k * np.pi / m) * (1.0 + cot ** 2) - 1j * cot) * np.exp(delta[1:]),
    ])
    return delta.astype(complex), gamma * 2.0 / 5.0


def _invert(fhat, t, method, m):
    nodes, weights = _euler_nodes(m) if method == "euler_summation" else _talbot_nodes(m)
    nodes = nodes.reshape((-1,) + (1,) * t.ndim)
    weights = weights.reshape(nodes.shape)
    vals = np.asarray(fhat(nodes / t), dtype=complex)
    return np.sum((weights * vals).real, axis=0) / t


def inverse_laplace_cdf(transform, y, inverter=LaplaceInverter()):
    """CDF at ``y`` of a nonnegative random variable from its Laplace transform.

    ``transform`` is called with a complex ndarray of evaluation points of
    shape ``(nodes,) + shape(y)`` and must return E[exp(-s X)] elementwise.
    ``y`` may be a scalar or 1-D array. The inversion is run at two resolutions and a
    point is accepted when they agree within the inverter's precision target.
    Unsettled points are retried at 1.5x and 2x the node count, then with the
    other method; if that also fails a :class:`NumericFailure` is raised.
    """
    y_arr = np.asarray(y, dtype=float)
    scalar = y_arr.ndim == 0
    y_arr = np.atleast_1d(y_arr)
    if y_arr.ndim != 1:
        raise PreconditionError("y must be a scalar or 1-D array", shape=y_arr.shape)
    out = np.zeros(y_arr.shape)
    pos = y_arr > 0
    if not pos.any():
        return float(out[0]) if scalar else out

    at_zero = np.asarray(transform(np.zeros((1,) + y_arr.shape, dtype=complex)))
    if np.any(np.abs(at_zero - 1.0) > 1e-9):
        raise PreconditionError("transform(0) must equal 1", value=at_zero)

    eps = inverter.precision_target
    todo = pos.copy()
    methods = [inverter.method] + [m for m in _METHOD_ORDER if m != inverter.method]
    # sharp CDFs need more nodes: raise the resolution before switching method
    levels = (inverter.terms, inverter.terms * 3 // 2, inverter.terms * 2)
    for method in methods:
        for terms in levels:
            idx = np.nonzero(todo)[0]
            t = y_arr[idx]
            m, m_check = _resolutions(method, terms)
            with np.errstate(over="ignore", invalid="ignore"):
                value = _invert(_subset(transform, idx, y_arr.shape), t, method, m)
                check = _invert(_subset(transform, idx, y_arr.shape), t, method, m_check)
            good = (np.isfinite(value) & (np.abs(value - check) <= eps)
                    & (value >= -eps) & (value <= 1.0 + eps))
            out[idx[good]] = np.clip(value[good], 0.0, 1.0)
            todo[idx[good]] = False
            if not todo.any():
                return float(out[0]) if scalar else out
    i = int(np.argmax(todo))
    raise NumericFailure("Laplace inversion did not reach tolerance", y=float(y_arr[i]),
                         method=inverter.method)


_METHOD_ORDER = ("euler_summation", "talbot_contour")


def _resolutions(method, terms):
    if method == "euler_summation":
        m = terms // 2
        return m, max(m - 4, 5)
    return terms, max(terms - 8, 10)


def _subset(transform, idx, shape):
    """Restrict a transform over y-shaped trailing axes to the entries ``idx``.

    The transform sees the full trailing shape; unused slots are padded with
    s = 1 and discarded.
    """
    def sub(s):
        full = np.ones(s.shape[:1] + shape, dtype=complex)
        full[:, idx] = s
        return np.asarray(transform(full))[:, idx] / s
    return sub
