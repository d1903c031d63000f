"""Small-time asymptotics of the cuboid model and its derivatives.

These routines evaluate closed-form leading terms exactly as they are usually
stated for this model.  They are diagnostics: the tests compare them with the
exact quadrature and the analytic gradient, and document where the two part
ways.
"""

from math import factorial, gamma, pi

import numpy as np
from numpy.polynomial import chebyshev as C
from scipy.integrate import quad

from .forward import CuboidTarget, _pair_coords

__all__ = [
    "watson_integral",
    "watson_expansion",
    "asymptotic_constants",
    "check_asymptotic_conditions",
    "asymptotic_gradient",
    "theta_matrix_determinant",
    "theta_matrix_reduced",
]


def watson_integral(k, alpha, f, t, epsabs=0.0, epsrel=1e-12):
    """``I(t) = int_0^t (s(t-s))^-alpha exp(-k t / (s(t-s))) f(t, s) ds`` by adaptive quadrature.

    The two halves are integrated separately so the peak at ``s = t/2`` sits on
    a breakpoint.
    """
    def g(s):
        q = s * (t - s)
        if q <= 0:
            return 0.0
        return q ** (-alpha) * np.exp(-k * t / q) * float(f(t, s))

    lo, _ = quad(g, 0.0, 0.5 * t, epsabs=epsabs, epsrel=epsrel, limit=200)
    hi, _ = quad(g, 0.5 * t, t, epsabs=epsabs, epsrel=epsrel, limit=200)
    return lo + hi


def _even_derivatives(f, t, order, degree=32):
    # derivatives in s at s = t/2 from a Chebyshev interpolant on [0, t]
    x = np.cos(np.pi * (np.arange(degree + 1) + 0.5) / (degree + 1))
    s = 0.5 * t * (1.0 + x)
    vals = np.asarray(f(t, s), dtype=float) * np.ones_like(s)
    c = C.chebfit(x, vals, degree)
    out = []
    for j in range(order + 1):
        d = C.chebder(c, 2 * j) if j else c
        out.append(C.chebval(0.0, d) * (2.0 / t) ** (2 * j))
    return np.array(out)


def watson_expansion(k, alpha, f, t, order=0):
    """Truncated small-time expansion of :func:`watson_integral`.

    Sums the terms ``j = 0..order`` of::

        2^(1-2j)/(2j)! t^(2(j-alpha)+1) f^(2j)(t, t/2) e^(-4k/t)
            * [G(alpha-1) (k/t)^(1-alpha) - 4 (j - alpha + 3/2) G(alpha-2) (k/t)^(2-alpha)]

    with ``G`` the gamma function.  ``f`` is called as ``f(t, s)`` with an
    array ``s``.
    """
    if not alpha < 1:
        raise ValueError("alpha must be < 1")
    if not k > 0 or not t > 0:
        raise ValueError("k and t must be > 0")
    if order < 0:
        raise ValueError("order must be >= 0")
    derivs = _even_derivatives(f, t, order)
    kt = k / t
    g1, g2 = gamma(alpha - 1), gamma(alpha - 2)
    total = 0.0
    for j in range(order + 1):
        bracket = g1 * kt ** (1 - alpha) - 4 * (j - alpha + 1.5) * g2 * kt ** (2 - alpha)
        total += (2.0 ** (1 - 2 * j) / factorial(2 * j) * t ** (2 * (j - alpha) + 1)
                  * derivs[j] * np.exp(-4 * kt) * bracket)
    return float(total)


def asymptotic_constants(medium, c_f):
    """``(C1, C2, C3)`` of the leading derivative terms."""
    D = medium.D
    c1 = 16 * c_f / (pi ** 3.5 * D) * gamma(-2.5)
    c2 = 8 * c_f / (pi ** 3 * D) * gamma(-2.5)
    c3 = -48 * c_f / (pi ** 3 * D) * gamma(-3.5)
    return c1, c2, c3


def check_asymptotic_conditions(target, pair):
    """Validate the lateral conditions at ``s = t/2``.

    Returns the midpoint; raises ``ValueError`` when ``|b_i - m_i| > |a_i - m_i|``
    fails or a face passes through the midpoint.
    """
    a = target.as_array() if isinstance(target, CuboidTarget) else np.asarray(target, dtype=float)
    xs, xd = _pair_coords(pair)
    mid = 0.5 * (xs + xd)
    for i in range(2):
        da, db = a[2 * i] - mid[i], a[2 * i + 1] - mid[i]
        if da == 0 or db == 0:
            raise ValueError(f"face {i + 1} passes through the source-detector midpoint")
        if not abs(db) > abs(da):
            raise ValueError(f"|b{i + 1} - m{i + 1}| must exceed |a{i + 1} - m{i + 1}|")
    return mid


def asymptotic_gradient(medium, target, pair, t, c_f=None):
    """Leading small-time terms of the seven partials, in the order a1..b3, P."""
    t = float(t)
    if not t > 0:
        raise ValueError("t must be > 0")
    a = target.as_array() if isinstance(target, CuboidTarget) else np.asarray(target, dtype=float)
    c_f = medium.c if c_f is None else c_f
    xs, xd = _pair_coords(pair)
    mid = check_asymptotic_conditions(a, (xs, xd))
    a1, b1, a2, b2, a3, b3, P = a
    D = medium.D
    c1, c2, c3 = asymptotic_constants(medium, c_f)
    common = np.exp(-(np.sum((xd - xs) ** 2) / (4 * D * t) + medium.mu_A * t))
    m3 = np.array([mid[0], mid[1], 0.0])

    def corner(p):
        return np.exp(-np.sum((np.asarray(p) - m3) ** 2) / (D * t))

    e_aaa = corner((a1, a2, a3))
    inv1, inv2 = 1.0 / (a1 - mid[0]), 1.0 / (a2 - mid[1])
    gr = np.empty(7)
    gr[0] = P * c1 / a3 * inv2 * (((a1 - xs[0]) ** 2 + a3 ** 2) / (4 * D * t)) ** 2.5 * common * e_aaa
    gr[1] = -P * c1 / a3 * inv2 * (((b1 - xs[0]) ** 2 + a3 ** 2) / (4 * D * t)) ** 2.5 * common * corner((b1, a2, a3))
    gr[2] = P * c1 / a3 * inv1 * (((a2 - xs[1]) ** 2 + a3 ** 2) / (4 * D * t)) ** 2.5 * common * e_aaa
    gr[3] = -P * c1 / a3 * inv1 * (((b2 - xs[1]) ** 2 + a3 ** 2) / (4 * D * t)) ** 2.5 * common * corner((a1, b2, a3))
    gr[4] = P * c2 * inv1 * inv2 * (a3 ** 2 / (4 * D * t)) ** 2.5 * common * e_aaa
    gr[5] = -P * c2 * inv1 * inv2 * (b3 ** 2 / (4 * D * t)) ** 2.5 * common * e_aaa
    gr[6] = c3 * inv1 * inv2 * t / a3 * (a3 ** 2 / (4 * D * t)) ** 3.5 * common * e_aaa
    return gr


def _theta_rows(th):
    th = np.asarray(th, dtype=float)
    if th.shape != (5, 2):
        raise ValueError("thetas must have shape (5, 2)")
    if np.any(th == 0):
        raise ValueError("theta values must be nonzero")
    return th, 1.0 / np.prod(th)


def theta_matrix_determinant(thetas):
    """Determinant of the 5x5 leading-order theta matrix, prefactor included."""
    th, pref = _theta_rows(thetas)
    m = np.column_stack([th[:, 0] ** 6, th[:, 0] * (1 - th[:, 0]) ** 5,
                         th[:, 1] ** 6, th[:, 1] * (1 - th[:, 1]) ** 5, np.ones(5)])
    return float(pref * np.linalg.det(m))


def theta_matrix_reduced(thetas):
    """The 3x3 approximation obtained by replacing the first two rows by
    ``(1,0,1,0,1)`` and ``(0,0,0,0,1)``."""
    th, pref = _theta_rows(thetas)
    r = th[2:]
    m = np.column_stack([r[:, 0] * (1 - r[:, 0]) ** 5, r[:, 1] ** 6 - r[:, 0] ** 6,
                         r[:, 1] * (1 - r[:, 1]) ** 5])
    return float(-pref * np.linalg.det(m))
