"""Emission forward models for cuboid, sphere and ellipsoid fluorescent targets.

All models return the zero-lifetime emission density at a boundary detector.
Lifetime and instrument response are applied afterwards through
:func:`irf_with_lifetime` and :func:`convolve_irf`.

Discrete convolution convention
-------------------------------
A sampled model ``u[i] = u(t0 + i*dt)`` and a response ``q[j] = q(j*dt)`` are
combined as ``U[i] = dt * sum_j q[j] * u[i - j]`` (left Riemann, causal).  The
same ``dt`` factor is used everywhere, so measured IRFs can be used as they
come and any overall scale ends up in the fitted strength.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ._special import erf_diff, erfcx
from ._validation import check_int, check_positive
from .optics import Fluorophore, OpticalMedium

__all__ = [
    "CuboidTarget",
    "CubeTarget",
    "SphereTarget",
    "EllipsoidTarget",
    "TimeGrid",
    "TPSF",
    "IRF",
    "cuboid_model",
    "cuboid_tpsf",
    "cuboid_tpsfs",
    "tilde_u3",
    "sphere_tpsf",
    "ellipsoid_tpsf",
    "ellipsoid_tpsfs",
    "irf_with_lifetime",
    "convolve_irf",
    "emission_intensity",
    "add_noise",
]

# Depth integrand is cut where exp(-kappa (y^2 - a3^2)) drops below e^-40.
_DEPTH_CUTOFF = 40.0


# --------------------------------------------------------------------------- targets


@dataclass(frozen=True)
class CuboidTarget:
    """Axis-aligned box ``(a1,b1) x (a2,b2) x (a3,b3)`` with strength ``P`` (1/mm)."""

    a1: float
    b1: float
    a2: float
    b2: float
    a3: float
    b3: float
    P: float

    def __post_init__(self):
        v = self.as_array()
        if not np.all(np.isfinite(v)):
            raise ValueError("cuboid parameters must be finite")
        if not (self.a1 <= self.b1 and self.a2 <= self.b2 and 0 < self.a3 <= self.b3):
            raise ValueError(f"invalid cuboid extents {tuple(v[:6])}")
        if self.P < 0:
            raise ValueError("P must be >= 0")

    def as_array(self):
        return np.array([self.a1, self.b1, self.a2, self.b2, self.a3, self.b3, self.P], dtype=float)

    @classmethod
    def from_array(cls, a):
        return cls(*(float(v) for v in np.asarray(a, dtype=float).ravel()[:7]))

    @property
    def sides(self):
        return np.array([self.b1 - self.a1, self.b2 - self.a2, self.b3 - self.a3])

    @property
    def volume(self):
        return float(np.prod(self.sides))


@dataclass(frozen=True)
class CubeTarget:
    """Cube of side ``L`` centred at ``(X1, X2, X3)`` with strength ``Q``."""

    X1: float
    X2: float
    X3: float
    L: float
    Q: float

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError("L must be > 0")
        if not self.X3 > self.L / 2:
            raise ValueError("cube must lie strictly inside the half space (X3 > L/2)")
        if self.Q < 0:
            raise ValueError("Q must be >= 0")

    def as_array(self):
        return np.array([self.X1, self.X2, self.X3, self.L, self.Q], dtype=float)

    @classmethod
    def from_array(cls, a):
        return cls(*(float(v) for v in np.asarray(a, dtype=float).ravel()[:5]))

    def to_cuboid(self):
        h = self.L / 2
        return CuboidTarget(self.X1 - h, self.X1 + h, self.X2 - h, self.X2 + h,
                            self.X3 - h, self.X3 + h, self.Q)


@dataclass(frozen=True)
class EllipsoidTarget:
    """Ellipsoid with centre ``center`` and semi-axes ``axes`` (mm)."""

    center: tuple
    axes: tuple
    P: float

    def __post_init__(self):
        c = tuple(float(v) for v in self.center)
        ax = tuple(float(v) for v in self.axes)
        if len(c) != 3 or len(ax) != 3:
            raise ValueError("center and axes need three components")
        if min(ax) <= 0:
            raise ValueError("semi-axes must be > 0")
        if c[2] <= ax[2]:
            raise ValueError("target intersects the boundary")
        if self.P < 0:
            raise ValueError("P must be >= 0")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "axes", ax)

    @property
    def volume(self):
        return 4.0 * np.pi / 3.0 * float(np.prod(self.axes))


def SphereTarget(center, R, P):
    """Sphere of radius ``R``; a thin wrapper that returns an :class:`EllipsoidTarget`."""
    R = check_positive("R", R)
    return EllipsoidTarget(center=center, axes=(R, R, R), P=P)


# ----------------------------------------------------------------------- time grids


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t0 + k*dt`` for ``k = 0..n-1`` (ps)."""

    t0: float
    dt: float
    n: int

    def __post_init__(self):
        check_positive("dt", self.dt)
        check_int("n", self.n)
        if self.t0 < self.dt * (1 - 1e-12):
            raise ValueError("t0 must be >= dt (no evaluation at t = 0)")

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.n)

    @classmethod
    def up_to(cls, T, dt):
        """Grid ``dt, 2 dt, ...`` ending at the last multiple of ``dt`` not above ``T``."""
        n = int(np.floor(T / dt + 1e-9))
        return cls(dt, dt, n)


@dataclass(frozen=True)
class TPSF:
    pair: object
    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n,):
            raise ValueError("values length must equal grid.n")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class IRF:
    """Sampled response ``q[j] = q(j*dt)``, ``j = 0..len-1``."""

    dt: float
    values: np.ndarray

    def __post_init__(self):
        check_positive("dt", self.dt)
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("IRF values must be a non-empty 1-D array")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("IRF values must be finite and non-negative")
        if v.sum() <= 0:
            raise ValueError("IRF must have positive total")
        object.__setattr__(self, "values", v)

    @classmethod
    def impulse(cls, dt, n=1, at=0):
        v = np.zeros(n)
        v[at] = 1.0
        return cls(dt, v)


def _pair_coords(pair):
    """Accept an object with ``source``/``detector`` or a ``(xs, xd)`` tuple."""
    if hasattr(pair, "source"):
        xs, xd = pair.source, pair.detector
    else:
        xs, xd = pair
    return np.asarray(xs, dtype=float)[:2], np.asarray(xd, dtype=float)[:2]


# ------------------------------------------------------------------- quadrature rules


@lru_cache(maxsize=None)
def _chebyshev_nodes(n):
    k = np.arange(1, n + 1)
    return np.cos((2 * k - 1) * np.pi / (2 * n))


@lru_cache(maxsize=None)
def _legendre(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


# --------------------------------------------------------------------- cuboid model


def _half_space_factor(D, beta, y, tau):
    # K3(0, y; tau) / (2 exp(-y^2 / 4 D tau))
    return 1.0 - beta * np.sqrt(np.pi * D * tau) * erfcx((y + 2.0 * beta * D * tau) / np.sqrt(4.0 * D * tau))


def _depth_pair(D, beta, y, s, tau):
    """``K3(0,y;tau) * K3(y,0;s)`` for ``tau = t - s``."""
    kappa = (s + tau) / (4.0 * D * s * tau)
    return 4.0 * np.exp(-kappa * y * y) * _half_space_factor(D, beta, y, tau) * _half_space_factor(D, beta, y, s)


def _depth_integral(D, beta, a3, b3, s, tau, n_depth, mirrored=False):
    """Gauss-Legendre integral of the depth pair over ``[a3, b3]``.

    The upper limit is pulled in to where the Gaussian envelope has decayed by
    ``e^-40``, which keeps the fixed rule accurate at early times.

    ``mirrored`` says that the last axis of ``s`` is the reverse of that of
    ``tau`` (true for the symmetric Chebyshev rule); the boundary factor is
    then evaluated once and reused, halving the erfcx work.
    """
    kappa = (s + tau) / (4.0 * D * s * tau)
    hi = np.minimum(b3, np.sqrt(a3 * a3 + _DEPTH_CUTOFF / kappa))
    x, w = _legendre(n_depth)
    half = 0.5 * (hi - a3)
    y = a3[..., None] + half[..., None] * (x + 1.0)
    gs = _half_space_factor(D, beta, y, s[..., None])
    gt = gs[..., ::-1, :] if mirrored else _half_space_factor(D, beta, y, tau[..., None])
    f = 4.0 * np.exp(-kappa[..., None] * y * y) * gs * gt
    return half * np.tensordot(f, w, axes=([-1], [0]))


def tilde_u3(medium, t, s, a3, b3, n_depth=32):
    """Depth factor ``int_{a3}^{b3} K3(0,y;t-s) K3(y,0;s) dy``.

    Parameters
    ----------
    medium : OpticalMedium
    t, s : array_like
        Times with ``0 < s < t`` (ps).
    a3, b3 : array_like
        Depth limits, ``0 < a3 <= b3`` (mm).
    n_depth : int
        Gauss-Legendre order.
    """
    t, s, a3, b3 = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (t, s, a3, b3)))
    if np.any(s <= 0) or np.any(s >= t):
        raise ValueError("s must lie strictly inside (0, t)")
    if np.any(a3 <= 0) or np.any(b3 < a3):
        raise ValueError("need 0 < a3 <= b3")
    out = _depth_integral(medium.D, medium.beta, a3, b3, s, t - s, n_depth)
    return out[()] if out.ndim == 0 else out


def cuboid_model(medium, c_f, params, xs, xd, t, n_time=64, n_depth=32, gradient=False):
    """Vectorised cuboid emission model.

    Parameters
    ----------
    medium : OpticalMedium
    c_f : float
        Coupling constant ``c * gamma`` (mm/ps).
    params : array_like, shape (..., 7)
        ``(a1, b1, a2, b2, a3, b3, P)``.
    xs, xd : array_like, shape (..., 2)
        Source and detector positions on the surface.
    t : array_like
        Times (ps), > 0.  All inputs broadcast against each other.
    n_time : int
        Gauss-Chebyshev nodes for the outer time integral.
    n_depth : int
        Gauss-Legendre nodes for the depth integral.
    gradient : bool
        Also return the partial derivatives with respect to the seven
        parameters, shape (..., 7).

    Returns
    -------
    values : ndarray
    grad : ndarray, only when ``gradient`` is true
    """
    params = np.asarray(params, dtype=float)
    xs = np.asarray(xs, dtype=float)
    xd = np.asarray(xd, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("t must be > 0")
    shape = np.broadcast_shapes(params.shape[:-1], xs.shape[:-1], xd.shape[:-1], t.shape)
    params = np.broadcast_to(params, shape + (7,)).reshape(-1, 7)
    xs = np.broadcast_to(xs, shape + (2,)).reshape(-1, 2)
    xd = np.broadcast_to(xd, shape + (2,)).reshape(-1, 2)
    t = np.broadcast_to(t, shape).reshape(-1)

    D, beta = medium.D, medium.beta
    u = _chebyshev_nodes(n_time)
    tt = t[:, None]
    s = 0.5 * tt * (1.0 + u)
    tau = 0.5 * tt * (1.0 - u)
    k = 1.0 / np.sqrt(4.0 * D * s * tau / tt)
    frac = s / tt

    lat = []
    for i in range(2):
        m = frac * xd[:, i:i + 1] + (1.0 - frac) * xs[:, i:i + 1]
        lo = k * (params[:, 2 * i:2 * i + 1] - m)
        hi = k * (params[:, 2 * i + 1:2 * i + 2] - m)
        lat.append((lo, hi, erf_diff(lo, hi)))
    # the depth factor depends only on (t, a3, b3); gated data repeat times a lot
    key = np.column_stack([t, params[:, 4], params[:, 5]])
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    su = 0.5 * uniq[:, :1] * (1.0 + u)
    tu = 0.5 * uniq[:, :1] * (1.0 - u)
    a3u = np.broadcast_to(uniq[:, 1:2], su.shape)
    b3u = np.broadcast_to(uniq[:, 2:3], su.shape)
    u3 = _depth_integral(D, beta, a3u, b3u, su, tu, n_depth, mirrored=True)[inv]

    sep2 = np.sum((xd - xs) ** 2, axis=1)
    C = c_f / (64.0 * np.pi ** 2 * D * t) * np.exp(-sep2 / (4.0 * D * t) - medium.mu_A * t)
    w = np.pi / n_time
    u1, u2 = lat[0][2], lat[1][2]
    base = C * w * np.sum(u1 * u2 * u3, axis=1)
    P = params[:, 6]
    values = (P * base).reshape(shape)
    if not gradient:
        return values

    PC = (P * C * w)[:, None]
    g = np.empty((t.size, 7))
    gauss = 2.0 / np.sqrt(np.pi) * k
    others = (u2 * u3, u1 * u3)
    for i in range(2):
        lo, hi, _ = lat[i]
        g[:, 2 * i] = -np.sum(gauss * np.exp(-lo * lo) * others[i], axis=1)
        g[:, 2 * i + 1] = np.sum(gauss * np.exp(-hi * hi) * others[i], axis=1)
    lateral = u1 * u2
    g[:, 4] = -np.sum(lateral * _depth_pair(D, beta, a3u, su, tu)[inv], axis=1)
    g[:, 5] = np.sum(lateral * _depth_pair(D, beta, b3u, su, tu)[inv], axis=1)
    g[:, :6] *= PC
    g[:, 6] = base
    return values, g.reshape(shape + (7,))


def _coupling(fluor, medium):
    if fluor is None:
        return medium.c
    return fluor.c_f


def cuboid_tpsf(medium, fluor, target, pair, grid, n_time=64, n_depth=32):
    """Zero-lifetime emission TPSF of a cuboid target for one source-detector pair."""
    xs, xd = _pair_coords(pair)
    vals = cuboid_model(medium, _coupling(fluor, medium), target.as_array(), xs, xd, grid.times,
                        n_time=n_time, n_depth=n_depth)
    return TPSF(pair, grid, vals)


def cuboid_tpsfs(medium, fluor, target, pairs, grid, n_time=64, n_depth=32):
    """TPSFs for many pairs at once; returns an array of shape ``(len(pairs), grid.n)``."""
    coords = [_pair_coords(p) for p in pairs]
    xs = np.array([c[0] for c in coords])[:, None, :]
    xd = np.array([c[1] for c in coords])[:, None, :]
    return cuboid_model(medium, _coupling(fluor, medium), target.as_array(), xs, xd,
                        grid.times[None, :], n_time=n_time, n_depth=n_depth)


# ------------------------------------------------------------ sphere and ellipsoid


def _volume_nodes(target, n_r, n_phi, n_theta):
    """Stretched spherical product rule over the unit ball mapped onto the ellipsoid."""
    xr, wr = _legendre(n_r)
    xp, wp = _legendre(n_phi)
    xt, wt = _legendre(n_theta)
    r = 0.5 * (xr + 1.0)
    wr = 0.5 * wr * r * r
    phi = 0.5 * np.pi * (xp + 1.0)
    wp = 0.5 * np.pi * wp * np.sin(phi)
    th = np.pi * (xt + 1.0)
    wt = np.pi * wt
    A, B, Cz = target.axes
    R, PH, TH = np.meshgrid(r, phi, th, indexing="ij")
    pts = np.stack([
        target.center[0] + A * R * np.sin(PH) * np.cos(TH),
        target.center[1] + B * R * np.sin(PH) * np.sin(TH),
        target.center[2] + Cz * R * np.cos(PH),
    ], axis=-1).reshape(-1, 3)
    w = (wr[:, None, None] * wp[None, :, None] * wt[None, None, :]).reshape(-1)
    return pts, w


def _lateral_kernel(D, mu_A, pts, p, tau):
    # Green's function without its depth factor, point p on the surface.
    d2 = (pts[..., 0] - p[0]) ** 2 + (pts[..., 1] - p[1]) ** 2
    return np.exp(-mu_A * tau - d2 / (4.0 * D * tau)) / (4.0 * np.pi * D * tau) ** 1.5


def _surface_k3(D, beta, y3, tau):
    # K3(0, y3; tau)
    return 2.0 * np.exp(-y3 * y3 / (4.0 * D * tau)) * _half_space_factor(D, beta, y3, tau)


def _ellipsoid_at(medium, c_f, target, xs, xd, t, n_s, pts, w):
    D, beta, mu_A = medium.D, medium.beta, medium.mu_A
    x, ws = _legendre(n_s)
    s = 0.5 * t * (x + 1.0)
    ws = 0.5 * t * ws
    tau = t - s
    y3 = pts[:, 2]
    src = _lateral_kernel(D, mu_A, pts[None, :, :], xs, s[:, None]) * _surface_k3(D, beta, y3[None, :], s[:, None])
    det = _lateral_kernel(D, mu_A, pts[None, :, :], xd, tau[:, None]) * _surface_k3(D, beta, y3[None, :], tau[:, None])
    total = ws @ ((src * det) @ w)
    scale = c_f * medium.D * target.P * float(np.prod(target.axes))
    return scale * total


def ellipsoid_tpsf(medium, fluor, target, pair, grid, method="quadrature",
                   nodes=(48, 16, 16, 32), refine=2):
    """Emission TPSF of an ellipsoidal (or spherical) target.

    Parameters
    ----------
    medium : OpticalMedium
    fluor : Fluorophore or None
    target : EllipsoidTarget
    pair : SDPair or (xs, xd)
    grid : TimeGrid
    method : {"quadrature", "convolution"}
        ``"quadrature"`` applies the product Gauss-Legendre rule in
        ``(s, r, phi, theta)`` separately at every grid time.  ``"convolution"``
        samples both kernels on a uniform time lattice and convolves them with
        the trapezoid rule through FFTs, which is far cheaper for full curves.
    nodes : tuple of int
        Orders ``(s, r, phi, theta)``; the ``s`` order is ignored by the
        convolution route.
    refine : int
        Lattice refinement factor of the convolution route (lattice step
        ``grid.dt / refine``).
    """
    if method == "convolution":
        return TPSF(pair, grid, ellipsoid_tpsfs(medium, fluor, target, [pair], grid,
                                                nodes=nodes, refine=refine)[0])
    if method != "quadrature":
        raise ValueError(f"unknown method {method!r}")
    n_s, n_r, n_p, n_t = nodes
    xs, xd = _pair_coords(pair)
    pts, w = _volume_nodes(target, n_r, n_p, n_t)
    c_f = _coupling(fluor, medium)
    vals = np.array([_ellipsoid_at(medium, c_f, target, xs, xd, float(t), n_s, pts, w) for t in grid.times])
    return TPSF(pair, grid, vals)


sphere_tpsf = ellipsoid_tpsf


def ellipsoid_tpsfs(medium, fluor, target, pairs, grid, nodes=(48, 16, 16, 32), refine=2, chunk=2048):
    """Ellipsoid TPSFs for many pairs through lattice convolution.

    Grid times must be integer multiples of ``grid.dt``.  Returns an array of
    shape ``(len(pairs), grid.n)``.
    """
    refine = check_int("refine", refine)
    h = grid.dt / refine
    first = grid.t0 / h
    if abs(first - round(first)) > 1e-6:
        raise ValueError("grid.t0 must be a multiple of grid.dt for the convolution route")
    idx = (np.rint(first).astype(int) + refine * np.arange(grid.n))
    J = int(idx[-1])
    lag = h * np.arange(1, J + 1)
    nfft = 1 << int(np.ceil(np.log2(2 * J + 2)))
    D, beta, mu_A = medium.D, medium.beta, medium.mu_A
    pts, w = _volume_nodes(target, *nodes[1:])
    coords = [_pair_coords(p) for p in pairs]
    spots = {}
    for xs, xd in coords:
        spots.setdefault(tuple(xs), None)
        spots.setdefault(tuple(xd), None)

    # depth factor only depends on (y3, lag)
    y3u, inv = np.unique(pts[:, 2], return_inverse=True)
    k3 = _surface_k3(D, beta, y3u[:, None], lag[None, :])
    acc = np.zeros((len(coords), nfft // 2 + 1), dtype=complex)
    for lo in range(0, pts.shape[0], chunk):
        sl = slice(lo, lo + chunk)
        p = pts[sl]
        kk = k3[inv[sl]]
        spec = {}
        for key in spots:
            vals = _lateral_kernel(D, mu_A, p[:, None, :], key, lag[None, :]) * kk
            spec[key] = np.fft.rfft(vals, n=nfft, axis=1)
        for ip, (xs, xd) in enumerate(coords):
            acc[ip] += w[sl] @ (spec[tuple(xs)] * spec[tuple(xd)])
    conv = np.fft.irfft(acc, n=nfft, axis=1)
    # conv[m] pairs lag (i+1) with lag (j+1), so time index i+j+2 sits at m
    out = h * conv[:, idx - 2]
    out[:, idx < 2] = 0.0
    scale = _coupling(fluor, medium) * D * target.P * float(np.prod(target.axes))
    return scale * out


# ----------------------------------------------------- lifetime, IRF and intensity


def irf_with_lifetime(q, tau):
    """Combine an IRF with the exponential lifetime kernel.

    The kernel is integrated exactly over each bin, so bin ``j`` carries the
    weight ``exp(-j dt / tau) (1 - exp(-dt / tau))``.  The weights sum to one,
    and ``tau = 0`` returns ``q`` unchanged.
    """
    tau = check_positive("tau", tau, strict=False)
    if tau == 0:
        return IRF(q.dt, q.values.copy())
    n = q.values.size
    j = np.arange(n)
    c = np.exp(-j * q.dt / tau) * (-np.expm1(-q.dt / tau))
    # FFT round-off can leave -1e-19 crumbs in the zero tail
    return IRF(q.dt, np.maximum(_causal(c, q.values, n), 0.0))


def _causal(a, b, n):
    # first n samples of the full linear convolution of a and b
    if min(a.size, b.size) < 64:
        return np.convolve(a, b)[:n]
    m = 1 << int(np.ceil(np.log2(a.size + b.size)))
    return np.fft.irfft(np.fft.rfft(a, m) * np.fft.rfft(b, m), m)[:n]


def convolve_irf(model, qtilde, direct=False):
    """Observed TPSF ``U[i] = dt * sum_j qtilde[j] * u[i - j]``.

    The model grid must start at a multiple of its ``dt`` equal to ``qtilde.dt``;
    samples of ``u`` before ``t0`` are taken as zero.
    """
    g = model.grid
    if abs(g.dt - qtilde.dt) > 1e-9 * g.dt:
        raise ValueError(f"dt mismatch: model {g.dt} vs IRF {qtilde.dt}")
    u = model.values
    if direct:
        out = np.convolve(qtilde.values, u)[:u.size]
    else:
        out = _causal(qtilde.values, u, u.size)
    return TPSF(model.pair, g, g.dt * out)


def emission_intensity(tpsf):
    """Trapezoidal time integral of a TPSF from 0 to the last grid time.

    The curve is taken to start from zero at ``t = 0``.
    """
    t = np.concatenate([[0.0], tpsf.grid.times])
    v = np.concatenate([[0.0], tpsf.values])
    return float(np.trapezoid(v, t))


def add_noise(data, delta, seed=None):
    """Multiplicative Gaussian noise ``H * (1 + zeta * delta)``.

    ``data`` may be an array or a :class:`~fdot.measurement.MeasurementSet`; the
    same type is returned.
    """
    delta = check_positive("delta", delta, strict=False)
    values = data.values if hasattr(data, "values") and not isinstance(data, np.ndarray) else np.asarray(data, dtype=float)
    if delta == 0:
        noisy = np.array(values, dtype=float, copy=True)
    else:
        rng = np.random.default_rng(seed)
        noisy = values * (1.0 + delta * rng.standard_normal(values.shape))
    if hasattr(data, "with_values"):
        return data.with_values(noisy, delta=delta, seed=seed)
    return noisy
