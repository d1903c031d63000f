"""Half-space diffusion kernels with a Robin boundary.

Units are fixed throughout the package: lengths in mm, times in ps,
coefficients in 1/mm, rates in 1/ps.  Every function broadcasts over its array
arguments; points carry their coordinates in the last axis.
"""

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ._special import erfcx
from ._validation import check_points, check_positive, check_times

__all__ = [
    "OpticalMedium",
    "Fluorophore",
    "BoundaryPoint",
    "erfc_scaled",
    "excitation_density",
    "green_k3",
    "green_kernel",
]

erfc_scaled = erfcx


@dataclass(frozen=True)
class OpticalMedium:
    """Homogeneous scattering/absorbing background.

    Parameters
    ----------
    c : float
        Speed of light in the medium (mm/ps).
    mu_s_prime : float
        Reduced scattering coefficient (1/mm).
    mu_a : float
        Absorption coefficient (1/mm).
    beta : float
        Robin boundary parameter (1/mm), taken as given.

    Attributes
    ----------
    D : float
        Diffusion coefficient ``c / (3 mu_s_prime)`` in mm^2/ps.
    mu_A : float
        Absorption rate ``c * mu_a`` in 1/ps.
    """

    c: float = 0.219
    mu_s_prime: float = 1.0
    mu_a: float = 0.01
    beta: float = 0.5493
    D: float = field(init=False, repr=False)
    mu_A: float = field(init=False, repr=False)

    def __post_init__(self):
        check_positive("c", self.c)
        check_positive("mu_s_prime", self.mu_s_prime)
        check_positive("mu_a", self.mu_a, strict=False)
        check_positive("beta", self.beta, strict=False)
        object.__setattr__(self, "D", self.c / (3.0 * self.mu_s_prime))
        object.__setattr__(self, "mu_A", self.c * self.mu_a)

    def to_dict(self):
        return {"c": self.c, "mu_s_prime": self.mu_s_prime, "mu_a": self.mu_a, "beta": self.beta}


@dataclass(frozen=True)
class Fluorophore:
    """Fluorescent dye: lifetime ``tau`` (ps) and quantum efficiency ``gamma``.

    ``c`` is the speed of light used to form the coupling ``c_f = c * gamma``.
    """

    tau: float = 0.0
    gamma: float = 1.0
    c: float = 0.219

    def __post_init__(self):
        check_positive("tau", self.tau, strict=False)
        g = check_positive("gamma", self.gamma)
        if g > 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {g}")
        check_positive("c", self.c)

    @property
    def c_f(self):
        return self.c * self.gamma


class BoundaryPoint(NamedTuple):
    """Point on the surface ``x3 = 0``."""

    x1: float
    x2: float


def _depth_factor(D, beta, h, tau):
    # exp(-h^2/4Dtau) * (1 - 2 beta sqrt(pi D tau) erfcx(z)),  h = x3 + y3.
    # This is exp(beta h + beta^2 D tau) erfc(z) rewritten through erfcx.
    sq = np.sqrt(4.0 * D * tau)
    z = (h + 2.0 * beta * D * tau) / sq
    return np.exp(-(h * h) / (sq * sq)) * (1.0 - 2.0 * beta * np.sqrt(np.pi * D * tau) * erfcx(z))


def green_k3(medium, x3, y3, dt):
    """Depth factor of the half-space Green's function.

    Parameters
    ----------
    medium : OpticalMedium
    x3, y3 : array_like
        Depths (mm), both >= 0.
    dt : array_like
        Elapsed time (ps), > 0.

    Returns
    -------
    ndarray or float
        ``K3(x3, y3; dt)``; symmetric in ``x3`` and ``y3``.
    """
    dt = check_times(dt, "dt")
    x3 = np.asarray(x3, dtype=float)
    y3 = np.asarray(y3, dtype=float)
    if np.any(x3 < 0) or np.any(y3 < 0):
        raise ValueError("depths must be >= 0")
    D = medium.D
    out = _depth_factor(D, medium.beta, x3 + y3, dt) + np.exp(-((x3 - y3) ** 2) / (4.0 * D * dt))
    return out[()] if np.ndim(out) == 0 else out


def green_kernel(medium, x, y, dt):
    """Full Green's function ``K(x, y; dt)`` of the half space.

    ``x`` and ``y`` are points of shape ``(..., 3)``; ``dt`` broadcasts against
    the leading axes.
    """
    x = check_points(x, 3, "x")
    y = check_points(y, 3, "y")
    dt = check_times(dt, "dt")
    D = medium.D
    lateral = (x[..., 0] - y[..., 0]) ** 2 + (x[..., 1] - y[..., 1]) ** 2
    pre = np.exp(-medium.mu_A * dt - lateral / (4.0 * D * dt)) / (4.0 * np.pi * D * dt) ** 1.5
    out = pre * green_k3(medium, x[..., 2], y[..., 2], dt)
    return out[()] if np.ndim(out) == 0 else out


def excitation_density(medium, x, t, xs):
    """Excitation energy density for a unit boundary pulse at ``xs``.

    Parameters
    ----------
    medium : OpticalMedium
    x : array_like, shape (..., 3)
        Interior points with ``x3 >= 0``.
    t : array_like
        Time after the pulse (ps), > 0.
    xs : array_like, shape (..., 2)
        Source positions on the surface.

    Returns
    -------
    ndarray or float
        ``u_e(x, t; xs) = D * K(x, (xs, 0); t)``.
    """
    xs = check_points(xs, 2, "xs")
    src = np.concatenate([xs, np.zeros(xs.shape[:-1] + (1,))], axis=-1)
    return medium.D * green_kernel(medium, x, src, t)
