"""Levenberg-Marquardt iteration with bounds and two damping rules.

Mode ``"B"`` is the classic multiplicative rule: the damping ``alpha`` is
divided by ``nu`` after an accepted step and multiplied by ``nu`` after a
rejected one.  Mode ``"A"`` picks ``alpha`` at every iterate so that the
linearised residual equals ``c1`` times the current residual, found by a
monotone root search in ``log(alpha)`` on the SVD of the scaled Jacobian.

Parameters are handled in scaled variables ``z = p / scale`` so that lengths
(mm) and strengths (1/mm) share one damping term.
"""

import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq

__all__ = ["LMSettings", "LMResult", "NonFiniteResidualError", "lm_iterate", "finite_difference_jacobian"]

STOP_REASONS = ("discrepancy", "residual_reduction", "min_step", "max_iter", "zero_residual",
                "damping_limit", "no_decrease")


class NonFiniteResidualError(RuntimeError):
    """The model returned NaN or inf for an iterate."""


@dataclass(frozen=True)
class LMSettings:
    """Stopping and damping controls.

    Attributes
    ----------
    max_iter : int
        Maximum number of accepted steps.
    min_step : float
        Stop when the accepted step has scaled length below this.
    min_residual_reduction : float
        Stop when an accepted step lowers the sum of squares by less than
        this fraction.
    c1, lam : float
        Mode A target ratio and discrepancy safety factor, ``lam * c1 > 1``.
    mode : {"A", "B"}
    nu : float
        Mode B damping factor.
    alpha0 : float
        Mode B starting damping relative to the largest diagonal entry of
        ``J^T J`` in scaled variables.
    reduction_patience : int
        Number of consecutive accepted steps that must each fall below
        ``min_residual_reduction`` before that criterion stops the run.  A
        single heavily damped step can look converged when it is not.
    use_discrepancy : bool
        Stop when ``||r|| <= lam * noise_norm`` (requires a noise norm).
    """

    max_iter: int = 800
    min_step: float = 1e-20
    min_residual_reduction: float = 1e-6
    c1: float = 0.8
    lam: float = 1.5
    mode: str = "B"
    nu: float = 10.0
    alpha0: float = 1e-3
    alpha_max: float = 1e16
    reduction_patience: int = 3
    use_discrepancy: bool = False

    def __post_init__(self):
        if not (isinstance(self.max_iter, int) and self.max_iter >= 1):
            raise ValueError("max_iter must be an integer >= 1")
        if not 0 < self.c1 < 1:
            raise ValueError("c1 must lie in (0, 1)")
        if not self.lam * self.c1 > 1:
            raise ValueError("lam * c1 must exceed 1")
        if self.mode not in ("A", "B"):
            raise ValueError("mode must be 'A' or 'B'")
        if not self.nu > 1:
            raise ValueError("nu must be > 1")
        if not (isinstance(self.reduction_patience, int) and self.reduction_patience >= 1):
            raise ValueError("reduction_patience must be an integer >= 1")
        if self.min_step < 0 or self.min_residual_reduction < 0:
            raise ValueError("tolerances must be >= 0")

    def replace(self, **kw):
        d = asdict(self)
        d.update(kw)
        return LMSettings(**d)

    def to_dict(self):
        return asdict(self)


@dataclass
class LMResult:
    params: np.ndarray
    residual_norm: float
    data_norm: float
    iterations: int
    evaluations: int
    stop_reason: str
    residual_history: list = field(default_factory=list)
    alpha_history: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def err(self):
        return self.residual_norm / self.data_norm if self.data_norm > 0 else self.residual_norm

    @property
    def converged(self):
        return self.stop_reason not in ("max_iter",)

    def to_dict(self):
        return {
            "params": [float(v) for v in self.params],
            "residual_norm": float(self.residual_norm),
            "err": float(self.err),
            "iterations": int(self.iterations),
            "evaluations": int(self.evaluations),
            "stop_reason": self.stop_reason,
            "residual_history": [float(v) for v in self.residual_history],
            "wall_time": float(self.wall_time),
        }


def finite_difference_jacobian(f, p, rel_step=1e-6):
    p = np.asarray(p, dtype=float)
    f0 = np.asarray(f(p), dtype=float)
    J = np.empty((f0.size, p.size))
    for i in range(p.size):
        h = rel_step * max(abs(p[i]), 1e-8)
        e = np.zeros_like(p)
        e[i] = h
        J[:, i] = (np.asarray(f(p + e)) - np.asarray(f(p - e))) / (2 * h)
    return J


def _project(p, lo, hi):
    # open bounds: keep a hair inside
    width = np.where(np.isfinite(hi - lo), hi - lo, 1.0)
    pad = 1e-9 * width
    return np.clip(p, lo + pad, hi - pad)


def _alpha_rule(s, ur, r_perp2, rnorm, c1):
    """Smallest alpha with linearised residual ``c1 * ||r||`` (mode A)."""
    target = c1 * rnorm

    def lin(log_alpha):
        a = np.exp(log_alpha)
        return np.sqrt(np.sum((a / (s ** 2 + a) * ur) ** 2) + r_perp2) - target

    smax2 = s[0] ** 2 if s.size else 1.0
    lo, hi = np.log(1e-20 * smax2 + 1e-300), np.log(1e20 * smax2 + 1e-300)
    if lin(lo) >= 0:
        return float(np.exp(lo))
    if lin(hi) <= 0:
        return float(np.exp(hi))
    return float(np.exp(brentq(lin, lo, hi, xtol=1e-10)))


def lm_iterate(residual_fn, jacobian_fn, init, bounds=None, settings=None, scale=None,
               data_norm=None, noise_norm=None, constrain=None):
    """Minimise ``||r(p)||`` where ``r = H - F(p)``.

    Parameters
    ----------
    residual_fn : callable
        ``p -> H - F(p)``.
    jacobian_fn : callable or None
        ``p -> dF/dp`` (the model Jacobian, not the residual's).  Finite
        differences are used when None.
    init : array_like
    bounds : (lo, hi), optional
        Open per-parameter bounds; every iterate is projected inside them.
    scale : array_like, optional
        Per-parameter scale for the damping term (default ones).
    data_norm : float, optional
        ``||H||`` for the relative misfit.
    noise_norm : float, optional
        Expected ``||H - H_delta||``, needed by the discrepancy stop.
    constrain : callable, optional
        Applied to every trial point after projection, e.g. to restore
        ordering constraints.

    Returns
    -------
    LMResult
    """
    t_start = time.perf_counter()
    settings = LMSettings() if settings is None else settings
    p = np.array(init, dtype=float)
    n = p.size
    lo, hi = (np.full(n, -np.inf), np.full(n, np.inf)) if bounds is None else (
        np.asarray(bounds[0], dtype=float), np.asarray(bounds[1], dtype=float))
    if np.any(p <= lo) or np.any(p >= hi):
        raise ValueError("init must lie strictly inside the bounds")
    scale = np.ones(n) if scale is None else np.asarray(scale, dtype=float)
    if jacobian_fn is None:
        jacobian_fn = lambda q: -finite_difference_jacobian(residual_fn, q)  # noqa: E731
    if constrain is not None:
        p = constrain(p)

    def resid(q):
        r = np.asarray(residual_fn(q), dtype=float)
        if not np.all(np.isfinite(r)):
            raise NonFiniteResidualError(f"non-finite residual at parameters {q.tolist()}")
        return r

    r = resid(p)
    evals = 1
    rn = float(np.linalg.norm(r))
    data_norm = float(data_norm) if data_norm is not None else float("nan")
    history, alphas = [rn], []
    stop = None
    disc = settings.lam * noise_norm if (settings.use_discrepancy and noise_norm is not None) else None
    alpha = None
    k = 0
    slow = 0
    while stop is None:
        if rn == 0.0:
            stop = "zero_residual"
            break
        if disc is not None and rn <= disc:
            stop = "discrepancy"
            break
        if k >= settings.max_iter:
            stop = "max_iter"
            break
        J = np.asarray(jacobian_fn(p), dtype=float) * scale
        if not np.all(np.isfinite(J)):
            raise NonFiniteResidualError(f"non-finite Jacobian at parameters {p.tolist()}")
        U, s, Vt = np.linalg.svd(J, full_matrices=False)
        ur = U.T @ r
        r_perp2 = max(rn ** 2 - float(ur @ ur), 0.0)
        if settings.mode == "B" and alpha is None:
            alpha = settings.alpha0 * (s[0] ** 2 if s.size else 1.0)
        c1 = settings.c1
        accepted = False
        while not accepted:
            if settings.mode == "A":
                alpha = _alpha_rule(s, ur, r_perp2, rn, c1)
            dz = Vt.T @ (s / (s ** 2 + alpha) * ur)
            trial = _project(p + scale * dz, lo, hi)
            if constrain is not None:
                trial = constrain(trial)
            r_new = resid(trial)
            evals += 1
            rn_new = float(np.linalg.norm(r_new))
            if rn_new < rn:
                accepted = True
                break
            if settings.mode == "B":
                alpha *= settings.nu
                if alpha > settings.alpha_max * max(s[0] ** 2, 1e-300):
                    stop = "damping_limit"
                    break
            else:
                c1 = 0.5 * (1.0 + c1)
                if 1.0 - c1 < 1e-12:
                    stop = "no_decrease"
                    break
        if not accepted:
            break
        step = float(np.linalg.norm((trial - p) / scale))
        reduction = (rn ** 2 - rn_new ** 2) / rn ** 2
        p, r, rn = trial, r_new, rn_new
        k += 1
        history.append(rn)
        alphas.append(float(alpha))
        if settings.mode == "B":
            alpha /= settings.nu
        if disc is not None and rn <= disc:
            stop = "discrepancy"
        elif step < settings.min_step:
            stop = "min_step"
        else:
            slow = slow + 1 if reduction < settings.min_residual_reduction else 0
            if slow >= settings.reduction_patience:
                stop = "residual_reduction"
    return LMResult(p, rn, data_norm, k, evals, stop, history, alphas, time.perf_counter() - t_start)
