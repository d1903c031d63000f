"""Jacobians of the cuboid model and identifiability diagnostics."""

from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy.linalg import solve_triangular

from .forward import CuboidTarget, _pair_coords, cuboid_model

__all__ = [
    "PARAMETER_NAMES",
    "MeasurementDesign",
    "Jacobian",
    "cuboid_gradient",
    "finite_difference_gradient",
    "peak_times",
    "sensitivity_matrix",
    "numerical_rank",
    "determinant_condition",
    "f_complete_scan",
    "compare_designs",
]

PARAMETER_NAMES = ("a1", "b1", "a2", "b2", "a3", "b3", "P")
RANK_RTOL = 1e-10
PD_RTOL = 1e-8


def _params(target):
    if isinstance(target, CuboidTarget):
        return target.as_array()
    a = np.asarray(target, dtype=float)
    if a.shape != (7,):
        raise ValueError("target must be a CuboidTarget or a 7-vector")
    return a


def _cf(medium, fluor):
    return medium.c if fluor is None else fluor.c_f


def cuboid_gradient(medium, target, pair, t, fluor=None, n_time=64, n_depth=32):
    """Analytic partial derivatives of the cuboid model.

    Parameters
    ----------
    medium : OpticalMedium
    target : CuboidTarget or array_like of 7
    pair : SDPair or (xs, xd)
    t : float or array_like
        Time(s) in ps, > 0.

    Returns
    -------
    ndarray
        Shape ``(7,)`` for scalar ``t``, otherwise ``t.shape + (7,)``.  Order
        follows :data:`PARAMETER_NAMES`.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("t must be > 0")
    xs, xd = _pair_coords(pair)
    _, g = cuboid_model(medium, _cf(medium, fluor), _params(target), xs, xd, t,
                        n_time=n_time, n_depth=n_depth, gradient=True)
    return g


def finite_difference_gradient(medium, target, pair, t, fluor=None, rel_step=1e-4,
                               scale=None, n_time=64, n_depth=32):
    """Central differences with one Richardson level (steps ``h`` and ``h/2``).

    ``scale`` gives the per-parameter scale multiplying ``rel_step``; by default
    the magnitude of each parameter (at least 1 mm for lengths).
    """
    a = _params(target)
    xs, xd = _pair_coords(pair)
    cf = _cf(medium, fluor)
    if scale is None:
        scale = np.maximum(np.abs(a), 1.0)
        scale[6] = abs(a[6]) if a[6] != 0 else 1.0
    out = np.empty(np.shape(t) + (7,))

    def f(p):
        return cuboid_model(medium, cf, p, xs, xd, t, n_time=n_time, n_depth=n_depth)

    for i in range(7):
        h = rel_step * scale[i]
        e = np.zeros(7)
        e[i] = 1.0
        d1 = (f(a + h * e) - f(a - h * e)) / (2 * h)
        d2 = (f(a + 0.5 * h * e) - f(a - 0.5 * h * e)) / h
        out[..., i] = (4.0 * d2 - d1) / 3.0
    return out


@dataclass
class MeasurementDesign:
    """Source-detector pairs with their measurement times (ps)."""

    pairs: list
    times: list

    def __post_init__(self):
        if len(self.pairs) == 0:
            raise ValueError("design needs at least one pair")
        if len(self.times) != len(self.pairs):
            raise ValueError("one time array per pair is required")
        self.times = [np.atleast_1d(np.asarray(t, dtype=float)) for t in self.times]
        for t in self.times:
            if t.size == 0 or np.any(np.diff(t) <= 0):
                raise ValueError("times must be non-empty and strictly increasing per pair")

    def rows(self):
        """Stacked ``(xs, xd, t, pair_index)`` arrays, one entry per measurement."""
        xs, xd, tt, idx = [], [], [], []
        for i, (p, t) in enumerate(zip(self.pairs, self.times)):
            s, d = _pair_coords(p)
            xs.append(np.repeat(s[None], t.size, 0))
            xd.append(np.repeat(d[None], t.size, 0))
            tt.append(t)
            idx.append(np.full(t.size, i))
        return np.concatenate(xs), np.concatenate(xd), np.concatenate(tt), np.concatenate(idx)

    @property
    def size(self):
        return int(sum(t.size for t in self.times))


def peak_times(medium, target, pairs, grid, fluor=None):
    """Grid time of the maximum of each pair's cuboid TPSF (no sub-grid refinement)."""
    a = _params(target)
    out = []
    for p in pairs:
        xs, xd = _pair_coords(p)
        v = cuboid_model(medium, _cf(medium, fluor), a, xs, xd, grid.times)
        out.append(float(grid.times[int(np.argmax(v))]))
    return np.array(out)


@dataclass
class Jacobian:
    """Sensitivity matrix, one row per (pair, time) and one column per parameter."""

    matrix: np.ndarray
    pair_index: np.ndarray
    times: np.ndarray
    columns: tuple = field(default=PARAMETER_NAMES)

    def singular_values(self):
        return np.linalg.svd(self.matrix, compute_uv=False)

    def rank(self, rtol=RANK_RTOL):
        return numerical_rank(self.matrix, rtol)

    def column_norms(self):
        return dict(zip(self.columns, np.linalg.norm(self.matrix, axis=0)))

    def report(self, rtol=RANK_RTOL):
        sv = self.singular_values()
        return {
            "rows": int(self.matrix.shape[0]),
            "columns": list(self.columns),
            "singular_values": sv.tolist(),
            "rank": int(self.rank(rtol)),
            "rank_rtol": rtol,
            "column_norms": {k: float(v) for k, v in self.column_norms().items()},
        }


def numerical_rank(matrix, rtol=RANK_RTOL):
    """Number of singular values above ``rtol * sigma_max``.

    Columns are first scaled to unit norm so that parameters with different
    units (mm against 1/mm) do not swamp each other.
    """
    m = np.asarray(matrix, dtype=float)
    if m.size == 0:
        return 0
    norms = np.linalg.norm(m, axis=0)
    norms[norms == 0] = 1.0
    sv = np.linalg.svd(m / norms, compute_uv=False)
    if sv[0] == 0:
        return 0
    return int(np.sum(sv > rtol * sv[0]))


def sensitivity_matrix(medium, target, design, fluor=None, n_time=64, n_depth=32):
    """Stack analytic gradients over every (pair, time) of ``design``."""
    xs, xd, t, idx = design.rows()
    _, g = cuboid_model(medium, _cf(medium, fluor), _params(target), xs, xd, t,
                        n_time=n_time, n_depth=n_depth, gradient=True)
    return Jacobian(g, idx, t)


def _subset_indices(subset):
    out = []
    for s in subset:
        out.append(PARAMETER_NAMES.index(s) if isinstance(s, str) else int(s))
    return out


def determinant_condition(medium, target, pairs, t, subset=PARAMETER_NAMES, fluor=None,
                          log=False, n_time=64, n_depth=32):
    """Determinant of the ``d x d`` matrix of partials for ``d`` pairs at one time.

    Row ``l`` holds the gradient of pair ``l``; columns are the parameters in
    ``subset`` (names or indices).  With ``log=True`` returns
    ``(sign, log|det|)``, which stays finite when the determinant itself
    underflows at early times.
    """
    cols = _subset_indices(subset)
    if len(pairs) != len(cols):
        raise ValueError(f"need as many pairs as parameters ({len(pairs)} != {len(cols)})")
    rows = np.array([cuboid_gradient(medium, target, p, t, fluor, n_time, n_depth)[cols] for p in pairs])
    # equilibrate rows and columns so the LU works on O(1) numbers
    r = np.max(np.abs(rows), axis=1)
    r[r == 0] = 1.0
    m = rows / r[:, None]
    c = np.max(np.abs(m), axis=0)
    c[c == 0] = 1.0
    sign, ld = np.linalg.slogdet(m / c)
    ld = ld + np.sum(np.log(r)) + np.sum(np.log(c))
    if log:
        return float(sign), float(ld)
    return float(sign * np.exp(ld)) if sign != 0 else 0.0


def f_complete_scan(medium, region, design, grid_density=3, fluor=None, rtol=RANK_RTOL,
                    n_time=64, n_depth=32):
    """Check the determinant condition on a lattice covering ``region``.

    Parameters
    ----------
    region : (lo, hi)
        Two 7-vectors bounding the parameter box.  Any ``lo > hi`` makes the
        region empty.
    design : MeasurementDesign
        Exactly seven pairs with the same number of times each; the ``k``-th
        time of every pair forms the ``k``-th candidate matrix.
    grid_density : int
        Lattice points per axis (axes with ``lo == hi`` get one point).

    Returns
    -------
    dict
        ``complete`` flag, sample count, and per-sample best relative smallest
        singular value and ``log|det|`` over the design times.
    """
    lo, hi = (np.asarray(v, dtype=float) for v in region)
    if len(design.pairs) != 7:
        raise ValueError("F-completeness is checked with exactly 7 pairs")
    times = np.array(design.times)
    if times.ndim != 2:
        raise ValueError("all pairs need the same number of time points")
    if np.any(lo > hi):
        return {"complete": True, "samples": 0, "best_ratio": [], "best_logdet": []}
    axes = [np.linspace(l, h, grid_density) if h > l else np.array([l]) for l, h in zip(lo, hi)]
    coords = [_pair_coords(p) for p in design.pairs]
    xs = np.array([c[0] for c in coords])
    xd = np.array([c[1] for c in coords])
    best_ratio, best_ld = [], []
    for a in product(*axes):
        a = np.array(a)
        _, g = cuboid_model(medium, _cf(medium, fluor), a, xs[:, None], xd[:, None], times,
                            n_time=n_time, n_depth=n_depth, gradient=True)
        ratios, lds = [], []
        for k in range(times.shape[1]):
            m = g[:, k, :]
            norms = np.linalg.norm(m, axis=0)
            norms[norms == 0] = 1.0
            sv = np.linalg.svd(m / norms, compute_uv=False)
            ratios.append(sv[-1] / sv[0] if sv[0] > 0 else 0.0)
            sign, ld = np.linalg.slogdet(m / norms)
            lds.append(ld + np.sum(np.log(norms)) if sign != 0 else -np.inf)
        best_ratio.append(float(max(ratios)))
        best_ld.append(float(max(lds)))
    ratio = np.array(best_ratio)
    return {
        "complete": bool(np.all(ratio > rtol)),
        "samples": int(ratio.size),
        "best_ratio": best_ratio,
        "best_logdet": best_ld,
    }


def _gram_ratios(ja, jb):
    # generalised eigenvalues of (Ga, Gb) as squared singular values of ja R^-1,
    # where jb = Q R; None when jb is rank deficient
    if numerical_rank(jb) < jb.shape[1]:
        return None
    r = np.linalg.qr(jb, mode="r")
    m = solve_triangular(r, ja.T, trans="T", lower=False).T
    return np.linalg.svd(m, compute_uv=False) ** 2


def compare_designs(medium, target, design1, design2, fluor=None, rtol=PD_RTOL,
                    n_time=64, n_depth=32):
    """Order two designs by the Gram matrices of their sensitivities.

    Returns ``"better"`` if ``G1 - G2`` is positive definite, ``"worse"`` if
    ``G2 - G1`` is, and ``"incomparable"`` otherwise.

    With ``G2`` nonsingular, ``G1 - G2`` is positive definite exactly when every
    generalised eigenvalue of ``(G1, G2)`` exceeds one.  Those eigenvalues are
    read off an SVD of ``J1 R2^-1`` (``J2 = Q2 R2``), which never forms the badly
    conditioned Gram matrices.  Columns are scaled by a common diagonal first;
    congruence does not change definiteness.  A difference can only be
    definite if the larger Gram matrix is nonsingular, so two rank-deficient
    designs are incomparable.
    """
    j1 = sensitivity_matrix(medium, target, design1, fluor, n_time, n_depth).matrix
    j2 = sensitivity_matrix(medium, target, design2, fluor, n_time, n_depth).matrix
    d = np.sqrt(np.sum(j1 ** 2, axis=0) + np.sum(j2 ** 2, axis=0))
    d[d == 0] = 1.0
    j1, j2 = j1 / d, j2 / d
    lam = _gram_ratios(j1, j2)
    if lam is not None:
        if lam.min() > 1 + rtol:
            return "better"
        if lam.max() < 1 - rtol:
            return "worse"
        return "incomparable"
    lam = _gram_ratios(j2, j1)
    if lam is not None:
        if lam.min() > 1 + rtol:
            return "worse"
        if lam.max() < 1 - rtol:
            return "better"
    return "incomparable"
