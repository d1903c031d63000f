"""Three-step recovery of a cuboid target: prior region, cube fit, cuboid fit."""

import time
from dataclasses import dataclass, field

import numpy as np

from .forward import CubeTarget, CuboidTarget, TimeGrid, _causal, cuboid_model, irf_with_lifetime
from .lm import LMSettings, lm_iterate
from .measurement import HolderLayout, MeasurementSet
from .optics import Fluorophore

__all__ = [
    "GammaRegion",
    "InversionReport",
    "PipelineReport",
    "CuboidForward",
    "CubeForward",
    "cube_to_cuboid",
    "step1_prior",
    "cube_bounds",
    "cuboid_bounds",
    "step2_cube_fit",
    "step3_cuboid_fit",
    "run_pipeline",
    "relative_error",
    "NO_TARGET_FRACTION",
]

NO_TARGET_FRACTION = 1e-6


def relative_error(x, ref):
    x, ref = np.asarray(x, dtype=float), np.asarray(ref, dtype=float)
    return float(np.linalg.norm(x - ref) / np.linalg.norm(ref))


# ------------------------------------------------------------------ forward maps


class CuboidForward:
    """Cuboid model evaluated at the entries of a measurement set.

    With an ``irf`` the model is computed on ``grid`` from its first sample up
    to the last gate, convolved with the IRF combined with the lifetime, and
    then read off at the gates.  Results of the last parameter vector are
    cached, since LM asks for values and Jacobian at the same point.
    """

    n_params = 7

    def __init__(self, medium, fluor, data, grid=None, irf=None, n_time=64, n_depth=32):
        self.medium = medium
        self.fluor = Fluorophore() if fluor is None else fluor
        self.data = data
        self.n_time, self.n_depth = n_time, n_depth
        self.xs, self.xd = data.coordinates()
        self.irf = irf
        if irf is not None:
            if grid is None:
                raise ValueError("a time grid is needed to convolve with the IRF")
            if abs(grid.dt - irf.dt) > 1e-9 * grid.dt:
                raise ValueError(f"dt mismatch: grid {grid.dt} vs IRF {irf.dt}")
            self.grid = grid
            k = np.rint((data.times - grid.t0) / grid.dt).astype(int)
            if np.any(k < 0) or np.any(np.abs(grid.t0 + k * grid.dt - data.times) > 1e-6 * grid.dt):
                raise ValueError("gate times are not on the model grid")
            self._gate = k
            self._nmax = int(k.max()) + 1
            self._q = irf_with_lifetime(irf, self.fluor.tau).values[:self._nmax]
            src = np.array([p.source for p in data.pairs])
            det = np.array([p.detector for p in data.pairs])
            self._ps, self._pd = src[:, None, :], det[:, None, :]
        self._key = None
        self.calls = 0

    def _evaluate(self, a):
        a = np.asarray(a, dtype=float)
        key = a.tobytes()
        if key == self._key:
            return self._cache
        self.calls += 1
        c_f = self.fluor.c_f
        if self.irf is None:
            v, g = cuboid_model(self.medium, c_f, a, self.xs, self.xd, self.data.times,
                                n_time=self.n_time, n_depth=self.n_depth, gradient=True)
        else:
            t = self.grid.times[:self._nmax][None, :]
            v, g = cuboid_model(self.medium, c_f, a, self._ps, self._pd, t,
                                n_time=self.n_time, n_depth=self.n_depth, gradient=True)
            v = self._convolve(v)
            g = np.stack([self._convolve(g[..., i]) for i in range(7)], axis=-1)
            rows = self.data.pair_index
            v, g = v[rows, self._gate], g[rows, self._gate]
        self._key, self._cache = key, (v, g)
        return v, g

    def _convolve(self, u):
        dt = self.grid.dt
        return np.array([dt * _causal(self._q, row, self._nmax) for row in u])

    def predict(self, a):
        return self._evaluate(a)[0]

    def jacobian(self, a):
        return self._evaluate(a)[1]


def cube_to_cuboid(c):
    X1, X2, X3, L, Q = np.asarray(c, dtype=float)
    h = 0.5 * L
    return np.array([X1 - h, X1 + h, X2 - h, X2 + h, X3 - h, X3 + h, Q])


_CUBE_CHAIN = np.array([
    # X1  X2  X3   L    Q
    [1, 0, 0, -0.5, 0],
    [1, 0, 0, 0.5, 0],
    [0, 1, 0, -0.5, 0],
    [0, 1, 0, 0.5, 0],
    [0, 0, 1, -0.5, 0],
    [0, 0, 1, 0.5, 0],
    [0, 0, 0, 0, 1],
], dtype=float)


class CubeForward:
    """The cuboid model restricted to cubes ``(X1, X2, X3, L, Q)``."""

    n_params = 5

    def __init__(self, cuboid_forward):
        self.base = cuboid_forward

    def predict(self, c):
        return self.base.predict(cube_to_cuboid(c))

    def jacobian(self, c):
        return self.base.jacobian(cube_to_cuboid(c)) @ _CUBE_CHAIN


# ------------------------------------------------------------------------ step 1


@dataclass(frozen=True)
class GammaRegion:
    """Rectangle ``x1 x x2`` on the surface (mm)."""

    x1: tuple
    x2: tuple

    def __post_init__(self):
        x1 = tuple(float(v) for v in self.x1)
        x2 = tuple(float(v) for v in self.x2)
        if not (x1[0] < x1[1] and x2[0] < x2[1]):
            raise ValueError(f"empty region {x1} x {x2}")
        object.__setattr__(self, "x1", x1)
        object.__setattr__(self, "x2", x2)

    def contains(self, p):
        return self.x1[0] < p[0] < self.x1[1] and self.x2[0] < p[1] < self.x2[1]

    @property
    def center(self):
        return 0.5 * (self.x1[0] + self.x1[1]), 0.5 * (self.x2[0] + self.x2[1])

    def to_dict(self):
        return {"x1": list(self.x1), "x2": list(self.x2)}


def step1_prior(intensities, layout, positions=None, rule="span"):
    """Prior lateral region from per-pair intensities.

    Parameters
    ----------
    intensities : array_like, shape (n_positions, 4)
        Intensity of the four pairs (S1-D1, S1-D2, S2-D1, S2-D2) at each of
        the listed holder positions.
    layout : HolderLayout
    positions : sequence of int, optional
        Holder indices the rows refer to (default ``0..n-1``).
    rule : {"span", "midpoint"}
        ``"span"``: every strongest pair spans a box between its source and
        detector; the region is the intersection of those boxes when it has
        positive area, otherwise their common bounding box.  ``"midpoint"``:
        bounding box of the strongest pairs' midpoints padded by half the
        holder pitch on each side.

    Returns
    -------
    GammaRegion
    """
    table = np.asarray(intensities, dtype=float)
    if table.size == 0:
        raise ValueError("empty intensity table")
    if table.ndim != 2 or table.shape[1] != 4:
        raise ValueError("intensity table must have shape (positions, 4)")
    positions = list(range(table.shape[0])) if positions is None else list(positions)
    if len(positions) != table.shape[0]:
        raise ValueError("one table row per listed position is required")
    if len(positions) < 2:
        raise ValueError("at least two holder positions are needed")
    best = []
    for row, pos in zip(table, positions):
        pairs = layout.pairs(pos)
        top = np.flatnonzero(row == row.max())
        best.extend(pairs[j] for j in top)
    if rule == "span":
        lo = np.array([[min(p.source[i], p.detector[i]) for i in range(2)] for p in best])
        hi = np.array([[max(p.source[i], p.detector[i]) for i in range(2)] for p in best])
        ilo, ihi = lo.max(axis=0), hi.min(axis=0)
        if np.all(ihi > ilo):
            return GammaRegion((ilo[0], ihi[0]), (ilo[1], ihi[1]))
        ulo, uhi = lo.min(axis=0), hi.max(axis=0)
        return GammaRegion((ulo[0], uhi[0]), (ulo[1], uhi[1]))
    if rule == "midpoint":
        mids = np.array([0.5 * (np.array(p.source) + np.array(p.detector)) for p in best])
        centers = np.array(layout.centers)
        d = np.abs(centers[:, None, :] - centers[None, :, :])
        pitch = np.min(d[d > 0]) if np.any(d > 0) else 0.0
        lo, hi = mids.min(axis=0) - pitch / 2, mids.max(axis=0) + pitch / 2
        return GammaRegion((lo[0], hi[0]), (lo[1], hi[1]))
    raise ValueError(f"unknown rule {rule!r}")


# ------------------------------------------------------------------ steps 2 and 3


@dataclass
class InversionReport:
    """Outcome of one LM stage."""

    stage: str
    params: np.ndarray
    init: np.ndarray
    err: float
    Err: float
    iterations: int
    evaluations: int
    stop_reason: str
    residual_history: list
    wall_time: float
    reference: np.ndarray = None

    @property
    def converged(self):
        return self.stop_reason != "max_iter"

    def to_dict(self):
        return {
            "stage": self.stage,
            "params": [float(v) for v in self.params],
            "init": [float(v) for v in self.init],
            "err": float(self.err),
            "Err": None if self.Err is None else float(self.Err),
            "reference": None if self.reference is None else [float(v) for v in self.reference],
            "iterations": int(self.iterations),
            "evaluations": int(self.evaluations),
            "stop_reason": self.stop_reason,
            "residual_history": [float(v) for v in self.residual_history],
            "wall_time": float(self.wall_time),
        }


def cube_bounds(gamma, X3=(0.0, 30.0), L_max=20.0, Q=(0.0, 10.0)):
    lo = np.array([gamma.x1[0], gamma.x2[0], X3[0], 0.0, Q[0]])
    hi = np.array([gamma.x1[1], gamma.x2[1], X3[1], L_max, Q[1]])
    return lo, hi


def cuboid_bounds(lateral=(-50.0, 50.0), depth=(0.0, 40.0), P=(0.0, np.inf)):
    lo = np.array([lateral[0]] * 4 + [depth[0]] * 2 + [P[0]])
    hi = np.array([lateral[1]] * 4 + [depth[1]] * 2 + [P[1]])
    return lo, hi


def _keep_cube_inside(c):
    c = c.copy()
    # the cube must stay below the surface: L < 2 X3
    c[3] = min(c[3], 2.0 * c[2] * (1.0 - 1e-9))
    return c


def _order_cuboid(a):
    a = a.copy()
    for i in (0, 2, 4):
        if a[i] > a[i + 1]:
            a[i], a[i + 1] = a[i + 1], a[i]
    return a


def _run_stage(stage, model, data, init, bounds, settings, scale, constrain, reference):
    H = data.values
    hn = float(np.linalg.norm(H))
    noise = data.delta * hn if data.delta else None
    res = lm_iterate(lambda p: H - model.predict(p), model.jacobian, init, bounds, settings,
                     scale=scale, data_norm=hn, noise_norm=noise, constrain=constrain)
    Err = relative_error(res.params, reference) if reference is not None else None
    return InversionReport(stage, res.params, np.asarray(init, dtype=float), res.err, Err,
                           res.iterations, res.evaluations, res.stop_reason, res.residual_history,
                           res.wall_time, None if reference is None else np.asarray(reference, dtype=float))


def step2_cube_fit(data, medium, fluor, gamma, init, settings=None, bounds=None, reference=None,
                   grid=None, irf=None, n_time=64, n_depth=32):
    """LM over ``(X1, X2, X3, L, Q)`` starting from ``init``.

    ``init[:2]`` must lie in ``gamma``.  Lengths are damped on a 1 mm scale,
    the strength on the scale of its initial value.
    """
    init = np.asarray(init, dtype=float)
    if init.shape != (5,):
        raise ValueError("cube init needs five values (X1, X2, X3, L, Q)")
    if not gamma.contains(init[:2]):
        raise ValueError(f"initial centre {tuple(init[:2])} is outside the prior region")
    bounds = cube_bounds(gamma) if bounds is None else bounds
    model = CubeForward(CuboidForward(medium, fluor, data, grid, irf, n_time, n_depth))
    scale = np.array([1.0, 1.0, 1.0, 1.0, abs(init[4]) or 1.0])
    rep = _run_stage("cube", model, data, init, bounds, settings, scale, _keep_cube_inside, reference)
    return CubeTarget.from_array(rep.params), rep


def step3_cuboid_fit(data, medium, fluor, init_cube, settings=None, bounds=None, reference=None,
                     grid=None, irf=None, n_time=64, n_depth=32):
    """LM over all seven cuboid parameters starting from a cube."""
    if isinstance(init_cube, CubeTarget):
        init = cube_to_cuboid(init_cube.as_array())
    else:
        init = np.asarray(init_cube, dtype=float)
        if init.shape == (5,):
            init = cube_to_cuboid(init)
    if init.shape != (7,):
        raise ValueError("cuboid init needs seven values")
    bounds = cuboid_bounds() if bounds is None else bounds
    model = CuboidForward(medium, fluor, data, grid, irf, n_time, n_depth)
    scale = np.array([1.0] * 6 + [abs(init[6]) or 1.0])
    rep = _run_stage("cuboid", model, data, init, bounds, settings, scale, _order_cuboid, reference)
    return CuboidTarget.from_array(rep.params), rep


# ---------------------------------------------------------------------- pipeline


@dataclass
class PipelineReport:
    gamma: GammaRegion
    cube: InversionReport
    cuboid: InversionReport = None
    no_target: bool = False
    fit_pairs: list = field(default_factory=list)
    seed: int = None
    config: dict = None
    wall_time: float = 0.0

    @property
    def params(self):
        return self.cuboid.params if self.cuboid is not None else cube_to_cuboid(self.cube.params)

    @property
    def stop_reason(self):
        return (self.cuboid or self.cube).stop_reason

    def to_dict(self):
        return {
            "gamma": self.gamma.to_dict(),
            "cube": self.cube.to_dict(),
            "cuboid": None if self.cuboid is None else self.cuboid.to_dict(),
            "no_target": bool(self.no_target),
            "result": {"params": [float(v) for v in self.params],
                       "err": float((self.cuboid or self.cube).err)},
            "fit_pairs": list(self.fit_pairs),
            "seed": self.seed,
            "strength_units": "1/mm (arbitrary units for measured data)",
            "config": self.config,
            "wall_time": float(self.wall_time),
        }


class StageError(RuntimeError):
    def __init__(self, stage, exc):
        super().__init__(f"[{stage}] {exc}")
        self.stage = stage
        self.cause = exc


def _gate_intensity(data):
    # trapezoid over each pair's gates: a stand-in when full curves are absent
    out = np.zeros(len(data.pairs))
    for i in range(len(data.pairs)):
        m = data.pair_index == i
        out[i] = np.trapezoid(data.values[m], data.times[m]) if m.sum() > 1 else data.values[m].sum()
    return out


def run_pipeline(config, data, intensities=None, cube_reference=None, cuboid_reference=None):
    """Step 1, Step 2 and Step 3 in sequence.

    Parameters
    ----------
    config : PipelineConfig
        See :mod:`fdot.config`.
    data : MeasurementSet
        Gated data; pairs must be in layout order (four per position).
    intensities : array_like, optional
        One intensity per pair of ``data``.  Estimated from the gates when
        omitted.

    Returns
    -------
    PipelineReport
    """
    t0 = time.perf_counter()
    layout = config.layout
    if len(data.pairs) != 4 * len(layout):
        raise StageError("step1", ValueError(
            f"data has {len(data.pairs)} pairs, layout expects {4 * len(layout)}"))
    try:
        inten = _gate_intensity(data) if intensities is None else np.asarray(intensities, dtype=float).ravel()
        table = inten.reshape(len(layout), 4)
        pos = config.prior_positions if config.prior_positions is not None else list(range(len(layout)))
        gamma = config.gamma or step1_prior(table[pos], layout, pos, rule=config.gamma_rule)
    except ValueError as exc:
        raise StageError("step1", exc) from exc

    fit_ids = _select_pairs(config.fit_pairs, inten)
    fit_data = data.subset(fit_ids) if len(fit_ids) != len(data.pairs) else data
    init = np.array(config.cube_init, dtype=float)
    if init.size == 3:
        init = np.r_[gamma.center, init]
    try:
        cube, rep2 = step2_cube_fit(fit_data, config.medium, config.fluor, gamma, init, config.lm,
                                    bounds=cube_bounds(gamma, config.X3_bounds, config.L_max, config.Q_bounds),
                                    reference=cube_reference, grid=config.grid, irf=config.irf,
                                    n_time=config.n_time)
    except (ValueError, RuntimeError) as exc:
        raise StageError("step2", exc) from exc
    no_target = cube.Q < NO_TARGET_FRACTION * init[4]
    rep3 = None
    if not no_target:
        try:
            _, rep3 = step3_cuboid_fit(fit_data, config.medium, config.fluor, cube, config.lm,
                                       reference=cuboid_reference, grid=config.grid, irf=config.irf,
                                       n_time=config.n_time)
        except (ValueError, RuntimeError) as exc:
            raise StageError("step3", exc) from exc
    return PipelineReport(gamma, rep2, rep3, bool(no_target), [data.pairs[i].id for i in fit_ids],
                          data.seed, config.to_dict(), time.perf_counter() - t0)


def _select_pairs(spec, intensities):
    n = len(intensities)
    if spec is None:
        return list(range(n))
    if isinstance(spec, int):
        order = np.argsort(-np.asarray(intensities), kind="stable")[:spec]
        return sorted(int(i) for i in order)
    return [int(i) for i in spec]
