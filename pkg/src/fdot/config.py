"""JSON run configuration.

A configuration is a JSON object::

    {
      "medium": {"c": 0.219, "mu_s_prime": 1.0, "mu_a": 0.01, "beta": 0.5493},
      "fluorophore": {"tau": 0, "gamma": 1},
      "layout": {"preset": "ring8"}  or  {"centers": [[x, y], ...], "source_offsets": ..., "flips": ...},
      "pairs": [[[xs1, xs2], [xd1, xd2]], ...],         # optional, instead of a layout
      "grid": {"t0": 6.67, "dt": 6.67, "n": 500}  or  {"dt": 6.67, "T": 3335},
      "window": {"before": 10, "after": 9},
      "truth": {"type": "ellipsoid", "center": [0, 0, 11], "axes": [1.5, 3, 1.5], "P": 0.02},
      "targets": {"name": <target>, ...},               # forward command only
      "irf": {"file": "irf.csv"}  or  {"gaussian": {"center": 200, "fwhm": 100, "n": 300}},
      "noise": 0.0,
      "seed": 0,
      "lm": {"max_iter": 800, "mode": "B", ...},
      "inversion": {"cube_init": [-8, -8, 4, 4, 0.1], "prior_positions": [0, 2, 4, 6],
                    "fit_pairs": null, "gamma": null, "gamma_rule": "span",
                    "X3_bounds": [0, 30], "L_max": 20, "Q_bounds": [0, 10]},
      "sensitivity": {...}, "asymptotics": {...}, "intensity_map": {...}
    }

Unknown top-level keys are rejected so typos surface before any computation.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .forward import IRF, CubeTarget, CuboidTarget, EllipsoidTarget, SphereTarget, TimeGrid
from .inversion import GammaRegion
from .lm import LMSettings
from .measurement import HolderLayout, SDPair, read_irf_csv
from .optics import Fluorophore, OpticalMedium

__all__ = ["ConfigError", "RunConfig", "PipelineConfig", "load_config", "parse_config", "parse_target",
           "gaussian_irf"]

TOP_KEYS = {"medium", "fluorophore", "layout", "pairs", "grid", "window", "truth", "targets", "irf",
            "noise", "seed", "lm", "inversion", "sensitivity", "asymptotics", "intensity_map", "description"}


class ConfigError(ValueError):
    """Invalid configuration."""


def gaussian_irf(dt, n, center, fwhm):
    """Sampled Gaussian pulse ``q[j] = exp(-(j dt - center)^2 / (2 sigma^2))`` with unit sum."""
    t = dt * np.arange(n)
    sigma = fwhm / (2.0 * np.sqrt(2.0 * np.log(2.0)))
    q = np.exp(-0.5 * ((t - center) / sigma) ** 2)
    return IRF(dt, q / q.sum())


def parse_target(d):
    """Build a target from ``{"type": ..., ...}``."""
    if not isinstance(d, dict) or "type" not in d:
        raise ConfigError("target needs a 'type'")
    kind = d["type"].lower()
    try:
        if kind == "cuboid":
            if "params" in d:
                return CuboidTarget.from_array(d["params"])
            return CuboidTarget(*(float(d[k]) for k in ("a1", "b1", "a2", "b2", "a3", "b3", "P")))
        if kind == "cube":
            if "params" in d:
                return CubeTarget.from_array(d["params"])
            return CubeTarget(*(float(d[k]) for k in ("X1", "X2", "X3", "L", "Q")))
        if kind == "sphere":
            return SphereTarget(d["center"], d["R"], d["P"])
        if kind == "ellipsoid":
            return EllipsoidTarget(tuple(d["center"]), tuple(d["axes"]), float(d["P"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"target {kind}: {exc}") from exc
    raise ConfigError(f"unknown target type {d['type']!r}")


def _target_dict(t):
    if isinstance(t, CuboidTarget):
        return {"type": "cuboid", "params": t.as_array().tolist()}
    if isinstance(t, CubeTarget):
        return {"type": "cube", "params": t.as_array().tolist()}
    if isinstance(t, EllipsoidTarget):
        return {"type": "ellipsoid", "center": list(t.center), "axes": list(t.axes), "P": t.P}
    return None


@dataclass
class PipelineConfig:
    """Everything :func:`fdot.inversion.run_pipeline` needs."""

    medium: OpticalMedium
    fluor: Fluorophore
    layout: HolderLayout
    grid: TimeGrid = None
    irf: IRF = None
    lm: LMSettings = field(default_factory=LMSettings)
    cube_init: tuple = (-8.0, -8.0, 4.0, 4.0, 0.1)
    prior_positions: list = None
    fit_pairs: object = None
    gamma: GammaRegion = None
    gamma_rule: str = "span"
    X3_bounds: tuple = (0.0, 30.0)
    L_max: float = 20.0
    Q_bounds: tuple = (0.0, 10.0)
    n_time: int = 64

    def to_dict(self):
        return {
            "medium": self.medium.to_dict(),
            "fluorophore": {"tau": self.fluor.tau, "gamma": self.fluor.gamma},
            "layout": self.layout.to_dict(),
            "grid": None if self.grid is None else {"t0": self.grid.t0, "dt": self.grid.dt, "n": self.grid.n},
            "irf": None if self.irf is None else {"dt": self.irf.dt, "n": int(self.irf.values.size)},
            "lm": self.lm.to_dict(),
            "inversion": {
                "cube_init": [float(v) for v in self.cube_init],
                "prior_positions": self.prior_positions,
                "fit_pairs": self.fit_pairs,
                "gamma": None if self.gamma is None else self.gamma.to_dict(),
                "gamma_rule": self.gamma_rule,
                "X3_bounds": list(self.X3_bounds),
                "L_max": self.L_max,
                "Q_bounds": [float(v) for v in self.Q_bounds],
            },
        }


@dataclass
class RunConfig:
    """Parsed configuration shared by all commands."""

    raw: dict
    medium: OpticalMedium
    fluor: Fluorophore
    layout: HolderLayout = None
    pairs: list = None
    grid: TimeGrid = None
    window: tuple = (10, 9)
    truth: object = None
    targets: dict = None
    irf: IRF = None
    noise: float = 0.0
    seed: int = None
    lm: LMSettings = field(default_factory=LMSettings)
    inversion: dict = field(default_factory=dict)

    def all_pairs(self):
        if self.pairs is not None:
            return list(self.pairs)
        if self.layout is not None:
            return self.layout.all_pairs()
        return []

    def pipeline(self):
        if self.layout is None:
            raise ConfigError("inversion needs a holder layout")
        inv = dict(self.inversion)
        gamma = inv.pop("gamma", None)
        if gamma is not None:
            gamma = GammaRegion(tuple(gamma["x1"]), tuple(gamma["x2"]))
        kw = {}
        for key in ("cube_init", "prior_positions", "fit_pairs", "gamma_rule", "X3_bounds", "L_max",
                    "Q_bounds", "n_time"):
            if key in inv and inv[key] is not None:
                kw[key] = inv.pop(key)
            else:
                inv.pop(key, None)
        if inv:
            raise ConfigError(f"unknown inversion keys: {sorted(inv)}")
        if isinstance(kw.get("fit_pairs"), list) and kw["fit_pairs"] and isinstance(kw["fit_pairs"][0], str):
            ids = [p.id for p in self.layout.all_pairs()]
            try:
                kw["fit_pairs"] = [ids.index(s) for s in kw["fit_pairs"]]
            except ValueError as exc:
                raise ConfigError(f"fit_pairs: {exc}") from exc
        for key in ("X3_bounds", "Q_bounds"):
            if key in kw:
                kw[key] = tuple(float(v) if v is not None else np.inf for v in kw[key])
        return PipelineConfig(self.medium, self.fluor, self.layout, self.grid, self.irf, self.lm,
                              gamma=gamma, **kw)


def _section(d, key, allowed):
    sec = d.get(key) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"'{key}' must be an object")
    bad = set(sec) - set(allowed)
    if bad:
        raise ConfigError(f"unknown keys in '{key}': {sorted(bad)}")
    return sec


def parse_config(d, base_dir=None):
    """Validate a configuration dict and build the typed objects."""
    if not isinstance(d, dict):
        raise ConfigError("configuration must be a JSON object")
    bad = set(d) - TOP_KEYS
    if bad:
        raise ConfigError(f"unknown top-level keys: {sorted(bad)}")
    try:
        medium = OpticalMedium(**_section(d, "medium", ("c", "mu_s_prime", "mu_a", "beta")))
        fl = _section(d, "fluorophore", ("tau", "gamma"))
        fluor = Fluorophore(tau=fl.get("tau", 0.0), gamma=fl.get("gamma", 1.0), c=medium.c)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"medium/fluorophore: {exc}") from exc

    layout = None
    if d.get("layout") is not None:
        lay = _section(d, "layout", ("preset", "centers", "source_offsets", "detector_offsets", "flips"))
        try:
            if "preset" in lay:
                presets = {"ring8": HolderLayout.ring8, "meat16": HolderLayout.meat16}
                if lay["preset"] not in presets:
                    raise ConfigError(f"unknown layout preset {lay['preset']!r}")
                layout = presets[lay["preset"]]()
            else:
                layout = HolderLayout.from_dict(lay)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"layout: {exc}") from exc

    pairs = None
    if d.get("pairs") is not None:
        try:
            pairs = []
            for n, p in enumerate(d["pairs"]):
                if isinstance(p, dict):
                    pairs.append(SDPair(p["source"], p["detector"], p.get("id", f"pair{n}")))
                else:
                    pairs.append(SDPair(p[0], p[1], f"pair{n}"))
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise ConfigError(f"pairs: {exc}") from exc

    grid = None
    if d.get("grid") is not None:
        g = _section(d, "grid", ("t0", "dt", "n", "T"))
        try:
            if "T" in g:
                grid = TimeGrid.up_to(float(g["T"]), float(g["dt"]))
            else:
                grid = TimeGrid(float(g.get("t0", g["dt"])), float(g["dt"]), int(g["n"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"grid: {exc}") from exc

    w = _section(d, "window", ("before", "after"))
    window = (int(w.get("before", 10)), int(w.get("after", 9)))

    truth = parse_target(d["truth"]) if d.get("truth") is not None else None
    targets = None
    if d.get("targets") is not None:
        if not isinstance(d["targets"], dict) or not d["targets"]:
            raise ConfigError("'targets' must be a non-empty object of named targets")
        targets = {k: parse_target(v) for k, v in d["targets"].items()}

    irf = None
    if d.get("irf") is not None:
        spec = _section(d, "irf", ("file", "gaussian"))
        try:
            if "file" in spec:
                path = Path(spec["file"])
                if base_dir is not None and not path.is_absolute():
                    path = Path(base_dir) / path
                irf = read_irf_csv(path)
            elif "gaussian" in spec:
                gs = spec["gaussian"]
                dt = float(gs.get("dt", grid.dt if grid else 1.0))
                irf = gaussian_irf(dt, int(gs["n"]), float(gs["center"]), float(gs["fwhm"]))
        except (KeyError, TypeError, ValueError, OSError) as exc:
            raise ConfigError(f"irf: {exc}") from exc

    try:
        lm = LMSettings(**(d.get("lm") or {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"lm: {exc}") from exc

    noise = float(d.get("noise", 0.0) or 0.0)
    if noise < 0:
        raise ConfigError("noise must be >= 0")
    seed = d.get("seed")
    if seed is not None and not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    inv = d.get("inversion") or {}
    if not isinstance(inv, dict):
        raise ConfigError("'inversion' must be an object")
    return RunConfig(d, medium, fluor, layout, pairs, grid, window, truth, targets, irf, noise, seed, lm, dict(inv))


def load_config(path):
    path = Path(path)
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(d, base_dir=path.parent)
