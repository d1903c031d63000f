"""Source-detector geometry, gated measurement sets and data interchange.

Measurement and TPSF files share one CSV layout::

    pair_id,xs1,xs2,xd1,xd2,t_ps,value

with every float written to 17 significant digits so that a write/read cycle
reproduces the values bit for bit.
"""

import csv
import io
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ._validation import check_int, check_positive
from .forward import (IRF, TPSF, CuboidTarget, EllipsoidTarget, TimeGrid, add_noise, convolve_irf,
                      cuboid_tpsfs, ellipsoid_tpsfs, emission_intensity, irf_with_lifetime)
from .optics import Fluorophore

__all__ = [
    "SDPair",
    "HolderLayout",
    "MeasurementSet",
    "ExperimentBundle",
    "MeasurementFormatError",
    "holder_pairs",
    "peak_window",
    "select_time_window",
    "simulate_tpsfs",
    "measurements_from_tpsfs",
    "simulate_measurements",
    "intensity_table",
    "subtract_background",
    "ingest_experiment",
    "write_tpsf_csv",
    "read_tpsf_csv",
    "write_irf_csv",
    "read_irf_csv",
]

HEADER = ["pair_id", "xs1", "xs2", "xd1", "xd2", "t_ps", "value"]
PAIR_LABELS = ("S1-D1", "S1-D2", "S2-D1", "S2-D2")
_HALF_S = 10.0 * np.sqrt(3.0)


class MeasurementFormatError(ValueError):
    """Malformed measurement or TPSF file."""


def _fmt(x):
    return format(float(x), ".17g")


# --------------------------------------------------------------------- geometry


@dataclass(frozen=True)
class SDPair:
    """One source and one detector on the surface."""

    source: tuple
    detector: tuple
    id: str = ""

    def __post_init__(self):
        s = tuple(float(v) for v in self.source)[:2]
        d = tuple(float(v) for v in self.detector)[:2]
        if len(s) != 2 or len(d) != 2:
            raise ValueError("source and detector need two coordinates")
        if not all(np.isfinite(s + d)):
            raise ValueError("coordinates must be finite")
        if s == d:
            raise ValueError("source and detector must differ")
        object.__setattr__(self, "source", s)
        object.__setattr__(self, "detector", d)

    @property
    def separation(self):
        return float(np.hypot(self.source[0] - self.detector[0], self.source[1] - self.detector[1]))


@dataclass(frozen=True)
class HolderLayout:
    """Holder carrying two sources and two detectors, placed at ``centers``.

    ``flips`` optionally mirrors the holder at a position: ``"x"`` negates the
    x offsets, ``"y"`` the y offsets, ``"xy"`` both.  Pair order at every
    position is S1-D1, S1-D2, S2-D1, S2-D2.
    """

    centers: tuple
    source_offsets: tuple = ((0.0, _HALF_S), (0.0, -_HALF_S))
    detector_offsets: tuple = ((-10.0, 0.0), (10.0, 0.0))
    flips: tuple = None

    def __post_init__(self):
        c = tuple(tuple(float(v) for v in p) for p in self.centers)
        if len(c) == 0 or any(len(p) != 2 for p in c):
            raise ValueError("centers must be a non-empty list of (x, y)")
        so = tuple(tuple(float(v) for v in p) for p in self.source_offsets)
        do = tuple(tuple(float(v) for v in p) for p in self.detector_offsets)
        if len(so) != 2 or len(do) != 2:
            raise ValueError("a holder has two sources and two detectors")
        flips = tuple("" for _ in c) if self.flips is None else tuple(self.flips)
        if len(flips) != len(c) or any(f not in ("", "x", "y", "xy") for f in flips):
            raise ValueError("flips must give one of '', 'x', 'y', 'xy' per center")
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "source_offsets", so)
        object.__setattr__(self, "detector_offsets", do)
        object.__setattr__(self, "flips", flips)

    def __len__(self):
        return len(self.centers)

    def offsets(self, index):
        f = self.flips[index]
        m = np.array([-1.0 if "x" in f else 1.0, -1.0 if "y" in f else 1.0])
        return np.array(self.source_offsets) * m, np.array(self.detector_offsets) * m

    def pairs(self, index):
        return holder_pairs(self, index)

    def all_pairs(self):
        return [p for i in range(len(self)) for p in holder_pairs(self, i)]

    def to_dict(self):
        return {"centers": [list(p) for p in self.centers],
                "source_offsets": [list(p) for p in self.source_offsets],
                "detector_offsets": [list(p) for p in self.detector_offsets],
                "flips": list(self.flips)}

    @classmethod
    def from_dict(cls, d):
        kw = {"centers": d["centers"]}
        for k in ("source_offsets", "detector_offsets", "flips"):
            if d.get(k) is not None:
                kw[k] = d[k]
        return cls(**kw)

    @classmethod
    def ring8(cls):
        """Eight positions on the square of half-width 10 mm, P1 at (-10, 10)."""
        return cls(((-10, 10), (-10, 0), (-10, -10), (0, -10), (10, -10), (10, 0), (10, 10), (0, 10)))

    @classmethod
    def meat16(cls):
        """Sixteen positions in two columns (x = 0 and x = -10), 5 mm pitch.

        The x = 0 column is mounted mirrored in x, the x = -10 column mirrored
        in y.
        """
        col0 = [(0, y) for y in (-10, -5, 0, 5, 10, 15, 20, 25)]
        col1 = [(-10, 25), (-10, 20), (-10, 15), (-10, 10), (-10, 0), (-10, -5), (-10, -10), (-10, 5)]
        return cls(tuple(col0 + col1), flips=("x",) * 8 + ("y",) * 8)


def holder_pairs(layout, position_index):
    """The four pairs at one holder position, labelled ``P{i}S{j}D{k}``."""
    i = check_int("position_index", position_index, minimum=0)
    if i >= len(layout):
        raise IndexError(f"position {i} out of range for {len(layout)} positions")
    c = np.array(layout.centers[i])
    so, do = layout.offsets(i)
    out = []
    for j in range(2):
        for k in range(2):
            out.append(SDPair(tuple(c + so[j]), tuple(c + do[k]), f"P{i + 1:02d}S{j + 1}D{k + 1}"))
    return out


# --------------------------------------------------------------- measurement sets


@dataclass(frozen=True)
class MeasurementSet:
    """Stacked gated data ``H``: one entry per (pair, time).

    Attributes
    ----------
    pairs : tuple of SDPair
    pair_index : ndarray of int
        Index into ``pairs`` for every entry.
    times : ndarray
        Gate times (ps).
    values : ndarray
    delta, seed :
        Noise level and seed used to generate the values, if any.
    """

    pairs: tuple
    pair_index: np.ndarray
    times: np.ndarray
    values: np.ndarray
    delta: float = None
    seed: int = None

    def __post_init__(self):
        pi = np.asarray(self.pair_index, dtype=int)
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if not (pi.ndim == t.ndim == v.ndim == 1 and pi.size == t.size == v.size):
            raise ValueError("pair_index, times and values must be 1-D and of equal length")
        if pi.size and (pi.min() < 0 or pi.max() >= len(self.pairs)):
            raise ValueError("pair_index out of range")
        object.__setattr__(self, "pairs", tuple(self.pairs))
        object.__setattr__(self, "pair_index", pi)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size

    @property
    def gate_counts(self):
        return np.bincount(self.pair_index, minlength=len(self.pairs))

    def with_values(self, values, delta=None, seed=None):
        return replace(self, values=np.asarray(values, dtype=float), delta=delta, seed=seed)

    def subset(self, pair_ids):
        """Keep only the entries of the given pair indices, in the given order."""
        pair_ids = list(pair_ids)
        keep = [np.flatnonzero(self.pair_index == i) for i in pair_ids]
        idx = np.concatenate(keep) if keep else np.array([], dtype=int)
        new_index = np.concatenate([np.full(k.size, n) for n, k in enumerate(keep)]) if keep else idx
        return MeasurementSet(tuple(self.pairs[i] for i in pair_ids), new_index,
                              self.times[idx], self.values[idx], self.delta, self.seed)

    def coordinates(self):
        """Per-entry source and detector arrays of shape ``(n, 2)``."""
        s = np.array([p.source for p in self.pairs]).reshape(-1, 2)
        d = np.array([p.detector for p in self.pairs]).reshape(-1, 2)
        return s[self.pair_index], d[self.pair_index]

    def to_csv(self, path=None):
        """Write the set; returns the text when ``path`` is None."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HEADER)
        for i, t, v in zip(self.pair_index, self.times, self.values):
            p = self.pairs[i]
            w.writerow([p.id or f"pair{i}", *map(_fmt, p.source + p.detector), _fmt(t), _fmt(v)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def from_csv(cls, path_or_text):
        rows = _read_rows(path_or_text)
        pairs, keys, index, times, values = [], {}, [], [], []
        for pid, xs1, xs2, xd1, xd2, t, v in rows:
            key = (pid, xs1, xs2, xd1, xd2)
            if key not in keys:
                keys[key] = len(pairs)
                pairs.append(SDPair((xs1, xs2), (xd1, xd2), pid))
            index.append(keys[key])
            times.append(t)
            values.append(v)
        return cls(tuple(pairs), np.array(index, dtype=int), np.array(times), np.array(values))


def _read_rows(path_or_text):
    if isinstance(path_or_text, Path) or (isinstance(path_or_text, str) and "\n" not in path_or_text):
        try:
            text = Path(path_or_text).read_text(encoding="utf-8")
        except OSError as exc:
            raise MeasurementFormatError(f"cannot read {path_or_text}: {exc}") from exc
    else:
        text = path_or_text
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise MeasurementFormatError("empty file") from None
    if [h.strip() for h in header] != HEADER:
        raise MeasurementFormatError(f"row 1: expected header {','.join(HEADER)}")
    out = []
    for n, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(HEADER):
            raise MeasurementFormatError(f"row {n}: expected {len(HEADER)} fields, got {len(row)}")
        try:
            out.append((row[0], *(float(x) for x in row[1:])))
        except ValueError as exc:
            raise MeasurementFormatError(f"row {n}: {exc}") from None
    if not out:
        raise MeasurementFormatError("no data rows")
    return out


def write_tpsf_csv(path, tpsfs, ids=None):
    """Write TPSFs (each with ``.pair``, ``.grid``, ``.values``) in the shared layout.

    ``tpsfs`` may also map column names to lists of TPSFs over the same pairs
    and grids; the value column is then replaced by one column per name.
    """
    if isinstance(tpsfs, dict):
        names = list(tpsfs)
        series = [tpsfs[k] for k in names]
    else:
        names, series = ["value"], [list(tpsfs)]
    base = series[0]
    if any(len(s) != len(base) for s in series):
        raise ValueError("all columns need the same pairs")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER[:-1] + names)
    for n, tp in enumerate(base):
        p = tp.pair
        src, det = (p.source, p.detector) if hasattr(p, "source") else p
        pid = ids[n] if ids is not None else (getattr(p, "id", "") or f"pair{n}")
        times = tp.grid.times
        cols = [s[n].values for s in series]
        for k, t in enumerate(times):
            w.writerow([pid, *map(_fmt, tuple(src)[:2] + tuple(det)[:2]), _fmt(t), *(_fmt(c[k]) for c in cols)])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def read_tpsf_csv(path_or_text):
    """Read a single-value TPSF file back into a :class:`MeasurementSet`."""
    return MeasurementSet.from_csv(path_or_text)


def write_irf_csv(path, irf):
    lines = ["t_ps,value"] + [f"{_fmt(j * irf.dt)},{_fmt(v)}" for j, v in enumerate(irf.values)]
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def read_irf_csv(path_or_text):
    text = path_or_text if "\n" in str(path_or_text) else Path(path_or_text).read_text(encoding="utf-8")
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or [h.strip() for h in rows[0]] != ["t_ps", "value"]:
        raise MeasurementFormatError("row 1: expected header t_ps,value")
    try:
        data = np.array([[float(a), float(b)] for a, b in (r for r in rows[1:] if r)])
    except ValueError as exc:
        raise MeasurementFormatError(str(exc)) from None
    if data.shape[0] < 2:
        raise MeasurementFormatError("IRF needs at least two samples")
    dt = data[1, 0] - data[0, 0]
    return IRF(float(dt), data[:, 1])


# ---------------------------------------------------------------- time windows


def peak_window(values, before=10, after=9):
    """Grid indices ``argmax - before .. argmax + after`` of a sampled curve."""
    values = np.asarray(values, dtype=float)
    check_int("before", before, minimum=0)
    check_int("after", after, minimum=0)
    if values.size < before + after + 1:
        raise ValueError(f"need at least {before + after + 1} samples, got {values.size}")
    k = int(np.argmax(values))
    if k - before < 0 or k + after >= values.size:
        raise ValueError(f"peak at index {k} is too close to the grid edge for a "
                         f"[-{before}, +{after}] window")
    return np.arange(k - before, k + after + 1)


def select_time_window(tpsf, before=10, after=9):
    """Gate times around the peak of ``tpsf``; returns ``(indices, times)``."""
    idx = peak_window(tpsf.values, before, after)
    return idx, tpsf.grid.times[idx]


# --------------------------------------------------------------- synthetic data


def _as_pairs(design):
    if isinstance(design, HolderLayout):
        return design.all_pairs()
    pairs = list(design)
    if not pairs:
        raise ValueError("design has no pairs")
    return [p if isinstance(p, SDPair) else SDPair(p[0], p[1], f"pair{n}") for n, p in enumerate(pairs)]


def simulate_tpsfs(medium, fluor, truth, pairs, grid, irf=None, ellipsoid_nodes=(48, 16, 16, 32)):
    """Noise-free TPSFs of shape ``(len(pairs), grid.n)``.

    With an ``irf`` the curves are convolved with the IRF combined with the
    fluorophore lifetime.
    """
    fluor = Fluorophore() if fluor is None else fluor
    if isinstance(truth, EllipsoidTarget):
        u = ellipsoid_tpsfs(medium, fluor, truth, pairs, grid, ellipsoid_nodes)
    elif isinstance(truth, CuboidTarget):
        u = cuboid_tpsfs(medium, fluor, truth, pairs, grid)
    elif hasattr(truth, "to_cuboid"):
        u = cuboid_tpsfs(medium, fluor, truth.to_cuboid(), pairs, grid)
    else:
        raise TypeError(f"unsupported target type {type(truth).__name__}")
    if irf is not None:
        q = irf_with_lifetime(irf, fluor.tau)
        u = np.array([convolve_irf(TPSF(p, grid, row), q).values for p, row in zip(pairs, u)])
    return u


def measurements_from_tpsfs(pairs, grid, tpsfs, before=10, after=9):
    """Gate each curve around its own peak and stack the gates."""
    idx, times, values = [], [], []
    for n, row in enumerate(np.asarray(tpsfs)):
        k = peak_window(row, before, after)
        idx.append(np.full(k.size, n))
        times.append(grid.times[k])
        values.append(row[k])
    return MeasurementSet(tuple(pairs), np.concatenate(idx), np.concatenate(times), np.concatenate(values))


def simulate_measurements(medium, fluor, truth, design, grid, delta=0.0, seed=None,
                          irf=None, before=10, after=9):
    """Synthetic gated data: forward TPSFs, peak windows, then multiplicative noise."""
    pairs = _as_pairs(design)
    u = simulate_tpsfs(medium, fluor, truth, pairs, grid, irf)
    clean = measurements_from_tpsfs(pairs, grid, u, before, after)
    return add_noise(clean, delta, seed)


def intensity_table(tpsfs, grid, per_position=4):
    """Time-integrated intensity of each curve, reshaped to ``(positions, 4)``."""
    tpsfs = np.asarray(tpsfs, dtype=float)
    vals = np.array([emission_intensity(TPSF(None, grid, row)) for row in tpsfs])
    if vals.size % per_position:
        raise ValueError("number of curves is not a multiple of the pairs per position")
    return vals.reshape(-1, per_position)


# ------------------------------------------------------------- experimental data


@dataclass
class ExperimentBundle:
    """Raw time-resolved records of one scan.

    Attributes
    ----------
    pairs : list of SDPair
    dt : float
        Bin width (ps).  Bin ``j`` of ``raw`` is centred at ``(j + 1) * dt``.
    raw : ndarray, shape (npairs, nbins)
        Counts per bin.
    irf : IRF
    background : ndarray, shape (nbins,) or (npairs, nbins)
    tau : float
        Fluorophore lifetime (ps).
    medium : OpticalMedium
    """

    pairs: list
    dt: float
    raw: np.ndarray
    irf: IRF
    background: np.ndarray = None
    tau: float = 0.0
    medium: object = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        check_positive("dt", self.dt)
        self.raw = np.atleast_2d(np.asarray(self.raw, dtype=float))
        if self.raw.size == 0 or len(self.pairs) == 0:
            raise ValueError("empty records")
        if self.raw.shape[0] != len(self.pairs):
            raise ValueError("one raw record per pair is required")
        if np.any(self.raw < 0):
            raise ValueError("counts must be >= 0")
        if abs(self.irf.dt - self.dt) > 1e-9 * self.dt:
            raise ValueError(f"bin width mismatch: records {self.dt} vs IRF {self.irf.dt}")
        if self.background is not None:
            bg = np.asarray(self.background, dtype=float)
            if bg.shape[-1] != self.raw.shape[1]:
                raise ValueError("background must have the same number of bins as the records")
            self.background = bg
        check_positive("tau", self.tau, strict=False)

    @property
    def grid(self):
        return TimeGrid(self.dt, self.dt, self.raw.shape[1])


def subtract_background(raw, background):
    """Bin-wise subtraction, negatives clamped to zero."""
    raw = np.asarray(raw, dtype=float)
    if background is None:
        return raw.copy()
    return np.maximum(raw - np.asarray(background, dtype=float), 0.0)


def ingest_experiment(bundle, before=10, after=9):
    """Background-subtract, gate and stack a scan.

    Returns
    -------
    MeasurementSet, ndarray, IRF
        The gated data, the full background-free curves (for intensities) and
        the IRF as measured.
    """
    clean = subtract_background(bundle.raw, bundle.background)
    grid = bundle.grid
    k = before + after + 1
    live = np.any(clean > 0, axis=1)
    if grid.n < k:
        raise ValueError(f"records have {grid.n} bins, fewer than the {k}-gate window")
    # all-zero curves have no peak; gate them where the other curves peak
    if np.any(live):
        ref = int(np.median([np.argmax(r) for r in clean[live]]))
    else:
        ref = before
    ref = min(max(ref, before), grid.n - after - 1)
    idx, times, values = [], [], []
    for n, row in enumerate(clean):
        w = peak_window(row, before, after) if live[n] else np.arange(ref - before, ref + after + 1)
        idx.append(np.full(w.size, n))
        times.append(grid.times[w])
        values.append(row[w])
    ms = MeasurementSet(tuple(bundle.pairs), np.concatenate(idx), np.concatenate(times), np.concatenate(values))
    return ms, clean, bundle.irf
