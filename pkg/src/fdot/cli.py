"""Command-line interface: ``fdot <command> --config run.json [options]``.

Exit codes: 0 success, 2 input or configuration error, 3 numerical failure,
4 the LM iteration hit ``max_iter`` without meeting another stop criterion.
"""

import argparse
import json
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from .asymptotics import asymptotic_gradient
from .config import ConfigError, load_config
from .forward import TPSF, add_noise
from .inversion import StageError, run_pipeline
from .lm import NonFiniteResidualError
from .measurement import (HolderLayout, MeasurementFormatError, MeasurementSet, intensity_table,
                          simulate_measurements, simulate_tpsfs, write_tpsf_csv)
from .sensitivity import (MeasurementDesign, cuboid_gradient, determinant_condition, peak_times,
                          sensitivity_matrix)

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_NOCONV = 0, 2, 3, 4


class CommandError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _write(path, text):
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _dump(obj):
    return json.dumps(obj, indent=2, sort_keys=False) + "\n"


def _need(cfg, attr, what):
    value = getattr(cfg, attr)
    if value is None:
        raise ConfigError(f"{what} is required for this command")
    return value


def _cuboid_of(target):
    return target.to_cuboid() if hasattr(target, "to_cuboid") else target


# ------------------------------------------------------------------- commands


def cmd_forward(cfg, args):
    pairs = cfg.all_pairs()
    if not pairs:
        raise ConfigError("no source-detector pairs configured")
    grid = _need(cfg, "grid", "'grid'")
    targets = cfg.targets or {"value": _need(cfg, "truth", "'truth' or 'targets'")}
    cols = {}
    for name, target in targets.items():
        u = simulate_tpsfs(cfg.medium, cfg.fluor, target, pairs, grid, cfg.irf)
        cols[name] = [TPSF(p, grid, row) for p, row in zip(pairs, u)]
    _write(args.out, write_tpsf_csv(None, cols if len(cols) > 1 else cols[next(iter(cols))]))
    return EXIT_OK


def cmd_simulate(cfg, args):
    design = cfg.layout if cfg.layout is not None else cfg.all_pairs()
    if not design:
        raise ConfigError("no source-detector pairs configured")
    grid = _need(cfg, "grid", "'grid'")
    truth = _need(cfg, "truth", "'truth'")
    noise = cfg.noise if args.noise is None else args.noise
    seed = cfg.seed if args.seed is None else args.seed
    ms = simulate_measurements(cfg.medium, cfg.fluor, truth, design, grid, 0.0, None, cfg.irf, *cfg.window)
    if noise:
        ms = add_noise(ms, noise, seed)
    _write(args.out, ms.to_csv())
    return EXIT_OK


def cmd_invert(cfg, args):
    if args.data is None:
        raise ConfigError("--data is required")
    data = MeasurementSet.from_csv(Path(args.data))
    noise = cfg.noise if args.noise is None else args.noise
    seed = cfg.seed if args.seed is None else args.seed
    if noise:
        data = add_noise(data, noise, seed)
    pipe = cfg.pipeline()
    if args.mode:
        pipe.lm = pipe.lm.replace(mode=args.mode)
    rep = run_pipeline(pipe, data)
    out = rep.to_dict()
    out["seed"] = seed
    out["noise"] = noise
    _write(args.out, _dump(out))
    p = rep.params
    label = "no target detected" if rep.no_target else "cuboid"
    print(f"{label}: ({', '.join(f'{v:.4g}' for v in p)}) err={(rep.cuboid or rep.cube).err:.3e} "
          f"stop={rep.stop_reason}", file=sys.stderr)
    return EXIT_NOCONV if rep.stop_reason == "max_iter" else EXIT_OK


def _design(cfg, sec, target):
    pairs = cfg.all_pairs()
    if "pairs" in sec:
        from .measurement import SDPair

        pairs = [SDPair(p[0], p[1], f"pair{n}") for n, p in enumerate(sec["pairs"])]
    if not pairs:
        raise ConfigError("empty design")
    if "times" in sec:
        times = sec["times"]
        times = [times] * len(pairs) if np.ndim(times) == 1 else times
    else:
        grid = _need(cfg, "grid", "'grid' (for peak times)")
        times = [[t] for t in peak_times(cfg.medium, target, pairs, grid, cfg.fluor)]
    return MeasurementDesign(pairs, times)


def cmd_sensitivity(cfg, args):
    sec = dict(cfg.raw.get("sensitivity") or {})
    target = _cuboid_of(_need(cfg, "truth", "'truth'"))
    design = _design(cfg, sec, target)
    J = sensitivity_matrix(cfg.medium, target, design, cfg.fluor)
    rep = J.report()
    rep["times"] = [t.tolist() for t in design.times]
    subset = sec.get("subset", ["a1", "b1", "a2", "b2", "a3", "b3", "P"])
    dets = []
    if len(design.pairs) == len(subset) and len({t.size for t in design.times}) == 1:
        for k in range(design.times[0].size):
            # one matrix per time index; pairs may carry different times
            rows = np.array([cuboid_gradient(cfg.medium, target, p, design.times[i][k], cfg.fluor)
                             for i, p in enumerate(design.pairs)])
            from .sensitivity import _subset_indices

            m = rows[:, _subset_indices(subset)]
            sign, ld = np.linalg.slogdet(m)
            dets.append({"time_index": k, "sign": float(sign), "log_abs_det": float(ld)})
    rep["determinants"] = dets
    _write(args.out, _dump(rep))
    return EXIT_OK


def cmd_asymptotics(cfg, args):
    sec = dict(cfg.raw.get("asymptotics") or {})
    target = _cuboid_of(_need(cfg, "truth", "'truth'"))
    pairs = sec.get("pairs") or [(p.source, p.detector) for p in cfg.all_pairs()]
    if not pairs:
        raise ConfigError("empty design")
    times = sec.get("times", [20.0, 10.0, 5.0])
    n_time = int(sec.get("n_time", 1024))
    names = ["a1", "b1", "a2", "b2", "a3", "b3", "P"]
    table = []
    for p in pairs:
        rows = []
        for t in times:
            exact = cuboid_gradient(cfg.medium, target, p, t, cfg.fluor, n_time=n_time)
            lead = asymptotic_gradient(cfg.medium, target, p, t, cfg.fluor.c_f)
            rows.append({"t": float(t), "ratio": dict(zip(names, (exact / lead).tolist())),
                         "exact": dict(zip(names, exact.tolist())), "leading": dict(zip(names, lead.tolist()))})
        table.append({"source": list(map(float, p[0])), "detector": list(map(float, p[1])), "rows": rows})
    _write(args.out, _dump({"times": list(map(float, times)), "pairs": table}))
    return EXIT_OK


def cmd_intensity_map(cfg, args):
    sec = dict(cfg.raw.get("intensity_map") or {})
    target = _need(cfg, "truth", "'truth'")
    grid = _need(cfg, "grid", "'grid'")
    if "centers" in sec:
        layout = HolderLayout(tuple(map(tuple, sec["centers"])))
    else:
        layout = _need(cfg, "layout", "'layout' or intensity_map.centers")
    pairs = layout.all_pairs()
    if not pairs:
        raise ConfigError("empty design")
    u = simulate_tpsfs(cfg.medium, cfg.fluor, target, pairs, grid, cfg.irf)
    table = intensity_table(u, grid)
    lines = ["# position x y S1D1 S1D2 S2D1 S2D2 total"]
    for i, ((x, y), row) in enumerate(zip(layout.centers, table)):
        lines.append(" ".join([str(i + 1), format(x, ".17g"), format(y, ".17g"),
                               *(format(v, ".17g") for v in row), format(row.sum(), ".17g")]))
    _write(args.out, "\n".join(lines) + "\n")
    return EXIT_OK


COMMANDS = {
    "forward": cmd_forward,
    "simulate": cmd_simulate,
    "invert": cmd_invert,
    "sensitivity": cmd_sensitivity,
    "asymptotics": cmd_asymptotics,
    "intensity-map": cmd_intensity_map,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="fdot", description="Time-domain fluorescence DOT with cuboid targets.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON configuration file")
        p.add_argument("--out", help="output file (default: stdout)")
        p.add_argument("--data", help="measurement CSV (invert)")
        p.add_argument("--noise", type=float, help="override the noise level")
        p.add_argument("--seed", type=int, help="override the noise seed")
        p.add_argument("--mode", choices=("A", "B"), help="LM damping rule")
        p.add_argument("--threads", type=int, help="cap BLAS/OpenMP threads")
    return ap


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    limiter = nullcontext()
    if args.threads is not None:
        if args.threads < 1:
            print("error [input]: --threads must be >= 1", file=sys.stderr)
            return EXIT_INPUT
        from threadpoolctl import threadpool_limits

        limiter = threadpool_limits(args.threads)
    stage = "config"
    try:
        with limiter:
            cfg = load_config(args.config)
            stage = args.command
            return COMMANDS[args.command](cfg, args)
    except (ConfigError, MeasurementFormatError) as exc:
        print(f"error [{stage}]: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except StageError as exc:
        code = EXIT_NUMERIC if isinstance(exc.cause, (NonFiniteResidualError, FloatingPointError,
                                                      np.linalg.LinAlgError)) else EXIT_INPUT
        print(f"error [{args.command}/{exc.stage}]: {exc.cause}", file=sys.stderr)
        return code
    except (NonFiniteResidualError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"error [{stage}] numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, TypeError, KeyError, IndexError) as exc:
        print(f"error [{stage}]: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
