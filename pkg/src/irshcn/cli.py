"""Command-line front end: ``irshcn run`` and ``irshcn compare``.

Exit codes: 0 success, 1 comparison outside tolerance, 2 configuration or
grid problem, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import analytical, simulator
from .exceptions import ConfigError, EmptyNetworkError, NumericFailure, PreconditionError
from .netmodel import load, resolve_path, table1_scenario, validate

log = logging.getLogger("irshcn")

EXIT_OK, EXIT_MISMATCH, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

_THRESHOLD_PATHS = {"eval.sinr_threshold", "eval.sinr_threshold_db", "eval.rate_threshold"}


@dataclass(frozen=True)
class SweepSpec:
    path: str
    values: tuple
    engines: tuple
    trials: int
    seed: int


@dataclass(frozen=True)
class Figure:
    sweep_path: str
    values: tuple
    series: tuple  # each entry: tuple of (path, value) overrides
    note: str


def _grid(path, values):
    return tuple(((path, v),) for v in values)


FIGURES = {
    "fig2": Figure(
        "eval.sinr_threshold_db", (-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0),
        tuple((("tiers[2].density_lambda0", l2), ("irs.density_lambda0", li))
              for l2 in (50.0, 100.0) for li in (0.0, 200.0, 400.0)),
        "coverage vs SINR threshold",
    ),
    "fig3": Figure(
        "irs.density_lambda0", (0.0, 100.0, 200.0, 400.0, 800.0),
        _grid("tiers[2].density_lambda0", (50.0, 100.0)),
        "per-tier throughput vs IRS density",
    ),
    "fig4": Figure(
        "tiers[2].bias", tuple(10.0 ** (db / 10.0) for db in range(0, 45, 5)),
        _grid("irs.density_lambda0", (0.0, 200.0, 400.0)),
        "throughput vs pico bias",
    ),
}


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def _columns(n_tiers):
    cols = ["engine", "series", "parameter", "value"]
    for k in range(1, n_tiers + 1):
        cols += [f"assoc_{k}", f"coverage_{k}", f"coverage_{k}_lo", f"coverage_{k}_hi",
                 f"throughput_{k}", f"throughput_{k}_lo", f"throughput_{k}_hi"]
    cols += ["coverage", "coverage_lo", "coverage_hi", "throughput", "throughput_lo",
             "throughput_hi", "empty_delta_prob", "sinr_threshold", "wall_time_s"]
    return cols


def _row(engine, series, path, value, b, wall):
    row = {"engine": engine, "series": series, "parameter": path or "", "value": value}
    for k in range(len(b.per_tier_association)):
        lo_hi = b.per_tier_coverage_ci[k] if b.per_tier_coverage_ci else (None, None)
        t_lo_hi = b.per_tier_throughput_ci[k] if b.per_tier_throughput_ci else (None, None)
        row.update({
            f"assoc_{k + 1}": b.per_tier_association[k],
            f"coverage_{k + 1}": b.per_tier_coverage[k],
            f"coverage_{k + 1}_lo": lo_hi[0], f"coverage_{k + 1}_hi": lo_hi[1],
            f"throughput_{k + 1}": b.per_tier_throughput[k],
            f"throughput_{k + 1}_lo": t_lo_hi[0], f"throughput_{k + 1}_hi": t_lo_hi[1],
        })
    ci = b.overall_ci or (None, None)
    tci = b.throughput_ci or (None, None)
    row.update({
        "coverage": b.overall_coverage, "coverage_lo": ci[0], "coverage_hi": ci[1],
        "throughput": b.throughput, "throughput_lo": tci[0], "throughput_hi": tci[1],
        "empty_delta_prob": b.empty_delta_prob, "sinr_threshold": b.sinr_threshold,
        "wall_time_s": wall,
    })
    return row


def _job(args):
    """One unit of work; returns a list of rows (several when a simulation is shared)."""
    engine, series, path, points, trials, seed = args
    if engine == "analytical":
        (value, scenario), = points
        t0 = time.perf_counter()
        b = analytical.overall_coverage(scenario)
        return [_row(engine, series, path, value, b, time.perf_counter() - t0)]
    t0 = time.perf_counter()
    run = simulator.run(points[0][1], trials, seed)
    wall = time.perf_counter() - t0
    return [_row(engine, series, path, value, run.breakdown(sc.eval.sinr_threshold), wall)
            for value, sc in points]


def _series_label(overrides):
    return ";".join(f"{p}={v:g}" for p, v in overrides)


def build_jobs(base, series_list, path, values, engines, trials, seed):
    jobs = []
    for overrides in series_list:
        sc = base
        for p, v in overrides:
            sc = resolve_path(sc, p, v)
        label = _series_label(overrides)
        points = [(v, resolve_path(sc, path, v) if path else sc) for v in values]
        for _, s in points:
            validate(s).raise_if_failed()
        for engine in engines:
            if engine == "sim" and (path in _THRESHOLD_PATHS or not path):
                jobs.append((engine, label, path, points, trials, seed))
            else:
                jobs.extend((engine, label, path, [pt], trials, seed) for pt in points)
    return jobs


def execute(jobs, workers=None):
    """Run jobs, in a process pool when more than one worker is allowed; order is preserved."""
    workers = simulator.worker_count() if workers is None else workers
    if workers <= 1 or len(jobs) <= 1:
        results = [_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_job, jobs))
    return [r for rows in results for r in rows]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(rows, path, n_tiers):
    cols = _columns(n_tiers)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in cols])


def write_gnuplot(rows, path):
    """One data block per (series, engine), separated by two blank lines for gnuplot's ``index``."""
    blocks = {}
    for r in rows:
        blocks.setdefault((r["series"], r["engine"]), []).append(r)
    with open(path, "w") as fh:
        for i, ((series, engine), rs) in enumerate(blocks.items()):
            if i:
                fh.write("\n\n")
            fh.write(f"# index {i}: engine={engine} {series}\n# value coverage throughput\n")
            for r in rs:
                fh.write(f"{_fmt(r['value'])} {_fmt(r['coverage'])} {_fmt(r['throughput'])}\n")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _parse_sweep(text):
    key, sep, vals = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"--sweep expects KEY=v1,v2,... (got {text!r})")
    try:
        values = tuple(float(v) for v in vals.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"non-numeric sweep value in {text!r}") from None
    if not values:
        raise ConfigError("--sweep needs at least one value")
    return key.strip(), values


def cmd_run(args):
    base = load(args.config) if args.config else table1_scenario()
    validate(base).raise_if_failed()
    engines = {"analytical": ("analytical",), "sim": ("sim",), "both": ("analytical", "sim")}[args.engine]
    if args.trials < 1:
        raise ConfigError("--trials must be positive")
    if args.figure and args.sweep:
        raise ConfigError("--figure and --sweep are mutually exclusive")
    if args.figure:
        fig = FIGURES[args.figure]
        path, values, series, name = fig.sweep_path, fig.values, fig.series, args.figure
    elif args.sweep:
        path, values = _parse_sweep(args.sweep)
        series, name = ((),), "sweep"
    else:
        path, values, series, name = None, (None,), ((),), "run"
    spec = SweepSpec(path or "", values, engines, args.trials, args.seed)
    jobs = build_jobs(base, series, path, spec.values, spec.engines, spec.trials, spec.seed)
    rows = execute(jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{name}.csv"
    write_csv(rows, csv_path, base.n_tiers)
    if args.gnuplot:
        write_gnuplot(rows, out / f"{name}.dat")
    print(f"wrote {len(rows)} rows to {csv_path}")
    return EXIT_OK


def _read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _key(row):
    return (row.get("series", ""), row.get("parameter", ""), row.get("value", ""))


def _default_metrics(header):
    return [c for c in header
            if (c == "coverage" or c.startswith(("coverage_", "assoc_")))
            and not c.endswith(("_lo", "_hi"))]


def compare_rows(rows_a, rows_b, tolerance, metrics=None):
    """Max abs deviation per metric over matching grids; raises ConfigError on grid mismatch."""
    index_a = {}
    for r in rows_a:
        if _key(r) in index_a:
            raise ConfigError(f"duplicate grid point {_key(r)} in first file (filter by engine)")
        index_a[_key(r)] = r
    index_b = {}
    for r in rows_b:
        if _key(r) in index_b:
            raise ConfigError(f"duplicate grid point {_key(r)} in second file (filter by engine)")
        index_b[_key(r)] = r
    if set(index_a) != set(index_b):
        missing = sorted(set(index_a) ^ set(index_b))
        raise ConfigError(f"sweep grids differ at {len(missing)} point(s), e.g. {missing[0]}")
    if not rows_a:
        raise ConfigError("no rows to compare")
    metrics = metrics or _default_metrics(rows_a[0].keys())
    report = {}
    for m in metrics:
        if m not in rows_a[0] or m not in rows_b[0]:
            raise ConfigError(f"metric {m!r} missing from one of the files")
        worst, where = -1.0, None
        for key, ra in index_a.items():
            a, b = float(ra[m]), float(index_b[key][m])
            if math.isnan(a) and math.isnan(b):
                dev = 0.0
            else:
                dev = abs(a - b)
                dev = math.inf if math.isnan(dev) else dev
            if dev > worst:
                worst, where = dev, key
        report[m] = (worst, where, worst <= tolerance)
    return report


def cmd_compare(args):
    rows_a = _read_rows(args.csv_a)
    rows_b = _read_rows(args.csv_b)
    if args.engine_a:
        rows_a = [r for r in rows_a if r.get("engine") == args.engine_a]
    if args.engine_b:
        rows_b = [r for r in rows_b if r.get("engine") == args.engine_b]
    metrics = [m.strip() for m in args.metrics.split(",")] if args.metrics else None
    report = compare_rows(rows_a, rows_b, args.tolerance, metrics)
    ok = True
    for m, (dev, where, passed) in report.items():
        status = "PASS" if passed else "FAIL"
        loc = "" if passed else f" at series={where[0]!r} {where[1]}={where[2]}"
        print(f"{status} {m}: max |diff| = {dev:.6g} (tolerance {args.tolerance:g}){loc}")
        ok &= passed
    return EXIT_OK if ok else EXIT_MISMATCH


def build_parser():
    p = argparse.ArgumentParser(prog="irshcn", description="Coverage and throughput of IRS-assisted HCNs.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="evaluate a scenario, a sweep or a figure preset")
    r.add_argument("--config", help="TOML scenario (default: reference deployment)")
    r.add_argument("--engine", choices=("analytical", "sim", "both"), default="analytical")
    r.add_argument("--trials", type=int, default=10_000)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--sweep", metavar="KEY=v1,v2,...")
    r.add_argument("--figure", choices=sorted(FIGURES))
    r.add_argument("--out", default=".", help="output directory")
    r.add_argument("--gnuplot", action="store_true", help="also write a gnuplot data file")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="max deviation between two result files")
    c.add_argument("csv_a")
    c.add_argument("csv_b")
    c.add_argument("--tolerance", type=float, default=0.03)
    c.add_argument("--metrics", help="comma-separated columns (default: coverage and association)")
    c.add_argument("--engine-a", help="keep only rows of this engine from the first file")
    c.add_argument("--engine-b", help="keep only rows of this engine from the second file")
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, PreconditionError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericFailure, EmptyNetworkError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
