"""Batch experiment runner.

Run configurations are INI-style files: one section per run, values are
JSON literals (bare words are read as strings)::

    [kubo]
    manifold = "kubo"
    params = {"omega0": 2.5, "b": 1.0}
    algorithms = ["cEP", "tMP", "cMP"]
    dt = [0.1, 0.05]
    n_traj = 100000
    t_max = 5.0
    seed = 1234

Keys in ``[DEFAULT]`` are shared by every section. Exit codes: 0 success,
2 configuration or usage error, 3 numerical divergence.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import logging
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .ensemble import default_workers, n_steps_for
from .geometry import ProjectionError
from .manifolds import catalog
from .metrics import (
    ReferenceSeries,
    build_error_table,
    compute_reference,
    resolve_reference_mode,
)
from .stepper import ALGORITHMS

log = logging.getLogger("projsde")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGENCE = 0, 2, 3
PROJECTED = tuple(a for a in ALGORITHMS if a != "midpoint_unconstrained")
TIMESERIES_COLUMNS = ["time", "algorithm", "dt", "observable", "mean", "sigma",
                      "constraint_err", "reference"]
ERROR_COLUMNS = ["observable", "dt", "algorithm", "max_error", "max_constraint", "sigma"]
PLOT_COLUMNS = ["time", "mean", "sigma_lo", "sigma_hi", "exact"]
REFERENCE_MODES = ("auto", "oracle", "intrinsic", "fine")


class ConfigError(ValueError):
    """Invalid run configuration; ``field`` and ``line`` locate the problem."""

    def __init__(self, message, field=None, line=None, section=None):
        where = []
        if section:
            where.append(f"[{section}]")
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(f"field {field!r}")
        super().__init__(f"{' '.join(where)}: {message}" if where else message)
        self.field = field
        self.line = line


@dataclass
class RunConfig:
    name: str
    manifold: str
    params: dict = field(default_factory=dict)
    algorithms: list = field(default_factory=lambda: list(PROJECTED))
    dt: list = field(default_factory=lambda: [0.1, 0.05])
    n_traj: int = 100_000
    t_max: float = 5.0
    seed: int = 1234
    midpoint_iters: int = 3
    normal_iters: int = 3
    output_dir: str = "runs"
    output_stride: int | None = None
    output_points: int = 50
    reference: str = "auto"
    common_random_numbers: bool = False
    observables: list | None = None
    ref_n_traj: int | None = None

    def stride_for(self, dt):
        if self.output_stride is not None:
            return self.output_stride
        return max(1, n_steps_for(self.t_max, dt) // max(1, self.output_points))


# ---------------------------------------------------------------- parsing

def _fmt(v) -> str:
    """Floats with 17 significant digits, booleans lower-case."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _key_lines(text):
    # (section, key) -> 1-based line number
    out, section = {}, None
    for i, raw in enumerate(text.splitlines(), 1):
        s = raw.strip()
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
        elif s and s[0] not in "#;" and ("=" in s or ":" in s):
            key = s.split("=" if "=" in s else ":", 1)[0].strip().lower()
            out[(section, key)] = i
    return out


def _value(raw):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw.strip()


def _validate(cfg: RunConfig, err):
    if not isinstance(cfg.manifold, str):
        raise err("manifold", "must be a name")
    if not isinstance(cfg.params, dict):
        raise err("params", "must be a JSON object")
    try:
        entry = catalog(cfg.manifold, **cfg.params)
    except KeyError as e:
        raise err("manifold", str(e.args[0]) if e.args else "unknown manifold")
    except (TypeError, ValueError) as e:
        raise err("params", str(e))
    if isinstance(cfg.algorithms, str):
        cfg.algorithms = [cfg.algorithms]
    if not isinstance(cfg.algorithms, list):
        raise err("algorithms", "must be a list")
    for a in cfg.algorithms:
        if a not in PROJECTED:
            raise err("algorithms", f"unknown algorithm {a!r}; choose from {PROJECTED}")
    if not isinstance(cfg.dt, list):
        cfg.dt = [cfg.dt]
    if not cfg.dt:
        raise err("dt", "needs at least one step-size")
    for dt in cfg.dt:
        if isinstance(dt, bool) or not isinstance(dt, (int, float)) or not (
                math.isfinite(dt) and dt > 0):
            raise err("dt", f"step-size must be a positive number, got {dt!r}")
    cfg.dt = [float(d) for d in cfg.dt]
    if isinstance(cfg.t_max, bool) or not isinstance(cfg.t_max, (int, float)) or not (
            math.isfinite(cfg.t_max) and cfg.t_max > 0):
        raise err("t_max", "must be a positive number")
    cfg.t_max = float(cfg.t_max)
    for dt in cfg.dt:
        try:
            n_steps_for(cfg.t_max, dt)
        except ValueError as e:
            raise err("dt", str(e))
    for name, lo in (("n_traj", 10), ("seed", 0), ("midpoint_iters", 1),
                     ("normal_iters", 1), ("output_points", 1)):
        v = getattr(cfg, name)
        if isinstance(v, bool) or not isinstance(v, int) or v < lo:
            raise err(name, f"must be an integer >= {lo}")
    for name in ("output_stride", "ref_n_traj"):
        v = getattr(cfg, name)
        if v is not None and (isinstance(v, bool) or not isinstance(v, int) or v < 1):
            raise err(name, "must be a positive integer")
    if not isinstance(cfg.common_random_numbers, bool):
        raise err("common_random_numbers", "must be true or false")
    if cfg.observables is not None:
        if not isinstance(cfg.observables, list) or not cfg.observables:
            raise err("observables", "must be a non-empty list")
        for k in cfg.observables:
            if k not in entry.observables:
                raise err("observables",
                          f"unknown observable {k!r}; {cfg.manifold} has {list(entry.observables)}")
    if cfg.reference not in REFERENCE_MODES:
        raise err("reference", f"must be one of {REFERENCE_MODES}")
    try:
        resolve_reference_mode(entry, cfg.reference, cfg.observables)
    except LookupError as e:
        raise err("reference", str(e))
    return cfg


def load_config(path, section=None) -> list:
    """Parse and validate every run section (or just ``section``)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as e:
        raise ConfigError(str(e).splitlines()[0], line=getattr(e, "lineno", None))
    lines = _key_lines(text)
    names = parser.sections()
    if section is not None:
        if section not in names:
            raise ConfigError(f"no section {section!r}; have {names}")
        names = [section]
    if not names:
        raise ConfigError("config has no run sections")
    known = set(RunConfig.__dataclass_fields__) - {"name"}
    configs = []
    for name in names:
        def err(key, msg, _name=name):
            line = lines.get((_name, key), lines.get(("DEFAULT", key)))
            return ConfigError(msg, field=key, line=line, section=_name)

        values = {}
        for key, raw in parser.items(name):
            if key not in known:
                raise err(key, "unknown field")
            values[key] = _value(raw)
        if "manifold" not in values:
            raise err("manifold", "is required")
        cfg = RunConfig(name=name, **values)
        out = Path(cfg.output_dir)
        if not out.is_absolute():
            out = path.parent / out
        # a shared or default output_dir gets one subdirectory per section
        if (name, "output_dir") not in lines:
            out = out / name
        cfg.output_dir = str(out)
        configs.append(_validate(cfg, err))
    return configs


# ---------------------------------------------------------------- outputs

def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _series_rows(times, means, sigmas, constraint, algorithm, dt, reference):
    for k in means:
        for i, t in enumerate(times):
            c = constraint[i] if constraint is not None else float("nan")
            yield (t, algorithm, dt, k, means[k][i], sigmas[k][i], c, reference)


def _coupled(cfg: RunConfig, mode):
    # mirrors build_error_table: a fine reference shares the runs' Brownian path
    return cfg.common_random_numbers and mode == "fine" and cfg.ref_n_traj in (None, cfg.n_traj)


def _cache_key(cfg: RunConfig, mode, dt, names):
    blob = json.dumps({
        "version": __version__, "manifold": cfg.manifold, "params": cfg.params,
        "mode": mode, "dt": dt, "n_traj": cfg.ref_n_traj or cfg.n_traj,
        "t_max": cfg.t_max, "seed": cfg.seed, "stride": cfg.stride_for(dt),
        "midpoint_iters": cfg.midpoint_iters, "normal_iters": cfg.normal_iters,
        "observables": names, "coupled": _coupled(cfg, mode),
    }, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _reference(cfg: RunConfig, entry, mode, dt, names, workers):
    if mode == "oracle":
        return compute_reference(entry, mode, dt, 0, cfg.t_max, cfg.seed,
                                 cfg.stride_for(dt), names)
    cache = Path(cfg.output_dir) / "reference_cache"
    path = cache / f"{_cache_key(cfg, mode, dt, names)}.json"
    if path.exists():
        d = json.loads(path.read_text())
        log.info("reference cache hit: %s", path.name)
        return ReferenceSeries(
            np.array(d["times"]),
            {k: np.array(v) for k, v in d["means"].items()},
            {k: np.array(v) for k, v in d["sigmas"].items()},
            d["source"], d["dt"], d["rejected"],
            {k: np.array(v) for k, v in d["batch_means"].items()},
        )
    ref = compute_reference(entry, mode, dt, cfg.ref_n_traj or cfg.n_traj, cfg.t_max,
                            cfg.seed, cfg.stride_for(dt), names,
                            midpoint_iters=cfg.midpoint_iters,
                            normal_iters=cfg.normal_iters, workers=workers,
                            stream_label=f"{dt!r}" if _coupled(cfg, mode) else None)
    cache.mkdir(parents=True, exist_ok=True)
    # JSON floats round-trip exactly
    path.write_text(json.dumps({
        "times": ref.times.tolist(),
        "means": {k: v.tolist() for k, v in ref.means.items()},
        "sigmas": {k: v.tolist() for k, v in ref.sigmas.items()},
        "source": ref.source, "dt": ref.dt, "rejected": ref.rejected,
        "batch_means": {k: v.tolist() for k, v in ref.batch_means.items()},
    }))
    return ref


def run_reference(cfg: RunConfig, workers=None) -> dict:
    """Compute (or load cached) references and write ``reference.csv``."""
    entry = catalog(cfg.manifold, **cfg.params)
    names = list(cfg.observables or entry.observables)
    mode = resolve_reference_mode(entry, cfg.reference, names)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    refs = {dt: _reference(cfg, entry, mode, dt, names, workers) for dt in cfg.dt}
    rows = []
    for dt, ref in refs.items():
        rows += _series_rows(ref.times, ref.means, ref.sigmas, None,
                             f"reference:{mode}", dt, True)
    _write_csv(out / "reference.csv", TIMESERIES_COLUMNS, rows)
    return refs


def _manifest(cfg: RunConfig, mode, table=None, refs=None):
    d = {
        "software": {"projsde": __version__, "numpy": np.__version__},
        "config": asdict(cfg),
        "seed": cfg.seed,
        "reference_mode": mode,
        "reference": {_fmt(dt): {"source": r.source, "dt": r.dt, "rejected": r.rejected}
                      for dt, r in (refs or {}).items()},
    }
    if table is not None:
        d["runs"] = {f"{alg}:{_fmt(dt)}": {"rejected": r.rejected, "meta": r.meta}
                     for (alg, dt), r in table.results.items()}
    return d


def run_experiment(cfg: RunConfig, workers=None):
    """Run every (algorithm, dt) pair and write the report bundle.

    Writes ``timeseries.csv``, ``reference.csv``, ``error_table.csv`` and
    ``manifest.json`` into ``cfg.output_dir``.
    """
    entry = catalog(cfg.manifold, **cfg.params)
    names = list(cfg.observables or entry.observables)
    mode = resolve_reference_mode(entry, cfg.reference, names)
    out = Path(cfg.output_dir)
    refs = run_reference(cfg, workers)
    if not cfg.algorithms:
        log.warning("[%s] empty algorithm list; only references written", cfg.name)
    timings = {}
    table = None
    rows, erows = [], []
    for dt in cfg.dt:
        for alg in cfg.algorithms:
            t0 = time.perf_counter()
            tab = build_error_table(
                entry, [alg], [dt], cfg.n_traj, cfg.t_max, cfg.seed,
                reference=mode, observables=names, output_stride=cfg.stride_for(dt),
                midpoint_iters=cfg.midpoint_iters, normal_iters=cfg.normal_iters,
                common_random_numbers=cfg.common_random_numbers, workers=workers,
                references={dt: refs[dt]},
            )
            timings[(alg, dt)] = time.perf_counter() - t0
            res = tab.results[(alg, dt)]
            rows += _series_rows(res.times, res.means, res.sigmas, res.constraint, alg, dt,
                                 False)
            erows += [(r.observable, r.dt, r.algorithm, r.max_error, r.max_constraint,
                       r.sigma) for r in tab.rows]
            if table is None:
                table = tab
            else:
                table.rows += tab.rows
                table.results.update(tab.results)
    _write_csv(out / "timeseries.csv", TIMESERIES_COLUMNS, rows)
    _write_csv(out / "error_table.csv", ERROR_COLUMNS, erows)
    (out / "manifest.json").write_text(
        json.dumps(_manifest(cfg, mode, table, refs), indent=2, sort_keys=True) + "\n")
    for dt in cfg.dt:
        # informational only; hardware dependent
        ts = {a: timings[(a, dt)] for a in cfg.algorithms}
        if ts:
            slow = max(ts.values()) or 1.0
            log.info("[%s] dt=%s relative time %s", cfg.name, dt,
                     ", ".join(f"{a} {v / slow:.2f}" for a, v in ts.items()))
    return table


def emit_plot_data(bundle) -> list:
    """Write one ``fig_*.csv`` per (algorithm, observable, dt) in a bundle.

    Columns are ``time, mean, sigma_lo, sigma_hi, exact`` where ``exact`` is
    the reference mean on the same grid.
    """
    bundle = Path(bundle)
    manifest = bundle / "manifest.json"
    if not manifest.exists():
        raise FileNotFoundError(f"no report bundle at {bundle} (missing manifest.json)")
    meta = json.loads(manifest.read_text())
    cfg = meta["config"]
    if not cfg["algorithms"]:
        log.warning("bundle %s has no algorithms; no plot data written", bundle)
        return []

    def load(name):
        with open(bundle / name, newline="") as fh:
            return list(csv.DictReader(fh))

    ref = {}
    for r in load("reference.csv"):
        ref[(r["dt"], r["observable"], r["time"])] = r["mean"]
    groups = {}
    for r in load("timeseries.csv"):
        groups.setdefault((r["algorithm"], r["dt"], r["observable"]), []).append(r)
    dts = sorted({k[1] for k in groups}, key=float)
    obs = list(dict.fromkeys(k[2] for k in groups))
    written = []
    for (alg, dt, ob), rows in groups.items():
        stem = f"fig_{cfg['manifold']}_{alg.lower()}"
        if ob != obs[0]:
            stem += f"_{ob.lower()}"
        if len(dts) > 1:
            stem += f"_dt{dt}"
        out = []
        for r in rows:
            m, s = float(r["mean"]), float(r["sigma"])
            out.append((float(r["time"]), m, m - s, m + s,
                        float(ref.get((dt, ob, r["time"]), "nan"))))
        path = bundle / f"{stem}.csv"
        _write_csv(path, PLOT_COLUMNS, out)
        written.append(path)
    return written


# ---------------------------------------------------------------- entry point

def _parser():
    p = argparse.ArgumentParser(
        prog="projsde",
        description="Projected SDE experiments on implicit manifolds.",
    )
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (("run", "run experiments and write report bundles"),
                           ("reference", "compute reference series only")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("config", help="run configuration file")
        sp.add_argument("--section", help="run only this section")
        sp.add_argument("--workers", type=int,
                        help="worker threads (default: $PROJSDE_WORKERS or CPU count)")
    sp = sub.add_parser("plotdata", help="emit plot-ready CSV files from a bundle")
    sp.add_argument("bundle", help="report bundle directory")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "plotdata":
            for path in emit_plot_data(args.bundle):
                print(path)
            return EXIT_OK
        workers = args.workers if args.workers is not None else default_workers()
        if workers < 1:
            raise ConfigError("must be >= 1", field="workers")
        for cfg in load_config(args.config, args.section):
            Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
            if args.command == "reference":
                run_reference(cfg, workers)
            else:
                run_experiment(cfg, workers)
            print(cfg.output_dir)
    except (ConfigError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ProjectionError as e:
        msg = str(e)
        traj, k = getattr(e, "trajectory", None), getattr(e, "step", None)
        if traj is not None and f"trajectory {traj}" not in msg:
            msg += f" [trajectory {traj}, step {k}]"
        print(f"error: numerical divergence: {msg}", file=sys.stderr)
        return EXIT_DIVERGENCE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
