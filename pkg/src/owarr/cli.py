"""Command-line entry point.

Every command resolves its full configuration (YAML file, then flags) and
checks its inputs before anything is written. Results are computed in memory
and written at the end together with a ``manifest.json``.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__, _kernels
from .core import RankDeficientError
from .datamodel import (ALGORITHMS, RECORD_FIELDS, DataError, DomainDataset, Hyperparams,
                        check_compatible, load_dataset, save_dataset)
from .evaluation import (ProtocolConfig, leave_one_out, noise_experiment, summarize, sweep,
                         timing_benchmark)
from .synthdata import GeneratorConfig, generate, write_domains

log = logging.getLogger("owarr")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

HP_FLAGS = {"sigma": "sigma", "lam": "lam", "gamma": "gamma", "ridge": "ridge",
            "fuzzy_sets": "num_fuzzy_sets", "kmeans_k": "kmeans_k"}
PROTO_FLAGS = {"reps": "repetitions", "max_calib": "max_calibration", "batch": "batch"}
GEN_FLAGS = {"num_domains": "num_domains", "epochs": "epochs_per_domain", "dim": "dim",
             "marginal_shift": "marginal_shift", "conditional_shift": "conditional_shift",
             "noise_std": "noise_std"}
CONFIG_SECTIONS = {"seed", "workers", "hyperparams", "protocol", "generator", "sweep",
                   "noise_q", "timing"}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- parsing

def _csv_list(cast):
    def parse(text):
        try:
            return [cast(v) for v in text.split(",") if v.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad list: {text!r}") from None
    return parse


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    g = shared.add_argument_group("shared options")
    g.add_argument("--config", type=Path, help="YAML configuration file")
    g.add_argument("--out", type=Path, help="output directory")
    g.add_argument("--seed", type=int, help="root seed")
    g.add_argument("--algorithms", type=_csv_list(str), help="comma-separated subset of "
                   + ",".join(ALGORITHMS))
    g.add_argument("--sigma", type=float)
    g.add_argument("--lambda", dest="lam", type=float)
    g.add_argument("--gamma", type=float)
    g.add_argument("--ridge", type=float)
    g.add_argument("--fuzzy-sets", dest="fuzzy_sets", type=int)
    g.add_argument("--kmeans-k", dest="kmeans_k", type=int)
    g.add_argument("--reps", type=int, help="repetitions per target")
    g.add_argument("--max-calib", dest="max_calib", type=int)
    g.add_argument("--batch", type=int)
    g.add_argument("--noise-q", dest="noise_q", type=_csv_list(float),
                   help="noise percentages, e.g. 0,10,20")
    g.add_argument("--workers", type=int, help="worker processes (default 1)")
    g.add_argument("-v", "--verbose", action="store_true")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", type=Path, help="directory of domain CSV files")
    data.add_argument("--targets", type=_csv_list(str),
                      help="domain ids to use as targets (default: all)")

    gen = argparse.ArgumentParser(add_help=False)
    gen.add_argument("--num-domains", dest="num_domains", type=int)
    gen.add_argument("--epochs", type=int, help="epochs per domain")
    gen.add_argument("--dim", type=int)
    gen.add_argument("--marginal-shift", dest="marginal_shift", type=float)
    gen.add_argument("--conditional-shift", dest="conditional_shift", type=float)
    gen.add_argument("--noise-std", dest="noise_std", type=float)

    p = argparse.ArgumentParser(prog="owarr", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"owarr {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[shared, gen], help="write synthetic domains")
    f = sub.add_parser("features", parents=[shared],
                       help="band-power features for (auxiliary, new) subject pairs")
    f.add_argument("--subjects", type=Path, required=True,
                   help="directory with <id>.csv, <id>.json and <id>_rt.csv per subject")
    f.add_argument("--new", help="new subject id (default: every subject in turn)")
    f.add_argument("--epoch-length", dest="epoch_length", type=float, default=30.0)
    f.add_argument("--smooth-window", dest="smooth_window", type=float, default=90.0)
    f.add_argument("--target-rate", dest="target_rate", type=float, default=250.0)
    f.add_argument("--threshold-db", dest="threshold_db", type=float, default=20.0)
    sub.add_parser("run", parents=[shared, data, gen],
                   help="online calibration protocol, leave one domain out")
    s = sub.add_parser("sweep", parents=[shared, data, gen], help="hyperparameter grid")
    s.add_argument("--grid", action="append", default=[], metavar="NAME=V1,V2",
                   help="sigma, lam, gamma or num_fuzzy_sets values (repeatable)")
    sub.add_parser("noise", parents=[shared, data, gen], help="attribute-noise experiment")
    t = sub.add_parser("timing", parents=[shared, data, gen], help="training-time scaling")
    t.add_argument("--z-grid", dest="z_grid", type=_csv_list(int))
    t.add_argument("--n-grid", dest="n_grid", type=_csv_list(int))
    t.add_argument("--timing-m", dest="timing_m", type=int)
    t.add_argument("--timing-repeats", dest="timing_repeats", type=int)
    r = sub.add_parser("report", parents=[shared], help="plot-ready tables from results")
    r.add_argument("--results", type=Path, required=True, help="records CSV from run")
    return p


# ---------------------------------------------------------------- config

def _load_yaml(path: Path | None) -> dict:
    if path is None:
        return {}
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    unknown = set(doc) - CONFIG_SECTIONS
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    return doc


def _section(doc, name, cls, overrides):
    raw = doc.get(name) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config section {name!r} must be a mapping")
    allowed = {f.name for f in fields(cls)}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown {name} keys: {sorted(unknown)}")
    values = {**raw, **{k: v for k, v in overrides.items() if v is not None}}
    if "algorithms" in values:
        values["algorithms"] = tuple(values["algorithms"])
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {name}: {exc}") from None


def resolve(args) -> dict:
    """Merge the YAML file and the flags; flags win."""
    doc = _load_yaml(args.config)
    seed = args.seed if args.seed is not None else doc.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    hp = _section(doc, "hyperparams", Hyperparams,
                  {dst: getattr(args, src, None) for src, dst in HP_FLAGS.items()})
    proto_over = {dst: getattr(args, src, None) for src, dst in PROTO_FLAGS.items()}
    proto_over["algorithms"] = getattr(args, "algorithms", None)
    proto_over["seed"] = seed
    proto = _section(doc, "protocol", ProtocolConfig, proto_over)
    gen_over = {dst: getattr(args, src, None) for src, dst in GEN_FLAGS.items()}
    gen_over["seed"] = seed
    gen = _section(doc, "generator", GeneratorConfig, gen_over)
    workers = args.workers if args.workers is not None else doc.get("workers", 1)
    if not isinstance(workers, int) or workers < 1:
        raise ConfigError("workers must be a positive integer")
    noise_q = args.noise_q if args.noise_q is not None else doc.get("noise_q",
                                                                    [0, 10, 20, 30, 40, 50])
    try:
        noise_q = [float(q) for q in noise_q]
    except (TypeError, ValueError):
        raise ConfigError("noise_q must be a list of numbers") from None
    if any(not 0 <= q <= 100 for q in noise_q):
        raise ConfigError("noise percentages must lie in [0, 100]")
    return {"seed": seed, "hp": hp, "protocol": proto, "generator": gen,
            "workers": workers, "noise_q": noise_q, "doc": doc}


def _require_out(args) -> Path:
    if args.out is None:
        raise ConfigError("--out is required")
    if args.out.exists() and not args.out.is_dir():
        raise ConfigError(f"output path is not a directory: {args.out}")
    return args.out


# ---------------------------------------------------------------- io helpers

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def load_domains(data_dir: Path | None, gen: GeneratorConfig):
    """Domain CSVs from ``data_dir`` in sorted order, or generated ones."""
    if data_dir is None:
        return generate(gen), []
    if not data_dir.is_dir():
        raise ConfigError(f"data directory not found: {data_dir}")
    paths = sorted(p for p in data_dir.glob("*.csv"))
    if not paths:
        raise DataError(f"no domain CSV files in {data_dir}")
    domains = [load_dataset(p) for p in paths]
    check_compatible(domains)
    return domains, paths


def _target_indices(domains, ids):
    if not ids:
        return None
    index = {d.id: i for i, d in enumerate(domains)}
    missing = [t for t in ids if t not in index]
    if missing:
        raise ConfigError(f"unknown target ids: {missing}")
    return [index[t] for t in ids]


def write_rows(path: Path, rows, header) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=header, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(v) for k, v in row.items()})
    return path


def _fmt(v):
    if isinstance(v, float):
        return repr(v) if np.isfinite(v) else "nan"
    return v


def write_records(path: Path, records) -> Path:
    rows = [r.as_row() for r in records]
    extra = sorted({k for r in records for k in r.extra})
    return write_rows(path, rows, RECORD_FIELDS + extra)


def read_records(path: Path) -> list:
    if not path.is_file():
        raise DataError(f"missing results file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty file")
        missing = set(RECORD_FIELDS) - set(reader.fieldnames)
        if missing:
            raise DataError(f"{path}: missing columns {sorted(missing)}")
        rows = list(reader)
    for i, row in enumerate(rows, start=2):
        try:
            row["m"] = int(row["m"])
            row["repetition"] = int(row["repetition"])
            row["n_sources"] = int(row["n_sources"])
            for k in ("rmse", "cc", "train_seconds"):
                row[k] = float(row[k])
        except ValueError:
            raise DataError(f"{path}:{i}: malformed record") from None
    return rows


def write_manifest(out: Path, args, cfg: dict, inputs, outputs) -> Path:
    manifest = {
        "command": args.command,
        "argv": sys.argv[1:],
        "seed": cfg["seed"],
        "hyperparams": asdict(cfg["hp"]),
        "protocol": cfg["protocol"].to_dict(),
        "generator": cfg["generator"].to_dict(),
        "workers": cfg["workers"],
        "inputs": {str(p): _sha256(Path(p)) for p in inputs},
        "outputs": sorted(str(Path(p).relative_to(out)) for p in outputs),
        "versions": {"owarr": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__, "python": platform.python_version(),
                     "kernel_backend": _kernels.BACKEND},
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------- commands

def cmd_generate(args, cfg):
    out = _require_out(args)
    domains = generate(cfg["generator"])
    paths = write_domains(domains, out)
    write_manifest(out, args, cfg, [], paths)
    print(f"wrote {len(paths)} domains to {out}")


def _feature_subject(task):
    from . import signal
    sid, folder, opts = task
    rec = signal.load_recording(folder / f"{sid}.csv", folder / f"{sid}.json")
    rec = signal.preprocess(rec, target_rate=opts["target_rate"])
    rt_path = folder / f"{sid}_rt.csv"
    if not rt_path.is_file():
        raise DataError(f"missing response-time log: {rt_path}")
    try:
        rt = np.loadtxt(rt_path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError:
        raise DataError(f"{rt_path}: malformed response-time log") from None
    if rt.shape[0] == 0 or rt.shape[1] != 2:
        raise DataError(f"{rt_path}: expected columns time,rt")
    times, taus = rt[:, 0], rt[:, 1]
    keep = (times >= opts["epoch_length"]) & (times <= rec.duration + 1e-9)
    if not keep.any():
        raise DataError(f"{sid}: no response-time event has a full epoch before it")
    labels = signal.smooth_index(times, signal.drowsiness_index(taus),
                                 opts["smooth_window"], at=times[keep])
    powers = signal.epoch_powers(rec, times[keep], opts["epoch_length"])
    return sid, powers, labels


def cmd_features(args, cfg):
    from .signal import pairwise_features
    out = _require_out(args)
    folder = args.subjects
    if not folder.is_dir():
        raise ConfigError(f"subjects directory not found: {folder}")
    ids = sorted(p.stem for p in folder.glob("*.json"))
    if len(ids) < 2:
        raise DataError("need recordings for at least two subjects")
    if args.new is not None and args.new not in ids:
        raise ConfigError(f"unknown new subject {args.new!r}")
    opts = {k: getattr(args, k) for k in ("epoch_length", "smooth_window", "target_rate")}
    tasks = [(sid, folder, opts) for sid in ids]
    if cfg["workers"] > 1:
        with ProcessPoolExecutor(max_workers=cfg["workers"]) as pool:
            results = list(pool.map(_feature_subject, tasks))
    else:
        results = [_feature_subject(t) for t in tasks]
    per = {sid: (powers, labels) for sid, powers, labels in results}
    news = [args.new] if args.new is not None else ids
    pending = []
    for new in news:
        for aux in ids:
            if aux == new:
                continue
            fa, fn, params = pairwise_features(per[aux][0], per[new][0], args.threshold_db)
            pending.append((new, aux, fa, fn, params))
    written, inputs = [], []
    for sid in ids:
        inputs += [folder / f"{sid}.csv", folder / f"{sid}.json", folder / f"{sid}_rt.csv"]
    for new, aux, fa, fn, params in pending:
        base = out / new
        written.append(save_dataset(DomainDataset(aux, fa, per[aux][1]), base / f"{aux}__aux.csv"))
        written.append(save_dataset(DomainDataset(new, fn, per[new][1]), base / f"{aux}__new.csv"))
        fe = base / f"{aux}__fe.json"
        fe.write_text(json.dumps(params.to_dict(), indent=1) + "\n", encoding="utf-8")
        written.append(fe)
    write_manifest(out, args, cfg, inputs, written)
    print(f"wrote features for {len(pending)} subject pairs to {out}")


def _domains_for(args, cfg):
    domains, inputs = load_domains(getattr(args, "data", None), cfg["generator"])
    targets = _target_indices(domains, getattr(args, "targets", None))
    return domains, inputs, targets


def cmd_run(args, cfg):
    out = _require_out(args)
    domains, inputs, targets = _domains_for(args, cfg)
    records = leave_one_out(domains, cfg["protocol"], cfg["hp"], targets, cfg["workers"])
    paths = [write_records(out / "records.csv", records)]
    summary = summarize(records)
    paths.append(write_rows(out / "summary.csv", summary, list(summary[0]) if summary else
                            ["algorithm", "m"]))
    write_manifest(out, args, cfg, inputs, paths)
    print(f"wrote {len(records)} records to {out}")


def parse_grid(items, doc_grid=None) -> dict:
    grid = dict(doc_grid or {})
    names = {"sigma": float, "lam": float, "lambda": float, "gamma": float,
             "num_fuzzy_sets": int, "fuzzy_sets": int}
    for item in items:
        name, _, values = item.partition("=")
        name = name.strip()
        if name not in names or not values:
            raise ConfigError(f"bad --grid entry {item!r}")
        try:
            vals = [names[name](v) for v in values.split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"bad values in --grid {item!r}") from None
        grid[{"lambda": "lam", "fuzzy_sets": "num_fuzzy_sets"}.get(name, name)] = vals
    if not grid:
        raise ConfigError("sweep needs at least one --grid entry")
    for name, vals in grid.items():
        if name not in ("sigma", "lam", "gamma", "num_fuzzy_sets") or not isinstance(vals, list):
            raise ConfigError(f"bad sweep entry {name!r}")
    return grid


def cmd_sweep(args, cfg):
    out = _require_out(args)
    grid = parse_grid(args.grid, cfg["doc"].get("sweep"))
    for name, vals in grid.items():
        for v in vals:
            try:
                replace(cfg["hp"], **{name: v})
            except ValueError as exc:
                raise ConfigError(f"invalid sweep value {name}={v}: {exc}") from None
    domains, inputs, targets = _domains_for(args, cfg)
    rows = sweep(domains, grid, cfg["protocol"], cfg["hp"], targets, cfg["workers"])
    paths = [write_rows(out / "sweep.csv", rows, list(rows[0]))]
    write_manifest(out, args, cfg, inputs, paths)
    print(f"wrote {len(rows)} sweep cells to {out}")


def cmd_noise(args, cfg):
    out = _require_out(args)
    domains, inputs, targets = _domains_for(args, cfg)
    records = noise_experiment(domains, cfg["noise_q"], cfg["protocol"], cfg["hp"], targets,
                               cfg["workers"])
    paths = [write_records(out / "noise_records.csv", records)]
    summary = summarize(records, keys=("q", "algorithm", "m"))
    paths.append(write_rows(out / "noise_summary.csv", summary, list(summary[0])))
    write_manifest(out, args, cfg, inputs, paths)
    print(f"wrote {len(records)} noise records to {out}")


def cmd_timing(args, cfg):
    out = _require_out(args)
    tdoc = cfg["doc"].get("timing") or {}
    z_grid = args.z_grid or tdoc.get("z_grid", [4, 8, 16, 32])
    n_grid = args.n_grid or tdoc.get("n_grid", [300, 600, 1200, 2400])
    m = args.timing_m if args.timing_m is not None else tdoc.get("m", 20)
    repeats = args.timing_repeats or tdoc.get("repeats", 5)
    if min(z_grid) < 1 or min(n_grid) < 2 or m < 1 or repeats < 1:
        raise ConfigError("timing grids, m and repeats must be positive")
    domains, inputs, _ = _domains_for(args, cfg)
    if len(domains) < 2 or domains[0].n_epochs < m:
        raise DataError("timing needs at least two domains and m target epochs")
    res = timing_benchmark(domains, z_grid, n_grid, cfg["hp"], m=m, repeats=repeats,
                           seed=cfg["seed"])
    paths = [write_rows(out / "timing_z.csv", res.z_rows, ["Z", "n", "seconds"]),
             write_rows(out / "timing_n.csv", res.n_rows, ["Z", "n", "seconds"])]
    fit = {k: getattr(res, k) for k in ("z_slope", "z_intercept", "z_r2", "n_exponent",
                                        "n_loglog_slope")}
    p = out / "timing_fit.json"
    p.write_text(json.dumps(fit, indent=2) + "\n", encoding="utf-8")
    paths.append(p)
    write_manifest(out, args, cfg, inputs, paths)
    print(f"Z fit R^2 = {res.z_r2:.4f}; n exponent = {res.n_exponent:.2f}")


def trend_flag(summary_rows, algorithm="OwARR") -> dict:
    """Is mean RMSE non-increasing in m (m > 0)?

    Reports the least-squares slope and Kendall's tau of mean RMSE against m;
    the trend counts as non-increasing when the slope is <= 0.
    """
    from scipy.stats import kendalltau
    pts = sorted((r["m"], r["rmse_mean"]) for r in summary_rows
                 if r["algorithm"] == algorithm and r["m"] > 0)
    if len(pts) < 2:
        return {"algorithm": algorithm, "points": len(pts), "slope": None,
                "kendall_tau": None, "non_increasing": None}
    ms, vals = np.array(pts).T
    slope = float(np.polyfit(ms, vals, 1)[0])
    tau = float(kendalltau(ms, vals).statistic)
    return {"algorithm": algorithm, "points": len(pts), "slope": slope,
            "kendall_tau": tau, "non_increasing": bool(slope <= 0)}


def report_tables(rows) -> dict:
    """RMSE/CC versus m, SDS selection fractions and mean training times."""
    summary = summarize(rows)
    rmse = [{"algorithm": r["algorithm"], "m": r["m"], "mean": r["rmse_mean"],
             "std": r["rmse_std"], "count": r["count"]} for r in summary]
    cc = [{"algorithm": r["algorithm"], "m": r["m"], "mean": r["cc_mean"],
           "std": r["cc_std"], "count": r["count"]} for r in summary]
    timing = [{"algorithm": r["algorithm"], "m": r["m"],
               "train_seconds_mean": r["train_seconds_mean"]} for r in summary]
    totals = {(r["subject_id"], r["repetition"], r["m"]): r["n_sources"]
              for r in rows if r["algorithm"] == "OwARR"}
    sel: dict = {}
    for r in rows:
        if r["algorithm"] != "OwARR_SDS":
            continue
        total = totals.get((r["subject_id"], r["repetition"], r["m"]))
        sel.setdefault(r["m"], []).append(
            (r["n_sources"], r["n_sources"] / total if total else float("nan")))
    selection = [{"m": m, "selected_mean": float(np.mean([a for a, _ in v])),
                  "fraction_mean": float(np.mean([b for _, b in v]))}
                 for m, v in sorted(sel.items())]
    return {"rmse_vs_m": rmse, "cc_vs_m": cc, "timing": timing, "selection": selection,
            "trend": trend_flag(summary)}


def cmd_report(args, cfg):
    out = _require_out(args)
    rows = read_records(args.results)
    t = report_tables(rows)
    paths = [
        write_rows(out / "rmse_vs_m.csv", t["rmse_vs_m"], ["algorithm", "m", "mean", "std", "count"]),
        write_rows(out / "cc_vs_m.csv", t["cc_vs_m"], ["algorithm", "m", "mean", "std", "count"]),
        write_rows(out / "timing.csv", t["timing"], ["algorithm", "m", "train_seconds_mean"]),
        write_rows(out / "selection.csv", t["selection"], ["m", "selected_mean", "fraction_mean"]),
    ]
    p = out / "trend.json"
    p.write_text(json.dumps(t["trend"], indent=2) + "\n", encoding="utf-8")
    paths.append(p)
    write_manifest(out, args, cfg, [args.results], paths)
    print(f"wrote report tables to {out}")


COMMANDS = {"generate": cmd_generate, "features": cmd_features, "run": cmd_run,
            "sweep": cmd_sweep, "noise": cmd_noise, "timing": cmd_timing,
            "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"owarr: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"owarr: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (RankDeficientError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"owarr: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
