"""Online-calibration evaluation protocol, noise injection, sweeps and timing.

For every repetition a contiguous calibration block of ``max_calibration``
epochs is drawn from the target; its labels are revealed ``batch`` at a time
and every algorithm is retrained and scored on all epochs outside the block.
"""
from __future__ import annotations

import itertools
import math
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .core import prepare_source
from .datamodel import ALGORITHMS, DataError, DomainDataset, ExperimentRecord, Hyperparams
from .ensemble import bl1_train, bl2_train, damf_train, owarr_train
from .sds import owarr_sds_train
from .synthdata import bootstrap_domain


def rmse(y_true, y_pred) -> float:
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"length mismatch: {y_true.shape} vs {y_pred.shape}")
    if y_true.size == 0:
        raise ValueError("rmse of empty vectors")
    return float(np.sqrt(np.mean((y_true - y_pred) ** 2)))


def cc(y_true, y_pred) -> float:
    """Pearson correlation; NaN when either vector is constant."""
    a = np.asarray(y_true, dtype=np.float64)
    b = np.asarray(y_pred, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    a = a - a.mean()
    b = b - b.mean()
    den = math.sqrt(float(a @ a) * float(b @ b))
    if den == 0 or not math.isfinite(den):
        return float("nan")
    return float(np.clip((a @ b) / den, -1.0, 1.0))


@dataclass(frozen=True)
class ProtocolConfig:
    max_calibration: int = 100
    batch: int = 5
    repetitions: int = 30
    algorithms: tuple = ALGORITHMS
    seed: int = 0

    def __post_init__(self):
        if self.batch < 1 or self.max_calibration % self.batch:
            raise ValueError("batch must divide max_calibration")
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")
        bad = set(self.algorithms) - set(ALGORITHMS)
        if bad:
            raise ValueError(f"unknown algorithms: {sorted(bad)}")
        object.__setattr__(self, "algorithms", tuple(self.algorithms))

    @property
    def m_values(self) -> list:
        return list(range(0, self.max_calibration + 1, self.batch))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["algorithms"] = list(self.algorithms)
        return d


def _subject_key(subject_id: str) -> int:
    return zlib.crc32(subject_id.encode("utf-8"))


def block_starts(n_epochs: int, cfg: ProtocolConfig, subject_id: str) -> list:
    """Start index of the calibration block for every repetition."""
    if n_epochs <= cfg.max_calibration:
        raise DataError(
            f"target has {n_epochs} epochs; need more than {cfg.max_calibration}")
    return [
        int(np.random.default_rng([cfg.seed, _subject_key(subject_id), rep])
            .integers(0, n_epochs - cfg.max_calibration + 1))
        for rep in range(cfg.repetitions)
    ]


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


def run_protocol(sources, target: DomainDataset, cfg: ProtocolConfig, hp: Hyperparams,
                 backend: str | None = None):
    """Evaluate every configured algorithm on one target subject.

    Returns one ``ExperimentRecord`` per (repetition, m, algorithm). Source
    memberships are computed once up front and are not part of the timings.
    """
    sources = list(sources)
    if not sources:
        raise DataError("no source domains")
    N = target.n_epochs
    starts = block_starts(N, cfg, target.id)
    prepared = [prepare_source(s, hp.num_fuzzy_sets) for s in sources]
    algos = cfg.algorithms
    needs_calib = any(a != "BL1" for a in algos)
    bl1 = None
    if "BL1" in algos:
        bl1, bl1_time = _timed(lambda: bl1_train(sources, hp))
    records = []
    for rep, start in enumerate(starts):
        test = np.ones(N, dtype=bool)
        test[start:start + cfg.max_calibration] = False
        X_test = target.features[test]
        y_test = target.labels[test]
        for m in cfg.m_values:
            # BL1 never sees calibration labels
            calib = target.subset(np.arange(start, start + m)) if m and needs_calib else None
            for algo in algos:
                n_used = len(sources)
                if algo == "BL1":
                    model, secs = bl1, bl1_time
                elif algo == "BL2":
                    if m == 0:
                        continue
                    model, secs = _timed(lambda: bl2_train(calib, hp))
                    n_used = 0
                elif algo == "DAMF":
                    model, secs = _timed(lambda: damf_train(sources, calib, hp))
                elif algo == "OwARR":
                    model, secs = _timed(
                        lambda: owarr_train(prepared, calib, hp, backend=backend))
                else:
                    (model, report), secs = _timed(
                        lambda: owarr_sds_train(prepared, calib, hp, backend=backend,
                                                return_report=True))
                    n_used = int(report.selected.sum())
                pred = model.predict(X_test)
                records.append(ExperimentRecord(
                    target.id, algo, m, rep, rmse(y_test, pred), cc(y_test, pred),
                    secs, n_used))
    return records


def _loo_unit(args):
    domains, t_idx, cfg, hp, backend, noise_q = args
    target = domains[t_idx]
    sources = [d for i, d in enumerate(domains) if i != t_idx]
    if noise_q:
        target = inject_attribute_noise(
            target, noise_q, seed=(cfg.seed, _subject_key(target.id), int(noise_q * 1000)))
    recs = run_protocol(sources, target, cfg, hp, backend=backend)
    if noise_q is not None:
        recs = [replace(r, extra={**r.extra, "q": noise_q}) for r in recs]
    return recs


def leave_one_out(domains, cfg: ProtocolConfig, hp: Hyperparams, targets=None,
                  workers: int = 1, backend: str | None = None, noise_q=None) -> list:
    """Run the protocol with each listed domain as the target in turn.

    ``targets`` holds indices into ``domains`` (default: all). Units are
    independent and may run in worker processes; the returned order does not
    depend on ``workers``.
    """
    domains = list(domains)
    targets = range(len(domains)) if targets is None else targets
    units = [(domains, t, cfg, hp, backend, noise_q) for t in targets]
    if workers > 1 and len(units) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_loo_unit, units))
    else:
        chunks = [_loo_unit(u) for u in units]
    return [r for chunk in chunks for r in chunk]


def inject_attribute_noise(dataset: DomainDataset, q: float, seed=0) -> DomainDataset:
    """Replace ``ceil(q% * N)`` random entries per feature with uniform noise.

    The noise for a column is drawn between that column's minimum and
    maximum; labels are untouched.
    """
    if not 0 <= q <= 100:
        raise ValueError("q must lie in [0, 100]")
    if q == 0:
        return dataset
    seed = list(seed) if isinstance(seed, (tuple, list)) else [seed]
    rng = np.random.default_rng(seed)
    X = dataset.features.copy()
    N = X.shape[0]
    k = min(N, math.ceil(q / 100.0 * N - 1e-9))
    lo, hi = X.min(axis=0), X.max(axis=0)
    for j in range(X.shape[1]):
        idx = rng.choice(N, size=k, replace=False)
        X[idx, j] = rng.uniform(lo[j], hi[j], size=k)
    return dataset.with_features(X)


def noise_experiment(domains, q_values, cfg: ProtocolConfig, hp: Hyperparams,
                     targets=None, workers: int = 1) -> list:
    """Leave-one-out runs with attribute noise on every target epoch."""
    out = []
    for q in q_values:
        out.extend(leave_one_out(domains, cfg, hp, targets, workers, noise_q=float(q)))
    return out


def summarize(records, keys=("algorithm", "m")) -> list:
    """Mean and standard deviation of RMSE and CC per group."""
    groups: dict = {}
    for r in records:
        row = r.as_row() if isinstance(r, ExperimentRecord) else r
        key = tuple(row[k] for k in keys)
        groups.setdefault(key, []).append(row)
    out = []
    for key in sorted(groups, key=lambda k: tuple(_sort_key(v) for v in k)):
        rows = groups[key]
        rm = np.array([float(x["rmse"]) for x in rows])
        cv = np.array([float(x["cc"]) for x in rows])
        cv = cv[np.isfinite(cv)]
        ts = np.array([float(x["train_seconds"]) for x in rows])
        ns = np.array([float(x.get("n_sources", 0)) for x in rows])
        entry = dict(zip(keys, key))
        entry.update({
            "count": len(rows),
            "rmse_mean": float(rm.mean()),
            "rmse_std": float(rm.std(ddof=1)) if rm.size > 1 else 0.0,
            "cc_mean": float(cv.mean()) if cv.size else float("nan"),
            "cc_std": float(cv.std(ddof=1)) if cv.size > 1 else 0.0,
            "train_seconds_mean": float(ts.mean()),
            "n_sources_mean": float(ns.mean()),
        })
        out.append(entry)
    return out


def _sort_key(v):
    try:
        return (0, float(v), "")
    except (TypeError, ValueError):
        return (1, 0.0, str(v))


def mean_rmse(records, algorithm=None, m=None) -> float:
    vals = [r.rmse for r in records
            if (algorithm is None or r.algorithm == algorithm) and (m is None or r.m == m)]
    return float(np.mean(vals)) if vals else float("nan")


def sweep(domains, grid: dict, cfg: ProtocolConfig, hp: Hyperparams, targets=None,
          workers: int = 1) -> list:
    """Mean OwARR RMSE for every cell of a hyperparameter grid.

    ``grid`` maps any of ``sigma``, ``lam``, ``gamma``, ``num_fuzzy_sets`` to
    a list of values; unspecified parameters keep their value in ``hp``.
    """
    names = [k for k in ("sigma", "lam", "gamma", "num_fuzzy_sets") if k in grid]
    unknown = set(grid) - set(names)
    if unknown:
        raise ValueError(f"unknown sweep parameters: {sorted(unknown)}")
    cfg = replace(cfg, algorithms=("OwARR",))
    rows = []
    for values in itertools.product(*(grid[k] for k in names)):
        cell_hp = replace(hp, **dict(zip(names, values)))
        recs = leave_one_out(domains, cfg, cell_hp, targets, workers)
        row = dict(zip(names, values))
        row["rmse_mean"] = mean_rmse([r for r in recs if r.m > 0])
        row["rmse_mean_all_m"] = mean_rmse(recs)
        rows.append(row)
    return rows


@dataclass
class TimingResult:
    z_rows: list = field(default_factory=list)
    n_rows: list = field(default_factory=list)
    z_slope: float = float("nan")
    z_intercept: float = float("nan")
    z_r2: float = float("nan")
    n_exponent: float = float("nan")
    n_loglog_slope: float = float("nan")


def _train_time(sources, target, hp, repeats, backend=None):
    prepared = [prepare_source(s, hp.num_fuzzy_sets) for s in sources]
    best = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        owarr_train(prepared, target, hp, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best


def _expand(domains, Z, rng):
    out = list(domains[:Z])
    i = 0
    while len(out) < Z:
        out.append(bootstrap_domain(domains[i % len(domains)], rng, f"boot{len(out):03d}"))
        i += 1
    return out


def timing_benchmark(domains, z_grid=(4, 8, 16, 32), n_grid=(300, 600, 1200, 2400),
                     hp: Hyperparams | None = None, m: int = 20, n_sources: int = 14,
                     repeats: int = 5, seed: int = 0, backend=None) -> TimingResult:
    """OwARR training time against source count ``Z`` and per-domain size ``n``.

    Domain 0 provides ``m`` calibration rows; the rest are sources,
    bootstrapped when more are needed. Timings are the minimum over
    ``repeats`` runs and cover training only.
    """
    from scipy.optimize import curve_fit

    hp = hp or Hyperparams()
    rng = np.random.default_rng([seed, 3])
    target = domains[0].subset(np.arange(m))
    pool = list(domains[1:])
    res = TimingResult()
    for Z in z_grid:
        srcs = _expand(pool, Z, rng)
        res.z_rows.append({"Z": Z, "n": srcs[0].n_epochs,
                           "seconds": _train_time(srcs, target, hp, repeats, backend)})
    zs = np.array([r["Z"] for r in res.z_rows], dtype=float)
    ts = np.array([r["seconds"] for r in res.z_rows])
    slope, intercept = np.polyfit(zs, ts, 1)
    fit = slope * zs + intercept
    ss_tot = float(((ts - ts.mean()) ** 2).sum())
    res.z_slope, res.z_intercept = float(slope), float(intercept)
    res.z_r2 = 1.0 - float(((ts - fit) ** 2).sum()) / ss_tot if ss_tot > 0 else 1.0

    base = _expand(pool, n_sources, rng)
    for n in n_grid:
        srcs = []
        for ds in base:
            idx = rng.integers(0, ds.n_epochs, n) if n > ds.n_epochs else np.arange(n)
            srcs.append(ds.subset(idx))
        res.n_rows.append({"Z": n_sources, "n": n,
                           "seconds": _train_time(srcs, target, hp, repeats, backend)})
    ns = np.array([r["n"] for r in res.n_rows], dtype=float)
    tn = np.array([r["seconds"] for r in res.n_rows])
    res.n_loglog_slope = float(np.polyfit(np.log(ns), np.log(tn), 1)[0])
    res.n_exponent = res.n_loglog_slope
    if ns.size > 3:
        try:
            popt, _ = curve_fit(lambda x, a, p, b: a * x ** p + b, ns, tn,
                                p0=(tn[-1] / ns[-1], 1.0, 0.0), maxfev=20000)
            res.n_exponent = float(popt[1])
        except (RuntimeError, ValueError):
            pass
    return res
