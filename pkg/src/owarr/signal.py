"""EEG preprocessing, theta-band features and drowsiness labels.

Pipeline per subject: band-pass, downsample, re-reference to the averaged
earlobes, then for every 30 s epoch the mean Welch PSD over 4-7.5 Hz per
channel in dB. Features for a (auxiliary, new) subject pair come from a PCA
of the two subjects' band powers together; the fitted parameters are kept so
that new epochs can be mapped the same way.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .datamodel import DataError

THETA_BAND = (4.0, 7.5)
DB_FLOOR = 1e-12
FILTER_ORDER = 10


@dataclass(frozen=True)
class RawRecording:
    samples: np.ndarray  # channels x time
    rate: float
    channel_names: tuple = ()
    reference: tuple = ()

    def __post_init__(self):
        x = np.array(self.samples, dtype=np.float64, copy=True)
        if x.ndim == 1:
            x = x.reshape(1, -1)
        if not self.rate > 0:
            raise DataError("sampling rate must be positive")
        if not np.all(np.isfinite(x)):
            raise DataError("recording contains NaN or Inf")
        names = tuple(self.channel_names) or tuple(f"ch{i}" for i in range(x.shape[0]))
        if len(names) != x.shape[0]:
            raise DataError(f"{len(names)} channel names for {x.shape[0]} channels")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "rate", float(self.rate))
        object.__setattr__(self, "channel_names", names)
        object.__setattr__(self, "reference", tuple(int(r) for r in self.reference))

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return self.samples.shape[1] / self.rate

    def replace(self, samples=None, rate=None, channel_names=None, reference=None):
        return RawRecording(
            self.samples if samples is None else samples,
            self.rate if rate is None else rate,
            self.channel_names if channel_names is None else channel_names,
            self.reference if reference is None else reference,
        )


def load_recording(csv_path, sidecar_path=None) -> RawRecording:
    """Read a recording CSV (rows = samples, columns = channels) and its sidecar.

    The JSON sidecar holds ``rate``, optional ``channel_names`` and
    ``reference`` (indices of the earlobe channels). It defaults to the CSV
    path with a ``.json`` suffix.
    """
    csv_path = Path(csv_path)
    sidecar_path = Path(sidecar_path) if sidecar_path else csv_path.with_suffix(".json")
    if not csv_path.is_file():
        raise DataError(f"missing file: {csv_path}")
    if not sidecar_path.is_file():
        raise DataError(f"missing sidecar: {sidecar_path}")
    meta = json.loads(sidecar_path.read_text(encoding="utf-8"))
    with csv_path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{csv_path}: empty recording")
        try:
            rows = [[float(c) for c in row] for row in reader if row]
        except ValueError:
            raise DataError(f"{csv_path}: non-numeric cell") from None
    if not rows or any(len(r) != len(header) for r in rows):
        raise DataError(f"{csv_path}: empty or ragged recording")
    if "rate" not in meta:
        raise DataError(f"{sidecar_path}: missing 'rate'")
    return RawRecording(np.array(rows).T, meta["rate"],
                        meta.get("channel_names", header), meta.get("reference", ()))


def save_recording(rec: RawRecording, csv_path) -> Path:
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(rec.channel_names)
        for row in rec.samples.T:
            writer.writerow([f"{v:.17g}" for v in row])
    meta = {"rate": rec.rate, "channel_names": list(rec.channel_names),
            "reference": list(rec.reference)}
    csv_path.with_suffix(".json").write_text(json.dumps(meta, indent=2), encoding="utf-8")
    return csv_path


def bandpass(rec: RawRecording, lo: float = 1.0, hi: float = 50.0,
             order: int = FILTER_ORDER) -> RawRecording:
    """Zero-phase Butterworth band-pass; ``lo == 0`` gives a low-pass."""
    nyq = rec.rate / 2
    if not (0 <= lo < hi < nyq):
        raise ValueError(f"invalid band [{lo}, {hi}] Hz for rate {rec.rate} Hz")
    if lo == 0:
        sos = sps.butter(order, hi, btype="low", fs=rec.rate, output="sos")
    else:
        sos = sps.butter(order, [lo, hi], btype="band", fs=rec.rate, output="sos")
    return rec.replace(samples=sps.sosfiltfilt(sos, rec.samples, axis=1, padtype="even"))


def downsample(rec: RawRecording, factor: int) -> RawRecording:
    """Anti-aliased decimation by an integer factor."""
    if factor < 1 or int(factor) != factor:
        raise ValueError("factor must be a positive integer")
    if factor == 1:
        return rec
    n_out = rec.samples.shape[1] // factor
    y = sps.resample_poly(rec.samples, 1, int(factor), axis=1, padtype="line")
    return rec.replace(samples=y[:, :n_out], rate=rec.rate / factor)


def rereference(rec: RawRecording, ref_channels=None) -> RawRecording:
    """Subtract the mean of the reference channels and drop them."""
    ref = tuple(rec.reference if ref_channels is None else ref_channels)
    if not ref:
        raise ValueError("no reference channels given")
    ref_mean = rec.samples[list(ref)].mean(axis=0)
    keep = [i for i in range(rec.n_channels) if i not in ref]
    return RawRecording(rec.samples[keep] - ref_mean, rec.rate,
                        [rec.channel_names[i] for i in keep], ())


def band_power(epoch, rate: float, band=THETA_BAND, segment_seconds: float = 2.0,
               overlap: float = 0.5) -> np.ndarray:
    """Mean Welch PSD inside ``band`` (inclusive) for each channel."""
    epoch = np.atleast_2d(np.asarray(epoch, dtype=np.float64))
    nperseg = int(round(segment_seconds * rate))
    if epoch.shape[1] < nperseg:
        raise ValueError("epoch shorter than one Welch segment")
    f, pxx = sps.welch(epoch, fs=rate, window="hann", nperseg=nperseg,
                       noverlap=int(overlap * nperseg), axis=1)
    sel = (f >= band[0]) & (f <= band[1])
    return pxx[:, sel].mean(axis=1)


def to_db(power) -> np.ndarray:
    return 10.0 * np.log10(np.maximum(power, DB_FLOOR))


def theta_power(epoch, rate: float, band=THETA_BAND, **welch_kw) -> np.ndarray:
    """Theta-band power per channel in dB."""
    return to_db(band_power(epoch, rate, band, **welch_kw))


def drowsiness_index(tau, tau0: float = 1.0):
    """Map response time(s) to ``max(0, (1 - e^-(t - t0)) / (1 + e^-(t - t0)))``."""
    # (1 - e^-u) / (1 + e^-u) == tanh(u / 2)
    y = np.maximum(0.0, np.tanh((np.asarray(tau, dtype=np.float64) - tau0) / 2.0))
    return float(y) if np.ndim(y) == 0 else y


def smooth_index(times, values, window: float = 90.0, at=None) -> np.ndarray:
    """Centered square moving average over ``[t - window/2, t + window/2]``.

    Evaluated at the sample times, or at ``at`` if given. Near the edges only
    the samples inside the recording contribute.
    """
    times = np.asarray(times, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(times, kind="stable")
    t, v = times[order], values[order]
    query = t if at is None else np.asarray(at, dtype=np.float64)
    csum = np.concatenate([[0.0], np.cumsum(v)])
    lo = np.searchsorted(t, query - window / 2, side="left")
    hi = np.searchsorted(t, query + window / 2, side="right")
    count = hi - lo
    if np.any(count == 0):
        raise ValueError("smoothing window contains no samples")
    out = (csum[hi] - csum[lo]) / count
    if at is None:
        res = np.empty_like(out)
        res[order] = out
        return res
    return out


def preprocess(rec: RawRecording, band=(1.0, 50.0), target_rate: float = 250.0) -> RawRecording:
    rec = bandpass(rec, *band)
    factor = int(round(rec.rate / target_rate))
    if factor > 1:
        rec = downsample(rec, factor)
    if rec.reference:
        rec = rereference(rec)
    return rec


def epoch_powers(rec: RawRecording, times, length: float = 30.0, band=THETA_BAND,
                 **welch_kw) -> np.ndarray:
    """Band power in dB for the epoch ``[t - length, t]`` ending at each time."""
    n = int(round(length * rec.rate))
    rows = []
    for t in np.asarray(times, dtype=np.float64):
        end = int(round(t * rec.rate))
        if end - n < 0 or end > rec.samples.shape[1]:
            raise DataError(f"epoch ending at {t:.3f} s is outside the recording")
        rows.append(theta_power(rec.samples[:, end - n:end], rec.rate, band, **welch_kw))
    return np.vstack(rows) if rows else np.zeros((0, rec.n_channels))


@dataclass(frozen=True)
class FeatureParams:
    """Everything needed to map band powers to features for one subject pair."""

    n_channels: int
    kept_channels: tuple
    removed_channels: tuple
    means: np.ndarray
    stds: np.ndarray
    basis: np.ndarray  # components x kept channels
    score_min: np.ndarray
    score_max: np.ndarray
    explained: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n_components(self) -> int:
        return self.basis.shape[0]

    def to_dict(self) -> dict:
        return {
            "n_channels": self.n_channels,
            "kept_channels": list(self.kept_channels),
            "removed_channels": list(self.removed_channels),
            "means": self.means.tolist(),
            "stds": self.stds.tolist(),
            "basis": self.basis.tolist(),
            "score_min": self.score_min.tolist(),
            "score_max": self.score_max.tolist(),
            "explained": self.explained.tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "FeatureParams":
        arr = lambda k: np.asarray(d[k], dtype=np.float64)  # noqa: E731
        basis = arr("basis").reshape(-1, len(d["kept_channels"]))
        return cls(int(d["n_channels"]), tuple(d["kept_channels"]),
                   tuple(d["removed_channels"]), arr("means"), arr("stds"), basis,
                   arr("score_min"), arr("score_max"), arr("explained"))


def _scores(params_kept, means, stds, basis, powers):
    Z = (powers[:, list(params_kept)] - means) / stds
    return Z @ basis.T


def apply_feature_params(params: FeatureParams, powers) -> np.ndarray:
    """Map band powers (epochs x channels, dB) to features in [0, 1]."""
    powers = np.atleast_2d(np.asarray(powers, dtype=np.float64))
    if powers.shape[1] != params.n_channels:
        raise DataError(f"expected {params.n_channels} channels, got {powers.shape[1]}")
    S = _scores(params.kept_channels, params.means, params.stds, params.basis, powers)
    F = (S - params.score_min) / (params.score_max - params.score_min)
    return np.clip(F, 0.0, 1.0)


def pairwise_features(aux_powers, new_powers, threshold_db: float = 20.0,
                      variance: float = 0.95):
    """Fit the feature extraction on an (auxiliary, new) subject pair.

    Returns ``(features_aux, features_new, params)``.
    """
    aux = np.atleast_2d(np.asarray(aux_powers, dtype=np.float64))
    new = np.atleast_2d(np.asarray(new_powers, dtype=np.float64))
    if aux.shape[1] != new.shape[1]:
        raise DataError("auxiliary and new powers have different channel counts")
    P = np.vstack([aux, new])
    n_ch = P.shape[1]
    std = P.std(axis=0)
    bad = np.any(P > threshold_db, axis=0) | (std <= 0)
    kept = tuple(int(i) for i in np.flatnonzero(~bad))
    removed = tuple(int(i) for i in np.flatnonzero(bad))
    if not kept:
        raise DataError("no usable channels")
    means = P[:, kept].mean(axis=0)
    stds = std[list(kept)]
    Z = (P[:, kept] - means) / stds
    cov = Z.T @ Z / max(Z.shape[0] - 1, 1)
    evals, evecs = np.linalg.eigh(cov)
    idx = np.argsort(evals)[::-1]
    evals = np.clip(evals[idx], 0.0, None)
    evecs = evecs[:, idx]
    ratio = np.cumsum(evals) / evals.sum()
    k = int(np.searchsorted(ratio, variance - 1e-12) + 1)
    basis = evecs[:, :k].T.copy()
    for i in range(k):
        s = basis[i].sum()
        if abs(s) < 1e-12:
            s = basis[i][np.argmax(np.abs(basis[i]))]
        if s < 0:
            basis[i] = -basis[i]
    S_aux = _scores(kept, means, stds, basis, aux)
    S_new = _scores(kept, means, stds, basis, new)
    smin = np.minimum(S_aux.min(axis=0), S_new.min(axis=0))
    smax = np.maximum(S_aux.max(axis=0), S_new.max(axis=0))
    params = FeatureParams(n_ch, kept, removed, means, stds, basis, smin, smax,
                           evals[:k] / evals.sum())
    return apply_feature_params(params, aux), apply_feature_params(params, new), params
