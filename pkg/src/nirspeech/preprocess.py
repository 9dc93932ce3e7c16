"""The three preprocessing levels plus ridge-specific trial conditioning.

Levels:

* ``raw``  — trim only.
* ``od``   — optical density, then trim.
* ``full`` — optical density -> linear detrend -> short-channel regression
  -> motion correction -> modified Beer-Lambert -> zero-phase bandpass ->
  trim.  Output is a haemoglobin tensor: 194 HbO columns (pair order)
  followed by 194 HbR columns.

Optical density uses the natural log.  Concentrations are in micromolar
given extinction coefficients in mm^-1 * mM^-1 (hence the 1e3 factor in the
Beer-Lambert inversion).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np
from scipy import signal

from .model import DataError, Montage, Trial, TrialTensor, trim_trial


@dataclass(frozen=True)
class ExtinctionTable:
    """Per-wavelength extinction coefficients, mm^-1 * mM^-1."""
    eps: dict  # wavelength -> {"hbo": float, "hbr": float}

    def matrix(self, wl1: int = 760, wl2: int = 850) -> np.ndarray:
        E = np.array([
            [self.eps[wl1]["hbo"], self.eps[wl1]["hbr"]],
            [self.eps[wl2]["hbo"], self.eps[wl2]["hbr"]],
        ])
        if np.linalg.cond(E) >= 1e6:
            raise DataError("extinction matrix is ill-conditioned")
        return E


_DEFAULT_EXTINCTION: ExtinctionTable | None = None


def default_extinction() -> ExtinctionTable:
    global _DEFAULT_EXTINCTION
    if _DEFAULT_EXTINCTION is None:
        raw = json.loads(
            resources.files("nirspeech.data").joinpath("extinction.json").read_text())
        _DEFAULT_EXTINCTION = ExtinctionTable({int(k): v for k, v in raw.items()})
    return _DEFAULT_EXTINCTION


def load_extinction(path) -> ExtinctionTable:
    with open(path) as fh:
        raw = json.load(fh)
    return ExtinctionTable({int(k): v for k, v in raw.items()})


@dataclass(frozen=True)
class PreprocConfig:
    level: str = "full"                    # raw | od | full
    ppf: float = 6.0
    band_low_hz: float = 0.01
    band_high_hz: float = 0.7
    od_reference: str = "whole_trial_mean"  # or "first_n_samples"
    od_reference_n: int = 10
    motion_z_thresh: float = 3.5
    short_regression: bool = True
    n_time: int = 145
    extinction: ExtinctionTable = field(default_factory=default_extinction)

    def __post_init__(self):
        if self.level not in ("raw", "od", "full"):
            raise DataError(f"unknown preprocessing level {self.level!r}")

    def to_json(self) -> dict:
        return {
            "level": self.level, "ppf": self.ppf,
            "band_low_hz": self.band_low_hz, "band_high_hz": self.band_high_hz,
            "od_reference": self.od_reference,
            "od_reference_n": self.od_reference_n,
            "motion_z_thresh": self.motion_z_thresh,
            "short_regression": self.short_regression,
            "n_time": self.n_time,
            "extinction": {str(k): v for k, v in self.extinction.eps.items()},
        }

    @classmethod
    def from_json(cls, d: dict) -> "PreprocConfig":
        d = dict(d)
        if "extinction" in d:
            d["extinction"] = ExtinctionTable(
                {int(k): v for k, v in d["extinction"].items()})
        return cls(**d)


def optical_density(raw: TrialTensor, cfg: PreprocConfig) -> TrialTensor:
    """OD(t, c) = -ln(I(t, c) / I_ref(c))."""
    if raw.kind != "raw_intensity":
        raise DataError(f"optical_density expects raw intensity, got {raw.kind}")
    data = raw.data
    bad = data <= 0
    if bad.any():
        t, c = np.argwhere(bad)[0]
        raise DataError(f"non-positive intensity at (t={t}, c={c})")
    if cfg.od_reference == "first_n_samples":
        ref = data[:cfg.od_reference_n].mean(axis=0)
    else:
        ref = data.mean(axis=0)
    return TrialTensor(-np.log(data / ref), "optical_density")


def linear_detrend(x: TrialTensor) -> TrialTensor:
    """Subtract the per-channel least-squares line over time."""
    if x.n_time < 2:
        raise DataError("detrend needs at least 2 samples")
    t = np.arange(x.n_time, dtype=np.float64)
    t = t - t.mean()
    data = x.data
    mean = data.mean(axis=0)
    slope = (t @ (data - mean)) / (t @ t)
    return TrialTensor(data - mean - np.outer(t, slope), x.kind)


def correct_motion(x: TrialTensor, cfg: PreprocConfig) -> TrialTensor:
    """Derivative-threshold motion correction.

    Per channel, a sample is flagged when the first difference leading into
    it exceeds z_thresh robust standard deviations (1.4826 * MAD) of all
    differences.  Flagged runs are linearly interpolated between the nearest
    clean neighbours; runs touching the record ends are clamped to the
    nearest clean value.  A channel with no clean interior sample is
    replaced by the line between its endpoints (with a warning).
    """
    data = x.data.copy()
    n = x.n_time
    idx = np.arange(n)
    for c in range(x.n_channels):
        col = data[:, c]
        diffs = np.diff(col)
        mad = np.median(np.abs(diffs - np.median(diffs)))
        robust_std = 1.4826 * mad
        if robust_std == 0:
            continue
        flagged = np.zeros(n, dtype=bool)
        flagged[1:] = np.abs(diffs) > cfg.motion_z_thresh * robust_std
        if not flagged.any():
            continue
        # a plateau between two flagged jumps (a spike wider than one
        # sample) produces no outlier diff of its own; close short gaps so
        # the whole artifact is rebuilt, not bridged through its peak
        hits = np.flatnonzero(flagged)
        for i, j in zip(hits[:-1], hits[1:]):
            if 1 < j - i <= 3:
                flagged[i:j] = True
        clean = ~flagged
        if clean.sum() <= 1:
            warnings.warn(f"motion: channel {c} fully flagged; replaced by endpoint line")
            data[:, c] = np.linspace(col[0], col[-1], n)
            continue
        data[:, c] = np.interp(idx, idx[clean], col[clean])
    return TrialTensor(data, x.kind)


def _wavelength_slices(n_channels: int):
    """Even columns are 760 nm, odd are 850 nm, per the pair-major layout."""
    cols = np.arange(n_channels)
    return {760: cols[cols % 2 == 0], 850: cols[cols % 2 == 1]}


def regress_short_channels(long: TrialTensor, short: TrialTensor) -> TrialTensor:
    """OLS residuals of each long series on the same-wavelength short series.

    An intercept is always included, so residuals are mean-free.  Dependent
    short columns are dropped by incremental Gram-Schmidt pivoting.
    """
    if long.n_time != short.n_time:
        raise DataError("long/short length mismatch")
    if short.n_channels < 1:
        raise DataError("need at least one short series")
    n = long.n_time
    out = np.empty_like(long.data)
    long_slices = _wavelength_slices(long.n_channels)
    short_slices = _wavelength_slices(short.n_channels)
    for wl in (760, 850):
        lcols = long_slices[wl]
        scols = short_slices[wl]
        X = np.column_stack([np.ones(n), short.data[:, scols]])
        X = X[:, _pivot_columns(X)]
        Y = long.data[:, lcols]
        beta, *_ = np.linalg.lstsq(X, Y, rcond=None)
        out[:, lcols] = Y - X @ beta
    return TrialTensor(out, long.kind)


def _pivot_columns(X: np.ndarray, rtol: float = 1e-10) -> list[int]:
    keep: list[int] = []
    basis = np.zeros((X.shape[0], 0))
    for j in range(X.shape[1]):
        col = X[:, j]
        norm0 = np.linalg.norm(col)
        if norm0 == 0:
            continue
        resid = col - basis @ (basis.T @ col)
        resid = resid - basis @ (basis.T @ resid)
        if np.linalg.norm(resid) > rtol * norm0:
            keep.append(j)
            basis = np.column_stack([basis, resid / np.linalg.norm(resid)])
    return keep


def beer_lambert(od: TrialTensor, montage: Montage,
                 cfg: PreprocConfig) -> TrialTensor:
    """Invert the modified Beer-Lambert law pair by pair.

    [dOD(760); dOD(850)] = (d * ppf * 1e-3) E [dHbO; dHbR]  (conc. in uM),
    solved for concentrations.  Output: HbO columns then HbR columns.
    """
    if od.kind != "optical_density":
        raise DataError(f"beer_lambert expects optical density, got {od.kind}")
    n_pairs = montage.n_pairs
    if od.n_channels != 2 * n_pairs:
        raise DataError("channel count does not match montage pairs")
    E = cfg.extinction.matrix()
    E_inv = np.linalg.inv(E)
    out = np.empty_like(od.data)
    for i in range(n_pairs):
        ch760 = montage.channels[2 * i]
        ch850 = montage.channels[2 * i + 1]
        if ch760.wavelength_nm == ch850.wavelength_nm:
            raise DataError(
                f"pair {i} (source {ch760.source_id}, detector "
                f"{ch760.detector_id}) is missing a wavelength partner")
        od_pair = od.data[:, [2 * i, 2 * i + 1]]
        scale = 1e3 / (ch760.distance_mm * cfg.ppf)
        conc = scale * (od_pair @ E_inv.T)
        out[:, i] = conc[:, 0]            # HbO
        out[:, n_pairs + i] = conc[:, 1]  # HbR
    return TrialTensor(out, "haemoglobin")


def beer_lambert_forward(hb: TrialTensor, montage: Montage,
                         cfg: PreprocConfig) -> TrialTensor:
    """Forward model: concentrations (uM) -> per-wavelength optical density."""
    if hb.kind != "haemoglobin":
        raise DataError(f"forward model expects haemoglobin, got {hb.kind}")
    n_pairs = montage.n_pairs
    E = cfg.extinction.matrix()
    out = np.empty((hb.n_time, 2 * n_pairs))
    for i in range(n_pairs):
        d = montage.channels[2 * i].distance_mm
        conc = hb.data[:, [i, n_pairs + i]]
        od_pair = (d * cfg.ppf * 1e-3) * (conc @ E.T)
        out[:, 2 * i] = od_pair[:, 0]
        out[:, 2 * i + 1] = od_pair[:, 1]
    return TrialTensor(out, "optical_density")


def bandpass(x: TrialTensor, cfg: PreprocConfig, sample_rate: float,
             order: int = 4) -> TrialTensor:
    """Zero-phase 4th-order Butterworth bandpass (forward-backward)."""
    nyq = sample_rate / 2.0
    if not 0 < cfg.band_low_hz < cfg.band_high_hz < nyq:
        raise DataError(
            f"band ({cfg.band_low_hz}, {cfg.band_high_hz}) Hz outside (0, {nyq})")
    b, a = signal.butter(order, [cfg.band_low_hz, cfg.band_high_hz],
                         btype="band", fs=sample_rate)
    padlen = min(3 * (max(len(a), len(b)) - 1), x.n_time - 1)
    filtered = signal.filtfilt(b, a, x.data, axis=0, padtype="even",
                               padlen=padlen)
    return TrialTensor(filtered, x.kind)


def run_pipeline(trial: Trial, cfg: PreprocConfig, montage: Montage) -> TrialTensor:
    """Apply the configured preprocessing level to one trial."""
    if cfg.level == "raw":
        return trim_trial(trial.long, cfg.n_time)
    od = optical_density(trial.long, cfg)
    if cfg.level == "od":
        return trim_trial(od, cfg.n_time)
    x = linear_detrend(od)
    if cfg.short_regression and trial.short.n_channels > 0:
        short_od = linear_detrend(optical_density(trial.short, cfg))
        x = regress_short_channels(x, short_od)
    x = correct_motion(x, cfg)
    x = beer_lambert(x, montage, cfg)
    x = bandpass(x, cfg, montage.sample_rate_hz)
    return trim_trial(x, cfg.n_time)


def baseline_clamp(x: TrialTensor, n_base: int = 10,
                   clamp: float = 16.0) -> TrialTensor:
    """Subtract the mean of the first n_base samples, then clip to +-clamp."""
    if x.n_time <= n_base:
        raise DataError(f"need more than {n_base} samples, got {x.n_time}")
    centred = x.data - x.data[:n_base].mean(axis=0)
    return TrialTensor(np.clip(centred, -clamp, clamp), x.kind)


@dataclass(frozen=True)
class RobustScaler:
    """Per-feature (x - median) / IQR, fit on training rows only."""
    median: np.ndarray
    iqr: np.ndarray


def robust_fit(X: np.ndarray) -> RobustScaler:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] == 0:
        raise DataError("cannot fit a scaler on an empty training set")
    median = np.median(X, axis=0)
    q1, q3 = np.percentile(X, [25, 75], axis=0)
    iqr = q3 - q1
    iqr = np.where(iqr == 0, 1.0, iqr)
    return RobustScaler(median, iqr)


def robust_apply(s: RobustScaler, X: np.ndarray) -> np.ndarray:
    return (np.asarray(X, dtype=np.float64) - s.median) / s.iqr
