"""Channel-space first-level GLM.

Design matrices combine boxcar-convolved HRF condition regressors, a
discrete-cosine drift basis, mean-centred short-channel series as nuisances,
and an intercept.  Fitting is plain OLS via QR; contrasts are reported as
z-scores obtained by mapping the t CDF onto the normal quantile function.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import gammaincc

from .model import DataError, TrialTensor


@dataclass(frozen=True)
class HrfParams:
    peak_shape: float = 6.0
    undershoot_shape: float = 16.0
    scale_s: float = 1.0
    undershoot_ratio: float = 1.0 / 6.0
    kernel_length_s: float = 32.0


def spm_hrf(sample_rate: float, params: HrfParams = HrfParams()) -> np.ndarray:
    """Canonical double-gamma HRF sampled at 1/sample_rate, peak-normalized."""
    if sample_rate <= 0:
        raise DataError("sample_rate must be positive")
    t = np.arange(0, params.kernel_length_s, 1.0 / sample_rate)
    peak = stats.gamma.pdf(t, params.peak_shape, scale=params.scale_s)
    undershoot = stats.gamma.pdf(t, params.undershoot_shape, scale=params.scale_s)
    kernel = peak - params.undershoot_ratio * undershoot
    return kernel / kernel.max()


def cosine_drift(n_time: int, sample_rate: float,
                 cutoff_hz: float = 0.005) -> np.ndarray:
    """Discrete cosine high-pass basis: K = floor(2 N cutoff / fs) columns."""
    if cutoff_hz >= sample_rate / 2:
        raise DataError("drift cutoff must be below Nyquist")
    n_cols = int(np.floor(2.0 * n_time * cutoff_hz / sample_rate))
    t = np.arange(n_time)
    cols = np.empty((n_time, n_cols))
    for k in range(1, n_cols + 1):
        cols[:, k - 1] = np.sqrt(2.0 / n_time) * np.cos(
            np.pi * k * (2 * t + 1) / (2.0 * n_time))
    return cols


@dataclass(frozen=True)
class DesignMatrix:
    names: tuple[str, ...]
    values: np.ndarray
    condition_names: tuple[str, ...]

    def __post_init__(self):
        if len(self.names) != self.values.shape[1]:
            raise DataError("design names/columns mismatch")
        if len(set(self.names)) != len(self.names):
            raise DataError("design column names not unique")


def hrf_response(n_time: int, sample_rate: float, onset_s: float,
                 duration_s: float, params: HrfParams = HrfParams()) -> np.ndarray:
    """Boxcar(onset, duration) convolved with the HRF, length n_time."""
    box = np.zeros(n_time)
    i0 = int(round(onset_s * sample_rate))
    i1 = int(round((onset_s + duration_s) * sample_rate))
    if i0 >= n_time:
        raise DataError(f"event onset {onset_s}s beyond record end")
    box[i0:min(i1, n_time)] = 1.0
    kernel = spm_hrf(sample_rate, params)
    return np.convolve(box, kernel)[:n_time]


def build_design(events, short: TrialTensor | np.ndarray | None,
                 sample_rate: float, n_time: int,
                 drift_cutoff_hz: float = 0.005,
                 hrf_params: HrfParams = HrfParams()) -> DesignMatrix:
    """Assemble conditions + drifts + short-channel nuisances + intercept.

    ``events`` is a list of dicts {onset_s, duration_s, condition}.
    Events sharing a condition name merge into one column.
    """
    cond_cols: dict[str, np.ndarray] = {}
    for ev in events:
        if ev["onset_s"] >= n_time / sample_rate:
            raise DataError(f"event at {ev['onset_s']}s beyond record end")
        resp = hrf_response(n_time, sample_rate, ev["onset_s"],
                            ev["duration_s"], hrf_params)
        name = ev["condition"]
        cond_cols[name] = cond_cols.get(name, np.zeros(n_time)) + resp

    names: list[str] = []
    cols: list[np.ndarray] = []
    for name in cond_cols:
        names.append(name)
        cols.append(cond_cols[name])
    drifts = cosine_drift(n_time, sample_rate, drift_cutoff_hz)
    for k in range(drifts.shape[1]):
        names.append(f"drift_{k + 1}")
        cols.append(drifts[:, k])
    if short is not None:
        sdata = short.data if isinstance(short, TrialTensor) else np.asarray(short)
        if sdata.shape[0] != n_time:
            raise DataError("short-channel nuisances must match record length")
        centred = sdata - sdata.mean(axis=0, keepdims=True)
        for k in range(sdata.shape[1]):
            names.append(f"short_{k}")
            cols.append(centred[:, k])
    names.append("intercept")
    cols.append(np.ones(n_time))

    X = np.column_stack(cols)
    keep = _independent_columns(X)
    if len(keep) < X.shape[1]:
        dropped = [names[i] for i in range(X.shape[1]) if i not in keep]
        warnings.warn(f"design: pruned dependent columns {dropped}")
        X = X[:, keep]
        names = [names[i] for i in keep]
    return DesignMatrix(tuple(names), X, tuple(cond_cols))


def _independent_columns(X: np.ndarray, rtol: float = 1e-10) -> list[int]:
    """Greedy QR-based selection keeping the earliest independent columns."""
    # incremental Gram-Schmidt keeping the earliest independent columns
    keep: list[int] = []
    basis = np.zeros((X.shape[0], 0))
    for j in range(X.shape[1]):
        col = X[:, j]
        norm0 = np.linalg.norm(col)
        if norm0 == 0:
            continue
        resid = col - basis @ (basis.T @ col)
        # twice is enough for numerical orthogonality
        resid = resid - basis @ (basis.T @ resid)
        if np.linalg.norm(resid) > rtol * norm0:
            keep.append(j)
            basis = np.column_stack([basis, resid / np.linalg.norm(resid)])
    return keep


@dataclass(frozen=True)
class GlmResult:
    design: DesignMatrix
    betas: np.ndarray           # [n_cols x n_channels]
    residual_variance: np.ndarray
    dof: int
    xtx_inv: np.ndarray = field(repr=False, default=None)


def glm_fit(design: DesignMatrix, Y: np.ndarray) -> GlmResult:
    """OLS via QR; residual variance = RSS / dof per channel."""
    X = design.values
    n, p = X.shape
    if Y.shape[0] != n:
        raise DataError(f"Y has {Y.shape[0]} rows, design has {n}")
    rank = np.linalg.matrix_rank(X)
    if rank == 0:
        raise DataError("design has rank 0")
    dof = n - rank
    if dof <= 0:
        raise DataError("no residual degrees of freedom")
    Q, R = np.linalg.qr(X)
    betas = np.linalg.solve(R, Q.T @ Y)
    resid = Y - X @ betas
    rss = np.sum(resid ** 2, axis=0)
    r_inv = np.linalg.inv(R)
    xtx_inv = r_inv @ r_inv.T
    return GlmResult(design, betas, rss / dof, dof, xtx_inv)


def t_to_z(tvals: np.ndarray, dof: int) -> np.ndarray:
    """Map t statistics to z-scores via CDF matching, stable in both tails.

    Each tail is computed from the survival function of |t| so precision is
    retained far into the tails instead of saturating at z ~ 8.
    """
    tvals = np.asarray(tvals, dtype=np.float64)
    sf = stats.t.sf(np.abs(tvals), dof)
    sf = np.clip(sf, 1e-300, 1.0)
    z_mag = stats.norm.isf(sf)
    return np.sign(tvals) * z_mag


def contrast_z(result: GlmResult, contrast: np.ndarray) -> np.ndarray:
    c = np.asarray(contrast, dtype=np.float64)
    if c.shape != (result.betas.shape[0],):
        raise DataError(
            f"contrast length {c.size}, design has {result.betas.shape[0]} columns"
        )
    effect = c @ result.betas
    var_scale = float(c @ result.xtx_inv @ c)
    if var_scale == 0:
        return np.zeros_like(effect)
    se = np.sqrt(result.residual_variance * var_scale)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, effect / np.where(se > 0, se, 1.0), 0.0)
    return t_to_z(t, result.dof)


def speech_rest_contrast(design: DesignMatrix,
                         speech: str = "speech", rest: str = "rest") -> np.ndarray:
    """Contrast vector for 'imagined speech > rest'."""
    c = np.zeros(len(design.names))
    c[design.names.index(speech)] = 1.0
    if rest in design.names:
        c[design.names.index(rest)] = -1.0
    return c


def duration_sweep(events, short, Y: np.ndarray, sample_rate: float,
                   durations=(5.0, 10.0, 15.0, 20.0, 25.0),
                   speech: str = "speech", rest: str = "rest") -> list[np.ndarray]:
    """Refit the GLM with each assumed stimulus duration; one z-map each."""
    if Y.size == 0:
        raise DataError("empty data")
    n_time = Y.shape[0]
    maps = []
    for dur in durations:
        evs = [{**ev, "duration_s": dur} for ev in events]
        design = build_design(evs, short, sample_rate, n_time)
        result = glm_fit(design, Y)
        maps.append(contrast_z(result, speech_rest_contrast(design, speech, rest)))
    return maps
