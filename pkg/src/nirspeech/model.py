"""Shared domain types and dataset mechanics.

Channel layout convention used everywhere downstream:

* Long channels are ordered pair-major with the two wavelengths of a
  source-detector pair adjacent: column ``2*i`` is pair ``i`` at 760 nm and
  column ``2*i + 1`` is pair ``i`` at 850 nm.
* Haemoglobin tensors carry 194 HbO columns (pair order) followed by
  194 HbR columns (same pair order).
* ``flatten_features`` is row-major time-major: sample 0 of every channel,
  then sample 1, and so on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

LABELS = ("Call", "Restaurant", "Venus", "Rest")
UNLABELLED = "unknown"

SHORT_DISTANCE_MM = 10.0


class DataError(ValueError):
    """Raised when input data violates a structural precondition."""


@dataclass(frozen=True)
class ChannelInfo:
    index: int
    source_id: int
    detector_id: int
    wavelength_nm: int
    distance_mm: float
    is_short: bool


@dataclass(frozen=True)
class Montage:
    channels: tuple[ChannelInfo, ...]
    short_channels: tuple[ChannelInfo, ...]
    n_sources: int
    n_detectors: int
    sample_rate_hz: float = 5.9

    @property
    def n_long(self) -> int:
        return len(self.channels)

    @property
    def n_short(self) -> int:
        return len(self.short_channels)

    @property
    def n_pairs(self) -> int:
        return len(self.channels) // 2


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=np.float64)
    out.flags.writeable = False
    return out


TENSOR_KINDS = ("raw_intensity", "optical_density", "haemoglobin")


@dataclass(frozen=True)
class TrialTensor:
    data: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in TENSOR_KINDS:
            raise DataError(f"unknown tensor kind {self.kind!r}")
        object.__setattr__(self, "data", _frozen(self.data))
        if self.data.ndim != 2:
            raise DataError("trial tensor must be 2-D [time x channel]")

    @property
    def n_time(self) -> int:
        return self.data.shape[0]

    @property
    def n_channels(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class Trial:
    id: str
    label: str
    subject: str
    session: str
    long: TrialTensor
    short: TrialTensor

    def __post_init__(self):
        # live trials arrive before any label exists
        if self.label not in LABELS and self.label != UNLABELLED:
            raise DataError(f"unknown label {self.label!r}")
        if self.long.n_time != self.short.n_time:
            raise DataError(
                f"trial {self.id}: long/short time mismatch "
                f"({self.long.n_time} vs {self.short.n_time})"
            )


@dataclass(frozen=True)
class Dataset:
    subject: str
    montage: Montage
    trials: tuple[Trial, ...]

    def __post_init__(self):
        object.__setattr__(self, "trials", tuple(self.trials))
        for t in self.trials:
            if t.long.n_channels != self.montage.n_long:
                raise DataError(
                    f"trial {t.id}: {t.long.n_channels} channels, montage has "
                    f"{self.montage.n_long}"
                )

    def class_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for t in self.trials:
            counts[t.label] = counts.get(t.label, 0) + 1
        return counts

    def labels(self) -> list[str]:
        return [t.label for t in self.trials]

    def subset(self, indices) -> "Dataset":
        return Dataset(self.subject, self.montage,
                       tuple(self.trials[i] for i in indices))


@dataclass(frozen=True)
class SentenceSet:
    entries: tuple[tuple[str, str], ...]  # (key, text)

    def __post_init__(self):
        keys = [k for k, _ in self.entries]
        if len(set(keys)) != len(keys):
            raise DataError("duplicate sentence keys")

    def keys(self) -> list[str]:
        return [k for k, _ in self.entries]

    def text(self, key: str) -> str:
        for k, t in self.entries:
            if k == key:
                return t
        raise KeyError(key)


def validate_montage(montage: Montage) -> list[str]:
    """Check structural invariants; returns human-readable violations."""
    violations = []
    seen = set()
    for group, chans in (("long", montage.channels),
                         ("short", montage.short_channels)):
        for ch in chans:
            if ch.index in seen:
                violations.append(f"duplicate index {ch.index} ({group})")
            seen.add(ch.index)
            if ch.distance_mm <= 0:
                violations.append(f"channel {ch.index}: non-positive distance")
            short_by_rule = ch.distance_mm < SHORT_DISTANCE_MM
            if ch.is_short != short_by_rule:
                violations.append(
                    f"channel {ch.index}: is_short={ch.is_short} but "
                    f"distance {ch.distance_mm} mm"
                )
            if (group == "long") == ch.is_short:
                violations.append(
                    f"channel {ch.index}: listed as {group} but is_short={ch.is_short}"
                )
            if ch.wavelength_nm not in (760, 850):
                violations.append(
                    f"channel {ch.index}: wavelength {ch.wavelength_nm} nm"
                )
    n = montage.n_long
    long_idx = sorted(ch.index for ch in montage.channels)
    if long_idx != list(range(n)):
        violations.append("long channel indices are not 0..n-1 without gaps")
    return violations


def trim_trial(t: TrialTensor, n_time: int = 145) -> TrialTensor:
    """Keep the first ``n_time`` samples; channel order untouched."""
    if t.n_time < n_time:
        raise DataError(
            f"trial has {t.n_time} samples, {n_time} required for trimming"
        )
    if t.n_time == n_time:
        return t
    return TrialTensor(t.data[:n_time], t.kind)


def trim_trial_pair(trial: Trial, n_time: int = 145) -> Trial:
    """Trim both the long and short tensors of a trial."""
    return Trial(trial.id, trial.label, trial.subject, trial.session,
                 trim_trial(trial.long, n_time), trim_trial(trial.short, n_time))


def stratified_split(d: Dataset, test_fraction: float, seed: int):
    """Split into (train, test) keeping per-class proportions.

    Per class, the test count is round(class_count * test_fraction) with
    banker-free rounding (round-half-up), clamped so both sides stay
    non-empty.  Deterministic given the seed.
    """
    if not 0 < test_fraction < 1:
        raise DataError(f"test_fraction must be in (0, 1), got {test_fraction}")
    by_class: dict[str, list[int]] = {}
    for i, t in enumerate(d.trials):
        by_class.setdefault(t.label, []).append(i)
    for label, idx in by_class.items():
        if len(idx) < 2:
            raise DataError(f"class {label!r} has {len(idx)} trial(s), need >= 2")
    rng = np.random.default_rng(seed)
    test_idx: list[int] = []
    train_idx: list[int] = []
    for label in sorted(by_class):
        idx = np.array(by_class[label])
        n_test = int(math.floor(len(idx) * test_fraction + 0.5))
        n_test = min(max(n_test, 1), len(idx) - 1)
        perm = rng.permutation(len(idx))
        test_idx.extend(idx[perm[:n_test]].tolist())
        train_idx.extend(idx[perm[n_test:]].tolist())
    return d.subset(sorted(train_idx)), d.subset(sorted(test_idx))


def flatten_features(t: TrialTensor) -> np.ndarray:
    """Row-major (time-major) flattening to a 1-D feature vector."""
    return t.data.reshape(-1).copy()


def unflatten_features(v: np.ndarray, n_time: int, n_channels: int,
                       kind: str = "haemoglobin") -> TrialTensor:
    """Inverse of flatten_features for a known shape (test helper)."""
    if v.size != n_time * n_channels:
        raise DataError(f"cannot reshape {v.size} values to {n_time}x{n_channels}")
    return TrialTensor(np.asarray(v).reshape(n_time, n_channels), kind)
