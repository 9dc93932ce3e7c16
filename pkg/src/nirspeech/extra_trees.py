"""Extremely randomized trees for imagined-speech detection.

Each node draws K = ceil(max_features_fraction * n_features) candidate
features uniformly without replacement, one uniform cut per candidate in
the node's (min, max) of that feature, and keeps the split with the best
information gain (entropy in nats).  No bootstrap: every tree sees all
rows.  Per-tree seeds come from a splitmix64 expansion of the master seed,
so trees are independent and the whole fit is reproducible bit for bit.

Randomness per node is consumed in a fixed order (feature draw, then one
uniform in [0, 1) per candidate, scaled to the feature range), which makes
seeded-replay experiments under per-feature affine maps possible.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .model import DataError

MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class XtcConfig:
    n_estimators: int = 100
    max_features_fraction: float = 0.2
    min_samples_split: int = 7
    min_samples_leaf: int = 6
    criterion: str = "entropy"
    bootstrap: bool = False
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.max_features_fraction <= 1:
            raise DataError("max_features_fraction must be in (0, 1]")
        if self.min_samples_leaf < 1 or self.min_samples_split < 2:
            raise DataError("invalid min_samples settings")
        if self.bootstrap:
            raise DataError("bootstrap sampling is not supported (all rows per tree)")


def splitmix64(x: int) -> int:
    """SplitMix64 mixing step; used to expand the master seed per tree."""
    x = (x + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def tree_seeds(master: int, n: int) -> list[int]:
    state = master & 0xFFFFFFFFFFFFFFFF
    out = []
    for _ in range(n):
        state = (state + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
        out.append(splitmix64(state))
    return out


@dataclass(frozen=True)
class ExtraTreesModel:
    trees: tuple          # nested node dicts
    classes: tuple        # label list, index order = probability order
    n_features: int
    config: XtcConfig


def _entropy(counts: np.ndarray) -> np.ndarray:
    """Entropy in nats for count rows [.. x n_classes]."""
    totals = counts.sum(axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(totals > 0, counts / np.where(totals > 0, totals, 1), 0.0)
        logp = np.where(p > 0, np.log(p), 0.0)
    return -(p * logp).sum(axis=-1)


def _build_node(X: np.ndarray, onehot: np.ndarray, rows: np.ndarray,
                rng: np.random.Generator, cfg: XtcConfig, k: int) -> dict:
    counts = onehot[rows].sum(axis=0)
    n = rows.size
    n_classes = counts.size
    if n < cfg.min_samples_split or np.count_nonzero(counts) <= 1:
        return {"leaf": (counts / n).tolist()}

    features = rng.choice(X.shape[1], size=k, replace=False)
    u = rng.random(k)
    Xn = X[np.ix_(rows, features)]
    mins = Xn.min(axis=0)
    maxs = Xn.max(axis=0)
    spread = maxs - mins
    thresholds = mins + u * spread

    left_mask = Xn < thresholds[None, :]
    n_left = left_mask.sum(axis=0)
    n_right = n - n_left
    yh = onehot[rows]
    left_counts = left_mask.T.astype(np.float64) @ yh
    right_counts = counts[None, :] - left_counts

    parent_h = _entropy(counts[None, :])[0]
    gains = parent_h - (n_left * _entropy(left_counts)
                        + n_right * _entropy(right_counts)) / n
    valid = (spread > 0) & (n_left >= cfg.min_samples_leaf) \
        & (n_right >= cfg.min_samples_leaf)
    if not valid.any():
        return {"leaf": (counts / n).tolist()}
    gains = np.where(valid, gains, -np.inf)
    best = int(np.argmax(gains))  # first best on ties

    go_left = left_mask[:, best]
    left = _build_node(X, onehot, rows[go_left], rng, cfg, k)
    right = _build_node(X, onehot, rows[~go_left], rng, cfg, k)
    return {"feature": int(features[best]),
            "threshold": float(thresholds[best]),
            "left": left, "right": right}


def fit_extra_trees(X: np.ndarray, y, cfg: XtcConfig) -> ExtraTreesModel:
    X = np.asarray(X, dtype=np.float64)
    y = list(y)
    classes = tuple(sorted(set(y)))
    if len(classes) < 2:
        raise DataError("need at least 2 classes to fit")
    index = {c: i for i, c in enumerate(classes)}
    onehot = np.zeros((len(y), len(classes)))
    for i, lab in enumerate(y):
        onehot[i, index[lab]] = 1.0

    k = math.ceil(cfg.max_features_fraction * X.shape[1])
    rows = np.arange(X.shape[0])
    trees = []
    for seed in tree_seeds(cfg.seed, cfg.n_estimators):
        rng = np.random.default_rng(seed)
        trees.append(_build_node(X, onehot, rows, rng, cfg, k))
    return ExtraTreesModel(tuple(trees), classes, X.shape[1], cfg)


def balance_classes(y, seed: int) -> list[int]:
    """Indices after deterministically subsampling majority classes to the
    minority count (used for speech-vs-rest balancing)."""
    by_class: dict[str, list[int]] = {}
    for i, lab in enumerate(y):
        by_class.setdefault(lab, []).append(i)
    n_min = min(len(v) for v in by_class.values())
    rng = np.random.default_rng(seed)
    keep: list[int] = []
    for lab in sorted(by_class):
        idx = np.array(by_class[lab])
        sel = rng.permutation(len(idx))[:n_min]
        keep.extend(idx[sel].tolist())
    return sorted(keep)


def _leaf_probs(node: dict, x: np.ndarray) -> list:
    while "leaf" not in node:
        node = node["left"] if x[node["feature"]] < node["threshold"] else node["right"]
    return node["leaf"]


def xtc_predict_proba(m: ExtraTreesModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != m.n_features:
        raise DataError(
            f"feature count {X.shape[1]} does not match training ({m.n_features})")
    out = np.zeros((X.shape[0], len(m.classes)))
    for tree in m.trees:
        for i in range(X.shape[0]):
            out[i] += _leaf_probs(tree, X[i])
    return out / len(m.trees)


def xtc_predict(m: ExtraTreesModel, X: np.ndarray) -> list:
    proba = xtc_predict_proba(m, X)
    return [m.classes[i] for i in np.argmax(proba, axis=1)]


# ---------------------------------------------------------------------------
# decoder adapter used by the evaluation protocol and the session service

class XtcDecoder:
    """Speech-vs-rest detector over flattened trials.

    Balances classes by deterministic majority subsampling before fitting.
    """

    def __init__(self, cfg: XtcConfig = XtcConfig(), balance: bool = True):
        self.cfg = cfg
        self.balance = balance
        self.model: ExtraTreesModel | None = None

    @property
    def classes(self) -> tuple:
        if self.model is None:
            raise DataError("decoder is not fitted")
        return self.model.classes

    def _rows(self, tensors) -> np.ndarray:
        from .model import flatten_features
        return np.array([flatten_features(t) for t in tensors])

    def fit(self, tensors, labels):
        X = self._rows(tensors)
        y = list(labels)
        if self.balance:
            keep = balance_classes(y, self.cfg.seed)
            X, y = X[keep], [y[i] for i in keep]
        self.model = fit_extra_trees(X, y, self.cfg)
        return self

    def predict_proba(self, tensors) -> np.ndarray:
        return xtc_predict_proba(self.model, self._rows(tensors))

    def predict(self, tensors) -> list:
        return xtc_predict(self.model, self._rows(tensors))


def model_to_json(m: ExtraTreesModel) -> dict:
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "kind": "extra_trees",
        "classes": list(m.classes),
        "n_features": m.n_features,
        "config": {
            "n_estimators": m.config.n_estimators,
            "max_features_fraction": m.config.max_features_fraction,
            "min_samples_split": m.config.min_samples_split,
            "min_samples_leaf": m.config.min_samples_leaf,
            "criterion": m.config.criterion,
            "bootstrap": m.config.bootstrap,
            "seed": m.config.seed,
        },
        "trees": list(m.trees),
    }


def model_from_json(d: dict) -> ExtraTreesModel:
    if d.get("format_version") != MODEL_FORMAT_VERSION:
        raise DataError(f"unknown model format_version {d.get('format_version')}")
    return ExtraTreesModel(tuple(d["trees"]), tuple(d["classes"]),
                           d["n_features"], XtcConfig(**d["config"]))
