"""1D convolutional decoder over time, channels as input features.

Manual float64 forward/backward passes (verified against central finite
differences), Adam, a reduce-on-plateau learning-rate schedule, early
stopping with best-parameter restore, and a small L1/L2 grid searched on a
stratified validation split.  Fully deterministic given the seed: batch
order and dropout masks come from one seeded generator per grid point.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .model import DataError


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int


@dataclass(frozen=True)
class CnnArchitecture:
    conv1: ConvSpec = ConvSpec(388, 64, 7, 2)
    conv2: ConvSpec = ConvSpec(64, 32, 5, 1)
    n_classes: int = 3
    dropout_p: float = 0.3

    def conv_lengths(self, n_time: int) -> tuple[int, int]:
        l1 = (n_time - self.conv1.kernel) // self.conv1.stride + 1
        l2 = (l1 - self.conv2.kernel) // self.conv2.stride + 1
        if l2 < 1:
            raise DataError(f"input of {n_time} samples collapses below 1")
        return l1, l2


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    plateau_factor: float = 0.5
    plateau_patience: int = 5
    early_patience: int = 15
    reg_grid: tuple = ((0.0, 0.0), (1e-5, 1e-5), (1e-4, 1e-4))
    batch_size: int = 16
    max_epochs: int = 200
    val_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.early_patience <= self.plateau_patience:
            raise DataError("early-stopping patience must exceed plateau patience")


def _xavier(rng, shape, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def cnn_init(arch: CnnArchitecture, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    c1, c2 = arch.conv1, arch.conv2
    return {
        "W1": _xavier(rng, (c1.out_channels, c1.in_channels, c1.kernel),
                      c1.in_channels * c1.kernel, c1.out_channels * c1.kernel),
        "b1": np.zeros(c1.out_channels),
        "W2": _xavier(rng, (c2.out_channels, c2.in_channels, c2.kernel),
                      c2.in_channels * c2.kernel, c2.out_channels * c2.kernel),
        "b2": np.zeros(c2.out_channels),
        "Wf": _xavier(rng, (arch.n_classes, c2.out_channels),
                      c2.out_channels, arch.n_classes),
        "bf": np.zeros(arch.n_classes),
    }


def _im2col(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    """(B, C, T) -> (B, C*kernel, L) windows, zero-copy."""
    B, C, T = x.shape
    L = (T - kernel) // stride + 1
    sb, sc, st = x.strides
    windows = as_strided(x, shape=(B, C, kernel, L),
                         strides=(sb, sc, st, st * stride))
    return windows.reshape(B, C * kernel, L), L


def _conv_forward(x, W, b, stride):
    cols, L = _im2col(x, W.shape[2], stride)
    W2 = W.reshape(W.shape[0], -1)
    out = np.matmul(W2, cols) + b[None, :, None]
    return out, cols


def _conv_backward(d_out, cols, x_shape, W, stride):
    B, C, T = x_shape
    K = W.shape[2]
    W2 = W.reshape(W.shape[0], -1)
    dW = np.einsum("bol,bkl->ok", d_out, cols).reshape(W.shape)
    db = d_out.sum(axis=(0, 2))
    dcols = np.matmul(W2.T, d_out)            # (B, C*K, L)
    L = d_out.shape[2]
    dcols = dcols.reshape(B, C, K, L)
    dx = np.zeros(x_shape)
    pos = stride * np.arange(L)
    for k in range(K):
        np.add.at(dx, (slice(None), slice(None), pos + k), dcols[:, :, k, :])
    return dW, db, dx


def _softmax(Z):
    Z = Z - Z.max(axis=1, keepdims=True)
    e = np.exp(Z)
    return e / e.sum(axis=1, keepdims=True)


def cnn_forward(params: dict, batch: np.ndarray, arch: CnnArchitecture,
                dropout_masks=None) -> np.ndarray:
    """Logits for a (B, channels, time) batch; eval mode unless masks given."""
    logits, _ = _forward_cache(params, batch, arch, dropout_masks)
    return logits


def _forward_cache(params, x, arch, masks):
    h1, cols1 = _conv_forward(x, params["W1"], params["b1"], arch.conv1.stride)
    r1 = np.maximum(h1, 0.0)
    d1 = r1 * masks[0] if masks is not None else r1
    h2, cols2 = _conv_forward(d1, params["W2"], params["b2"], arch.conv2.stride)
    r2 = np.maximum(h2, 0.0)
    d2 = r2 * masks[1] if masks is not None else r2
    pooled = d2.mean(axis=2)
    logits = pooled @ params["Wf"].T + params["bf"]
    cache = (x, cols1, h1, d1, cols2, h2, d2, pooled)
    return logits, cache


def dropout_masks(arch: CnnArchitecture, batch_shape, n_time: int,
                  rng: np.random.Generator):
    """Inverted-dropout masks for both conv outputs."""
    B = batch_shape[0]
    l1, l2 = arch.conv_lengths(n_time)
    p = arch.dropout_p
    m1 = (rng.random((B, arch.conv1.out_channels, l1)) >= p) / (1.0 - p)
    m2 = (rng.random((B, arch.conv2.out_channels, l2)) >= p) / (1.0 - p)
    return (m1, m2)


def cnn_loss_grad(params: dict, batch: np.ndarray, labels: np.ndarray,
                  arch: CnnArchitecture, l1: float = 0.0, l2: float = 0.0,
                  masks=None):
    """Mean cross-entropy (+ L1/L2 on weights, not biases) and gradients."""
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= arch.n_classes:
        raise DataError("label out of range")
    logits, cache = _forward_cache(params, batch, arch, masks)
    x, cols1, h1, d1, cols2, h2, d2, pooled = cache
    B = batch.shape[0]

    Z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(Z).sum(axis=1))
    ce = float(np.mean(logsum - Z[np.arange(B), labels]))
    reg = 0.0
    for name in ("W1", "W2", "Wf"):
        W = params[name]
        reg += l1 * np.abs(W).sum() + l2 * np.sum(W ** 2)
    loss = ce + reg

    P = _softmax(logits)
    P[np.arange(B), labels] -= 1.0
    dlogits = P / B

    grads = {}
    grads["Wf"] = dlogits.T @ pooled
    grads["bf"] = dlogits.sum(axis=0)
    dpooled = dlogits @ params["Wf"]
    L2len = d2.shape[2]
    dd2 = np.repeat(dpooled[:, :, None], L2len, axis=2) / L2len
    dr2 = dd2 * masks[1] if masks is not None else dd2
    dh2 = dr2 * (h2 > 0)
    grads["W2"], grads["b2"], dd1 = _conv_backward(
        dh2, cols2, d1.shape, params["W2"], arch.conv2.stride)
    dr1 = dd1 * masks[0] if masks is not None else dd1
    dh1 = dr1 * (h1 > 0)
    grads["W1"], grads["b1"], _ = _conv_backward(
        dh1, cols1, x.shape, params["W1"], arch.conv1.stride)

    for name in ("W1", "W2", "Wf"):
        W = params[name]
        grads[name] = grads[name] + l1 * np.sign(W) + 2.0 * l2 * W
    return loss, grads


def _mean_ce(params, X, y, arch, batch: int = 64) -> float:
    total, n = 0.0, 0
    for i in range(0, X.shape[0], batch):
        logits = cnn_forward(params, X[i:i + batch], arch)
        Z = logits - logits.max(axis=1, keepdims=True)
        logsum = np.log(np.exp(Z).sum(axis=1))
        yb = y[i:i + batch]
        total += float(np.sum(logsum - Z[np.arange(len(yb)), yb]))
        n += len(yb)
    return total / n


class _Adam:
    def __init__(self, params, cfg: TrainConfig):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0
        self.cfg = cfg

    def step(self, params, grads, lr):
        self.t += 1
        c = self.cfg
        for k in params:
            self.m[k] = c.beta1 * self.m[k] + (1 - c.beta1) * grads[k]
            self.v[k] = c.beta2 * self.v[k] + (1 - c.beta2) * grads[k] ** 2
            mh = self.m[k] / (1 - c.beta1 ** self.t)
            vh = self.v[k] / (1 - c.beta2 ** self.t)
            params[k] = params[k] - lr * mh / (np.sqrt(vh) + c.eps)


def _stratified_val_split(y: np.ndarray, fraction: float, seed: int):
    rng = np.random.default_rng(seed)
    val_idx: list[int] = []
    for lab in np.unique(y):
        idx = np.flatnonzero(y == lab)
        n_val = max(1, int(round(len(idx) * fraction)))
        perm = rng.permutation(len(idx))
        val_idx.extend(idx[perm[:n_val]].tolist())
    chosen = set(val_idx)
    val = np.array(sorted(val_idx))
    train = np.array([i for i in range(len(y)) if i not in chosen])
    return train, val


def _train_one(X_tr, y_tr, X_val, y_val, arch, cfg, l1, l2, rng_seed):
    rng = np.random.default_rng(rng_seed)
    params = cnn_init(arch, rng_seed)
    opt = _Adam(params, cfg)
    lr = cfg.lr
    n_time = X_tr.shape[2]
    history = []
    best_val = np.inf
    best_params = {k: v.copy() for k, v in params.items()}
    since_best = 0
    plateau_since = 0
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(X_tr.shape[0])
        for i in range(0, len(order), cfg.batch_size):
            sel = order[i:i + cfg.batch_size]
            xb, yb = X_tr[sel], y_tr[sel]
            masks = dropout_masks(arch, xb.shape, n_time, rng) \
                if arch.dropout_p > 0 else None
            _, grads = cnn_loss_grad(params, xb, yb, arch, l1, l2, masks)
            opt.step(params, grads, lr)
        train_loss = _mean_ce(params, X_tr, y_tr, arch)
        val_loss = _mean_ce(params, X_val, y_val, arch)
        history.append({"epoch": epoch, "train_loss": train_loss,
                        "val_loss": val_loss, "lr": lr})
        if val_loss < best_val - 1e-12:
            best_val = val_loss
            best_params = {k: v.copy() for k, v in params.items()}
            since_best = 0
            plateau_since = 0
        else:
            since_best += 1
            plateau_since += 1
        if plateau_since > cfg.plateau_patience:
            lr *= cfg.plateau_factor
            plateau_since = 0
        if since_best > cfg.early_patience:
            break
    return best_params, best_val, history


def cnn_train(X: np.ndarray, y: np.ndarray, arch: CnnArchitecture,
              cfg: TrainConfig):
    """Grid-search (l1, l2) on a stratified validation split.

    Returns (params, history) where history records per-pair epoch curves
    and the chosen pair.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    tr, val = _stratified_val_split(y, cfg.val_fraction, cfg.seed)
    if len(val) == 0:
        raise DataError("empty validation split")
    results = []
    for gi, (l1, l2) in enumerate(cfg.reg_grid):
        params, best_val, hist = _train_one(
            X[tr], y[tr], X[val], y[val], arch, cfg, l1, l2,
            rng_seed=int(np.random.default_rng([cfg.seed, gi]).integers(2 ** 63)))
        results.append((best_val, gi, params, hist, (l1, l2)))
    best_val, gi, params, hist, pair = min(results, key=lambda r: (r[0], r[1]))
    history = {
        "chosen_l1_l2": pair,
        "epochs": hist,
        "grid": [{"l1": r[4][0], "l2": r[4][1], "best_val_loss": r[0]}
                 for r in results],
    }
    return params, history


def cnn_predict(params: dict, X: np.ndarray, arch: CnnArchitecture) -> np.ndarray:
    logits = cnn_forward(params, np.asarray(X, dtype=np.float64), arch)
    return np.argmax(logits, axis=1)


def cnn_predict_proba(params: dict, X: np.ndarray, arch: CnnArchitecture) -> np.ndarray:
    return _softmax(cnn_forward(params, np.asarray(X, dtype=np.float64), arch))


# ---------------------------------------------------------------------------
# decoder wrapper used by the evaluation protocol

@dataclass
class CnnDecoder:
    arch: CnnArchitecture = field(default_factory=CnnArchitecture)
    train_cfg: TrainConfig = field(default_factory=TrainConfig)
    scaler: object = None
    params: dict | None = None
    classes: tuple = ()
    history: dict | None = None

    def _tensor_batch(self, tensors) -> np.ndarray:
        from .model import flatten_features
        from .preprocess import robust_apply
        rows = np.array([flatten_features(t) for t in tensors])
        scaled = robust_apply(self.scaler, rows)
        n_time, n_ch = tensors[0].data.shape
        return scaled.reshape(len(tensors), n_time, n_ch).transpose(0, 2, 1)

    def fit(self, tensors, labels):
        from .model import flatten_features
        from .preprocess import robust_fit
        self.classes = tuple(sorted(set(labels)))
        index = {c: i for i, c in enumerate(self.classes)}
        self.scaler = robust_fit(np.array([flatten_features(t) for t in tensors]))
        X = self._tensor_batch(tensors)
        y = np.array([index[lab] for lab in labels])
        arch = self.arch
        if arch.n_classes != len(self.classes) or \
                arch.conv1.in_channels != X.shape[1]:
            arch = CnnArchitecture(
                ConvSpec(X.shape[1], arch.conv1.out_channels,
                         arch.conv1.kernel, arch.conv1.stride),
                arch.conv2, len(self.classes), arch.dropout_p)
            self.arch = arch
        self.params, self.history = cnn_train(X, y, arch, self.train_cfg)
        return self

    def predict_proba(self, tensors) -> np.ndarray:
        return cnn_predict_proba(self.params, self._tensor_batch(tensors), self.arch)

    def predict(self, tensors) -> list:
        idx = cnn_predict(self.params, self._tensor_batch(tensors), self.arch)
        return [self.classes[i] for i in idx]


# ---------------------------------------------------------------------------
# dump: JSON arch header + float64 little-endian tensors

MODEL_FORMAT_VERSION = 1
_PARAM_ORDER = ("W1", "b1", "W2", "b2", "Wf", "bf")


def save_cnn_model(path, params: dict, arch: CnnArchitecture, classes,
                   scaler) -> None:
    header = {
        "format_version": MODEL_FORMAT_VERSION,
        "kind": "cnn1d",
        "classes": list(classes),
        "arch": {
            "conv1": vars(arch.conv1), "conv2": vars(arch.conv2),
            "n_classes": arch.n_classes, "dropout_p": arch.dropout_p,
        },
        "shapes": {k: list(params[k].shape) for k in _PARAM_ORDER},
        "scaler_len": int(np.size(scaler.median)),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for k in _PARAM_ORDER:
            fh.write(np.ascontiguousarray(params[k], dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(scaler.median, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(scaler.iqr, dtype="<f8").tobytes())


def load_cnn_model(path):
    from .preprocess import RobustScaler
    with open(path, "rb") as fh:
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header.get("format_version") != MODEL_FORMAT_VERSION:
            raise DataError("unknown cnn model format version")
        params = {}
        for k in _PARAM_ORDER:
            shape = header["shapes"][k]
            count = int(np.prod(shape))
            params[k] = np.frombuffer(fh.read(count * 8), dtype="<f8").reshape(shape)
        n = header["scaler_len"]
        median = np.frombuffer(fh.read(n * 8), dtype="<f8")
        iqr = np.frombuffer(fh.read(n * 8), dtype="<f8")
    a = header["arch"]
    arch = CnnArchitecture(ConvSpec(**a["conv1"]), ConvSpec(**a["conv2"]),
                           a["n_classes"], a["dropout_p"])
    return params, arch, tuple(header["classes"]), RobustScaler(median, iqr)
