"""Ridge regression to sentence embeddings with leave-one-out alpha search,
plus a multinomial logistic classifier over predicted embeddings.

Alpha is selected by the SVD leave-one-out identity: one SVD of the centred
design is reused for every grid point.  The final solve uses the dual form
when features outnumber rows and the primal form otherwise; both closed
forms agree and are exposed for testing.

To avoid leakage, the classifier trains on out-of-fold ridge predictions
from an inner 3-fold within the training split.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from .model import DataError

EMBED_DIM = 768
MODEL_FORMAT_VERSION = 1


def default_alpha_grid(n: int = 13, low: float = 1e-3, high: float = 1e3):
    return tuple(np.logspace(np.log10(low), np.log10(high), n))


@dataclass(frozen=True)
class RidgeConfig:
    alpha_grid: tuple = field(default_factory=default_alpha_grid)

    def __post_init__(self):
        if any(a <= 0 for a in self.alpha_grid):
            raise DataError("all alphas must be > 0")


@dataclass(frozen=True)
class RidgeModel:
    weights: np.ndarray      # [features x targets]
    intercept: np.ndarray    # [targets]
    chosen_alpha: float
    loo_errors: dict = field(repr=False, default_factory=dict)


def ridge_primal(Xc: np.ndarray, Yc: np.ndarray, alpha: float) -> np.ndarray:
    p = Xc.shape[1]
    return np.linalg.solve(Xc.T @ Xc + alpha * np.eye(p), Xc.T @ Yc)


def ridge_dual(Xc: np.ndarray, Yc: np.ndarray, alpha: float) -> np.ndarray:
    n = Xc.shape[0]
    return Xc.T @ np.linalg.solve(Xc @ Xc.T + alpha * np.eye(n), Yc)


def fit_ridge_gcv(X: np.ndarray, Y: np.ndarray,
                  cfg: RidgeConfig = RidgeConfig()) -> RidgeModel:
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    n = X.shape[0]
    if n < 3:
        raise DataError("need at least 3 rows for leave-one-out selection")
    if not np.any(X):
        raise DataError("degenerate all-zero design")

    x_mean = X.mean(axis=0)
    y_mean = Y.mean(axis=0)
    Xc = X - x_mean
    Yc = Y - y_mean

    if X.shape[1] > n:
        # wide case: eigendecomposition of the Gram matrix gives the same
        # left singular vectors without forming V
        evals, U = np.linalg.eigh(Xc @ Xc.T)
        s2 = np.clip(evals, 0.0, None)
    else:
        U, s, _ = np.linalg.svd(Xc, full_matrices=False)
        s2 = s ** 2
    UtY = U.T @ Yc
    U2 = U ** 2
    loo = {}
    for alpha in cfg.alpha_grid:
        d = s2 / (s2 + alpha)
        fitted = U @ (d[:, None] * UtY)
        # leverage includes the 1/n mean term absorbed by centring
        h = 1.0 / n + U2 @ d
        resid = (Yc - fitted) / (1.0 - h)[:, None]
        loo[float(alpha)] = float(np.mean(resid ** 2))
    chosen = min(loo, key=lambda a: (loo[a], a))

    if X.shape[1] > n:
        W = ridge_dual(Xc, Yc, chosen)
    else:
        W = ridge_primal(Xc, Yc, chosen)
    intercept = y_mean - x_mean @ W
    return RidgeModel(W, intercept, chosen, loo)


def ridge_predict(m: RidgeModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1] != m.weights.shape[0]:
        raise DataError(
            f"{X.shape[1]} features, model expects {m.weights.shape[0]}")
    return X @ m.weights + m.intercept


@dataclass(frozen=True)
class EmbeddingClassifier:
    weights: np.ndarray   # [dim x n_classes]
    bias: np.ndarray      # [n_classes]
    classes: tuple


def _softmax(Z: np.ndarray) -> np.ndarray:
    Z = Z - Z.max(axis=1, keepdims=True)
    e = np.exp(Z)
    return e / e.sum(axis=1, keepdims=True)


def fit_embedding_classifier(E_train: np.ndarray, y, l2: float = 1.0,
                             gtol: float = 1e-6) -> EmbeddingClassifier:
    """Multinomial logistic (mean CE + 0.5 * l2 * ||W||^2, biases free),
    optimized with L-BFGS to gradient-norm tolerance."""
    E = np.asarray(E_train, dtype=np.float64)
    y = list(y)
    classes = tuple(sorted(set(y)))
    if len(classes) < 2:
        raise DataError("need at least 2 classes")
    index = {c: i for i, c in enumerate(classes)}
    T = np.zeros((len(y), len(classes)))
    for i, lab in enumerate(y):
        T[i, index[lab]] = 1.0
    n, d = E.shape
    c = len(classes)

    def unpack(theta):
        W = theta[:d * c].reshape(d, c)
        b = theta[d * c:]
        return W, b

    def objective(theta):
        W, b = unpack(theta)
        Z = E @ W + b
        Z = Z - Z.max(axis=1, keepdims=True)
        logsum = np.log(np.exp(Z).sum(axis=1))
        ce = np.mean(logsum - (Z * T).sum(axis=1))
        loss = ce + 0.5 * l2 * np.sum(W ** 2) / n
        P = _softmax(E @ W + b)
        G = (P - T) / n
        gW = E.T @ G + l2 * W / n
        gb = G.sum(axis=0)
        return loss, np.concatenate([gW.ravel(), gb])

    theta0 = np.zeros(d * c + c)
    res = minimize(objective, theta0, jac=True, method="L-BFGS-B",
                   options={"gtol": gtol, "maxiter": 2000})
    W, b = unpack(res.x)
    return EmbeddingClassifier(W, b, classes)


def classifier_proba(clf: EmbeddingClassifier, E: np.ndarray) -> np.ndarray:
    E = np.asarray(E, dtype=np.float64)
    if E.shape[1] != clf.weights.shape[0]:
        raise DataError(
            f"{E.shape[1]}-d embeddings, classifier expects {clf.weights.shape[0]}")
    return _softmax(E @ clf.weights + clf.bias)


def classify_embeddings(clf: EmbeddingClassifier, E: np.ndarray) -> list:
    proba = classifier_proba(clf, E)
    return [clf.classes[i] for i in np.argmax(proba, axis=1)]


# ---------------------------------------------------------------------------
# end-to-end decoder: robust scale -> ridge to embeddings -> logistic

@dataclass
class RidgeEmbeddingDecoder:
    """Trial decoder: baseline clamp + robust scale + ridge + logistic."""
    targets: dict                      # label -> 768-d embedding
    ridge_cfg: RidgeConfig = field(default_factory=RidgeConfig)
    seed: int = 0
    clamp: float | None = 16.0
    scaler: object = None
    ridge: RidgeModel | None = None
    classifier: EmbeddingClassifier | None = None

    @property
    def classes(self) -> tuple:
        if self.classifier is None:
            raise DataError("decoder is not fitted")
        return self.classifier.classes

    def _features(self, tensors) -> np.ndarray:
        from .model import flatten_features
        from .preprocess import baseline_clamp
        rows = []
        for t in tensors:
            if self.clamp is not None and t.kind == "haemoglobin":
                t = baseline_clamp(t, clamp=self.clamp)
            rows.append(flatten_features(t))
        return np.array(rows)

    def fit(self, tensors, labels):
        from .evaluate import stratified_kfold
        from .preprocess import robust_apply, robust_fit
        X_raw = self._features(tensors)
        self.scaler = robust_fit(X_raw)
        X = robust_apply(self.scaler, X_raw)
        Y = np.array([self.targets[lab] for lab in labels])

        # inner 3-fold cross-fit so the classifier never sees in-sample
        # ridge predictions
        E_oof = np.zeros((len(labels), Y.shape[1]))
        for test_idx in stratified_kfold(labels, 3, self.seed):
            test = set(test_idx.tolist())
            tr = [i for i in range(len(labels)) if i not in test]
            inner = fit_ridge_gcv(X[tr], Y[tr], self.ridge_cfg)
            E_oof[test_idx] = ridge_predict(inner, X[test_idx])
        self.classifier = fit_embedding_classifier(E_oof, labels)
        self.ridge = fit_ridge_gcv(X, Y, self.ridge_cfg)
        return self

    def predict_embeddings(self, tensors) -> np.ndarray:
        from .preprocess import robust_apply
        X = robust_apply(self.scaler, self._features(tensors))
        return ridge_predict(self.ridge, X)

    def predict_proba(self, tensors) -> np.ndarray:
        return classifier_proba(self.classifier, self.predict_embeddings(tensors))

    def predict(self, tensors) -> list:
        return classify_embeddings(self.classifier, self.predict_embeddings(tensors))


# ---------------------------------------------------------------------------
# model dump: JSON header + float64 little-endian tensors

def save_ridge_model(path, m: RidgeModel, clf: EmbeddingClassifier,
                     scaler, clamp, classes) -> None:
    path = Path(path)
    header = {
        "format_version": MODEL_FORMAT_VERSION,
        "kind": "ridge_embedding",
        "chosen_alpha": m.chosen_alpha,
        "classes": list(classes),
        "clamp": clamp,
        "shapes": {
            "weights": list(m.weights.shape),
            "intercept": list(m.intercept.shape),
            "clf_weights": list(clf.weights.shape),
            "clf_bias": list(clf.bias.shape),
            "scaler_median": list(np.shape(scaler.median)),
            "scaler_iqr": list(np.shape(scaler.iqr)),
        },
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for arr in (m.weights, m.intercept, clf.weights, clf.bias,
                    scaler.median, scaler.iqr):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_ridge_model(path):
    from .preprocess import RobustScaler
    with open(path, "rb") as fh:
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header.get("format_version") != MODEL_FORMAT_VERSION:
            raise DataError("unknown ridge model format version")
        arrays = []
        for name in ("weights", "intercept", "clf_weights", "clf_bias",
                     "scaler_median", "scaler_iqr"):
            shape = header["shapes"][name]
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(fh.read(count * 8), dtype="<f8").reshape(shape)
            arrays.append(arr)
    m = RidgeModel(arrays[0], arrays[1], header["chosen_alpha"])
    clf = EmbeddingClassifier(arrays[2], arrays[3], tuple(header["classes"]))
    scaler = RobustScaler(arrays[4], arrays[5])
    return m, clf, scaler, header["clamp"]
