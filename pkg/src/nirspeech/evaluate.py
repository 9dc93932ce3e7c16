"""Evaluation protocol: stratified 3-fold CV x 5 seeds, binomial p-values,
Fisher combination, and supplementary-style report rendering.

The headline significance number is the grand Fisher combination over all
seed x fold p-values; a per-seed combination is also reported per row.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaincc, gammaln, logsumexp

from .model import DataError, Dataset

DEFAULT_SEEDS = (0, 6, 12, 24, 42)


@dataclass(frozen=True)
class ProtocolConfig:
    k: int = 3
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    chance: float = 1.0 / 3.0
    decoder: str = "ridge"
    level: str = "full"

    def __post_init__(self):
        if len(set(self.seeds)) != len(self.seeds):
            raise DataError("seeds must be distinct")
        if self.k < 2:
            raise DataError("k must be >= 2")


@dataclass(frozen=True)
class FoldResult:
    seed: int
    fold: int
    n_test: int
    n_correct: int
    p_value: float
    per_class: dict

    @property
    def accuracy(self) -> float:
        return self.n_correct / self.n_test


@dataclass(frozen=True)
class Report:
    participant: str
    decoder: str
    level: str
    chance: float
    folds: tuple[FoldResult, ...]

    def seed_rows(self):
        """Per seed: (seed, best fold accuracy, avg accuracy, fisher p)."""
        rows = []
        seeds = sorted({f.seed for f in self.folds},
                       key=lambda s: _seed_order(self.folds, s))
        for seed in seeds:
            fs = [f for f in self.folds if f.seed == seed]
            rows.append((seed,
                         max(f.accuracy for f in fs),
                         float(np.mean([f.accuracy for f in fs])),
                         fisher_combine([f.p_value for f in fs])))
        return rows

    @property
    def avg_accuracy(self) -> float:
        return float(np.mean([f.accuracy for f in self.folds]))

    @property
    def best_accuracy(self) -> float:
        return max(f.accuracy for f in self.folds)

    @property
    def grand_p(self) -> float:
        return fisher_combine([f.p_value for f in self.folds])

    def to_json(self) -> dict:
        return {
            "participant": self.participant,
            "decoder": self.decoder,
            "level": self.level,
            "chance": self.chance,
            "avg_accuracy": self.avg_accuracy,
            "best_accuracy": self.best_accuracy,
            "grand_p": self.grand_p,
            "folds": [
                {"seed": f.seed, "fold": f.fold, "n_test": f.n_test,
                 "n_correct": f.n_correct, "accuracy": f.accuracy,
                 "p_value": f.p_value, "per_class": f.per_class}
                for f in self.folds
            ],
        }


def _seed_order(folds, seed):
    for i, f in enumerate(folds):
        if f.seed == seed:
            return i
    return len(folds)


def stratified_kfold(labels, k: int, seed: int) -> list[np.ndarray]:
    """k disjoint test-index sets with per-class counts differing by <= 1."""
    labels = list(labels)
    by_class: dict[str, list[int]] = {}
    for i, lab in enumerate(labels):
        by_class.setdefault(lab, []).append(i)
    for lab, idx in by_class.items():
        if len(idx) < k:
            raise DataError(f"class {lab!r} has {len(idx)} < k={k} trials")
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    for lab in sorted(by_class):
        idx = np.array(by_class[lab])
        perm = rng.permutation(len(idx))
        for j, i in enumerate(idx[perm]):
            folds[j % k].append(int(i))
    return [np.array(sorted(f)) for f in folds]


def binomial_pvalue(n_correct: int, n: int, chance: float) -> float:
    """One-sided upper tail P(X >= n_correct), X ~ Binomial(n, chance).

    Summed in log space so large n stays stable.
    """
    if not 0 < chance < 1:
        raise DataError(f"chance must be in (0, 1), got {chance}")
    if not 0 <= n_correct <= n:
        raise DataError(f"n_correct {n_correct} outside [0, {n}]")
    if n_correct == 0:
        return 1.0
    i = np.arange(n_correct, n + 1)
    log_terms = (gammaln(n + 1) - gammaln(i + 1) - gammaln(n - i + 1)
                 + i * np.log(chance) + (n - i) * np.log1p(-chance))
    return float(min(1.0, np.exp(logsumexp(log_terms))))


def fisher_combine(ps) -> float:
    """Fisher's method: survival of chi^2(2m) at -2 sum(ln p_i)."""
    ps = list(ps)
    if not ps:
        raise DataError("fisher_combine needs at least one p-value")
    clipped = [max(min(p, 1.0), 1e-300) for p in ps]
    x2 = -2.0 * sum(np.log(p) for p in clipped)
    # regularized upper incomplete gamma = chi^2(2m) survival function
    return float(gammaincc(len(ps), x2 / 2.0))


def _run_fold(decoder_factory, features, labels, chance,
              seed, fold_i, test_idx) -> FoldResult:
    test_set = set(test_idx.tolist())
    train_idx = [i for i in range(len(labels)) if i not in test_set]
    dec = decoder_factory(seed)
    dec.fit([features[i] for i in train_idx],
            [labels[i] for i in train_idx])
    pred = dec.predict([features[i] for i in test_idx])
    truth = [labels[i] for i in test_idx]
    n_correct = sum(p == t for p, t in zip(pred, truth))
    per_class = {}
    for lab in sorted(set(truth)):
        hits = sum(p == t for p, t in zip(pred, truth) if t == lab)
        per_class[lab] = hits / truth.count(lab)
    return FoldResult(seed, fold_i, len(truth), n_correct,
                      binomial_pvalue(n_correct, len(truth), chance),
                      per_class)


def run_protocol(dataset: Dataset, decoder_factory, preproc_cfg,
                 cfg: ProtocolConfig, features=None, n_jobs: int = 1) -> Report:
    """Fit/evaluate over every seed x fold; all fitting confined to train.

    ``decoder_factory(seed)`` returns a fresh decoder object exposing
    ``fit(tensors, labels)`` and ``predict(tensors) -> labels``;
    ``features`` may carry pre-computed preprocessed tensors to avoid
    re-running the pipeline per seed.  ``n_jobs`` > 1 runs (seed, fold)
    tasks on a thread pool; tasks are independent, so results are identical
    to the sequential order.
    """
    from .preprocess import run_pipeline

    if features is None:
        features = [run_pipeline(t, preproc_cfg, dataset.montage)
                    for t in dataset.trials]
    labels = [_detection_label(t.label) if cfg.decoder == "xtc" else t.label
              for t in dataset.trials]
    tasks = []
    for seed in cfg.seeds:
        folds = stratified_kfold(labels, cfg.k, seed)
        for fold_i, test_idx in enumerate(folds):
            tasks.append((seed, fold_i, test_idx))
    if n_jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(
                lambda t: _run_fold(decoder_factory, features, labels,
                                    cfg.chance, *t), tasks))
    else:
        results = [_run_fold(decoder_factory, features, labels, cfg.chance, *t)
                   for t in tasks]
    return Report(dataset.subject, cfg.decoder, cfg.level, cfg.chance,
                  tuple(results))


def _detection_label(label: str) -> str:
    return "Rest" if label == "Rest" else "Speech"


def _fmt_p(p: float) -> str:
    return "<0.001" if p < 0.001 else f"{p:.3f}"


def render_report(report: Report) -> tuple[str, str]:
    """Supplementary-table layout: one row per (participant, seed), then the
    participant average and total average.  Returns (text, csv)."""
    header = ["Participant", "Best Accuracy", "Avg Accuracy", "p-value", "seed"]
    if not report.folds:
        line = ",".join(header) + "\n"
        return "  ".join(header) + "\n", line
    rows: list[list[str]] = []
    for seed, best, avg, p in report.seed_rows():
        rows.append([report.participant, f"{best:.3f}", f"{avg:.3f}",
                     _fmt_p(p), str(seed)])
    rows.append([f"{report.participant} Avg.",
                 f"{report.best_accuracy:.3f}",
                 f"{report.avg_accuracy:.3f}",
                 f"{_fmt_p(report.grand_p)} (Fisher's test)", "-"])
    rows.append(["Tot. Avg.", f"{report.best_accuracy:.3f}",
                 f"{report.avg_accuracy:.3f}", "-", "-"])

    csv_buf = io.StringIO()
    csv_buf.write(",".join(header) + "\n")
    for r in rows:
        csv_buf.write(",".join(_csv_quote(v) for v in r) + "\n")

    widths = [max(len(header[i]), *(len(r[i]) for r in rows))
              for i in range(len(header))]
    text_buf = io.StringIO()
    text_buf.write("  ".join(h.ljust(widths[i]) for i, h in enumerate(header)).rstrip() + "\n")
    for r in rows:
        text_buf.write("  ".join(v.ljust(widths[i]) for i, v in enumerate(r)).rstrip() + "\n")
    return text_buf.getvalue(), csv_buf.getvalue()


def _csv_quote(v: str) -> str:
    if "," in v or '"' in v:
        return '"' + v.replace('"', '""') + '"'
    return v
