import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import gammaln
from scipy.stats import chi2

from nirspeech.evaluate import (DEFAULT_SEEDS, FoldResult, ProtocolConfig,
                                Report, binomial_pvalue, fisher_combine,
                                render_report, stratified_kfold)
from nirspeech.model import DataError


# --- stratified k-fold ------------------------------------------------------

def test_kfold_partition_and_balance():
    labels = ["A"] * 10 + ["B"] * 7
    folds = stratified_kfold(labels, 3, seed=0)
    assert len(folds) == 3
    all_idx = np.concatenate(folds)
    assert sorted(all_idx.tolist()) == list(range(17))
    for lab, total in (("A", 10), ("B", 7)):
        per_fold = [sum(labels[i] == lab for i in f) for f in folds]
        assert max(per_fold) - min(per_fold) <= 1
        assert sum(per_fold) == total


def test_kfold_deterministic_and_seed_sensitive():
    labels = ["A"] * 12 + ["B"] * 12
    a = stratified_kfold(labels, 3, seed=5)
    b = stratified_kfold(labels, 3, seed=5)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    c = stratified_kfold(labels, 3, seed=6)
    assert any(not np.array_equal(x, y) for x, y in zip(a, c))


def test_kfold_rejects_small_class():
    with pytest.raises(DataError, match="trials"):
        stratified_kfold(["A"] * 9 + ["B"] * 2, 3, seed=0)


@given(na=st.integers(4, 30), nb=st.integers(4, 30), k=st.integers(2, 4),
       seed=st.integers(0, 100))
@settings(max_examples=40, deadline=None)
def test_kfold_property(na, nb, k, seed):
    if min(na, nb) < k:
        return
    labels = ["A"] * na + ["B"] * nb
    folds = stratified_kfold(labels, k, seed)
    flat = np.concatenate(folds)
    assert len(set(flat.tolist())) == na + nb


# --- binomial p-value -------------------------------------------------------

def _binom_exact(k, n, p):
    # independent oracle: direct summation of binomial terms
    total = 0.0
    for i in range(k, n + 1):
        total += math.comb(n, i) * p ** i * (1 - p) ** (n - i)
    return min(1.0, total)


def test_binomial_matches_exact_summation():
    for n in range(1, 31):
        for k in range(0, n + 1):
            for p in (0.5, 1.0 / 3.0):
                assert abs(binomial_pvalue(k, n, p)
                           - _binom_exact(k, n, p)) < 1e-12


def test_binomial_edge_cases():
    assert binomial_pvalue(0, 10, 0.5) == 1.0
    assert abs(binomial_pvalue(10, 10, 0.5) - 0.5 ** 10) < 1e-15
    with pytest.raises(DataError):
        binomial_pvalue(11, 10, 0.5)
    with pytest.raises(DataError):
        binomial_pvalue(5, 10, 1.5)


def test_binomial_large_n_stable():
    p = binomial_pvalue(400, 500, 0.5)
    assert 0.0 < p < 1e-30


# --- Fisher combination -----------------------------------------------------

def test_fisher_two_equal_ps_closed_form():
    # even-dof chi-square survival has the closed form
    # e^(-x/2) * sum_{j<m} (x/2)^j / j!  with m=2, x = -2 ln(0.05^2)
    x = -2.0 * (np.log(0.05) + np.log(0.05))
    expect = np.exp(-x / 2) * (1 + x / 2)
    got = fisher_combine([0.05, 0.05])
    assert abs(got - expect) < 1e-12
    assert abs(got - 0.01748) < 1e-4


def test_fisher_single_p_identity():
    for p in (0.9, 0.5, 0.01, 1e-8):
        assert abs(fisher_combine([p]) - p) < 1e-12


def test_fisher_matches_chi2_sf():
    ps = [0.2, 0.04, 0.7, 0.011]
    x = -2.0 * sum(np.log(p) for p in ps)
    assert abs(fisher_combine(ps) - chi2.sf(x, 2 * len(ps))) < 1e-12


def test_fisher_handles_zero_floor():
    assert fisher_combine([0.0, 0.5]) > 0.0
    with pytest.raises(DataError):
        fisher_combine([])


@given(st.lists(st.floats(1e-6, 1.0), min_size=1, max_size=8))
@settings(max_examples=50, deadline=None)
def test_fisher_in_unit_interval(ps):
    assert 0.0 <= fisher_combine(ps) <= 1.0


# --- report rendering -------------------------------------------------------

def _fold(seed, fold, n_correct, n=20, chance=0.5):
    return FoldResult(seed, fold, n, n_correct,
                      binomial_pvalue(n_correct, n, chance), {})


def _report():
    folds = []
    for seed in DEFAULT_SEEDS:
        for f, k in enumerate((15, 16, 17)):
            folds.append(_fold(seed, f, k))
    return Report("p1", "xtc", "full", 0.5, tuple(folds))


def test_report_aggregates():
    r = _report()
    assert r.best_accuracy == 17 / 20
    assert abs(r.avg_accuracy - 16 / 20) < 1e-12
    assert r.grand_p < 1e-6
    rows = r.seed_rows()
    assert [row[0] for row in rows] == list(DEFAULT_SEEDS)


def test_report_csv_layout():
    text, csv = render_report(_report())
    lines = csv.strip().split("\n")
    assert lines[0] == "Participant,Best Accuracy,Avg Accuracy,p-value,seed"
    assert len(lines) == 1 + 5 + 2
    assert lines[1].startswith("p1,0.850,0.800,")
    assert lines[1].endswith(",0")
    assert lines[-2].startswith('p1 Avg.')
    assert "Fisher's test" in lines[-2]
    assert lines[-1].startswith("Tot. Avg.,")
    # seed order fixed
    assert [l.rsplit(",", 1)[1] for l in lines[1:6]] == \
        [str(s) for s in DEFAULT_SEEDS]


def test_report_small_p_formatting():
    _, csv = render_report(_report())
    assert "<0.001" in csv


def test_report_empty_is_header_only():
    r = Report("p1", "xtc", "full", 0.5, ())
    text, csv = render_report(r)
    assert csv == "Participant,Best Accuracy,Avg Accuracy,p-value,seed\n"


def test_report_json_roundtrippable():
    import json
    d = _report().to_json()
    json.dumps(d)      # must be serializable
    assert d["decoder"] == "xtc"
    assert len(d["folds"]) == 15


def test_protocol_config_validation():
    with pytest.raises(DataError):
        ProtocolConfig(seeds=(1, 1))
    with pytest.raises(DataError):
        ProtocolConfig(k=1)


# --- protocol run (small, end to end) ---------------------------------------

def test_run_protocol_no_leakage_and_shape(small_synth):
    from nirspeech.evaluate import run_protocol
    from nirspeech.preprocess import PreprocConfig
    from nirspeech.synth import synth_dataset

    cfg = small_synth(snr=4.0, seed=1)
    ds = synth_dataset(cfg, {"Call": 6, "Restaurant": 6, "Venus": 6})

    class NearestMean:
        def fit(self, tensors, labels):
            self.means = {}
            for lab in set(labels):
                rows = [t.data.ravel() for t, l in zip(tensors, labels)
                        if l == lab]
                self.means[lab] = np.mean(rows, axis=0)
            return self

        def predict(self, tensors):
            out = []
            for t in tensors:
                v = t.data.ravel()
                out.append(min(self.means,
                               key=lambda lab: np.sum((v - self.means[lab]) ** 2)))
            return out

    proto = ProtocolConfig(k=3, seeds=(0, 6), chance=1 / 3,
                           decoder="mean", level="full")
    rep = run_protocol(ds, lambda seed: NearestMean(),
                       PreprocConfig(), proto)
    assert len(rep.folds) == 6
    assert all(f.n_test == 6 for f in rep.folds)
    assert rep.avg_accuracy > 0.5     # high snr: easily separable
