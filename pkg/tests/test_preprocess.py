import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nirspeech.model import DataError, TrialTensor
from nirspeech.preprocess import (PreprocConfig, bandpass, baseline_clamp,
                                  beer_lambert, beer_lambert_forward,
                                  correct_motion, default_extinction,
                                  linear_detrend, optical_density,
                                  regress_short_channels, robust_apply,
                                  robust_fit, run_pipeline)
from nirspeech.synth import default_montage


CFG = PreprocConfig()


# --- optical density --------------------------------------------------------

def test_od_natural_log():
    # one channel constant at e * mean would give OD -1; use direct values
    data = np.array([[np.e, 1.0], [np.e, 1.0], [np.e, 1.0]])
    od = optical_density(TrialTensor(data, "raw_intensity"), CFG)
    # reference is the per-channel mean, so constant channels give OD 0
    np.testing.assert_allclose(od.data, 0.0, atol=1e-15)


def test_od_value_against_hand_computation():
    data = np.array([[2.0], [8.0]])
    od = optical_density(TrialTensor(data, "raw_intensity"), CFG)
    ref = 5.0
    np.testing.assert_allclose(od.data[:, 0],
                               [-np.log(2.0 / ref), -np.log(8.0 / ref)])


def test_od_first_n_reference():
    cfg = PreprocConfig(od_reference="first_n_samples", od_reference_n=2)
    data = np.array([[4.0], [4.0], [8.0]])
    od = optical_density(TrialTensor(data, "raw_intensity"), cfg)
    np.testing.assert_allclose(od.data[:, 0], [0.0, 0.0, -np.log(2.0)])


def test_od_rejects_nonpositive_with_location():
    data = np.ones((4, 3))
    data[2, 1] = 0.0
    with pytest.raises(DataError, match=r"t=2, c=1"):
        optical_density(TrialTensor(data, "raw_intensity"), CFG)


def test_od_rejects_wrong_kind():
    with pytest.raises(DataError, match="raw intensity"):
        optical_density(TrialTensor(np.ones((4, 2)), "optical_density"), CFG)


# --- detrend ----------------------------------------------------------------

def test_detrend_removes_exact_line():
    t = np.arange(50, dtype=float)
    data = np.column_stack([3.0 + 0.5 * t, -2.0 - 0.1 * t])
    out = linear_detrend(TrialTensor(data, "optical_density"))
    np.testing.assert_allclose(out.data, 0.0, atol=1e-12)


@given(slope=st.floats(-5, 5), offset=st.floats(-10, 10))
@settings(max_examples=30, deadline=None)
def test_detrend_invariant_to_added_line(slope, offset):
    rng = np.random.default_rng(0)
    base = rng.standard_normal((40, 2))
    t = np.arange(40, dtype=float)[:, None]
    a = linear_detrend(TrialTensor(base, "optical_density")).data
    b = linear_detrend(
        TrialTensor(base + offset + slope * t, "optical_density")).data
    np.testing.assert_allclose(a, b, atol=1e-9)


# --- motion correction ------------------------------------------------------

def test_motion_interpolates_spike():
    # derived oracle: noisy walk with one big jump; the rule flags the
    # samples large diffs lead into, then bridges them linearly
    rng = np.random.default_rng(7)
    col = np.cumsum(rng.standard_normal(50) * 0.01)
    col[20] += 5.0
    out = correct_motion(TrialTensor(col[:, None], "optical_density"), CFG)
    # flagged: 20 (diff in) and 21 (diff out); clean neighbours 19 and 22
    idx = np.arange(50)
    clean = np.ones(50, bool)
    clean[[20, 21]] = False
    expect = np.interp(idx, idx[clean], col[clean])
    np.testing.assert_allclose(out.data[:, 0], expect, atol=1e-12)
    assert abs(out.data[20, 0] - col[20]) > 4.0


def test_motion_leaves_clean_channel_untouched():
    rng = np.random.default_rng(1)
    data = np.cumsum(rng.standard_normal((60, 3)) * 0.01, axis=0)
    out = correct_motion(TrialTensor(data, "optical_density"), CFG)
    np.testing.assert_array_equal(out.data, data)


def test_motion_constant_channel_untouched():
    data = np.ones((20, 1)) * 7.0
    out = correct_motion(TrialTensor(data, "optical_density"), CFG)
    np.testing.assert_array_equal(out.data, data)


def test_motion_end_spike_clamped():
    rng = np.random.default_rng(8)
    col = np.cumsum(rng.standard_normal(40) * 0.01)
    col[-1] += 5.0
    out = correct_motion(TrialTensor(col[:, None], "optical_density"), CFG)
    # flagged final sample extends the last clean value
    np.testing.assert_allclose(out.data[-1, 0], col[-2], atol=1e-12)


def test_motion_fully_flagged_falls_back_to_endpoint_line():
    # perfectly regular ramp with a spike: the robust std collapses to the
    # float rounding floor, everything is flagged, and the channel becomes
    # the line between its endpoints
    col = np.array([0.0, 0.1, 0.2, 0.3, 5.0, 0.5, 0.6, 0.7, 0.8, 0.9])
    with pytest.warns(UserWarning, match="fully flagged"):
        out = correct_motion(TrialTensor(col[:, None], "optical_density"), CFG)
    np.testing.assert_allclose(out.data[:, 0], np.linspace(0.0, 0.9, 10),
                               atol=1e-12)


# --- short-channel regression -----------------------------------------------

def test_short_regression_removes_shared_component():
    rng = np.random.default_rng(2)
    n = 120
    shared = np.sin(np.linspace(0, 20, n))
    brain = rng.standard_normal((n, 4)) * 0.1
    long = brain + 3.0 * shared[:, None]
    short = np.column_stack([shared + 0.001 * rng.standard_normal(n)
                             for _ in range(2)])
    out = regress_short_channels(
        TrialTensor(long, "optical_density"),
        TrialTensor(short, "optical_density"))
    # shared systemic component shrinks by more than 100x
    corr = np.corrcoef(out.data[:, 0], shared)[0, 1]
    assert abs(corr) < 0.05
    # residuals are mean-free because the intercept is in the design
    np.testing.assert_allclose(out.data.mean(axis=0), 0.0, atol=1e-10)


def test_short_regression_per_wavelength():
    # a short series at 760 nm must not affect 850 nm long channels
    n = 60
    shared = np.linspace(-1, 1, n) ** 2
    long = np.zeros((n, 2))
    long[:, 1] = shared          # 850 nm column
    short = np.zeros((n, 2))
    short[:, 0] = shared         # 760 nm short carries the component
    short[:, 1] = np.random.default_rng(3).standard_normal(n) * 1e-6
    out = regress_short_channels(
        TrialTensor(long, "optical_density"),
        TrialTensor(short, "optical_density"))
    # the 850 long channel keeps its variance (its own short is ~ noise)
    assert out.data[:, 1].std() > 0.9 * (shared - shared.mean()).std()


def test_short_regression_duplicate_columns_ok():
    n = 40
    s = np.sin(np.linspace(0, 6, n))
    long = np.column_stack([s, s])
    short = np.column_stack([s, s])    # identical pair: one must be dropped
    out = regress_short_channels(
        TrialTensor(long, "optical_density"),
        TrialTensor(short, "optical_density"))
    np.testing.assert_allclose(out.data, 0.0, atol=1e-10)


# --- Beer-Lambert -----------------------------------------------------------

def test_beer_lambert_hand_computed():
    # [DERIVED oracle]: single pair, distance 30 mm, ppf 6, OD (0.01, 0.02)
    m = default_montage(n_pairs=3, n_short_pairs=1)
    d = m.channels[0].distance_mm
    eps = default_extinction().matrix()      # rows: wavelength, cols: HbO/HbR
    od = np.zeros((2, 6))
    od[:, 0] = 0.01
    od[:, 1] = 0.02
    out = beer_lambert(TrialTensor(od, "optical_density"), m, CFG)
    expect = np.linalg.solve(eps, np.array([0.01, 0.02])) * 1e3 / (d * 6.0)
    np.testing.assert_allclose(out.data[0, [0, 3]], expect, rtol=1e-12)
    # untouched pairs stay zero
    np.testing.assert_allclose(out.data[:, [1, 2, 4, 5]], 0.0)


def test_beer_lambert_roundtrip():
    m = default_montage(n_pairs=4, n_short_pairs=1)
    rng = np.random.default_rng(4)
    hb = TrialTensor(rng.standard_normal((10, 8)), "haemoglobin")
    od = beer_lambert_forward(hb, m, CFG)
    back = beer_lambert(od, m, CFG)
    assert np.max(np.abs(back.data - hb.data)) < 1e-9


def test_beer_lambert_output_layout():
    # HbO-only concentration on pair 1 must land in columns 1 and n_pairs+1
    m = default_montage(n_pairs=3, n_short_pairs=1)
    hb = np.zeros((5, 6))
    hb[:, 1] = 2.0               # HbO of pair 1
    od = beer_lambert_forward(TrialTensor(hb, "haemoglobin"), m, CFG)
    assert np.all(od.data[:, [0, 1, 4, 5]] == 0)
    assert np.all(od.data[:, [2, 3]] != 0)


def test_beer_lambert_kind_checks():
    m = default_montage(n_pairs=2, n_short_pairs=1)
    with pytest.raises(DataError, match="optical density"):
        beer_lambert(TrialTensor(np.ones((3, 4)), "raw_intensity"), m, CFG)
    with pytest.raises(DataError, match="haemoglobin"):
        beer_lambert_forward(TrialTensor(np.ones((3, 4)), "optical_density"),
                             m, CFG)


# --- bandpass ---------------------------------------------------------------

def _gain(freq_hz, fs=5.9, n=4096):
    t = np.arange(n) / fs
    x = np.sin(2 * np.pi * freq_hz * t) if freq_hz > 0 else np.ones(n)
    out = bandpass(TrialTensor(x[:, None], "optical_density"), CFG, fs).data[:, 0]
    spec_in = np.abs(np.fft.rfft(x))
    spec_out = np.abs(np.fft.rfft(out))
    k = int(round(freq_hz * n / fs))
    return spec_out[k] / spec_in[k]


def test_bandpass_gains():
    assert _gain(0.35) >= 0.9
    assert _gain(1.5) <= 0.1
    assert _gain(0.0) <= 0.05


def test_bandpass_zero_phase():
    # forward-backward filtering leaves a mid-band sine unshifted
    fs, n = 5.9, 2048
    t = np.arange(n) / fs
    x = np.sin(2 * np.pi * 0.3 * t)
    out = bandpass(TrialTensor(x[:, None], "optical_density"), CFG, fs).data[:, 0]
    mid = slice(200, -200)
    lag = np.argmax(np.correlate(out[mid], x[mid], "full")) - (len(x[mid]) - 1)
    assert lag == 0


def test_bandpass_rejects_bad_band():
    cfg = PreprocConfig(band_low_hz=0.01, band_high_hz=5.0)
    with pytest.raises(DataError, match="band"):
        bandpass(TrialTensor(np.ones((50, 1)), "optical_density"), cfg, 5.9)


# --- full pipeline ----------------------------------------------------------

def test_pipeline_levels_and_shapes(small_synth):
    from nirspeech.synth import synth_trial
    cfg = small_synth(snr=1.0)
    trial = synth_trial(cfg, "Call", 0)
    for level, kind in (("raw", "raw_intensity"),
                        ("od", "optical_density"),
                        ("full", "haemoglobin")):
        out = run_pipeline(trial, PreprocConfig(level=level),
                           cfg.montage)
        assert out.n_time == 145
        assert out.n_channels == cfg.montage.n_long
        assert out.kind == kind


def test_pipeline_full_without_shorts(small_synth):
    from nirspeech.synth import synth_trial
    cfg = small_synth(snr=1.0)
    trial = synth_trial(cfg, "Venus", 1)
    a = run_pipeline(trial, PreprocConfig(short_regression=False), cfg.montage)
    b = run_pipeline(trial, PreprocConfig(short_regression=True), cfg.montage)
    assert a.data.shape == b.data.shape
    assert not np.allclose(a.data, b.data)


# --- scaling helpers --------------------------------------------------------

def test_baseline_clamp():
    data = np.zeros((20, 1))
    data[:10] = 2.0
    data[15] = 100.0
    out = baseline_clamp(TrialTensor(data, "haemoglobin"), n_base=10, clamp=16)
    np.testing.assert_allclose(out.data[:10, 0], 0.0)
    assert out.data[15, 0] == 16.0


def test_robust_scaler():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((200, 3)) * np.array([1.0, 10.0, 0.1]) + 5.0
    s = robust_fit(X)
    Z = robust_apply(s, X)
    med = np.median(Z, axis=0)
    np.testing.assert_allclose(med, 0.0, atol=1e-12)
    iqr = np.quantile(Z, 0.75, axis=0) - np.quantile(Z, 0.25, axis=0)
    np.testing.assert_allclose(iqr, 1.0, atol=1e-9)


def test_robust_scaler_constant_feature():
    X = np.column_stack([np.ones(50), np.arange(50.0)])
    Z = robust_apply(robust_fit(X), X)
    assert np.all(np.isfinite(Z))
    np.testing.assert_allclose(Z[:, 0], 0.0)
