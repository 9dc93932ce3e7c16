"""Generate a small synthetic dataset and walk one trial through every
preprocessing stage, printing what each step does to the signal.

Run:  python3 demos/01_synth_and_preprocess.py
"""
import numpy as np

from nirspeech.preprocess import (PreprocConfig, bandpass, beer_lambert,
                                  correct_motion, linear_detrend,
                                  optical_density, regress_short_channels)
from nirspeech.model import trim_trial
from nirspeech.synth import SynthConfig, planted_template, synth_trial

cfg = SynthConfig(snr=3.0, seed=7)
trial = synth_trial(cfg, "Restaurant", trial_seed=0)
print(f"trial {trial.id}: {trial.long.n_time} samples x "
      f"{trial.long.n_channels} long channels, "
      f"{trial.short.n_channels} short channels")

pc = PreprocConfig()
od = optical_density(trial.long, pc)
print(f"optical density:    range [{od.data.min():+.4f}, {od.data.max():+.4f}]")

det = linear_detrend(od)
slope_before = np.polyfit(np.arange(od.n_time), od.data[:, 0], 1)[0]
slope_after = np.polyfit(np.arange(det.n_time), det.data[:, 0], 1)[0]
print(f"detrend:            channel-0 slope {slope_before:+.2e} -> {slope_after:+.2e}")

od_short = linear_detrend(optical_density(trial.short, pc))
reg = regress_short_channels(det, od_short)
print(f"short regression:   variance {det.data.var():.3e} -> {reg.data.var():.3e}")

moc = correct_motion(reg, pc)
print(f"motion correction:  max |diff| {np.abs(np.diff(reg.data, axis=0)).max():.3e}"
      f" -> {np.abs(np.diff(moc.data, axis=0)).max():.3e}")

hb = beer_lambert(moc, cfg.montage, pc)
print(f"beer-lambert:       {hb.n_channels} channels "
      f"(HbO cols 0..{cfg.montage.n_pairs - 1}, HbR after), unit uM")

filt = trim_trial(bandpass(hb, pc, cfg.montage.sample_rate_hz), 145)
template = planted_template(cfg, "Restaurant")[:145]
hbo = filt.data[:, :cfg.montage.n_pairs]
strongest = int(np.argmax(np.abs(template).max(axis=0)))
r = np.corrcoef(template[:, strongest], hbo[:, strongest])[0, 1]
print(f"bandpass + trim:    {filt.n_time} samples; correlation with the "
      f"planted response on the strongest channel: {r:.3f}")
