import numpy as np
import pytest

from nirspeech.synth import SynthConfig, default_class_maps, default_montage


@pytest.fixture(scope="session")
def small_montage():
    # 8 pairs keeps every pipeline stage exercised at a fraction of the cost
    return default_montage(n_pairs=8, n_short_pairs=2)


@pytest.fixture(scope="session")
def small_maps():
    return default_class_maps(n_pairs=8, active_per_class=2)


@pytest.fixture
def small_synth(small_montage, small_maps):
    def make(snr=2.0, seed=0, **kw):
        return SynthConfig(montage=small_montage, class_maps=small_maps,
                           snr=snr, seed=seed, **kw)
    return make


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(1234)
