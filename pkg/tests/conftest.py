import numpy as np
import pytest

from dipan import resample, synthetic


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def scene7():
    """The seed-7 128x128 4-band scene after Wald degradation."""
    hrms, pan = synthetic.gen_synthetic_scene(synthetic.SyntheticSceneConfig(seed=7))
    return resample.wald_degrade(hrms, pan, resample.WaldConfig())


@pytest.fixture(scope="session")
def small_scene():
    hrms, pan = synthetic.gen_synthetic_scene(
        synthetic.SyntheticSceneConfig(height=64, width=64, seed=3))
    return resample.wald_degrade(hrms, pan, resample.WaldConfig())
