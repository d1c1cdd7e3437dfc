import numpy as np
import pytest

from dipan import classical, resample
from dipan.classical import (DegenerateSourceError, DetailExtractorSpec, InjectionGains,
                             IntensityWeights)
from dipan.raster import DetailImage, MSImage, PanImage, ShapeError, add_details


def _random_scene(rng, bands=3, size=16):
    return MSImage(rng.random((bands, size, size))), PanImage(rng.random((size, size)))


def test_intensity_weights_validation():
    with pytest.raises(ValueError):
        IntensityWeights((0.5, 0.6))
    with pytest.raises(ValueError):
        IntensityWeights((1.5, -0.5))
    assert IntensityWeights.uniform(4).weights == (0.25,) * 4


def test_intensity_identical_bands():
    band = np.random.default_rng(1).random((8, 8))
    ms = MSImage(np.stack([band] * 3))
    assert np.allclose(classical.intensity_component(ms, IntensityWeights.uniform(3)), band,
                       atol=1e-15)


def test_intensity_selects_band():
    ms, _ = _random_scene(np.random.default_rng(2))
    out = classical.intensity_component(ms, IntensityWeights((1.0, 0.0, 0.0)))
    assert np.array_equal(out, ms.data[0])


def test_intensity_scalar_loop(rng):
    ms, _ = _random_scene(rng, size=6)
    w = (0.2, 0.3, 0.5)
    out = classical.intensity_component(ms, IntensityWeights(w))
    for i in range(6):
        for j in range(6):
            expected = sum(w[b] * ms.data[b, i, j] for b in range(3))
            assert out[i, j] == pytest.approx(expected, abs=1e-15)
    with pytest.raises(ShapeError):
        classical.intensity_component(ms, IntensityWeights.uniform(2))


def test_atwt_constant():
    assert np.allclose(classical.atwt_lowpass(np.full((20, 20), 0.3), 2), 0.3, atol=1e-15)


def test_atwt_one_level_impulse():
    band = np.zeros((15, 15))
    band[7, 7] = 1.0
    approx, _ = classical.atwt_planes(band, 1)
    b3 = np.array([1, 4, 6, 4, 1]) / 16
    expected = np.zeros((15, 15))
    expected[5:10, 5:10] = np.outer(b3, b3)
    assert np.max(np.abs(approx - expected)) < 1e-12


def test_atwt_second_level_is_dilated():
    band = np.zeros((21, 21))
    band[10, 10] = 1.0
    approx, _ = classical.atwt_planes(band, 2)
    b3 = np.array([1, 4, 6, 4, 1]) / 16
    dilated = np.zeros(9)
    dilated[::2] = b3
    k = np.convolve(b3, dilated)
    expected = np.zeros((21, 21))
    expected[4:17, 4:17] = np.outer(k, k)
    assert np.max(np.abs(approx - expected)) < 1e-12


def test_atwt_perfect_reconstruction(rng):
    band = rng.random((32, 32))
    for levels in (1, 2, 3):
        approx, details = classical.atwt_planes(band, levels)
        assert len(details) == levels
        assert np.max(np.abs(approx + sum(details) - band)) < 1e-12


def test_atwt_errors():
    with pytest.raises(ValueError):
        classical.atwt_planes(np.zeros((8, 8)), 0)
    with pytest.raises(ShapeError):
        classical.atwt_planes(np.zeros((4, 4)), 3)
    with pytest.raises(ValueError):
        DetailExtractorSpec("mra_atwt", levels=0)
    with pytest.raises(ValueError):
        DetailExtractorSpec("wavelet")


def test_glp_chain(scene7):
    _, pan, _ = scene7
    out = classical.glp_lowpass(pan)
    cfg = resample.WaldConfig()
    direct = resample.exp_interpolate(
        resample.decimate(resample.gaussian_lowpass(pan.data, cfg), 4), 4)
    assert np.array_equal(out, direct)
    assert np.sum((pan.data - out) ** 2) > 0
    assert np.allclose(classical.glp_lowpass(np.full((32, 32), 0.8)), 0.8, atol=1e-13)


def test_gains_exact_regression(rng):
    s = rng.random((16, 16))
    ms = MSImage(np.stack([2.0 * s, -0.5 * s + 3.0]))
    gains = classical.estimate_gains(ms, s)
    assert np.allclose(gains.scalars, [2.0, -0.5], atol=1e-12)


def test_gains_of_independent_noise():
    rng = np.random.default_rng(99)
    h = w = 64
    s = rng.standard_normal((h, w))
    ms = MSImage(rng.standard_normal((4, h, w)))
    gains = classical.estimate_gains(ms, s).scalars
    # sample covariance of independent unit-variance fields has std 1/sqrt(HW)
    assert np.all(np.abs(gains) < 3 / np.sqrt(h * w) * 1.2)


def test_gains_degenerate_source():
    ms = MSImage(np.ones((2, 8, 8)))
    with pytest.raises(DegenerateSourceError):
        classical.estimate_gains(ms, np.full((8, 8), 0.5))
    with pytest.raises(ShapeError):
        classical.estimate_gains(ms, np.zeros((4, 4)))


def test_injection_gains_variants():
    with pytest.raises(ValueError):
        InjectionGains()
    with pytest.raises(ValueError):
        InjectionGains(scalars=np.ones(2), maps=np.ones((2, 3, 3)))
    d = np.arange(9.0).reshape(3, 3)
    maps = InjectionGains(maps=np.stack([np.ones((3, 3)), np.full((3, 3), 2.0)]))
    assert np.array_equal(maps.details(d).data[1], 2 * d)
    with pytest.raises(ShapeError):
        maps.details(np.zeros((2, 2)))


@pytest.mark.parametrize("family", ["cs", "mra"])
def test_zero_gains_and_zero_detail(rng, family):
    ms, pan = _random_scene(rng)
    w = IntensityWeights.uniform(3)
    i_c = classical.intensity_component(ms, w)
    zero = InjectionGains(scalars=np.zeros(3))
    some = InjectionGains(scalars=np.array([0.5, 1.0, 2.0]))
    if family == "cs":
        run = lambda p, g: classical.cs_pansharpen(ms, p, w, g)
        flat = PanImage(i_c)
    else:
        low = classical.atwt_lowpass(pan)
        run = lambda p, g: classical.mra_pansharpen(ms, p, low, g)
        flat = PanImage(low)
    assert np.array_equal(run(pan, zero).data, ms.data)
    assert np.array_equal(run(flat, some).data, ms.data)


def test_cs_and_mra_factor_through_add_details(rng):
    ms, pan = _random_scene(rng)
    w = IntensityWeights((0.2, 0.3, 0.5))
    g = InjectionGains(scalars=rng.uniform(0.1, 3, 3))
    d = pan.data - classical.intensity_component(ms, w)
    expected = add_details(ms, DetailImage(g.scalars[:, None, None] * d[None]))
    assert np.array_equal(classical.cs_pansharpen(ms, pan, w, g).data, expected.data)
    low = classical.atwt_lowpass(pan)
    expected = add_details(ms, DetailImage(g.scalars[:, None, None] * (pan.data - low)[None]))
    assert np.array_equal(classical.mra_pansharpen(ms, pan, low, g).data, expected.data)


def test_substitution_identity_100_scenes():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        bands = int(rng.integers(2, 9))
        ms, pan = _random_scene(rng, bands=bands, size=int(rng.integers(4, 17)))
        w = rng.random(bands)
        w = IntensityWeights(tuple(w / w.sum()))
        g = rng.uniform(0.1, 3.0, bands)
        i_c = classical.intensity_component(ms, w)
        direct = classical.cs_pansharpen(ms, pan, w, InjectionGains(scalars=g)).data
        subst = classical.cs_substitution_form(ms, pan, i_c, g)
        worst = max(worst, float(np.max(np.abs(direct - subst))))
    assert worst < 1e-12
    with pytest.raises(ValueError):
        classical.cs_substitution_form(ms, pan, i_c, np.zeros(bands))


@pytest.mark.parametrize("kind", ["cs_intensity", "mra_atwt", "mra_glp"])
def test_classical_beats_interpolation(scene7, kind):
    from dipan import metrics
    lrms, pan, ref = scene7
    fused = classical.pansharpen(lrms, pan, DetailExtractorSpec(kind))
    assert fused.shape == ref.shape
    assert metrics.ergas(fused.data, ref.data) < metrics.ergas(lrms.data, ref.data)
