import numpy as np
import pytest

from dipan import architectures as arch
from dipan import nn
from dipan.architectures import ArchSpec, DivergenceError, UnsupportedArchitectureError
from dipan.raster import MSImage, PanImage, ShapeError

SMALL = dict(kernels=(3, 3, 3), channels=(4, 3))


def _scene(rng, bands=4, size=12):
    return MSImage(rng.random((bands, size, size))), PanImage(rng.random((size, size)))


def _patches(rng, bands=4, n=6, p=8):
    ms = rng.random((bands, 24, 24))
    pan = ms.mean(axis=0) + 0.05 * rng.standard_normal((24, 24))
    ref = ms + 0.1 * (pan - ms.mean(axis=0))[None]
    return nn.extract_patches(ms, pan, ref, p, p, seed=0).subset(np.arange(n))


def test_wiring():
    d1 = ArchSpec("DiCNN1", 4).layer_shapes()
    assert d1[0][1] == 5 and d1[-1][2] == 4 and len(d1) == 3
    assert ArchSpec("DiCNN2", 4).layer_shapes()[0][1] == 1
    dr = ArchSpec("DRPNN", 4).layer_shapes()
    assert len(dr) == 4 and dr[2][2] == 5 and dr[3] == (1, 5, 4)
    assert ArchSpec("PNN", 4).topology == nn.PLAIN
    assert ArchSpec("DRPNN", 4).topology == nn.RESIDUAL_MATCHING
    assert [k for k, _, _ in ArchSpec("PNN", 4).layer_shapes()] == [9, 5, 5]


def test_spec_validation():
    with pytest.raises(ValueError):
        ArchSpec("UNet", 4)
    with pytest.raises(ValueError):
        ArchSpec("PNN", 0)
    with pytest.raises(ValueError):
        ArchSpec("PNN", 4, kernels=(9, 5), channels=(64, 32))
    with pytest.raises(ValueError):
        ArchSpec("PNN", 4, kernels=(9, 4, 5))


def test_first_layer_parameter_ratio():
    for nb in (3, 4, 8):
        w1 = ArchSpec("DiCNN1", nb, channels=arch.DESK_CHANNELS).layer_shapes()[0]
        w2 = ArchSpec("DiCNN2", nb, channels=arch.DESK_CHANNELS).layer_shapes()[0]
        n1, n2 = w1[0] ** 2 * w1[1] * w1[2], w2[0] ** 2 * w2[1] * w2[2]
        assert n1 == (nb + 1) * n2 == 81 * (nb + 1) * 32


@pytest.mark.parametrize("kind,expect_ms", [("DiCNN1", True), ("DiCNN2", True), ("PNN", False)])
def test_zero_parameter_predictions(rng, kind, expect_ms):
    ms, pan = _scene(rng)
    out = arch.predict(arch.zero_model(ArchSpec(kind, 4, **SMALL)), ms, pan)
    assert np.array_equal(out.data, ms.data if expect_ms else np.zeros_like(ms.data))


def test_drpnn_zero_parameters_is_zero(rng):
    ms, pan = _scene(rng)
    out = arch.predict(arch.zero_model(ArchSpec("DRPNN", 4, **SMALL)), ms, pan)
    assert np.array_equal(out.data, np.zeros_like(ms.data))


@pytest.mark.parametrize("kind", ["DiCNN1", "DiCNN2"])
def test_skip_path_identity(kind):
    rng = np.random.default_rng(77)
    for trial in range(100):
        ms, pan = _scene(rng, size=8)
        model = arch.build(ArchSpec(kind, 4, **SMALL), seed=trial)
        pred = arch.predict(model, ms, pan).data
        z = arch.predict_details(model, ms, pan)
        assert np.array_equal(pred, z + ms.data)
        assert np.all(np.abs((pred - z) - ms.data) <= np.spacing(np.abs(pred)))


def test_details_only_for_skip_models(rng):
    ms, pan = _scene(rng)
    with pytest.raises(UnsupportedArchitectureError):
        arch.predict_details(arch.build(ArchSpec("PNN", 4, **SMALL)), ms, pan)


def test_band_mismatch(rng):
    ms, pan = _scene(rng, bands=3)
    model = arch.build(ArchSpec("DiCNN1", 4, **SMALL))
    with pytest.raises(ShapeError):
        arch.predict(model, ms, pan)
    with pytest.raises(ShapeError):
        arch.predict(arch.build(ArchSpec("DiCNN1", 3, **SMALL)), ms, PanImage(np.zeros((6, 6))))


def test_zero_learning_rate_flat(rng):
    batch = _patches(rng)
    model = arch.build(ArchSpec("DiCNN1", 4, **SMALL), seed=1)
    res = arch.train(model, batch, nn.TrainConfig(learning_rate=0.0, iterations=5, batch_size=6))
    assert len(set(res.losses)) == 1
    assert res.model.iteration == 5


def test_training_reduces_loss_and_is_deterministic(rng):
    batch = _patches(rng)
    cfg = nn.TrainConfig(learning_rate=1e-3, iterations=60, batch_size=3, init_scale=0.05)
    runs = [arch.train(arch.build(ArchSpec("DiCNN1", 4, **SMALL), cfg), batch, cfg) for _ in range(2)]
    assert runs[0].losses == runs[1].losses
    assert np.mean(runs[0].losses[-10:]) < np.mean(runs[0].losses[:10])


def test_minibatch_indices_cover_epoch():
    batches = list(arch.minibatch_indices(10, 3, 6, seed=0))
    first_epoch = np.concatenate(batches[:3])
    assert len(set(first_epoch)) == 9
    assert all(len(b) == 3 for b in batches)


def test_divergence_detected(rng):
    batch = _patches(rng)
    cfg = nn.TrainConfig(learning_rate=10.0, iterations=50, batch_size=6, init_scale=0.5)
    with pytest.raises(DivergenceError, match="diverged"):
        arch.train(arch.build(ArchSpec("PNN", 4, **SMALL), cfg), batch, cfg)


def test_fine_tune_freeze_contract(rng):
    batch = _patches(rng)
    model = arch.build(ArchSpec("DiCNN2", 4, **SMALL), seed=3)
    res = arch.fine_tune_last_layer(model, batch, nn.TrainConfig(), iterations=0)
    for old, new in zip(model.params.layers[:-1], res.model.params.layers[:-1]):
        assert new is old
    assert not np.array_equal(res.model.params.layers[-1].weight, model.params.layers[-1].weight)


def test_fine_tune_changes_band_count(rng):
    src = arch.build(ArchSpec("DiCNN2", 8, **SMALL), seed=2)
    batch = _patches(rng, bands=4)
    cfg = nn.TrainConfig(learning_rate=1e-3, batch_size=6, init_scale=0.05)
    res = arch.fine_tune_last_layer(src, batch, cfg, iterations=40)
    assert res.model.spec.n_bands == 4
    assert res.model.params.layers[-1].weight.shape == (3, 3, 3, 4)
    for old, new in zip(src.params.layers[:-1], res.model.params.layers[:-1]):
        assert np.array_equal(old.weight, new.weight) and np.array_equal(old.bias, new.bias)
    assert res.losses[-1] < res.losses[0]


@pytest.mark.parametrize("kind", ["PNN", "DRPNN", "DiCNN1"])
def test_fine_tune_rejects_other_kinds(rng, kind):
    with pytest.raises(UnsupportedArchitectureError):
        arch.fine_tune_last_layer(arch.build(ArchSpec(kind, 4, **SMALL)), _patches(rng), nn.TrainConfig())


def test_model_checkpoint(tmp_path):
    model = arch.build(ArchSpec("DRPNN", 3, **SMALL), seed=9)
    arch.save_model(model, tmp_path / "d.ckpt")
    back = arch.load_model(tmp_path / "d.ckpt")
    assert back.spec == model.spec
    assert all(np.array_equal(a.weight, b.weight)
               for a, b in zip(model.params.layers, back.params.layers))


def test_dataset_loss_matches_full_batch(rng):
    batch = _patches(rng, n=5)
    model = arch.build(ArchSpec("DiCNN1", 4, **SMALL), seed=0)
    full, _ = arch.batch_loss(model, batch, with_grad=False)
    assert arch.dataset_loss(model, batch, chunk=2) == pytest.approx(full, rel=1e-13)
