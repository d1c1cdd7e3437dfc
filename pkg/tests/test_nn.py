import numpy as np
import pytest

from dipan import nn
from dipan.nn import ConvLayerParams, NetworkParams, TrainConfig


def _conv_oracle(x, w, b):
    """Quadruple loop over the zero-padded input."""
    h, wd, _ = x.shape
    kh, kw, c_in, c_out = w.shape
    ph, pw = kh // 2, kw // 2
    out = np.zeros((h, wd, c_out))
    for i in range(h):
        for j in range(wd):
            for o in range(c_out):
                acc = b[o]
                for u in range(kh):
                    for v in range(kw):
                        ii, jj = i + u - ph, j + v - pw
                        if 0 <= ii < h and 0 <= jj < wd:
                            for c in range(c_in):
                                acc += w[u, v, c, o] * x[ii, jj, c]
                out[i, j, o] = acc
    return out


def _loss_of(params, x, aux, y, kind):
    z, _ = nn.forward(params, x)
    return nn.loss_and_output_grad(kind, z, aux, y)[0]


def test_layer_validation():
    with pytest.raises(ValueError):
        ConvLayerParams(np.zeros((2, 2, 1, 1)), np.zeros(1))
    with pytest.raises(ValueError):
        ConvLayerParams(np.zeros((3, 3, 1, 2)), np.zeros(1))
    with pytest.raises(ValueError):
        NetworkParams([ConvLayerParams(np.zeros((1, 1, 2, 3)), np.zeros(3)),
                       ConvLayerParams(np.zeros((1, 1, 2, 1)), np.zeros(1))])
    with pytest.raises(ValueError):
        NetworkParams([])


def test_identity_and_bias_convolutions(rng):
    x = rng.random((5, 6, 2))
    ident = ConvLayerParams(np.eye(2)[None, None], np.zeros(2))
    assert np.array_equal(nn.conv2d_forward(x, ident), x)
    const = ConvLayerParams(np.zeros((3, 3, 2, 1)), np.array([0.7]))
    assert np.all(nn.conv2d_forward(x, const) == 0.7)
    with pytest.raises(ValueError):
        nn.conv2d_forward(rng.random((5, 5, 3)), ident)


def test_conv_matches_loop_oracle(rng):
    x = rng.standard_normal((5, 5, 2))
    w = rng.standard_normal((3, 3, 2, 3))
    b = rng.standard_normal(3)
    out = nn.conv2d_forward(x, ConvLayerParams(w, b))
    assert np.max(np.abs(out - _conv_oracle(x, w, b))) < 1e-12


def test_input_grad_is_adjoint(rng):
    x = rng.standard_normal((2, 6, 7, 3))
    d = rng.standard_normal((2, 6, 7, 4))
    layer = ConvLayerParams(rng.standard_normal((5, 3, 3, 4)), np.zeros(4))
    lhs = np.sum(nn.conv2d_forward(x, layer) * d)
    rhs = np.sum(x * nn.conv2d_input_grad(d, layer))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_relu():
    assert np.all(nn.relu(-np.arange(1.0, 5.0)) == 0)
    pos = np.arange(1.0, 5.0)
    assert np.array_equal(nn.relu(pos), pos)
    mixed = np.array([-2.0, -0.0, 0.0, 1e-300, 3.5])
    expected = [max(0.0, v) for v in mixed]
    assert list(nn.relu(mixed)) == expected
    assert list(nn.relu_grad(mixed)) == [0, 0, 0, 1, 1]


def test_forward_hand_oracle():
    # 1x1 convs: 1 -> 2 channels, relu, then sum back to 1
    l1 = ConvLayerParams(np.array([1.0, -1.0]).reshape(1, 1, 1, 2), np.array([0.0, 0.5]))
    l2 = ConvLayerParams(np.array([2.0, 3.0]).reshape(1, 1, 2, 1), np.array([0.25]))
    x = np.array([[1.0, -2.0]]).reshape(1, 2, 1)
    z, trace = nn.forward(NetworkParams([l1, l2]), x)
    # x=1: relu(1)=1, relu(-0.5)=0 -> 2 + 0.25; x=-2: relu(-2)=0, relu(2.5)=2.5 -> 7.5 + 0.25
    assert np.allclose(z.ravel(), [2.25, 7.75], atol=0)
    assert len(trace.z) == 2 and len(trace.a) == 2


def test_residual_matching_forward(rng):
    x = rng.standard_normal((1, 4, 4, 2))
    l1 = ConvLayerParams(rng.standard_normal((3, 3, 2, 2)), np.zeros(2))
    l2 = ConvLayerParams(np.eye(2)[None, None], np.zeros(2))
    z, _ = nn.forward(NetworkParams([l1, l2], nn.RESIDUAL_MATCHING), x)
    assert np.allclose(z, nn.conv2d_forward(x, l1) + x, atol=1e-14)


def test_loss_oracle(rng):
    z = rng.standard_normal((3, 4, 4, 2))
    m = rng.standard_normal(z.shape)
    y = rng.standard_normal(z.shape)
    loss, delta = nn.loss_and_output_grad("dicnn", z, m, y)
    expected = sum(np.sum((z[i] + m[i] - y[i]) ** 2) for i in range(3)) / 3
    assert loss == pytest.approx(expected, rel=1e-13)
    assert np.allclose(delta, 2 * (z + m - y) / 3, rtol=1e-15, atol=1e-15)
    loss_p, delta_p = nn.loss_and_output_grad("pnn", z, None, y)
    assert loss_p == pytest.approx(np.sum((z - y) ** 2) / 3, rel=1e-13)
    assert np.allclose(delta_p, 2 * (z - y) / 3, rtol=1e-15, atol=1e-15)
    with pytest.raises(ValueError):
        nn.loss_and_output_grad("l1", z, m, y)
    with pytest.raises(ValueError):
        nn.loss_and_output_grad("pnn", z, None, y[:, :2])


def test_scalar_gradient_hand():
    # one 1x1 weight w on one pixel: loss = (w x + b - y)^2
    w, b, x, y = 0.8, 0.1, 2.0, 1.0
    params = NetworkParams([ConvLayerParams(np.full((1, 1, 1, 1), w), np.array([b]))])
    z, trace = nn.forward(params, np.full((1, 1, 1), x))
    loss, delta = nn.loss_and_output_grad("pnn", z, None, np.full((1, 1, 1), y))
    g = nn.backward(params, trace, delta)[0]
    r = w * x + b - y
    assert loss == pytest.approx(r * r, abs=1e-15)
    assert g.weight.item() == pytest.approx(2 * r * x, abs=1e-15)
    assert g.bias.item() == pytest.approx(2 * r, abs=1e-15)


@pytest.mark.parametrize("topology", [nn.PLAIN, nn.RESIDUAL_MATCHING])
def test_backward_matches_central_differences(rng, topology):
    c = 2
    shapes = [(3, c, 3), (3, 3, c), (1, c, 2)]
    params = nn.init_params(shapes, TrainConfig(init_scale=0.5), topology, seed=5)
    params.layers[0].bias[:] = rng.standard_normal(3) * 0.1
    x = rng.standard_normal((2, 6, 6, c))
    y = rng.standard_normal((2, 6, 6, 2))
    z, trace = nn.forward(params, x)
    _, delta = nn.loss_and_output_grad("pnn", z, None, y)
    grads = nn.backward(params, trace, delta)
    h = 1e-6
    worst = 0.0
    for l, layer in enumerate(params.layers):
        for arr, garr in ((layer.weight, grads[l].weight), (layer.bias, grads[l].bias)):
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + h
                up = _loss_of(params, x, None, y, "pnn")
                arr[idx] = old - h
                down = _loss_of(params, x, None, y, "pnn")
                arr[idx] = old
                fd = (up - down) / (2 * h)
                worst = max(worst, abs(fd - garr[idx]) / max(abs(fd), 1e-6))
    assert worst < 1e-6


def test_backward_first_layer_skips_prefix(rng):
    params = nn.init_params([(3, 1, 2), (3, 2, 1)], TrainConfig(), seed=1)
    x = rng.standard_normal((1, 5, 5, 1))
    z, trace = nn.forward(params, x)
    full = nn.backward(params, trace, np.ones_like(z))
    part = nn.backward(params, trace, np.ones_like(z), first_layer=1)
    assert part[0] is None
    assert np.array_equal(part[1].weight, full[1].weight)


def test_sgd_step(rng):
    params = nn.init_params([(1, 1, 2), (1, 2, 1)], TrainConfig(), seed=0)
    grads = [nn.LayerGrad(np.ones_like(l.weight), np.ones_like(l.bias)) for l in params.layers]
    out = nn.sgd_step(params, grads, 0.1, frozen=(0,))
    assert out.layers[0] is params.layers[0]
    assert np.allclose(out.layers[1].weight, params.layers[1].weight - 0.1)
    assert np.allclose(out.layers[1].bias, -0.1)
    same = nn.sgd_step(params, grads, 0.0)
    assert np.array_equal(same.layers[1].weight, params.layers[1].weight)


def test_init_statistics():
    cfg = TrainConfig(seed=11)
    layer = nn.init_layer(9, 9, 5, 32, cfg, np.random.default_rng(11))
    n = layer.weight.size
    std = np.sqrt(2.0 / (9 * 9 * 5))
    assert abs(layer.weight.mean()) < 4 * std / np.sqrt(n)
    assert layer.weight.std() == pytest.approx(std, rel=4 / np.sqrt(2 * n))
    assert np.all(layer.bias == 0)
    u = nn.init_layer(3, 3, 4, 8, TrainConfig(init="uniform"), np.random.default_rng(0))
    assert np.abs(u.weight).max() <= np.sqrt(6.0 / 36)
    a = nn.init_params([(3, 2, 2)], cfg, seed=3)
    b = nn.init_params([(3, 2, 2)], cfg, seed=3)
    assert np.array_equal(a.layers[0].weight, b.layers[0].weight)


def test_train_config_validation():
    for bad in (dict(learning_rate=-1), dict(batch_size=0), dict(init="xavier")):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_extract_patches_cover_and_align():
    ms = np.arange(2 * 10 * 10, dtype=float).reshape(2, 10, 10)
    pan = -np.arange(100.0).reshape(10, 10)
    ref = ms + 1000
    batch = nn.extract_patches(ms, pan, ref, 4, 3, seed=None)
    assert [c for c in batch.coords[:4]] == [(0, 0), (0, 3), (0, 6), (3, 0)]
    assert len(batch) == 9 and batch.patch_size == 4
    i, j = batch.coords[4]
    assert np.array_equal(batch.lrms[4][..., 1], ms[1, i:i + 4, j:j + 4])
    assert np.array_equal(batch.pan[4][..., 0], pan[i:i + 4, j:j + 4])
    assert np.array_equal(batch.target[4] - batch.lrms[4], np.full((4, 4, 2), 1000.0))
    shuffled = nn.extract_patches(ms, pan, ref, 4, 3, seed=1)
    assert sorted(shuffled.coords) == sorted(batch.coords)
    assert len(nn.extract_patches(ms, pan, ref, 4, 4, seed=None)) == 9  # edge appended
    with pytest.raises(ValueError):
        nn.extract_patches(ms, pan, ref, 12, 4)


def test_toy_linear_target_converges(rng):
    # y = 0.6 x1 - 0.3 x2 + 0.2 is exactly representable by one 1x1 layer
    x = rng.random((8, 4, 4, 2))
    y = 0.6 * x[..., :1] - 0.3 * x[..., 1:] + 0.2
    params = nn.init_params([(1, 2, 1)], TrainConfig(init_scale=0.1), seed=0)
    loss = np.inf
    for _ in range(5000):
        z, trace = nn.forward(params, x)
        loss, delta = nn.loss_and_output_grad("pnn", z, None, y)
        if loss < 1e-6:
            break
        params = nn.sgd_step(params, nn.backward(params, trace, delta), 0.02)
    assert loss < 1e-6


def test_checkpoint_round_trip(tmp_path):
    params = nn.init_params([(3, 2, 4), (3, 4, 2), (1, 2, 3)], TrainConfig(), nn.RESIDUAL_MATCHING, seed=4)
    header, payload = nn.save_checkpoint(params, tmp_path / "m.ckpt", kind="X", iteration=7)
    assert payload.stat().st_size == params.n_params * 8
    back, meta = nn.load_checkpoint(header)
    assert back.topology == nn.RESIDUAL_MATCHING and meta == {"iteration": "7", "kind": "X"}
    for a, b in zip(params.layers, back.layers):
        assert np.array_equal(a.weight, b.weight) and np.array_equal(a.bias, b.bias)
    payload.write_bytes(payload.read_bytes()[:-8])
    with pytest.raises(ValueError):
        nn.load_checkpoint(header)
