"""A small dense-prediction CNN engine in plain numpy.

Tensors are channels-last, ``(N, H, W, C)``, float64.  Convolutions are
"same" cross-correlations with zero padding, implemented with im2col so
each layer is one matrix product.  Backprop follows the sensitivity
recursion ``delta_l = (W_{l+1} * delta_{l+1}) . relu'(Z_l)`` and the
weight gradient ``dL/dW_l = delta_l * A_{l-1}``.

Loss convention: ``loss = sum ||residual||_F^2 / N_p`` over a batch of
``N_p`` patches, so the output sensitivity is ``2 * residual / N_p``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PLAIN = "plain"
# layer L-1 has no ReLU and the network input is added to its output
# before the final (matching) layer, as in DRPNN
RESIDUAL_MATCHING = "residual_matching"

LOSS_KINDS = ("pnn", "drpnn", "dicnn")


@dataclass
class ConvLayerParams:
    weight: np.ndarray  # (kh, kw, c_in, c_out)
    bias: np.ndarray  # (c_out,)

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 4:
            raise ValueError(f"kernel must be (kh, kw, c_in, c_out), got {self.weight.shape}")
        kh, kw, _, c_out = self.weight.shape
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError(f"kernel sizes must be odd, got {kh}x{kw}")
        if self.bias.shape != (c_out,):
            raise ValueError(f"bias must have {c_out} entries, got {self.bias.shape}")

    @property
    def c_in(self) -> int:
        return self.weight.shape[2]

    @property
    def c_out(self) -> int:
        return self.weight.shape[3]

    @property
    def n_params(self) -> int:
        return self.weight.size + self.bias.size

    def copy(self) -> "ConvLayerParams":
        return ConvLayerParams(self.weight.copy(), self.bias.copy())


@dataclass
class NetworkParams:
    layers: list
    topology: str = PLAIN

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a network needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.c_out != b.c_in:
                raise ValueError(f"layer channels do not chain: {a.c_out} -> {b.c_in}")
        if self.topology not in (PLAIN, RESIDUAL_MATCHING):
            raise ValueError(f"unknown topology {self.topology!r}")
        if self.topology == RESIDUAL_MATCHING:
            if len(self.layers) < 2:
                raise ValueError("residual matching needs at least two layers")
            if self.layers[-2].c_out != self.layers[0].c_in:
                raise ValueError("the residual must have as many channels as the input")

    def __len__(self):
        return len(self.layers)

    @property
    def n_params(self) -> int:
        return sum(layer.n_params for layer in self.layers)

    def copy(self) -> "NetworkParams":
        return NetworkParams([layer.copy() for layer in self.layers], self.topology)

    def activation(self, l: int) -> str:
        """What follows layer ``l`` (0-based): relu, skip or none."""
        last = len(self.layers) - 1
        if l == last:
            return "none"
        if self.topology == RESIDUAL_MATCHING and l == last - 1:
            return "skip"
        return "relu"


@dataclass
class LayerTrace:
    """Pre-activations ``z[l]`` and layer inputs ``a[l]`` (``a[0]`` is X)."""

    z: list = field(default_factory=list)
    a: list = field(default_factory=list)
    cols: list = field(default_factory=list, repr=False)


@dataclass
class LayerGrad:
    weight: np.ndarray
    bias: np.ndarray


def _batched(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4:
        raise ValueError(f"expected (N, H, W, C) or (H, W, C), got {x.shape}")
    return x


def im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Zero-padded patches as rows: ``(N*H*W, kh*kw*C)``, order (i, j, c)."""
    n, h, w, c = x.shape
    ph, pw = kh // 2, kw // 2
    padded = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    win = sliding_window_view(padded, (kh, kw), axis=(1, 2))  # (n, h, w, c, kh, kw)
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n * h * w, kh * kw * c)


def _conv_cols(cols: np.ndarray, layer: ConvLayerParams, shape) -> np.ndarray:
    kh, kw, c_in, c_out = layer.weight.shape
    out = cols @ layer.weight.reshape(kh * kw * c_in, c_out)
    out += layer.bias
    return out.reshape(*shape, c_out)


def conv2d_forward(x, layer: ConvLayerParams) -> np.ndarray:
    """Same-size cross-correlation plus bias. Accepts (H,W,C) or (N,H,W,C)."""
    xb = _batched(x)
    if xb.shape[-1] != layer.c_in:
        raise ValueError(f"input has {xb.shape[-1]} channels, layer expects {layer.c_in}")
    kh, kw = layer.weight.shape[:2]
    out = _conv_cols(im2col(xb, kh, kw), layer, xb.shape[:3])
    return out if np.ndim(x) == 4 else out[0]


def conv2d_input_grad(delta: np.ndarray, layer: ConvLayerParams) -> np.ndarray:
    """Adjoint of the convolution: correlate ``delta`` with the flipped kernel."""
    kh, kw, c_in, c_out = layer.weight.shape
    flipped = layer.weight[::-1, ::-1].transpose(0, 1, 3, 2)  # (kh, kw, c_out, c_in)
    cols = im2col(delta, kh, kw)
    out = cols @ flipped.reshape(kh * kw * c_out, c_in)
    return out.reshape(*delta.shape[:3], c_in)


def relu(z):
    return np.maximum(z, 0.0)


def relu_grad(z):
    # derivative at exactly 0 is taken as 0
    return (z > 0).astype(np.float64)


def forward(params: NetworkParams, x) -> tuple[np.ndarray, LayerTrace]:
    """Run the stacked layers and keep everything backprop needs."""
    xb = _batched(x)
    if xb.shape[-1] != params.layers[0].c_in:
        raise ValueError(
            f"input has {xb.shape[-1]} channels, first layer expects {params.layers[0].c_in}"
        )
    trace = LayerTrace(a=[xb])
    a = xb
    for l, layer in enumerate(params.layers):
        kh, kw = layer.weight.shape[:2]
        cols = im2col(a, kh, kw)
        z = _conv_cols(cols, layer, a.shape[:3])
        trace.cols.append(cols)
        trace.z.append(z)
        act = params.activation(l)
        if act == "relu":
            a = relu(z)
        elif act == "skip":
            a = z + xb
        else:
            a = z
        if act != "none":
            trace.a.append(a)
    return trace.z[-1], trace


def loss_and_output_grad(kind: str, z_out, x_aux, y) -> tuple[float, np.ndarray]:
    """Batch loss and output sensitivity.

    ``dicnn``: residual ``Z_L + M_tilde - Y``; ``pnn``/``drpnn``:
    residual ``Z_L - Y`` (``x_aux`` is ignored; DRPNN's skip is part of the
    forward pass).
    """
    if kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {kind!r}")
    z = _batched(z_out)
    y = _batched(y)
    if kind == "dicnn":
        x = _batched(x_aux)
        if not (z.shape == x.shape == y.shape):
            raise ValueError(f"shape mismatch: {z.shape}, {x.shape}, {y.shape}")
        res = z + x - y
    else:
        if z.shape != y.shape:
            raise ValueError(f"shape mismatch: {z.shape}, {y.shape}")
        res = z - y
    n_p = z.shape[0]
    loss = float(np.sum(res * res) / n_p)
    return loss, (2.0 / n_p) * res


def backward(params: NetworkParams, trace: LayerTrace, delta_out, first_layer: int = 0) -> list:
    """Reverse-mode gradients for every layer, in layer order.

    Layers below ``first_layer`` are skipped (their entry is ``None``), which
    is all a frozen-prefix fine-tune needs.
    """
    if len(trace.z) != len(params.layers):
        raise ValueError("trace does not come from this network")
    delta = _batched(delta_out)
    if delta.shape != trace.z[-1].shape:
        raise ValueError(f"sensitivity {delta.shape} vs output {trace.z[-1].shape}")
    grads = [None] * len(params.layers)
    for l in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[l]
        flat = delta.reshape(-1, layer.c_out)
        dw = (trace.cols[l].T @ flat).reshape(layer.weight.shape)
        grads[l] = LayerGrad(dw, flat.sum(axis=0))
        if l == first_layer:
            break
        back = conv2d_input_grad(delta, layer)
        if params.activation(l - 1) == "relu":
            delta = back * relu_grad(trace.z[l - 1])
        else:
            delta = back
    return grads


def sgd_step(params: NetworkParams, grads, lr: float, frozen=()) -> NetworkParams:
    """``W <- W - lr * dW``; layers listed in ``frozen`` are kept as-is."""
    if len(grads) != len(params.layers):
        raise ValueError("one gradient per layer is required")
    layers = []
    for l, (layer, g) in enumerate(zip(params.layers, grads)):
        if l in frozen or g is None:
            layers.append(layer)
            continue
        layers.append(ConvLayerParams(layer.weight - lr * g.weight, layer.bias - lr * g.bias))
    return NetworkParams(layers, params.topology)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    iterations: int = 20000
    batch_size: int = 8
    patch_size: int = 16
    stride: int = 8
    seed: int = 0
    init: str = "gaussian"
    init_scale: float | None = None  # None: He std for gaussian, sqrt(6/fan_in) for uniform
    init_mean: float = 0.0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning rate must be nonnegative")
        if self.iterations < 0 or self.batch_size < 1 or self.patch_size < 1 or self.stride < 1:
            raise ValueError("iterations, batch size, patch size and stride must be positive")
        if self.init not in ("gaussian", "uniform"):
            raise ValueError(f"unknown init scheme {self.init!r}")


def init_layer(kh: int, kw: int, c_in: int, c_out: int, cfg: TrainConfig,
               rng: np.random.Generator) -> ConvLayerParams:
    fan_in = kh * kw * c_in
    size = (kh, kw, c_in, c_out)
    if cfg.init == "gaussian":
        std = cfg.init_scale if cfg.init_scale is not None else np.sqrt(2.0 / fan_in)
        w = rng.normal(cfg.init_mean, std, size=size)
    else:
        a = cfg.init_scale if cfg.init_scale is not None else np.sqrt(6.0 / fan_in)
        w = cfg.init_mean + rng.uniform(-a, a, size=size)
    return ConvLayerParams(w, np.zeros(c_out))


def init_params(shapes, cfg: TrainConfig, topology: str = PLAIN, seed: int | None = None) -> NetworkParams:
    """Seeded i.i.d. zero-mean weights and zero biases.

    ``shapes`` lists ``(k, c_in, c_out)`` per layer (square kernels).
    """
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    layers = [init_layer(k, k, c_in, c_out, cfg, rng) for k, c_in, c_out in shapes]
    return NetworkParams(layers, topology)


@dataclass
class PatchBatch:
    """Co-located patches, each array ``(N_p, p, p, C)``."""

    lrms: np.ndarray
    pan: np.ndarray
    target: np.ndarray
    coords: list

    def __post_init__(self):
        n = self.lrms.shape[0]
        if n < 1:
            raise ValueError("a patch batch needs at least one patch")
        if self.pan.shape[0] != n or self.target.shape[0] != n:
            raise ValueError("patch arrays disagree on count")

    def __len__(self):
        return self.lrms.shape[0]

    @property
    def patch_size(self) -> int:
        return self.lrms.shape[1]

    def subset(self, idx) -> "PatchBatch":
        idx = np.asarray(idx)
        return PatchBatch(self.lrms[idx], self.pan[idx], self.target[idx],
                          [self.coords[i] for i in idx])


def _positions(extent: int, patch: int, stride: int) -> list[int]:
    pos = list(range(0, extent - patch + 1, stride))
    if stride <= patch and pos[-1] != extent - patch:
        pos.append(extent - patch)
    return pos


def extract_patches(lrms_interp, pan, reference, patch_size: int, stride: int,
                    seed: int | None = 0) -> PatchBatch:
    """Cut aligned patches from planar ``(N_b, H, W)`` images.

    The grid covers the whole image when ``stride <= patch_size``; the
    patch order is shuffled by ``seed`` (``None`` keeps raster order).
    """
    ms = np.asarray(getattr(lrms_interp, "data", lrms_interp), dtype=np.float64)
    p = np.asarray(getattr(pan, "data", pan), dtype=np.float64)
    y = np.asarray(getattr(reference, "data", reference), dtype=np.float64)
    if p.ndim == 2:
        p = p[None]
    h, w = ms.shape[1:]
    if p.shape[1:] != (h, w) or y.shape[1:] != (h, w):
        raise ValueError("MS, PAN and reference must share H x W")
    if patch_size > h or patch_size > w:
        raise ValueError(f"patch {patch_size} does not fit in {h}x{w}")
    coords = [(i, j) for i in _positions(h, patch_size, stride)
              for j in _positions(w, patch_size, stride)]
    if seed is not None:
        order = np.random.default_rng(seed).permutation(len(coords))
        coords = [coords[k] for k in order]

    def cut(img):
        return np.stack([img[:, i:i + patch_size, j:j + patch_size].transpose(1, 2, 0)
                         for i, j in coords])

    return PatchBatch(cut(ms), cut(p), cut(y), coords)


def to_channels_last(planar: np.ndarray) -> np.ndarray:
    return np.asarray(planar).transpose(1, 2, 0)


def to_planar(tensor: np.ndarray) -> np.ndarray:
    return np.asarray(tensor).transpose(2, 0, 1)


# checkpoints ---------------------------------------------------------------

def save_checkpoint(params: NetworkParams, path, **meta) -> tuple[Path, Path]:
    """Text header plus little-endian float64 payload (weights then bias per layer)."""
    path = Path(path)
    payload = path.with_suffix(".f64")
    lines = [f"topology={params.topology}", f"layers={len(params.layers)}"]
    for l, layer in enumerate(params.layers):
        lines.append(f"layer{l}={','.join(str(s) for s in layer.weight.shape)}")
    for key, value in sorted(meta.items()):
        lines.append(f"{key}={value}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    chunks = []
    for layer in params.layers:
        chunks.append(layer.weight.ravel())
        chunks.append(layer.bias.ravel())
    payload.write_bytes(np.concatenate(chunks).astype("<f8").tobytes())
    return path, payload


def load_checkpoint(path) -> tuple[NetworkParams, dict]:
    path = Path(path)
    fields = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            key, value = line.split("=", 1)
            fields[key.strip()] = value.strip()
    n_layers = int(fields.pop("layers"))
    topology = fields.pop("topology")
    shapes = [tuple(int(s) for s in fields.pop(f"layer{l}").split(",")) for l in range(n_layers)]
    flat = np.frombuffer(path.with_suffix(".f64").read_bytes(), dtype="<f8").astype(np.float64)
    expected = sum(int(np.prod(s)) + s[3] for s in shapes)
    if flat.size != expected:
        raise ValueError(f"checkpoint payload has {flat.size} values, header implies {expected}")
    layers, pos = [], 0
    for s in shapes:
        n = int(np.prod(s))
        w = flat[pos:pos + n].reshape(s)
        pos += n
        b = flat[pos:pos + s[3]]
        pos += s[3]
        layers.append(ConvLayerParams(w.copy(), b.copy()))
    return NetworkParams(layers, topology), fields
