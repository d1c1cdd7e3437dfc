"""PNN, DRPNN, DiCNN1 and DiCNN2 on top of the numpy engine.

All four share a three-layer convolution pathway.  They differ in what
the pathway sees and how its output ``Z`` becomes the prediction:

=======  ==============  =============================
kind     pathway input   prediction
=======  ==============  =============================
PNN      G = [M~, P]     Z
DRPNN    G               omega(Z + G), omega is 1x1
DiCNN1   G               Z + M~
DiCNN2   P               Z + M~
=======  ==============  =============================
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .raster import MSImage, PanImage, Role, ShapeError

KINDS = ("PNN", "DRPNN", "DiCNN1", "DiCNN2")
DEFAULT_KERNELS = (9, 5, 5)
DEFAULT_CHANNELS = (64, 32)
DESK_CHANNELS = (32, 16)
DIVERGENCE_LIMIT = 1e6


class DivergenceError(RuntimeError):
    pass


class UnsupportedArchitectureError(ValueError):
    pass


@dataclass(frozen=True)
class ArchSpec:
    kind: str
    n_bands: int
    kernels: tuple = DEFAULT_KERNELS
    channels: tuple = DEFAULT_CHANNELS

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown architecture {self.kind!r}")
        if self.n_bands < 1:
            raise ValueError("n_bands must be >= 1")
        if len(self.kernels) != len(self.channels) + 1:
            raise ValueError("need one more kernel size than hidden widths")
        if any(k % 2 == 0 for k in self.kernels):
            raise ValueError("kernel sizes must be odd")

    @property
    def input_channels(self) -> int:
        return 1 if self.kind == "DiCNN2" else self.n_bands + 1

    @property
    def pathway_out_channels(self) -> int:
        return self.n_bands + 1 if self.kind == "DRPNN" else self.n_bands

    @property
    def loss_kind(self) -> str:
        return {"PNN": "pnn", "DRPNN": "drpnn"}.get(self.kind, "dicnn")

    def layer_shapes(self) -> list[tuple[int, int, int]]:
        widths = [self.input_channels, *self.channels, self.pathway_out_channels]
        shapes = [(k, widths[i], widths[i + 1]) for i, k in enumerate(self.kernels)]
        if self.kind == "DRPNN":
            shapes.append((1, self.pathway_out_channels, self.n_bands))
        return shapes

    @property
    def topology(self) -> str:
        return nn.RESIDUAL_MATCHING if self.kind == "DRPNN" else nn.PLAIN


@dataclass
class Model:
    spec: ArchSpec
    params: nn.NetworkParams
    iteration: int = 0

    @property
    def has_skip(self) -> bool:
        return self.spec.kind in ("DiCNN1", "DiCNN2")


def build(spec: ArchSpec, cfg: nn.TrainConfig = nn.TrainConfig(), seed: int | None = None) -> Model:
    params = nn.init_params(spec.layer_shapes(), cfg, spec.topology, seed=seed)
    return Model(spec, params)


def zero_model(spec: ArchSpec) -> Model:
    layers = [nn.ConvLayerParams(np.zeros((k, k, ci, co)), np.zeros(co))
              for k, ci, co in spec.layer_shapes()]
    return Model(spec, nn.NetworkParams(layers, spec.topology))


def network_input(spec: ArchSpec, lrms: np.ndarray, pan: np.ndarray) -> np.ndarray:
    """Pathway input from channels-last ``lrms`` (…, N_b) and ``pan`` (…, 1)."""
    if spec.kind == "DiCNN2":
        return pan
    return np.concatenate([lrms, pan], axis=-1)


def pathway_output(model: Model, lrms: np.ndarray, pan: np.ndarray):
    x = network_input(model.spec, lrms, pan)
    return nn.forward(model.params, x)


def compose_prediction(model: Model, z: np.ndarray, lrms: np.ndarray) -> np.ndarray:
    return z + lrms if model.has_skip else z


def _check_bands(model: Model, n_bands: int):
    if n_bands != model.spec.n_bands:
        raise ShapeError(f"model expects {model.spec.n_bands} bands, image has {n_bands}")


def predict(model: Model, lrms_interp: MSImage, pan: PanImage) -> MSImage:
    """Fuse a full scene with a trained (or freshly built) model."""
    _check_bands(model, lrms_interp.n_bands)
    if lrms_interp.shape != pan.shape:
        raise ShapeError(f"MS {lrms_interp.shape} vs PAN {pan.shape}")
    lrms = nn.to_channels_last(lrms_interp.data)[None]
    p = pan.data[None, :, :, None]
    z, _ = pathway_output(model, lrms, p)
    out = compose_prediction(model, z, lrms)[0]
    return MSImage(nn.to_planar(out), Role.HRMS_PRED)


def predict_details(model: Model, lrms_interp: MSImage, pan: PanImage) -> np.ndarray:
    """The DiCNN pathway output, i.e. the injected MS details ``D_hat``."""
    if not model.has_skip:
        raise UnsupportedArchitectureError(f"{model.spec.kind} does not learn details")
    _check_bands(model, lrms_interp.n_bands)
    lrms = nn.to_channels_last(lrms_interp.data)[None]
    z, _ = pathway_output(model, lrms, pan.data[None, :, :, None])
    return nn.to_planar(z[0])


def batch_loss(model: Model, batch: nn.PatchBatch, with_grad: bool = True, first_layer: int = 0):
    """Loss on a patch batch and, optionally, the per-layer gradients."""
    _check_bands(model, batch.lrms.shape[-1])
    z, trace = pathway_output(model, batch.lrms, batch.pan)
    loss, delta = nn.loss_and_output_grad(model.spec.loss_kind, z, batch.lrms, batch.target)
    if not with_grad:
        return loss, None
    return loss, nn.backward(model.params, trace, delta, first_layer=first_layer)


def dataset_loss(model: Model, batch: nn.PatchBatch, chunk: int = 64) -> float:
    """Loss over every patch, normalized by the total patch count."""
    total = 0.0
    n = len(batch)
    for start in range(0, n, chunk):
        sub = batch.subset(np.arange(start, min(start + chunk, n)))
        loss, _ = batch_loss(model, sub, with_grad=False)
        total += loss * len(sub)
    return total / n


def minibatch_indices(n: int, batch_size: int, iterations: int, seed: int):
    """Seeded epoch-wise shuffling; yields one index array per iteration."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    pos = 0
    for _ in range(iterations):
        if pos + batch_size > n:
            order = rng.permutation(n)
            pos = 0
        yield order[pos:pos + min(batch_size, n)]
        pos += batch_size


@dataclass
class TrainResult:
    model: Model
    losses: list = field(default_factory=list)
    seconds: float = 0.0


def train(model: Model, patches: nn.PatchBatch, cfg: nn.TrainConfig,
          frozen=(), iterations: int | None = None) -> TrainResult:
    """Plain minibatch SGD; returns the model and the per-iteration loss."""
    n_iter = cfg.iterations if iterations is None else iterations
    params = model.params
    first = 0
    while first in frozen:
        first += 1
    losses = []
    start = time.perf_counter()
    for it, idx in enumerate(minibatch_indices(len(patches), cfg.batch_size, n_iter, cfg.seed)):
        loss, grads = batch_loss(Model(model.spec, params), patches.subset(idx), first_layer=first)
        if not np.isfinite(loss) or loss > DIVERGENCE_LIMIT:
            raise DivergenceError(
                f"{model.spec.kind} diverged at iteration {it}: loss {loss:.4g} "
                f"(learning rate {cfg.learning_rate})"
            )
        losses.append(loss)
        params = nn.sgd_step(params, grads, cfg.learning_rate, frozen=frozen)
    elapsed = time.perf_counter() - start
    return TrainResult(Model(model.spec, params, model.iteration + n_iter), losses, elapsed)


def fine_tune_last_layer(model: Model, patches: nn.PatchBatch, cfg: nn.TrainConfig,
                         iterations: int | None = None, seed: int | None = None) -> TrainResult:
    """Adapt a trained DiCNN2 to a new band count by retraining its last layer.

    Layers ``1..L-1`` are reused bit-exactly; layer ``L`` is re-initialized
    with one output channel per new band.  The default budget is 1/30 of
    ``cfg.iterations``.
    """
    if model.spec.kind != "DiCNN2":
        raise UnsupportedArchitectureError(
            f"last-layer transfer needs DiCNN2; {model.spec.kind} feeds the MS bands "
            "into its pathway, so a band change invalidates every layer"
        )
    new_bands = patches.lrms.shape[-1]
    spec = replace(model.spec, n_bands=new_bands)
    k, c_in, c_out = spec.layer_shapes()[-1]
    rng = np.random.default_rng(cfg.seed + 1 if seed is None else seed)
    last = nn.init_layer(k, k, c_in, c_out, cfg, rng)
    layers = [layer for layer in model.params.layers[:-1]] + [last]
    adapted = Model(spec, nn.NetworkParams(layers, model.params.topology), model.iteration)
    if iterations is None:
        iterations = max(1, cfg.iterations // 30)
    frozen = tuple(range(len(layers) - 1))
    return train(adapted, patches, cfg, frozen=frozen, iterations=iterations)


def save_model(model: Model, path):
    return nn.save_checkpoint(
        model.params, path, kind=model.spec.kind, n_bands=model.spec.n_bands,
        kernels=",".join(map(str, model.spec.kernels)),
        channels=",".join(map(str, model.spec.channels)),
        iteration=model.iteration,
    )


def load_model(path) -> Model:
    params, meta = nn.load_checkpoint(path)
    spec = ArchSpec(
        kind=meta["kind"], n_bands=int(meta["n_bands"]),
        kernels=tuple(int(k) for k in meta["kernels"].split(",")),
        channels=tuple(int(c) for c in meta["channels"].split(",")),
    )
    return Model(spec, params, int(meta.get("iteration", 0)))
