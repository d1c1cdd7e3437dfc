"""Empirical checks of the initialization and gradient analysis.

Expectations over random initializations or image patches are realized
as sample means; stochastic assertions use 4-sigma Monte-Carlo bounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from . import architectures as arch
from . import nn

SIGMA_BOUND = 4.0

# Trace values reported for the proprietary scenes (documentation only)
PUBLISHED_TRACES = {
    "IKONOS": (203.8785, 2.9),
    "Quickbird": (108.138, 1.1619),
    "WorldView-2": (607.1628, 20.2275),
}


def mode1_unfold(t: np.ndarray) -> np.ndarray:
    """``(H, W, C)`` -> ``(H, W*C)``; row ``h`` holds band 0's W samples, then band 1's, ..."""
    t = np.asarray(t)
    h, w, c = t.shape
    return t.transpose(0, 2, 1).reshape(h, c * w)


def mode1_fold(m: np.ndarray, shape) -> np.ndarray:
    h, w, c = shape
    return np.asarray(m).reshape(h, c, w).transpose(0, 2, 1)


# trace statistics -----------------------------------------------------------

@dataclass(frozen=True)
class TraceStats:
    t1: float
    t2: float
    dataset: str = ""
    n_samples: int = 0

    @property
    def inequality_holds(self) -> bool:
        return self.t1 > self.t2


def trace_stats(lrms_interp, reference, patch_size: int = 16, dataset: str = "") -> TraceStats:
    """``T1 = Tr E(M M^T)`` and ``T2 = 2|Tr E(M (M - Y)^T)|`` over patches.

    ``M`` and ``Y`` are mode-1 unfoldings of co-located, non-overlapping
    patches of the interpolated LRMS and the reference.
    """
    batch = nn.extract_patches(lrms_interp, lrms_interp.data[:1] * 0, reference,
                               patch_size, patch_size, seed=None)
    tr_mm, tr_md = [], []
    for m_patch, y_patch in zip(batch.lrms, batch.target):
        m = mode1_unfold(m_patch)
        y = mode1_unfold(y_patch)
        tr_mm.append(np.trace(m @ m.T))
        tr_md.append(np.trace(m @ (m - y).T))
    return TraceStats(float(np.mean(tr_mm)), float(2.0 * abs(np.mean(tr_md))), dataset, len(tr_mm))


# zero-expectation property ------------------------------------------------

@dataclass(frozen=True)
class MonteCarloResult:
    estimate: float
    bound: float
    n_init: int
    samples_std: float

    @property
    def passed(self) -> bool:
        return abs(self.estimate) <= self.bound


def expectation_zero_check(spec: arch.ArchSpec, x: np.ndarray, y: np.ndarray, n_init: int = 10_000,
                           cfg: nn.TrainConfig = nn.TrainConfig(), init_mean: float = 0.0,
                           first_seed: int = 0) -> MonteCarloResult:
    """Estimate ``Tr E{ {Z_3}_(1) Y_(1)^T }`` over random initializations.

    ``x`` is the pathway input ``(H, W, C_in)``, ``y`` a fixed ``(H, W, C_out)``
    target.  A nonzero ``init_mean`` breaks the zero-mean assumption and
    serves as a negative control.
    """
    if n_init < 100:
        raise ValueError("n_init must be at least 100")
    cfg = nn.TrainConfig(**{**cfg.__dict__, "init_mean": init_mean})
    y_unf = mode1_unfold(y)
    values = np.empty(n_init)
    for i in range(n_init):
        params = nn.init_params(spec.layer_shapes()[:len(spec.kernels)], cfg, seed=first_seed + i)
        z, _ = nn.forward(params, x)
        values[i] = np.trace(mode1_unfold(z[0]) @ y_unf.T)
    std = float(values.std(ddof=1))
    return MonteCarloResult(float(values.mean()), SIGMA_BOUND * std / np.sqrt(n_init), n_init, std)


# initial losses --------------------------------------------------------------

@dataclass
class InitLossSummary:
    kinds: tuple
    losses: np.ndarray  # (n_init, n_kinds)
    pathway_energy: np.ndarray  # mean ||Z_3||_F^2 per patch, (n_init, n_kinds)

    def mean(self, kind: str) -> float:
        return float(self.losses[:, self.kinds.index(kind)].mean())

    def sem(self, kind: str) -> float:
        col = self.losses[:, self.kinds.index(kind)]
        return float(col.std(ddof=1) / np.sqrt(len(col)))

    def separation(self, lower: str, higher: str) -> float:
        """How many standard errors ``mean(higher)`` exceeds ``mean(lower)``."""
        gap = self.mean(higher) - self.mean(lower)
        return gap / np.hypot(self.sem(lower), self.sem(higher))

    def ordering_holds(self, sigmas: float = SIGMA_BOUND) -> bool:
        return all(self.separation(d, p) >= sigmas
                   for d in ("DiCNN1", "DiCNN2") for p in ("PNN", "DRPNN")
                   if d in self.kinds and p in self.kinds)

    def energy_gap(self) -> float:
        """Relative gap between DiCNN2's and DiCNN1's initial pathway energy."""
        e1 = self.pathway_energy[:, self.kinds.index("DiCNN1")].mean()
        e2 = self.pathway_energy[:, self.kinds.index("DiCNN2")].mean()
        return float((e2 - e1) / e1)


def initial_loss_compare(patches: nn.PatchBatch, n_bands: int, n_init: int = 200,
                         kinds=arch.KINDS, kernels=arch.DEFAULT_KERNELS,
                         channels=arch.DESK_CHANNELS, cfg: nn.TrainConfig = nn.TrainConfig(),
                         first_seed: int = 0) -> InitLossSummary:
    """Iteration-0 loss of each architecture over ``n_init`` seeded initializations."""
    kinds = tuple(kinds)
    losses = np.empty((n_init, len(kinds)))
    energy = np.empty_like(losses)
    for i in range(n_init):
        for k, kind in enumerate(kinds):
            model = arch.build(arch.ArchSpec(kind, n_bands, kernels, channels), cfg, seed=first_seed + i)
            z, trace = arch.pathway_output(model, patches.lrms, patches.pan)
            losses[i, k], _ = nn.loss_and_output_grad(model.spec.loss_kind, z, patches.lrms, patches.target)
            path_z = trace.z[len(kernels) - 1]
            energy[i, k] = float(np.sum(path_z * path_z) / len(patches))
    return InitLossSummary(kinds, losses, energy)


def zero_param_losses(patches: nn.PatchBatch, n_bands: int) -> dict:
    """Losses with every parameter at zero: the deterministic skeleton of the ordering."""
    out = {}
    for kind in arch.KINDS:
        model = arch.zero_model(arch.ArchSpec(kind, n_bands, channels=arch.DESK_CHANNELS))
        out[kind] = arch.dataset_loss(model, patches)
    return out


# literal gradient compositions -------------------------------------------------

def _literal_conv(a: np.ndarray, layer: nn.ConvLayerParams) -> np.ndarray:
    n, h, w, c_in = a.shape
    c_out = layer.c_out
    z = np.zeros((n, h, w, c_out))
    for i in range(n):
        for o in range(c_out):
            acc = np.full((h, w), layer.bias[o])
            for c in range(c_in):
                acc += signal.correlate2d(a[i, :, :, c], layer.weight[:, :, c, o], mode="same")
            z[i, :, :, o] = acc
    return z


def _literal_back(delta: np.ndarray, layer: nn.ConvLayerParams) -> np.ndarray:
    """``W * delta``: true convolution of each output sensitivity with its kernel."""
    n, h, w, c_out = delta.shape
    out = np.zeros((n, h, w, layer.c_in))
    for i in range(n):
        for c in range(layer.c_in):
            for o in range(c_out):
                out[i, :, :, c] += signal.convolve2d(delta[i, :, :, o], layer.weight[:, :, c, o], mode="same")
    return out


def _literal_weight_grad(delta: np.ndarray, a_prev: np.ndarray, layer: nn.ConvLayerParams):
    """``delta_l * A_{l-1}`` as a valid correlation against the zero-padded input."""
    kh, kw, c_in, c_out = layer.weight.shape
    ph, pw = kh // 2, kw // 2
    dw = np.zeros(layer.weight.shape)
    for i in range(delta.shape[0]):
        for c in range(c_in):
            padded = np.pad(a_prev[i, :, :, c], ((ph, ph), (pw, pw)))
            for o in range(c_out):
                dw[:, :, c, o] += signal.correlate2d(padded, delta[i, :, :, o], mode="valid")
    return dw, delta.sum(axis=(0, 1, 2))


def literal_output_sensitivity(loss_kind: str, z_out, x_aux, y) -> np.ndarray:
    """Scale-adjusted closed forms ``(2/N_p)(Z_L + X - Y)`` and ``(2/N_p)(Z_L - Y)``."""
    n_p = z_out.shape[0]
    if loss_kind == "dicnn":
        return (2.0 / n_p) * (z_out + x_aux - y)
    return (2.0 / n_p) * (z_out - y)


def literal_gradients(model: arch.Model, batch: nn.PatchBatch, delta_out=None):
    """Second, loop-based evaluation of the gradient table, independent of im2col."""
    params = model.params
    x = arch.network_input(model.spec, batch.lrms, batch.pan)
    zs, inputs = [], [x]
    a = x
    for l, layer in enumerate(params.layers):
        z = _literal_conv(a, layer)
        zs.append(z)
        act = params.activation(l)
        a = np.maximum(z, 0.0) if act == "relu" else (z + x if act == "skip" else z)
        inputs.append(a)
    if delta_out is None:
        delta_out = literal_output_sensitivity(model.spec.loss_kind, zs[-1], batch.lrms, batch.target)
    grads = [None] * len(params.layers)
    delta = delta_out
    for l in range(len(params.layers) - 1, -1, -1):
        grads[l] = _literal_weight_grad(delta, inputs[l], params.layers[l])
        if l == 0:
            break
        back = _literal_back(delta, params.layers[l])
        if params.activation(l - 1) == "relu":
            delta = back * (zs[l - 1] > 0)
        else:
            delta = back
    return zs, grads


@dataclass
class SensitivityCheck:
    kind: str
    delta_bit_exact: bool
    max_grad_error: float
    passed: bool


def sensitivity_form_check(kind: str, n_bands: int = 4, patch: int = 8, n_patches: int = 2,
                           channels=(6, 4), kernels=(5, 3, 3), seed: int = 0,
                           tol: float = 1e-10, zero_delta: bool = False) -> SensitivityCheck:
    """Compare the engine's output sensitivity and gradients with literal forms."""
    rng = np.random.default_rng(seed)
    spec = arch.ArchSpec(kind, n_bands, kernels, channels)
    model = arch.build(spec, nn.TrainConfig(seed=seed))
    shape = (n_patches, patch, patch)
    batch = nn.PatchBatch(rng.random(shape + (n_bands,)), rng.random(shape + (1,)),
                          rng.random(shape + (n_bands,)), [(0, 0)] * n_patches)
    z, trace = arch.pathway_output(model, batch.lrms, batch.pan)
    _, delta = nn.loss_and_output_grad(spec.loss_kind, z, batch.lrms, batch.target)
    literal = literal_output_sensitivity(spec.loss_kind, z, batch.lrms, batch.target)
    bit_exact = bool(np.array_equal(delta, literal))
    if zero_delta:
        delta = np.zeros_like(delta)
    engine = nn.backward(model.params, trace, delta)
    _, lit = literal_gradients(model, batch, delta if zero_delta else None)
    err = 0.0
    for g, (lw, lb) in zip(engine, lit):
        scale = max(1.0, float(np.max(np.abs(lw))), float(np.max(np.abs(lb))))
        err = max(err, float(np.max(np.abs(g.weight - lw))) / scale,
                  float(np.max(np.abs(g.bias - lb))) / scale)
    return SensitivityCheck(kind, bit_exact, err, bit_exact and err <= tol)


# finite-difference gradient check ---------------------------------------------

@dataclass
class GradCheckResult:
    kind: str
    n_params: int
    max_rel_error: float
    per_layer: list = field(default_factory=list)
    # entries whose +-h step flips a ReLU; central differences do not
    # estimate a derivative there, so they are excluded and counted
    n_kinks: int = 0

    def passed(self, tol: float = 1e-6) -> bool:
        return self.max_rel_error < tol


class _SpectralConv:
    """Bias-free "same" convolution through zero-padded FFTs.

    Used only to push small activation differences through later layers,
    so its round-off scales with the perturbation, not with the activations.
    """

    def __init__(self, layer: nn.ConvLayerParams, spatial):
        kh, kw, self.c_in, self.c_out = layer.weight.shape
        self.h, self.w = spatial
        self.kh, self.kw = kh, kw
        self.full = (self.h + kh - 1, self.w + kw - 1)
        spectrum = np.fft.rfft2(layer.weight[::-1, ::-1], s=self.full, axes=(0, 1))
        self.spectrum = spectrum.reshape(-1, self.c_in, self.c_out)
        self.weight = layer.weight

    def __call__(self, a: np.ndarray) -> np.ndarray:
        n = a.shape[0]
        if self.kh == 1 and self.kw == 1:
            return a @ self.weight[0, 0]
        spec = np.fft.rfft2(a, s=self.full, axes=(1, 2)).reshape(n, -1, self.c_in)
        out = np.matmul(spec.transpose(1, 0, 2), self.spectrum).transpose(1, 0, 2)
        out = np.fft.irfft2(out.reshape(n, self.full[0], -1, self.c_out), s=self.full, axes=(1, 2))
        ph, pw = self.kh // 2, self.kw // 2
        return out[:, ph:ph + self.h, pw:pw + self.w]


def _loss_batch(loss_kind: str, z: np.ndarray, batch: nn.PatchBatch) -> np.ndarray:
    """Loss of each stacked copy in ``z`` (shape ``(P*N, ...)``)."""
    n = len(batch)
    z = z.reshape(-1, n, *z.shape[1:])
    res = z - batch.target[None]
    if loss_kind == "dicnn":
        res = res + batch.lrms[None]
    return np.sum(res * res, axis=(1, 2, 3, 4)) / n


class _Perturber:
    """Exact forward passes with one pre-activation channel perturbed."""

    def __init__(self, params: nn.NetworkParams, trace: nn.LayerTrace, spec, batch):
        self.params, self.trace, self.spec, self.batch = params, trace, spec, batch
        spatial = trace.z[0].shape[1:3]
        self.convs = [_SpectralConv(layer, spatial) for layer in params.layers]
        self.single = {}

    def _single(self, l: int, o: int) -> _SpectralConv:
        if (l, o) not in self.single:
            nxt = self.params.layers[l]
            part = nn.ConvLayerParams(nxt.weight[:, :, o:o + 1, :], np.zeros(nxt.c_out))
            self.single[l, o] = _SpectralConv(part, self.trace.z[0].shape[1:3])
        return self.single[l, o]

    def _act_delta(self, l: int, z_new: np.ndarray, z_old: np.ndarray):
        """Change of layer ``l``'s activation and whether a ReLU flipped."""
        if self.params.activation(l) == "relu":
            flips = ((z_new > 0) != (z_old > 0)).reshape(z_new.shape[0], -1).any(axis=1)
            return np.maximum(z_new, 0.0) - np.maximum(z_old, 0.0), flips
        # the residual skip adds the same input on both sides
        return z_new - z_old, np.zeros(z_new.shape[0], dtype=bool)

    def losses(self, l: int, o: int, dz: np.ndarray):
        """``dz`` is ``(P, N, H, W)``; returns P losses and P kink flags."""
        p, n = dz.shape[:2]
        trace = self.trace
        last = len(self.params.layers) - 1
        if l == last:
            z = np.repeat(trace.z[l][None], p, axis=0)
            z[..., o] += dz
            return _loss_batch(self.spec.loss_kind, z.reshape(p * n, *z.shape[2:]), self.batch), \
                np.zeros(p, dtype=bool)
        base = np.broadcast_to(trace.z[l][None, ..., o], dz.shape).reshape(p * n, *dz.shape[2:], 1)
        d_act, kink = self._act_delta(l, base + dz.reshape(base.shape), base)
        kink = kink.reshape(p, n).any(axis=1)
        delta = self._single(l + 1, o)(d_act)
        for k in range(l + 1, last):
            z_old = np.tile(trace.z[k], (p, 1, 1, 1))
            d_act, flips = self._act_delta(k, z_old + delta, z_old)
            kink |= flips.reshape(p, n).any(axis=1)
            delta = self.convs[k + 1](d_act)
        z_out = np.tile(trace.z[last], (p, 1, 1, 1)) + delta
        return _loss_batch(self.spec.loss_kind, z_out, self.batch), kink


def finite_difference_check(model: arch.Model, batch: nn.PatchBatch, h: float = 1e-5,
                            floor_ratio: float = 1e-3, chunk: int = 128) -> GradCheckResult:
    """Central differences for every parameter against backprop.

    A perturbation of ``W_l[i, j, c, o]`` changes only channel ``o`` of
    ``Z_l``, by ``h`` times one im2col column.  The resulting activation
    change is pushed through the later layers (first through the single
    affected input channel) and added to the stored pre-activations; the
    nonlinearities are re-evaluated exactly at every layer.

    Entries whose ``+-h`` perturbation flips the sign of any ReLU input are
    excluded (see :attr:`GradCheckResult.n_kinks`).

    Relative error per element is ``|a - n| / max(|a|, |n|, floor)`` with
    ``floor = floor_ratio * max|a|`` over that parameter tensor, which keeps
    exactly-zero gradients (dead units) from producing 0/0.
    """
    params = model.params
    spec = model.spec
    x = arch.network_input(spec, batch.lrms, batch.pan)
    z_out, trace = nn.forward(params, x)
    _, delta = nn.loss_and_output_grad(spec.loss_kind, z_out, batch.lrms, batch.target)
    grads = nn.backward(params, trace, delta)
    n = x.shape[0]
    pert = _Perturber(params, trace, spec, batch)
    worst, n_kinks, per_layer = 0.0, 0, []
    for l, layer in enumerate(params.layers):
        kh, kw, c_in, c_out = layer.weight.shape
        z_l = trace.z[l]
        cols = trace.cols[l].reshape(n, *z_l.shape[1:3], kh * kw * c_in)
        n_cols = kh * kw * c_in + 1  # weights in im2col order, then the bias
        numeric = np.zeros((n_cols, c_out))
        kinked = np.zeros((n_cols, c_out), dtype=bool)
        for o in range(c_out):
            for start in range(0, n_cols, chunk):
                idx = np.arange(start, min(start + chunk, n_cols))
                dz = np.ones((len(idx), *z_l.shape[:3]))
                w_idx = idx[idx < n_cols - 1]
                dz[:len(w_idx)] = np.moveaxis(cols[..., w_idx], -1, 0)
                up, kink_up = pert.losses(l, o, h * dz)
                down, kink_down = pert.losses(l, o, -h * dz)
                numeric[idx, o] = (up - down) / (2 * h)
                kinked[idx, o] = kink_up | kink_down
        numeric_w = numeric[:-1].reshape(layer.weight.shape)
        skip_w = kinked[:-1].reshape(layer.weight.shape)
        errs = []
        for analytic, num, skip in ((grads[l].weight, numeric_w, skip_w),
                                    (grads[l].bias, numeric[-1], kinked[-1])):
            floor = floor_ratio * max(float(np.max(np.abs(analytic))), 1e-300)
            den = np.maximum(np.maximum(np.abs(analytic), np.abs(num)), floor)
            err = np.abs(analytic - num) / den
            errs.append(float(np.max(err[~skip], initial=0.0)))
            n_kinks += int(skip.sum())
        per_layer.append(max(errs))
        worst = max(worst, max(errs))
    return GradCheckResult(spec.kind, params.n_params, worst, per_layer, n_kinks)
