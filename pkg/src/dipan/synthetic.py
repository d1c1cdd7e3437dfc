"""Seeded synthetic scenes standing in for proprietary satellite data.

A scene is built from ``K`` multi-octave value-noise textures (think of
them as material abundance maps).  Each MS band is a convex combination
of the textures through a spectral mixing matrix, and the PAN is a
weighted sum of the MS bands plus a little Gaussian noise.  The HRMS is
therefore known exactly and the PAN shares its spatial detail.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster import MSImage, PanImage, Role


@dataclass(frozen=True)
class SyntheticSceneConfig:
    height: int = 128
    width: int = 128
    bands: int = 4
    seed: int = 0
    octaves: int = 5
    n_textures: int = 3
    mixing: np.ndarray | None = None
    pan_weights: np.ndarray | None = None
    pan_noise: float = 0.01
    base_cell: int = 16
    persistence: float = 0.75

    def __post_init__(self):
        if self.height < 1 or self.width < 1 or self.bands < 1:
            raise ValueError("scene dimensions must be positive")
        if self.octaves < 1:
            raise ValueError("octaves must be >= 1")
        if self.mixing is not None:
            m = np.asarray(self.mixing, dtype=np.float64)
            if m.ndim != 2 or m.shape[0] != self.bands:
                raise ValueError(f"mixing must be bands x K, got {m.shape}")
            if np.any(m < 0) or not np.allclose(m.sum(axis=1), 1.0, atol=1e-12):
                raise ValueError("mixing rows must be nonnegative and sum to 1")


def value_noise(shape, cell: float, rng: np.random.Generator) -> np.ndarray:
    """Smoothstep-interpolated random lattice with spacing ``cell`` pixels."""
    h, w = shape
    gh = int(np.ceil(h / cell)) + 2
    gw = int(np.ceil(w / cell)) + 2
    lattice = rng.random((gh, gw))
    y = np.arange(h) / cell
    x = np.arange(w) / cell
    y0 = np.floor(y).astype(int)
    x0 = np.floor(x).astype(int)
    ty = y - y0
    tx = x - x0
    ty = ty * ty * (3 - 2 * ty)
    tx = tx * tx * (3 - 2 * tx)
    a = lattice[np.ix_(y0, x0)]
    b = lattice[np.ix_(y0, x0 + 1)]
    c = lattice[np.ix_(y0 + 1, x0)]
    d = lattice[np.ix_(y0 + 1, x0 + 1)]
    top = a + (b - a) * tx[None, :]
    bottom = c + (d - c) * tx[None, :]
    return top + (bottom - top) * ty[:, None]


def fractal_texture(shape, octaves: int, base_cell: float, persistence: float,
                    rng: np.random.Generator) -> np.ndarray:
    total = np.zeros(shape)
    amp = 1.0
    cell = float(base_cell)
    for _ in range(octaves):
        total += amp * value_noise(shape, max(cell, 1.0), rng)
        amp *= persistence
        cell /= 2.0
    lo, hi = total.min(), total.max()
    if hi > lo:
        total = (total - lo) / (hi - lo)
    return total


def gen_synthetic_scene(cfg: SyntheticSceneConfig) -> tuple[MSImage, PanImage]:
    """Generate an ``(hrms, pan)`` pair; a pure function of ``cfg``."""
    tex_seq, mix_seq, noise_seq = np.random.SeedSequence(cfg.seed).spawn(3)
    tex_rng = np.random.default_rng(tex_seq)
    shape = (cfg.height, cfg.width)

    if cfg.mixing is not None:
        mixing = np.asarray(cfg.mixing, dtype=np.float64)
    else:
        mixing = np.random.default_rng(mix_seq).dirichlet(np.ones(cfg.n_textures), size=cfg.bands)
    k = mixing.shape[1]
    textures = np.stack([
        fractal_texture(shape, cfg.octaves, cfg.base_cell, cfg.persistence, tex_rng)
        for _ in range(k)
    ])
    hrms = np.clip(np.tensordot(mixing, textures, axes=1), 0.0, 1.0)

    if cfg.pan_weights is None:
        weights = np.full(cfg.bands, 1.0 / cfg.bands)
    else:
        weights = np.asarray(cfg.pan_weights, dtype=np.float64)
        if weights.shape != (cfg.bands,) or np.any(weights < 0):
            raise ValueError("pan_weights must be bands nonnegative values")
    pan = np.tensordot(weights, hrms, axes=1)
    if cfg.pan_noise > 0:
        pan = pan + cfg.pan_noise * np.random.default_rng(noise_seq).standard_normal(shape)
    pan = np.clip(pan, 0.0, 1.0)
    return MSImage(hrms, Role.HRMS_REF), PanImage(pan)


def synthetic_corpus(n: int = 10, bands: int = 4, size: int = 64, first_seed: int = 0):
    """The bundled test corpus: ``n`` scenes with consecutive seeds."""
    return [
        gen_synthetic_scene(SyntheticSceneConfig(height=size, width=size, bands=bands, seed=s))
        for s in range(first_seed, first_seed + n)
    ]
