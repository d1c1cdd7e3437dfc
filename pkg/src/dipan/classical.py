"""Classical CS and MRA pansharpening as instances of detail injection.

Every method here reduces to ``M_hat_b = M_tilde_b + g_b * d`` where
``d`` is a PAN detail plane (``P - I_c`` for CS, ``P - P_c`` for MRA) and
``g_b`` a per-band gain; the injection step always goes through
:func:`dipan.raster.add_details`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .raster import DetailImage, MSImage, PanImage, ShapeError, add_details, as_band
from .resample import WaldConfig, decimate, exp_interpolate, gaussian_lowpass, interpolate

B3_SPLINE = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


class DegenerateSourceError(ValueError):
    pass


@dataclass(frozen=True)
class IntensityWeights:
    weights: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.size < 1:
            raise ValueError("weights must be a non-empty vector")
        if np.any(w < 0):
            raise ValueError("intensity weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"intensity weights must sum to 1, got {w.sum()!r}")
        object.__setattr__(self, "weights", tuple(float(x) for x in w))

    @classmethod
    def uniform(cls, n_bands: int) -> "IntensityWeights":
        return cls(tuple(np.full(n_bands, 1.0 / n_bands)))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.weights)


@dataclass(frozen=True)
class InjectionGains:
    """Scalar per-band gains or per-pixel gain maps, never both."""

    scalars: np.ndarray | None = None
    maps: np.ndarray | None = None

    def __post_init__(self):
        if (self.scalars is None) == (self.maps is None):
            raise ValueError("give exactly one of scalar gains or gain maps")

    @property
    def n_bands(self) -> int:
        return len(self.scalars) if self.scalars is not None else self.maps.shape[0]

    def details(self, d: np.ndarray) -> DetailImage:
        """MS details ``D_b = g_b * d`` for a PAN detail plane ``d``."""
        if self.scalars is not None:
            return DetailImage(np.asarray(self.scalars)[:, None, None] * d[None])
        if self.maps.shape[1:] != d.shape:
            raise ShapeError(f"gain maps {self.maps.shape[1:]} vs details {d.shape}")
        return DetailImage(self.maps * d[None])


@dataclass(frozen=True)
class DetailExtractorSpec:
    kind: str = "mra_atwt"
    levels: int = 2
    weights: IntensityWeights | None = None

    def __post_init__(self):
        if self.kind not in ("cs_intensity", "mra_atwt", "mra_glp"):
            raise ValueError(f"unknown extractor kind {self.kind!r}")
        if self.kind == "mra_atwt" and self.levels < 1:
            raise ValueError("ATWT needs at least one level")


def intensity_component(ms: MSImage, w: IntensityWeights) -> np.ndarray:
    """``I_c = sum_b w_b * M_tilde_b``."""
    weights = w.as_array()
    if weights.size != ms.n_bands:
        raise ShapeError(f"{weights.size} weights for {ms.n_bands} bands")
    return np.tensordot(weights, ms.data, axes=1)


def atwt_planes(pan, levels: int) -> tuple[np.ndarray, list[np.ndarray]]:
    """A trous decomposition with the B3 spline; returns (approximation, details).

    ``approximation + sum(details)`` reconstructs the input.
    """
    c = as_band(pan.data if isinstance(pan, PanImage) else pan)
    if levels < 1:
        raise ValueError("levels must be >= 1")
    details = []
    for j in range(levels):
        step = 2 ** j
        if min(c.shape) <= 2 * step:
            raise ShapeError(f"image {c.shape} is smaller than the level-{j + 1} kernel support")
        kernel = np.zeros(4 * step + 1)
        kernel[::step] = B3_SPLINE
        smooth = ndimage.correlate1d(c, kernel, axis=0, mode="reflect")
        smooth = ndimage.correlate1d(smooth, kernel, axis=1, mode="reflect")
        details.append(c - smooth)
        c = smooth
    return c, details


def atwt_lowpass(pan, levels: int = 2) -> np.ndarray:
    return atwt_planes(pan, levels)[0]


def glp_lowpass(pan, cfg: WaldConfig = WaldConfig()) -> np.ndarray:
    """Low-pass PAN via the pyramid chain: Gaussian, decimate, interpolate."""
    band = pan.data if isinstance(pan, PanImage) else pan
    return interpolate(decimate(gaussian_lowpass(band, cfg), cfg.ratio), cfg)


def estimate_gains(ms: MSImage, source) -> InjectionGains:
    """Projection gains ``g_b = cov(M_tilde_b, S) / var(S)``.

    ``source`` is the low-frequency plane (``I_c`` or ``P_c``).
    """
    s = np.asarray(source, dtype=np.float64)
    if s.shape != ms.shape:
        raise ShapeError(f"source {s.shape} vs MS {ms.shape}")
    s0 = s - s.mean()
    var = np.mean(s0 * s0)
    if var < 1e-12:
        raise DegenerateSourceError(f"source variance {var:.3g} is degenerate")
    gains = np.array([np.mean((band - band.mean()) * s0) / var for band in ms.data])
    return InjectionGains(scalars=gains)


def cs_pansharpen(ms: MSImage, pan: PanImage, w: IntensityWeights, gains: InjectionGains) -> MSImage:
    """Component substitution: ``M_tilde_b + g_b * (P - I_c)``."""
    if pan.shape != ms.shape or gains.n_bands != ms.n_bands:
        raise ShapeError("MS, PAN and gains are inconsistent")
    d = pan.data - intensity_component(ms, w)
    return add_details(ms, gains.details(d))


def mra_pansharpen(ms: MSImage, pan: PanImage, p_low, gains: InjectionGains) -> MSImage:
    """Multiresolution analysis: ``M_tilde_b + g_b * (P - P_c)``."""
    p_low = np.asarray(p_low, dtype=np.float64)
    if pan.shape != ms.shape or p_low.shape != ms.shape or gains.n_bands != ms.n_bands:
        raise ShapeError("MS, PAN, low-pass PAN and gains are inconsistent")
    return add_details(ms, gains.details(pan.data - p_low))


def cs_substitution_form(ms: MSImage, pan: PanImage, i_c: np.ndarray, gains: np.ndarray) -> np.ndarray:
    """CS written as a substitution of ``I_c``; undefined where a gain is 0."""
    g = np.asarray(gains, dtype=np.float64)[:, None, None]
    if np.any(g == 0):
        raise ValueError("the substitution form needs nonzero gains")
    return (ms.data - i_c[None]) + g * (pan.data[None] - (g - 1.0) / g * i_c[None])


def pansharpen(ms: MSImage, pan: PanImage, spec: DetailExtractorSpec,
               cfg: WaldConfig = WaldConfig()) -> MSImage:
    """Run one classical method end to end with projection gains."""
    if spec.kind == "cs_intensity":
        w = spec.weights or IntensityWeights.uniform(ms.n_bands)
        i_c = intensity_component(ms, w)
        return cs_pansharpen(ms, pan, w, estimate_gains(ms, i_c))
    if spec.kind == "mra_atwt":
        p_low = atwt_lowpass(pan, spec.levels)
    else:
        p_low = glp_lowpass(pan, cfg)
    return mra_pansharpen(ms, pan, p_low, estimate_gains(ms, p_low))
