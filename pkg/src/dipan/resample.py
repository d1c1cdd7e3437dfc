"""Wald's-protocol resolution chain: Gaussian low-pass, decimation, EXP.

The EXP interpolator is the classic 23-tap ×2 polynomial kernel: zero
insertion followed by a symmetric FIR whose odd taps are the 12-point
Lagrange (Deslauriers-Dubuc) midpoint weights.  Its coefficients are the
dyadic rationals below, which reproduce polynomials up to degree 11.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import ndimage

from .raster import MSImage, PanImage, Role, ShapeError, as_band

# odd taps at offsets 1, 3, ..., 11 (mirrored on the negative side)
EXP_HALF_TAPS = (
    Fraction(160083, 262144),
    Fraction(-38115, 262144),
    Fraction(22869, 524288),
    Fraction(-5445, 524288),
    Fraction(847, 524288),
    Fraction(-63, 524288),
)


def exp_kernel() -> np.ndarray:
    """The 23-tap ×2 interpolation kernel (center tap 1, sums to 2)."""
    k = np.zeros(23)
    k[11] = 1.0
    for i, c in enumerate(EXP_HALF_TAPS):
        k[11 + 2 * i + 1] = float(c)
        k[11 - 2 * i - 1] = float(c)
    return k


@dataclass(frozen=True)
class WaldConfig:
    ratio: int = 4
    gaussian_nyquist_gain: float = 0.3
    interpolation: str = "exp_poly"
    pan_nyquist_gain: float | None = None

    def __post_init__(self):
        if int(self.ratio) != self.ratio or self.ratio < 2:
            raise ValueError(f"ratio must be an integer >= 2, got {self.ratio}")
        for g in (self.gaussian_nyquist_gain, self.pan_nyquist_gain):
            if g is not None and not 0.0 < g < 1.0:
                raise ValueError(f"Nyquist gain must lie in (0, 1), got {g}")
        if self.interpolation not in ("exp_poly", "bicubic"):
            raise ValueError(f"unknown interpolation {self.interpolation!r}")


def gaussian_sigma(ratio: int, nyquist_gain: float) -> float:
    """Std whose Gaussian response at ``0.5 / ratio`` cycles/sample is the gain."""
    return ratio / np.pi * np.sqrt(-2.0 * np.log(nyquist_gain))


def gaussian_kernel_1d(ratio: int, nyquist_gain: float) -> np.ndarray:
    sigma = gaussian_sigma(ratio, nyquist_gain)
    radius = int(np.ceil(4.0 * sigma))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def _separable(band: np.ndarray, kernel: np.ndarray, mode: str) -> np.ndarray:
    out = ndimage.correlate1d(band, kernel, axis=0, mode=mode)
    return ndimage.correlate1d(out, kernel, axis=1, mode=mode)


def gaussian_lowpass(band, cfg: WaldConfig = WaldConfig(), nyquist_gain: float | None = None) -> np.ndarray:
    """Separable Gaussian low-pass with symmetric boundary extension."""
    band = as_band(band)
    kernel = gaussian_kernel_1d(cfg.ratio, nyquist_gain or cfg.gaussian_nyquist_gain)
    radius = len(kernel) // 2
    if min(band.shape) <= radius:
        raise ShapeError(f"band {band.shape} is smaller than the kernel radius {radius}")
    return _separable(band, kernel, "reflect")


def decimate(band, ratio: int) -> np.ndarray:
    """Keep samples at ``(i*R, j*R)``."""
    band = as_band(band)
    h, w = band.shape
    if h % ratio or w % ratio:
        raise ShapeError(f"band {band.shape} is not divisible by ratio {ratio}")
    return band[::ratio, ::ratio].copy()


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def _upsample2_exp(band: np.ndarray) -> np.ndarray:
    h, w = band.shape
    kernel = exp_kernel()
    up = np.zeros((2 * h, w))
    up[::2] = band
    up = ndimage.correlate1d(up, kernel, axis=0, mode="mirror")
    up2 = np.zeros((2 * h, 2 * w))
    up2[:, ::2] = up
    return ndimage.correlate1d(up2, kernel, axis=1, mode="mirror")


def bicubic_interpolate(band, ratio: int) -> np.ndarray:
    band = as_band(band)
    h, w = band.shape
    yy, xx = np.meshgrid(np.arange(h * ratio) / ratio, np.arange(w * ratio) / ratio, indexing="ij")
    return ndimage.map_coordinates(band, [yy, xx], order=3, mode="mirror")


def exp_interpolate(band, ratio: int, fallback_bicubic: bool = False) -> np.ndarray:
    """Upsample by ``ratio`` with ``log2(ratio)`` EXP ×2 stages.

    Input sample ``(i, j)`` lands on output ``(i*R, j*R)``, matching the
    phase of :func:`decimate`.
    """
    band = as_band(band)
    if not _is_power_of_two(ratio):
        if fallback_bicubic:
            return bicubic_interpolate(band, ratio)
        raise ValueError(f"EXP interpolation needs a power-of-two ratio, got {ratio}")
    out = band
    for _ in range(int(np.log2(ratio))):
        out = _upsample2_exp(out)
    return out


def interpolate(band, cfg: WaldConfig) -> np.ndarray:
    if cfg.interpolation == "bicubic":
        return bicubic_interpolate(band, cfg.ratio)
    return exp_interpolate(band, cfg.ratio)


def degrade_band(band, cfg: WaldConfig, nyquist_gain: float | None = None) -> np.ndarray:
    return decimate(gaussian_lowpass(band, cfg, nyquist_gain), cfg.ratio)


def wald_degrade(hrms: MSImage, pan: PanImage, cfg: WaldConfig = WaldConfig()):
    """Build the reduced-resolution triple ``(lrms_interp, pan_low, reference)``.

    ``pan`` may be R times larger than ``hrms`` (a real acquisition), in
    which case it is low-passed and decimated onto the reference grid.  A
    PAN already on the reference grid (the synthetic generator's output)
    is taken as the working PAN unchanged.
    """
    r = cfg.ratio
    h, w = hrms.shape
    if h % r or w % r:
        raise ShapeError(f"MS {hrms.shape} is not divisible by ratio {r}")
    lrms_interp = np.stack([interpolate(degrade_band(b, cfg), cfg) for b in hrms.data])
    if pan.shape == (h * r, w * r):
        pan_low = degrade_band(pan.data, cfg, cfg.pan_nyquist_gain)
    elif pan.shape == (h, w):
        pan_low = pan.data
    else:
        raise ShapeError(f"PAN {pan.shape} matches neither MS {hrms.shape} nor R x MS")
    return (
        MSImage(lrms_interp, Role.LRMS_INTERP),
        PanImage(pan_low),
        hrms.with_role(Role.HRMS_REF),
    )
