"""Reduced-resolution quality indices: Q2^n, SAM, ERGAS and SCC.

Conventions fixed by this package:

* SAM is the mean per-pixel spectral angle in degrees, skipping pixels
  where either spectrum has (near) zero norm.
* ERGAS is ``100/R * sqrt(mean_b (RMSE_b / mu_b)^2)`` with ``mu_b`` the
  reference band mean.
* SCC high-passes both images with the 3x3 Laplacian
  ``[[-1,-1,-1],[-1,8,-1],[-1,-1,-1]]`` and averages the per-band Pearson
  correlation over interior pixels.
* Q2^n embeds each spectrum in a 2^k-dimensional Cayley-Dickson algebra
  and evaluates the universal quality index on distinct 32x32 blocks.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .raster import MSImage, ShapeError

LAPLACIAN = np.array([[-1.0, -1.0, -1.0], [-1.0, 8.0, -1.0], [-1.0, -1.0, -1.0]])
CSV_COLUMNS = ("method", "qx", "sam", "ergas", "scc", "seconds")


class MetricError(ValueError):
    pass


def _pair(fused, reference) -> tuple[np.ndarray, np.ndarray]:
    f = np.asarray(getattr(fused, "data", fused), dtype=np.float64)
    r = np.asarray(getattr(reference, "data", reference), dtype=np.float64)
    if f.shape != r.shape:
        raise ShapeError(f"fused {f.shape} vs reference {r.shape}")
    if f.ndim == 2:
        f, r = f[None], r[None]
    return f, r


def sam(fused, reference) -> float:
    """Mean spectral angle in degrees."""
    f, r = _pair(fused, reference)
    nf = np.sqrt(np.sum(f * f, axis=0))
    nr = np.sqrt(np.sum(r * r, axis=0))
    valid = (nf > 1e-12) & (nr > 1e-12)
    if not np.any(valid):
        raise MetricError("every pixel has a degenerate spectrum")
    # 2*atan2(|u-v|, |u+v|) on unit vectors; arccos loses ~1e-8 rad near 0
    u = f[:, valid] / nf[valid]
    v = r[:, valid] / nr[valid]
    angle = 2.0 * np.arctan2(np.sqrt(np.sum((u - v) ** 2, axis=0)),
                             np.sqrt(np.sum((u + v) ** 2, axis=0)))
    return float(np.degrees(np.mean(angle)))


def ergas(fused, reference, ratio: int = 4) -> float:
    f, r = _pair(fused, reference)
    mu = r.mean(axis=(1, 2))
    if np.any(np.abs(mu) < 1e-12):
        raise MetricError("ERGAS is undefined for a zero-mean reference band")
    rmse = np.sqrt(np.mean((f - r) ** 2, axis=(1, 2)))
    return float(100.0 / ratio * np.sqrt(np.mean((rmse / mu) ** 2)))


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    den = np.sqrt(np.sum(a * a) * np.sum(b * b))
    if den < 1e-300:
        raise MetricError("correlation of a zero-variance band")
    return float(np.sum(a * b) / den)


def scc(fused, reference) -> float:
    f, r = _pair(fused, reference)
    values = []
    for fb, rb in zip(f, r):
        hf = ndimage.correlate(fb, LAPLACIAN, mode="constant")[1:-1, 1:-1]
        hr = ndimage.correlate(rb, LAPLACIAN, mode="constant")[1:-1, 1:-1]
        values.append(_pearson(hf, hr))
    return float(np.mean(values))


# hypercomplex algebra ------------------------------------------------------

def hc_conj(a: np.ndarray) -> np.ndarray:
    out = -a
    out[..., 0] = a[..., 0]
    return out


def hc_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cayley-Dickson product along the last axis (length a power of 2).

    ``(p, q)(r, s) = (pr - s*q, sp + qr*)`` with ``*`` the conjugate.
    """
    n = a.shape[-1]
    if n == 1:
        return a * b
    h = n // 2
    p, q = a[..., :h], a[..., h:]
    r, s = b[..., :h], b[..., h:]
    left = hc_mul(p, r) - hc_mul(hc_conj(s), q)
    right = hc_mul(s, p) + hc_mul(q, hc_conj(r))
    return np.concatenate([left, right], axis=-1)


def _embed(x: np.ndarray) -> np.ndarray:
    """(bands, H, W) -> (H*W, 2^k) with zero padding of the extra components."""
    b = x.shape[0]
    dim = 1 << int(np.ceil(np.log2(b))) if b > 1 else 1
    flat = x.reshape(b, -1).T
    if dim > b:
        flat = np.concatenate([flat, np.zeros((flat.shape[0], dim - b))], axis=1)
    return flat


def q_block(x: np.ndarray, y: np.ndarray) -> float:
    """Hypercomplex UIQI of two embedded blocks ``(n_pixels, 2^k)``."""
    mx = x.mean(axis=0)
    my = y.mean(axis=0)
    dx = x - mx
    dy = y - my
    var_x = np.mean(np.sum(dx * dx, axis=1))
    var_y = np.mean(np.sum(dy * dy, axis=1))
    cov = hc_mul(dx, hc_conj(dy)).mean(axis=0)
    mx2 = float(np.sum(mx * mx))
    my2 = float(np.sum(my * my))
    lum_den = mx2 + my2
    con_den = var_x + var_y
    if con_den <= 1e-30:
        # flat blocks: only the luminance term is defined
        return 1.0 if lum_den <= 1e-30 else 2.0 * np.sqrt(mx2 * my2) / lum_den
    if lum_den <= 1e-30:
        return 2.0 * float(np.sqrt(np.sum(cov * cov))) / con_den
    return float(4.0 * np.sqrt(np.sum(cov * cov)) * np.sqrt(mx2 * my2) / (con_den * lum_den))


def q2n(fused, reference, block_size: int = 32, shift: int | None = None) -> float:
    """Q2^n averaged over blocks; distinct blocks unless ``shift`` < block size."""
    f, r = _pair(fused, reference)
    _, h, w = f.shape
    if h < block_size or w < block_size:
        raise MetricError(f"image {h}x{w} is smaller than one {block_size}x{block_size} block")
    shift = block_size if shift is None else shift
    values = []
    for i in range(0, h - block_size + 1, shift):
        for j in range(0, w - block_size + 1, shift):
            fb = _embed(f[:, i:i + block_size, j:j + block_size])
            rb = _embed(r[:, i:i + block_size, j:j + block_size])
            values.append(q_block(rb, fb))
    return float(np.mean(values))


@dataclass(frozen=True)
class QualityReport:
    qx: float
    sam_degrees: float
    ergas: float
    scc: float
    elapsed_seconds: float = 0.0

    def as_row(self, method: str) -> list:
        return [method, self.qx, self.sam_degrees, self.ergas, self.scc, self.elapsed_seconds]

    def as_dict(self) -> dict:
        return asdict(self)


def crop_border(x: np.ndarray, border: int) -> np.ndarray:
    if border <= 0:
        return x
    return x[..., border:-border, border:-border]


def evaluate(fused: MSImage, reference: MSImage, ratio: int = 4, border: int | None = None,
             block_size: int = 32, elapsed_seconds: float | None = None) -> QualityReport:
    """All four indices on the image minus an ``R``-pixel border.

    ``elapsed_seconds`` is the caller's timing of the method being assessed;
    when omitted, the metric computation itself is timed.
    """
    f, r = _pair(fused, reference)
    border = ratio if border is None else border
    f, r = crop_border(f, border), crop_border(r, border)
    start = time.perf_counter()
    report = dict(
        qx=q2n(f, r, block_size), sam_degrees=sam(f, r), ergas=ergas(f, r, ratio), scc=scc(f, r)
    )
    if elapsed_seconds is None:
        elapsed_seconds = time.perf_counter() - start
    return QualityReport(elapsed_seconds=elapsed_seconds, **report)
