"""In-memory raster containers and band-wise arithmetic.

Images are stored planar (band-sequential) as float64 arrays of shape
``(bands, H, W)``; a PAN image is a single ``(H, W)`` plane.  Arrays are
copied on construction and flagged read-only so every container is
immutable and safe to share between threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

# 11-bit sensors (WorldView-2, IKONOS, Quickbird)
RADIOMETRIC_MAX_11BIT = 2047.0


class ShapeError(ValueError):
    """Raised when image dimensions or band counts do not line up."""


class Role(str, Enum):
    LRMS_INTERP = "LRMS_interp"
    HRMS_PRED = "HRMS_pred"
    HRMS_REF = "HRMS_ref"
    CONCAT_INPUT = "concat_input"


def as_band(values) -> np.ndarray:
    """Validate a single raster band and return a read-only float64 copy."""
    band = np.array(values, dtype=np.float64)
    if band.ndim != 2:
        raise ShapeError(f"a band must be 2-D, got shape {band.shape}")
    if band.shape[0] < 1 or band.shape[1] < 1:
        raise ShapeError(f"a band needs H, W >= 1, got {band.shape}")
    if not np.all(np.isfinite(band)):
        raise ValueError("band contains non-finite samples")
    band.setflags(write=False)
    return band


def _as_stack(values, allow_empty: bool = False) -> np.ndarray:
    data = np.array(values, dtype=np.float64)
    if data.ndim == 2:
        data = data[None]
    if data.ndim != 3:
        raise ShapeError(f"expected (bands, H, W), got shape {data.shape}")
    if data.shape[0] < 1 and not allow_empty:
        raise ShapeError("an image needs at least one band")
    if data.shape[1] < 1 or data.shape[2] < 1:
        raise ShapeError(f"bands need H, W >= 1, got {data.shape[1:]}")
    if not np.all(np.isfinite(data)):
        raise ValueError("image contains non-finite samples")
    data.setflags(write=False)
    return data


@dataclass(frozen=True, eq=False)
class MSImage:
    """Multispectral raster, ``data`` has shape ``(N_b, H, W)``."""

    data: np.ndarray
    role: Role = Role.HRMS_REF

    def __post_init__(self):
        object.__setattr__(self, "data", _as_stack(self.data))
        object.__setattr__(self, "role", Role(self.role))

    @property
    def n_bands(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[1:]

    def band(self, b: int) -> np.ndarray:
        return self.data[b]

    def with_role(self, role: Role) -> "MSImage":
        return MSImage(self.data, role)

    def select_bands(self, indices) -> "MSImage":
        return MSImage(self.data[list(indices)], self.role)


@dataclass(frozen=True, eq=False)
class PanImage:
    """Single-band panchromatic raster, ``data`` has shape ``(H, W)``."""

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", as_band(self.data))

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True, eq=False)
class DetailImage:
    """Signed detail planes; one band for PAN details, N_b for MS details."""

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _as_stack(self.data))

    @property
    def n_bands(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[1:]


def concat_with_pan(ms: MSImage, pan: PanImage) -> MSImage:
    """Stack the PAN plane after the MS bands (the CNN input ``G``)."""
    if ms.shape != pan.shape:
        raise ShapeError(f"MS is {ms.shape} but PAN is {pan.shape}")
    return MSImage(np.concatenate([ms.data, pan.data[None]]), Role.CONCAT_INPUT)


def split_concat(g: MSImage) -> tuple[MSImage, PanImage]:
    """Inverse of :func:`concat_with_pan`."""
    if g.n_bands < 2:
        raise ShapeError("a concatenated image has at least two bands")
    return MSImage(g.data[:-1], Role.LRMS_INTERP), PanImage(g.data[-1])


def add_details(ms: MSImage, details: DetailImage) -> MSImage:
    """Inject details into the interpolated MS: ``M_hat_b = M_tilde_b + D_b``.

    Summation is a single element-wise ``ms + details`` per pixel and band;
    chaining two calls therefore rounds twice, once per addition.
    """
    if details.n_bands != ms.n_bands or details.shape != ms.shape:
        raise ShapeError(
            f"details {details.data.shape} do not match MS {ms.data.shape}"
        )
    return MSImage(ms.data + details.data, Role.HRMS_PRED)


@dataclass(frozen=True)
class BandStats:
    mean: float
    std: float
    min: float
    max: float


def band_stats(img: MSImage) -> list[BandStats]:
    """Per-band mean, population standard deviation, min and max."""
    out = []
    for band in img.data:
        out.append(
            BandStats(
                mean=float(band.mean()),
                std=float(band.std()),
                min=float(band.min()),
                max=float(band.max()),
            )
        )
    return out


def scale_11bit(dn) -> np.ndarray:
    """Map raw 11-bit digital numbers onto [0, 1]."""
    return np.asarray(dn, dtype=np.float64) / RADIOMETRIC_MAX_11BIT
