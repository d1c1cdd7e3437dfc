"""Header + payload raster format and 8-bit PNG export.

A raster on disk is two files: a UTF-8 ``key=value`` header and a raw
payload of little-endian float32 samples, band-sequential, row-major
within each band.  Example header::

    height=256
    width=256
    bands=8
    sample_format=f32le
    layout=bsq
    role=HRMS_ref
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .raster import MSImage, PanImage, Role, ShapeError

SAMPLE_FORMAT = "f32le"
LAYOUT = "bsq"
PAN_ROLE = "pan"
_DTYPE = np.dtype("<f4")


class RasterFormatError(ValueError):
    pass


def parse_header(text: str) -> dict:
    fields = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise RasterFormatError(f"header line {lineno} has no '=': {line!r}")
        key, value = line.split("=", 1)
        fields[key.strip()] = value.strip()
    try:
        header = {
            "height": int(fields["height"]),
            "width": int(fields["width"]),
            "bands": int(fields["bands"]),
        }
    except KeyError as exc:
        raise RasterFormatError(f"header is missing {exc.args[0]!r}") from None
    except ValueError as exc:
        raise RasterFormatError(f"bad integer in header: {exc}") from None
    if min(header.values()) < 1:
        raise RasterFormatError(f"dimensions must be positive: {header}")
    if fields.get("sample_format", SAMPLE_FORMAT) != SAMPLE_FORMAT:
        raise RasterFormatError(f"unsupported sample_format {fields['sample_format']!r}")
    if fields.get("layout", LAYOUT) != LAYOUT:
        raise RasterFormatError(f"unsupported layout {fields['layout']!r}")
    header["role"] = fields.get("role")
    return header


def format_header(height: int, width: int, bands: int, role: str | None = None) -> str:
    lines = [
        f"height={height}",
        f"width={width}",
        f"bands={bands}",
        f"sample_format={SAMPLE_FORMAT}",
        f"layout={LAYOUT}",
    ]
    if role:
        lines.append(f"role={role}")
    return "\n".join(lines) + "\n"


def default_payload_path(header_path) -> Path:
    return Path(header_path).with_suffix(".raw")


def read_raster(header_path, payload_path=None) -> MSImage | PanImage:
    """Load a raster written by :func:`write_raster`.

    Single-band rasters with role ``pan`` (or no role) come back as a
    :class:`PanImage`, everything else as an :class:`MSImage`.
    """
    header_path = Path(header_path)
    payload_path = Path(payload_path) if payload_path else default_payload_path(header_path)
    header = parse_header(header_path.read_text(encoding="utf-8"))
    h, w, b = header["height"], header["width"], header["bands"]
    raw = payload_path.read_bytes()
    expected = h * w * b * _DTYPE.itemsize
    if len(raw) != expected:
        raise RasterFormatError(
            f"payload {payload_path} has {len(raw)} bytes, header implies {expected}"
        )
    data = np.frombuffer(raw, dtype=_DTYPE).astype(np.float64).reshape(b, h, w)
    if not np.all(np.isfinite(data)):
        raise RasterFormatError(f"payload {payload_path} contains non-finite samples")
    role = header["role"]
    if b == 1 and role in (None, PAN_ROLE):
        return PanImage(data[0])
    return MSImage(data, Role(role) if role else Role.HRMS_REF)


def write_raster(img: MSImage | PanImage, header_path, payload_path=None) -> tuple[Path, Path]:
    header_path = Path(header_path)
    payload_path = Path(payload_path) if payload_path else default_payload_path(header_path)
    if isinstance(img, PanImage):
        data, role = img.data[None], PAN_ROLE
    else:
        data, role = img.data, img.role.value
    if data.shape[0] < 1:
        raise ShapeError("cannot write a zero-band image")
    b, h, w = data.shape
    header_path.write_text(format_header(h, w, b, role), encoding="utf-8")
    payload_path.write_bytes(np.ascontiguousarray(data, dtype=_DTYPE).tobytes())
    return header_path, payload_path


def stretch_to_uint8(band: np.ndarray, low_pct: float = 2.0, high_pct: float = 98.0) -> np.ndarray:
    """Linear percentile stretch onto 0..255; flat bands map to mid-gray 128."""
    lo, hi = np.percentile(band, [low_pct, high_pct])
    if not hi > lo:
        return np.full(band.shape, 128, dtype=np.uint8)
    scaled = (band - lo) / (hi - lo) * 255.0
    return np.clip(np.rint(scaled), 0, 255).astype(np.uint8)


def export_png(img: MSImage, path, bands=(0, 1, 2)) -> Path:
    """Write an RGB composite of three bands with a 2%-98% stretch."""
    bands = tuple(bands)
    if len(bands) != 3:
        raise ValueError(f"need exactly three band indices, got {bands}")
    for b in bands:
        if not 0 <= b < img.n_bands:
            raise IndexError(f"band {b} out of range for {img.n_bands}-band image")
    rgb = np.stack([stretch_to_uint8(img.data[b]) for b in bands], axis=-1)
    path = Path(path)
    Image.fromarray(rgb).save(path)
    return path
