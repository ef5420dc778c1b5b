"""Grayscale image container, PGM I/O and ridge enhancement.

Enhancement is a difference-of-Gaussians band-pass followed by local
mean/variance normalization.  Enhanced images are plain 2-D ``float64``
arrays (row-major, ``values[y, x]``).
"""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import FormatError, ParameterError

CANONICAL_DPI = 500.0
MIN_PIPELINE_SIZE = 64


@dataclass(frozen=True)
class GrayImage:
    """8-bit grayscale image; ``pixels`` has shape ``(height, width)``."""

    pixels: np.ndarray
    resolution_dpi: float = CANONICAL_DPI

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2:
            raise ParameterError(f"pixels must be 2-D, got shape {px.shape}")
        if px.dtype != np.uint8:
            if np.any(px < 0) or np.any(px > 255):
                raise ParameterError("pixel values must lie in [0, 255]")
            px = px.astype(np.uint8)
        if not self.resolution_dpi > 0:
            raise ParameterError("resolution_dpi must be positive")
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class EnhanceParams:
    sigma_narrow: float = 1.0
    sigma_wide: float = 4.0
    window: int = 15
    eps: float = 1e-6

    def validate(self) -> None:
        if not 0 < self.sigma_narrow < self.sigma_wide:
            raise ParameterError(
                f"need 0 < sigma_narrow < sigma_wide, got {self.sigma_narrow}, {self.sigma_wide}"
            )
        _check_window(self.window)
        if not self.eps > 0:
            raise ParameterError("eps must be positive")


def _check_window(window: int) -> None:
    if int(window) != window or window < 3 or window % 2 == 0:
        raise ParameterError(f"window must be an odd integer >= 3, got {window}")


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian with radius ``ceil(3 * sigma)``."""
    radius = int(math.ceil(3.0 * sigma))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(values: np.ndarray, sigma: float) -> np.ndarray:
    k = gaussian_kernel(sigma)
    out = ndimage.correlate1d(values, k, axis=0, mode="reflect")
    return ndimage.correlate1d(out, k, axis=1, mode="reflect")


def dog_filter(img, sigma_narrow: float, sigma_wide: float) -> np.ndarray:
    """Difference of two Gaussian blurs (narrow minus wide).

    ``img`` may be a :class:`GrayImage` or any 2-D array.  Borders use
    half-sample symmetric reflection.
    """
    if not 0 < sigma_narrow < sigma_wide:
        raise ParameterError(
            f"need 0 < sigma_narrow < sigma_wide, got {sigma_narrow}, {sigma_wide}"
        )
    values = _as_float(img)
    return gaussian_blur(values, sigma_narrow) - gaussian_blur(values, sigma_wide)


def local_normalize(values: np.ndarray, window: int = 15, eps: float = 1e-6) -> np.ndarray:
    """Subtract the local mean and divide by the local standard deviation.

    Statistics are taken over a ``window x window`` neighbourhood with
    reflect padding.  A window covering the whole image in both directions
    falls back to global standardization.
    """
    _check_window(window)
    if not eps > 0:
        raise ParameterError("eps must be positive")
    x = _as_float(values)
    # shift first: keeps E[x^2] - E[x]^2 well conditioned
    x = x - x.mean()
    h, w = x.shape
    if window >= h and window >= w:
        mu = x.mean()
        sd = x.std()
        return (x - mu) / max(sd, eps)
    box = np.full(window, 1.0 / window)
    mu = ndimage.correlate1d(ndimage.correlate1d(x, box, axis=0, mode="reflect"), box, axis=1, mode="reflect")
    sq = ndimage.correlate1d(ndimage.correlate1d(x * x, box, axis=0, mode="reflect"), box, axis=1, mode="reflect")
    sd = np.sqrt(np.maximum(sq - mu * mu, 0.0))
    return (x - mu) / np.maximum(sd, eps)


def rescale_to_dpi(img: GrayImage, target_dpi: float = CANONICAL_DPI) -> GrayImage:
    """Bilinear resampling so that the image has ``target_dpi`` resolution."""
    if math.isclose(img.resolution_dpi, target_dpi):
        return img
    scale = target_dpi / img.resolution_dpi
    out = ndimage.zoom(img.pixels.astype(np.float64), scale, order=1, mode="nearest")
    return GrayImage(np.clip(np.rint(out), 0, 255).astype(np.uint8), target_dpi)


def enhance(img: GrayImage, params: EnhanceParams | None = None) -> np.ndarray:
    params = params or EnhanceParams()
    params.validate()
    img = rescale_to_dpi(img)
    band = dog_filter(img, params.sigma_narrow, params.sigma_wide)
    return local_normalize(band, params.window, params.eps)


def _as_float(img) -> np.ndarray:
    values = img.pixels if isinstance(img, GrayImage) else img
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ParameterError(f"expected a 2-D image, got shape {values.shape}")
    return values


# -- PGM ---------------------------------------------------------------------

_PGM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*([^\s#]+)")


def read_pgm(path: str | os.PathLike, dpi: float = CANONICAL_DPI) -> GrayImage:
    """Read a binary (P5) 8-bit PGM file."""
    data = Path(path).read_bytes()
    pos = 0
    fields = []
    for _ in range(4):
        m = _PGM_TOKEN.match(data, pos)
        if m is None:
            raise FormatError(f"{path}: truncated PGM header")
        fields.append(m.group(1))
        pos = m.end()
    if fields[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (magic {fields[0][:8]!r})")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError as exc:
        raise FormatError(f"{path}: bad PGM header") from exc
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 is supported, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    body = data[pos:pos + width * height]
    if len(body) != width * height:
        raise FormatError(f"{path}: expected {width * height} pixel bytes, found {len(body)}")
    pixels = np.frombuffer(body, dtype=np.uint8).reshape(height, width).copy()
    return GrayImage(pixels, dpi)


def write_pgm(path: str | os.PathLike, img: GrayImage) -> None:
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + np.ascontiguousarray(img.pixels).tobytes())
