"""Minutia descriptors from Gabor magnitudes at nine minutia-aligned points.

Coordinate convention (used everywhere in the package): ``x`` grows to the
right, ``y`` grows downward, and a direction ``theta`` corresponds to the
unit vector ``(cos theta, sin theta)`` in pixel coordinates.
"""

from __future__ import annotations

import enum
import functools
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EmptyTemplateError, FormatError, OutOfBoundsError, ParameterError
from .imaging import CANONICAL_DPI, EnhanceParams, GrayImage, enhance

log = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
N_SAMPLING_POINTS = 9


class MinutiaKind(str, enum.Enum):
    RIDGE_ENDING = "E"
    BIFURCATION = "B"
    UNKNOWN = "U"


@dataclass(frozen=True)
class Minutia:
    x: float
    y: float
    theta: float
    kind: MinutiaKind = MinutiaKind.UNKNOWN

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.theta)):
            raise ParameterError(f"non-finite minutia {self.x}, {self.y}, {self.theta}")
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(self.theta))
        object.__setattr__(self, "kind", MinutiaKind(self.kind))


def wrap_angle(theta: float) -> float:
    """Map an angle to ``[0, 2*pi)``."""
    t = math.fmod(float(theta), TWO_PI)
    if t < 0:
        t += TWO_PI
    if t >= TWO_PI:  # fmod of tiny negatives can round up to 2*pi
        t = 0.0
    return t


@dataclass(frozen=True)
class GaborBankParams:
    frequencies: tuple[float, ...] = (1 / 6, 1 / 8, 1 / 10, 1 / 12, 1 / 14)
    n_orientations: int = 8
    ring_radius: float = 25.0
    # envelope sigma = bandwidth / f  (0.56 ~ one octave)
    bandwidth: float = 0.56
    # kernel support radius in units of the widest envelope sigma
    support: float = 3.0

    def validate(self) -> None:
        if not self.frequencies or any(not 0 < f < 0.5 for f in self.frequencies):
            raise ParameterError("frequencies must lie in (0, 0.5) cycles/px")
        if self.n_orientations < 1:
            raise ParameterError("n_orientations must be >= 1")
        if not self.ring_radius > 0:
            raise ParameterError("ring_radius must be positive")
        if not self.bandwidth > 0 or not self.support > 0:
            raise ParameterError("bandwidth and support must be positive")

    @property
    def feature_length(self) -> int:
        return N_SAMPLING_POINTS * len(self.frequencies) * self.n_orientations


@dataclass(frozen=True, eq=False)
class GaborBank:
    """Precomputed complex kernels on a disk of sample offsets.

    Offsets ``(u, v)`` live in the minutia frame: ``u`` along the minutia
    direction, ``v`` perpendicular to it.  Orientation ``l`` of the bank is
    the angle ``l * pi / n_orientations`` in that frame.
    """

    params: GaborBankParams
    radius: int
    u: np.ndarray
    v: np.ndarray
    kernels: np.ndarray  # (n_freq * n_orient, n_samples) complex
    stacked: np.ndarray  # (n_samples, 2 * n_kernels) real and imaginary parts

    def magnitudes(self, patches: np.ndarray) -> np.ndarray:
        """Moduli of every kernel's response on each row of ``patches``."""
        r = patches @ self.stacked
        nk = len(self.kernels)
        return np.hypot(r[:, :nk], r[:, nk:])

    @classmethod
    @functools.lru_cache(maxsize=8)
    def build(cls, params: GaborBankParams) -> "GaborBank":
        params.validate()
        sigmas = [params.bandwidth / f for f in params.frequencies]
        radius = int(math.ceil(params.support * max(sigmas)))
        grid = np.arange(-radius, radius + 1, dtype=np.float64)
        vv, uu = np.meshgrid(grid, grid, indexing="ij")
        inside = uu ** 2 + vv ** 2 <= radius ** 2
        u, v = uu[inside], vv[inside]
        rows = []
        for f, sigma in zip(params.frequencies, sigmas):
            env = np.exp(-(u ** 2 + v ** 2) / (2.0 * sigma ** 2))
            dc = math.exp(-2.0 * (math.pi * f * sigma) ** 2)
            for l in range(params.n_orientations):
                phi = l * math.pi / params.n_orientations
                carrier = np.exp(1j * TWO_PI * f * (u * math.cos(phi) + v * math.sin(phi)))
                rows.append(env * (carrier - dc) / env.sum())
        kernels = np.array(rows)
        stacked = np.ascontiguousarray(np.concatenate([kernels.real, kernels.imag]).T)
        for a in (u, v, kernels, stacked):
            a.setflags(write=False)
        return cls(params, radius, u, v, kernels, stacked)


def sampling_points(m: Minutia, radius: float) -> list[tuple[float, float]]:
    """Centre point followed by 8 ring points at ``theta + k*pi/4``."""
    if not radius > 0:
        raise ParameterError("radius must be positive")
    pts = [(m.x, m.y)]
    for k in range(8):
        a = m.theta + k * math.pi / 4
        pts.append((m.x + radius * math.cos(a), m.y + radius * math.sin(a)))
    return pts


# points per block; keeps the (block, samples) temporaries cache-resident
_CHUNK = 32


def _responses(values: np.ndarray, points: np.ndarray, thetas: np.ndarray, bank: GaborBank) -> np.ndarray:
    """Kernel moduli at each point, sampled on its rotated disk, shape (P, n_kernels)."""
    basis = np.vstack([np.ones_like(bank.u), bank.u, bank.v])
    c, s = np.cos(thetas), np.sin(thetas)
    out = np.empty((len(points), len(bank.kernels)))
    for i in range(0, len(points), _CHUNK):
        sl = slice(i, i + _CHUNK)
        xs = np.column_stack([points[sl, 0], c[sl], -s[sl]]) @ basis
        ys = np.column_stack([points[sl, 1], s[sl], c[sl]]) @ basis
        out[sl] = bank.magnitudes(bilinear(values, xs, ys))
    return out


def bilinear(values: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear interpolation at coordinates inside ``[0, w-1) x [0, h-1)``."""
    w = values.shape[1]
    x0 = xs.astype(np.intp)
    y0 = ys.astype(np.intp)
    fx = xs - x0
    fy = ys - y0
    flat = values.ravel()
    i = y0 * w + x0
    a, b, c, d = flat[i], flat[i + 1], flat[i + w], flat[i + w + 1]
    top = a + (b - a) * fx
    bot = c + (d - c) * fx
    return top + (bot - top) * fy


def _ring_points(minutiae: Sequence[Minutia], radius: float) -> tuple[np.ndarray, np.ndarray]:
    pts = np.array([sampling_points(m, radius) for m in minutiae], dtype=np.float64)
    thetas = np.repeat([m.theta for m in minutiae], N_SAMPLING_POINTS)
    return pts.reshape(-1, 2), thetas


def _out_of_bounds(pts: np.ndarray, shape: tuple[int, int], radius: int) -> np.ndarray:
    """True where a point's kernel support is not strictly inside the image."""
    h, w = shape
    x, y = pts[:, 0], pts[:, 1]
    return (x - radius < 0) | (x + radius >= w - 1) | (y - radius < 0) | (y + radius >= h - 1)


def gabor_feature(values: np.ndarray, m: Minutia, bank_params: GaborBankParams | None = None) -> np.ndarray:
    """Gabor magnitudes for one minutia, laid out ``point*40 + freq*8 + orient``."""
    bank = GaborBank.build(bank_params or GaborBankParams())
    values = np.asarray(values, dtype=np.float64)
    pts, thetas = _ring_points([m], bank.params.ring_radius)
    bad = np.flatnonzero(_out_of_bounds(pts, values.shape, bank.radius))
    if bad.size:
        raise OutOfBoundsError(int(bad[0]))
    return _responses(values, pts, thetas, bank).ravel()


def gabor_features(values: np.ndarray, minutiae: Sequence[Minutia], bank_params: GaborBankParams | None = None):
    """Vectorized :func:`gabor_feature` over many minutiae.

    Returns ``(features, kept, skipped)`` where ``features`` has one row per
    kept minutia and ``kept``/``skipped`` are index lists into ``minutiae``.
    """
    bank = GaborBank.build(bank_params or GaborBankParams())
    values = np.asarray(values, dtype=np.float64)
    n_feat = bank.params.feature_length
    if not minutiae:
        return np.empty((0, n_feat)), [], []
    pts, thetas = _ring_points(minutiae, bank.params.ring_radius)
    bad = _out_of_bounds(pts, values.shape, bank.radius).reshape(len(minutiae), N_SAMPLING_POINTS).any(axis=1)
    kept = [i for i in range(len(minutiae)) if not bad[i]]
    skipped = [i for i in range(len(minutiae)) if bad[i]]
    if not kept:
        return np.empty((0, n_feat)), kept, skipped
    sel = np.repeat(~bad, N_SAMPLING_POINTS)
    mags = _responses(values, pts[sel], thetas[sel], bank)
    return mags.reshape(len(kept), n_feat), kept, skipped


@dataclass(frozen=True, eq=False)
class DescriptorTransform:
    """Affine map ``(feature - mean) @ matrix`` from Gabor space to descriptors."""

    matrix: np.ndarray
    mean: np.ndarray | None = None
    provenance: str = "trained"
    version: int = 1

    def __post_init__(self):
        mat = np.array(self.matrix, dtype=np.float64)
        if mat.ndim != 2:
            raise ParameterError(f"transform matrix must be 2-D, got shape {mat.shape}")
        mean = np.zeros(mat.shape[0]) if self.mean is None else np.array(self.mean, dtype=np.float64)
        if mean.shape != (mat.shape[0],):
            raise ParameterError(f"mean length {mean.shape} does not match {mat.shape[0]} rows")
        if not (np.all(np.isfinite(mat)) and np.all(np.isfinite(mean))):
            raise ParameterError("transform entries must be finite")
        if self.provenance not in ("trained", "loaded"):
            raise ParameterError(f"unknown provenance {self.provenance!r}")
        mat.setflags(write=False)
        mean.setflags(write=False)
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "mean", mean)

    @property
    def in_dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def out_dim(self) -> int:
        return self.matrix.shape[1]


def project(features: np.ndarray, t: DescriptorTransform) -> np.ndarray:
    """Apply the descriptor transform to one feature or a stack of them."""
    f = np.asarray(features, dtype=np.float64)
    if f.shape[-1] != t.in_dim:
        raise ParameterError(f"feature length {f.shape[-1]} does not match transform ({t.in_dim} rows)")
    return (f - t.mean) @ t.matrix


@dataclass(frozen=True)
class FeatureParams:
    enhance: EnhanceParams = field(default_factory=EnhanceParams)
    gabor: GaborBankParams = field(default_factory=GaborBankParams)


@dataclass
class DescribeResult:
    descriptors: np.ndarray
    kept: list[int]
    skipped: list[int]


def to_canonical(img: GrayImage, minutiae: Sequence[Minutia]) -> list[Minutia]:
    """Scale minutia positions along with a rescale of ``img`` to 500 dpi."""
    if math.isclose(img.resolution_dpi, CANONICAL_DPI):
        return list(minutiae)
    s = CANONICAL_DPI / img.resolution_dpi
    return [Minutia(m.x * s, m.y * s, m.theta, m.kind) for m in minutiae]


def extract_features(img: GrayImage, minutiae: Sequence[Minutia], params: FeatureParams | None = None):
    """Enhance the image and compute raw Gabor features (no projection)."""
    params = params or FeatureParams()
    values = enhance(img, params.enhance)
    return gabor_features(values, to_canonical(img, minutiae), params.gabor)


def describe_all(img: GrayImage, minutiae: Sequence[Minutia], t: DescriptorTransform,
                 params: FeatureParams | None = None) -> DescribeResult:
    if not minutiae:
        raise EmptyTemplateError("no minutiae supplied")
    feats, kept, skipped = extract_features(img, minutiae, params)
    if skipped:
        log.debug("skipped %d minutiae near the border: %s", len(skipped), skipped)
    if not kept:
        raise EmptyTemplateError(f"all {len(minutiae)} minutiae are too close to the image border")
    return DescribeResult(project(feats, t), kept, skipped)


# -- FPMIN text format -------------------------------------------------------

def format_minutia(m: Minutia) -> str:
    return f"{m.x!r} {m.y!r} {m.theta!r} {m.kind.value}"


def parse_minutia(line: str, where: str) -> Minutia:
    parts = line.split()
    if len(parts) != 4:
        raise FormatError(f"{where}: expected 'x y theta kind', got {line.strip()!r}")
    if parts[3] not in ("E", "B", "U"):
        raise FormatError(f"{where}: unknown minutia kind {parts[3]!r}, expected E, B or U")
    try:
        return Minutia(float(parts[0]), float(parts[1]), float(parts[2]), MinutiaKind(parts[3]))
    except (ValueError, ParameterError) as exc:
        raise FormatError(f"{where}: {exc}") from exc


def write_minutiae(path: str | os.PathLike, minutiae: Sequence[Minutia]) -> None:
    lines = [f"FPMIN 1 {len(minutiae)}"] + [format_minutia(m) for m in minutiae]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_minutiae(path: str | os.PathLike) -> list[Minutia]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: not UTF-8 text") from exc
    lines = [ln for ln in lines if ln.strip()]
    if not lines:
        raise FormatError(f"{path}: empty minutiae file")
    head = lines[0].split()
    if len(head) != 3 or head[0] != "FPMIN" or head[1] != "1" or not head[2].isdigit():
        raise FormatError(f"{path}: bad header {lines[0]!r}, expected 'FPMIN 1 <count>'")
    count = int(head[2])
    body = lines[1:]
    if len(body) != count:
        raise FormatError(f"{path}: header declares {count} minutiae, found {len(body)}")
    return [parse_minutia(ln, f"{path}:{i + 2}") for i, ln in enumerate(body)]
