"""Deterministic synthetic fingerprints with known minutiae.

Ridges are rendered as ``cos(2*pi*phase)``.  The phase is a smooth field
(arcs around a far-away centre, gently warped, scaled by the ridge period)
plus one spiral term ``+-atan2(dy, dx) / 2*pi`` per minutia; each spiral
adds or removes one ridge, which creates a ridge ending or bifurcation at
its centre.  Impressions re-render the same analytic pattern under a rigid
motion, so no resampling error is introduced.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .descriptor import Minutia, MinutiaKind
from .imaging import GrayImage
from .template import RigidTransform

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class FingerConfig:
    size: int = 320
    min_minutiae: int = 15
    max_minutiae: int = 60
    period_range: tuple[float, float] = (7.0, 12.0)
    # minutiae are placed in [margin, size - margin]^2
    margin: float = 70.0
    min_separation: float = 14.0
    contrast: float = 90.0


@dataclass(frozen=True)
class ImpressionConfig:
    max_rotation: float = math.radians(15.0)
    max_translation: float = 20.0
    noise_sigma: float = 12.0
    contrast_jitter: float = 0.15
    brightness_jitter: float = 15.0
    position_jitter: float = 2.0
    angle_jitter: float = math.radians(5.0)
    drop_fraction: float = 0.10
    spurious_fraction: float = 0.05

    @classmethod
    def identity(cls) -> "ImpressionConfig":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True, eq=False)
class RidgeParams:
    period: float
    center: tuple[float, float]
    warp_amplitude: tuple[float, float]
    warp_wavelength: tuple[float, float]
    warp_phase: tuple[float, float]
    spirals: np.ndarray  # (n, 3): x, y, polarity (+1 / -1)


@dataclass(frozen=True, eq=False)
class SyntheticFinger:
    seed: int
    ground_truth_minutiae: tuple[Minutia, ...]
    ridge_params: RidgeParams
    config: FingerConfig = field(default_factory=FingerConfig)

    def smooth_phase(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        rp = self.ridge_params
        wx = x + rp.warp_amplitude[0] * np.sin(TWO_PI * y / rp.warp_wavelength[0] + rp.warp_phase[0])
        wy = y + rp.warp_amplitude[1] * np.sin(TWO_PI * x / rp.warp_wavelength[1] + rp.warp_phase[1])
        return np.hypot(wx - rp.center[0], wy - rp.center[1]) / rp.period

    def phase(self, x: np.ndarray, y: np.ndarray, skip: int | None = None) -> np.ndarray:
        ph = self.smooth_phase(x, y)
        for i, (sx, sy, pol) in enumerate(self.ridge_params.spirals):
            if i != skip:
                ph = ph + pol * np.arctan2(y - sy, x - sx) / TWO_PI
        return ph

    def render(self, transform: RigidTransform | None = None) -> np.ndarray:
        """Noise-free float image; ``transform`` maps finger to image coordinates."""
        n = self.config.size
        yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
        if transform is not None:
            inv = _inverse(transform)
            src = inv.apply_xy(np.column_stack([xx.ravel(), yy.ravel()]))
            xx, yy = src[:, 0].reshape(n, n), src[:, 1].reshape(n, n)
        return 128.0 + self.config.contrast * np.cos(TWO_PI * self.phase(xx, yy))

    def base_image(self) -> GrayImage:
        return GrayImage(_quantize(self.render()))


@dataclass(frozen=True, eq=False)
class Impression:
    image: GrayImage
    minutiae: list[Minutia]
    gt_ids: list[int]  # index into ground_truth_minutiae, -1 for spurious
    transform: RigidTransform


def _inverse(t: RigidTransform) -> RigidTransform:
    c, s = math.cos(t.rotation), math.sin(t.rotation)
    return RigidTransform(-t.rotation, -(c * t.tx + s * t.ty), -(-s * t.tx + c * t.ty))


def _quantize(values: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(values), 0, 255).astype(np.uint8)


def _place_points(rng: np.random.Generator, n: int, cfg: FingerConfig) -> np.ndarray:
    lo, hi = cfg.margin, cfg.size - cfg.margin
    pts: list[tuple[float, float]] = []
    attempts = 0
    while len(pts) < n and attempts < 200 * n:
        attempts += 1
        p = rng.uniform(lo, hi, size=2)
        if all(math.hypot(p[0] - q[0], p[1] - q[1]) >= cfg.min_separation for q in pts):
            pts.append((float(p[0]), float(p[1])))
    return np.array(pts)


def gen_finger(seed: int, config: FingerConfig | None = None) -> SyntheticFinger:
    cfg = config or FingerConfig()
    rng = np.random.default_rng([seed, 0x5EED])
    period = rng.uniform(*cfg.period_range)
    mid = cfg.size / 2.0
    # centre of curvature outside the print area -> curved, non-circular ridges
    dist = rng.uniform(140.0, 450.0)
    ang = rng.uniform(0.0, TWO_PI)
    center = (mid + dist * math.cos(ang), mid + dist * math.sin(ang))
    warp_amp = tuple(rng.uniform(0.0, 4.0, size=2))
    warp_len = tuple(rng.uniform(280.0, 420.0, size=2))
    warp_phase = tuple(rng.uniform(0.0, TWO_PI, size=2))

    n_target = int(rng.integers(cfg.min_minutiae, cfg.max_minutiae + 1))
    pts = _place_points(rng, n_target, cfg)
    pol = np.where(np.arange(len(pts)) % 2 == 0, 1.0, -1.0)
    rng.shuffle(pol)
    spirals = np.column_stack([pts, pol]) if len(pts) else np.empty((0, 3))
    rp = RidgeParams(period, center, warp_amp, warp_len, warp_phase, spirals)
    finger = SyntheticFinger(seed, (), rp, cfg)

    minutiae = []
    h = 0.5
    for i, (x, y, p) in enumerate(spirals):
        gx = (finger.phase(np.array(x + h), np.array(y), skip=i) - finger.phase(np.array(x - h), np.array(y), skip=i)) / (2 * h)
        gy = (finger.phase(np.array(x), np.array(y + h), skip=i) - finger.phase(np.array(x), np.array(y - h), skip=i)) / (2 * h)
        theta = math.atan2(float(gx), float(-gy))  # ridge tangent (-gy, gx)
        if p < 0:
            theta += math.pi
        kind = MinutiaKind.RIDGE_ENDING if p > 0 else MinutiaKind.BIFURCATION
        minutiae.append(Minutia(x, y, theta, kind))
    return SyntheticFinger(seed, tuple(minutiae), rp, cfg)


def gen_impression(f: SyntheticFinger, seed: int, config: ImpressionConfig | None = None) -> Impression:
    cfg = config or ImpressionConfig()
    rng = np.random.default_rng([f.seed, seed, 0x1A9])
    n = f.config.size
    mid = n / 2.0
    rot = rng.uniform(-cfg.max_rotation, cfg.max_rotation)
    shift = rng.uniform(-cfg.max_translation, cfg.max_translation, size=2)
    c, s = math.cos(rot), math.sin(rot)
    # rotate about the image centre, then shift
    tr = RigidTransform(rot, mid - (c * mid - s * mid) + shift[0], mid - (s * mid + c * mid) + shift[1])

    values = f.render(tr if cfg.max_rotation or cfg.max_translation else None)
    gain = 1.0 + rng.uniform(-cfg.contrast_jitter, cfg.contrast_jitter)
    offset = rng.uniform(-cfg.brightness_jitter, cfg.brightness_jitter)
    values = 128.0 + gain * (values - 128.0) + offset
    if cfg.noise_sigma > 0:
        values = values + rng.normal(0.0, cfg.noise_sigma, size=values.shape)
    image = GrayImage(_quantize(values))

    gt = list(f.ground_truth_minutiae)
    n_drop = int(rng.integers(0, int(math.floor(cfg.drop_fraction * len(gt))) + 1))
    dropped = set(rng.choice(len(gt), size=n_drop, replace=False).tolist()) if n_drop else set()
    minutiae, ids = [], []
    for i, m in enumerate(gt):
        jx, jy = _disk_jitter(rng, cfg.position_jitter)
        ja = rng.uniform(-cfg.angle_jitter, cfg.angle_jitter)
        if i in dropped:
            continue
        mm = tr.apply(m)
        minutiae.append(Minutia(mm.x + jx, mm.y + jy, mm.theta + ja, mm.kind))
        ids.append(i)
    n_spur = int(rng.integers(0, int(math.floor(cfg.spurious_fraction * len(gt))) + 1))
    for _ in range(n_spur):
        x, y = rng.uniform(f.config.margin, n - f.config.margin, size=2)
        minutiae.append(Minutia(x, y, rng.uniform(0.0, TWO_PI), MinutiaKind.UNKNOWN))
        ids.append(-1)
    return Impression(image, minutiae, ids, tr)


def _disk_jitter(rng: np.random.Generator, radius: float) -> tuple[float, float]:
    r = radius * math.sqrt(rng.random())
    a = rng.uniform(0.0, TWO_PI)
    return r * math.cos(a), r * math.sin(a)


def finger_seeds(seed: int, n: int) -> list[int]:
    """Independent per-finger seeds derived from one corpus seed."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]
