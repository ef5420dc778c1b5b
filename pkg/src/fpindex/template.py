"""Minutia templates and multi-impression super-templates.

Two templates are aligned by a Hough-style vote over minutia pairs: each
pair proposes a rotation (direction difference) and the translation it
implies.  The densest vote cell seeds a greedy, gated, nearest-first
assignment which is then refined by a least-squares rigid fit.
"""

from __future__ import annotations

import math
import os
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .descriptor import (
    DescriptorTransform, FeatureParams, Minutia, describe_all, format_minutia, parse_minutia,
)
from .errors import FormatError, ParameterError
from .imaging import GrayImage

TWO_PI = 2.0 * math.pi


def angle_diff(a, b):
    """Signed difference ``a - b`` wrapped to ``[-pi, pi)``."""
    return (np.asarray(a) - np.asarray(b) + math.pi) % TWO_PI - math.pi


@dataclass(frozen=True)
class MatchGates:
    max_distance: float = 12.0
    max_angle: float = math.radians(20.0)
    vote_angle_bin: float = math.radians(20.0)
    vote_shift_bin: float = 12.0
    refine_rounds: int = 2
    dedup_distance: float = 4.0
    dedup_angle: float = math.radians(10.0)


@dataclass(frozen=True)
class RigidTransform:
    """``p' = R(rotation) p + (tx, ty)``; directions gain ``rotation``."""

    rotation: float = 0.0
    tx: float = 0.0
    ty: float = 0.0

    def apply_xy(self, xy: np.ndarray) -> np.ndarray:
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        xy = np.asarray(xy, dtype=np.float64)
        return np.column_stack([c * xy[:, 0] - s * xy[:, 1] + self.tx, s * xy[:, 0] + c * xy[:, 1] + self.ty])

    def apply(self, m: Minutia) -> Minutia:
        (x, y), = self.apply_xy(np.array([[m.x, m.y]]))
        return Minutia(x, y, m.theta + self.rotation, m.kind)


@dataclass(frozen=True, eq=False)
class Template:
    minutiae: tuple[Minutia, ...]
    descriptors: np.ndarray | None = None
    source_count: int = 1

    def __post_init__(self):
        object.__setattr__(self, "minutiae", tuple(self.minutiae))
        if not self.minutiae:
            raise ParameterError("a template needs at least one minutia")
        if self.descriptors is not None:
            d = np.array(self.descriptors, dtype=np.float64)
            if d.ndim != 2 or len(d) != len(self.minutiae):
                raise ParameterError("descriptors must be (n_minutiae, dim)")
            d.setflags(write=False)
            object.__setattr__(self, "descriptors", d)
        if self.source_count < 1:
            raise ParameterError("source_count must be >= 1")

    def __len__(self) -> int:
        return len(self.minutiae)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        xy = np.array([(m.x, m.y) for m in self.minutiae], dtype=np.float64)
        th = np.array([m.theta for m in self.minutiae], dtype=np.float64)
        return xy, th


@dataclass(frozen=True)
class Correspondence:
    pairs: tuple[tuple[int, int], ...]
    transform: RigidTransform = field(default_factory=RigidTransform)


def template_from_impression(img: GrayImage, minutiae: Sequence[Minutia], t: DescriptorTransform,
                             params: FeatureParams | None = None) -> Template:
    """Template holding the minutiae that survive descriptor extraction."""
    res = describe_all(img, minutiae, t, params)
    return Template(tuple(minutiae[i] for i in res.kept), res.descriptors)


def _vote(a_xy, a_th, b_xy, b_th, gates: MatchGates) -> RigidTransform:
    """Densest cell of (rotation, translation) votes over all minutia pairs."""
    rot = angle_diff(a_th[:, None], b_th[None, :]).ravel()
    c, s = np.cos(rot), np.sin(rot)
    bx = np.tile(b_xy[:, 0], len(a_xy))
    by = np.tile(b_xy[:, 1], len(a_xy))
    ax = np.repeat(a_xy[:, 0], len(b_xy))
    ay = np.repeat(a_xy[:, 1], len(b_xy))
    tx = ax - (c * bx - s * by)
    ty = ay - (s * bx + c * by)

    n_abins = max(1, int(round(TWO_PI / gates.vote_angle_bin)))
    ai = np.floor((rot + math.pi) / TWO_PI * n_abins).astype(int) % n_abins
    xi = np.floor(tx / gates.vote_shift_bin).astype(int)
    yi = np.floor(ty / gates.vote_shift_bin).astype(int)
    cells = Counter(zip(ai.tolist(), xi.tolist(), yi.tolist()))

    def score(cell):
        a0, x0, y0 = cell
        return sum(cells.get(((a0 + da) % n_abins, x0 + dx, y0 + dy), 0)
                   for da in (-1, 0, 1) for dx in (-1, 0, 1) for dy in (-1, 0, 1))

    best = min(cells, key=lambda cell: (-score(cell), cell))
    near = (np.abs(((ai - best[0]) + n_abins // 2) % n_abins - n_abins // 2) <= 1) \
        & (np.abs(xi - best[1]) <= 1) & (np.abs(yi - best[2]) <= 1)
    # centre of mass of the winning neighbourhood
    r = math.atan2(np.sin(rot[near]).mean(), np.cos(rot[near]).mean())
    return RigidTransform(r, float(tx[near].mean()), float(ty[near].mean()))


def _greedy_pairs(a_xy, a_th, b_xy, b_th, tr: RigidTransform, gates: MatchGates) -> list[tuple[int, int]]:
    bt = tr.apply_xy(b_xy)
    dist = np.hypot(a_xy[:, 0:1] - bt[None, :, 0], a_xy[:, 1:2] - bt[None, :, 1])
    dang = np.abs(angle_diff(a_th[:, None], b_th[None, :] + tr.rotation))
    ok = (dist <= gates.max_distance) & (dang <= gates.max_angle)
    ii, jj = np.nonzero(ok)
    order = np.lexsort((jj, ii, dist[ii, jj]))
    used_a, used_b, pairs = set(), set(), []
    for k in order:
        i, j = int(ii[k]), int(jj[k])
        if i not in used_a and j not in used_b:
            used_a.add(i)
            used_b.add(j)
            pairs.append((i, j))
    return sorted(pairs)


def fit_rigid(p: np.ndarray, q: np.ndarray) -> RigidTransform:
    """Least-squares rotation + translation taking points ``q`` onto ``p``."""
    pm, qm = p.mean(axis=0), q.mean(axis=0)
    dp, dq = p - pm, q - qm
    h = dq.T @ dp
    r = math.atan2(h[0, 1] - h[1, 0], h[0, 0] + h[1, 1])
    c, s = math.cos(r), math.sin(r)
    return RigidTransform(r, float(pm[0] - (c * qm[0] - s * qm[1])), float(pm[1] - (s * qm[0] + c * qm[1])))


def correspond(a: Template, b: Template, gates: MatchGates | None = None) -> Correspondence:
    """Pair minutiae of ``b`` with minutiae of ``a`` under a rigid alignment.

    The returned transform maps ``b`` coordinates into ``a``'s frame.  An
    empty pair list is a valid outcome.
    """
    gates = gates or MatchGates()
    a_xy, a_th = a.arrays()
    b_xy, b_th = b.arrays()
    tr = _vote(a_xy, a_th, b_xy, b_th, gates)
    pairs = _greedy_pairs(a_xy, a_th, b_xy, b_th, tr, gates)
    for _ in range(gates.refine_rounds):
        if len(pairs) < 2:
            break
        ia, ib = (np.array(x) for x in zip(*pairs))
        tr = fit_rigid(a_xy[ia], b_xy[ib])
        pairs = _greedy_pairs(a_xy, a_th, b_xy, b_th, tr, gates)
    return Correspondence(tuple(pairs), tr)


def _circular_blend(base: float, other: float, w_base: float, w_other: float) -> float:
    """Weighted circular mean, computed relative to ``base``."""
    d = float(angle_diff(other, base))
    sx = w_base + w_other * math.cos(d)
    sy = w_other * math.sin(d)
    if math.hypot(sx, sy) < 1e-12:
        return base
    return base + math.atan2(sy, sx)


def merge(super_t: Template, t: Template, corr: Correspondence, gates: MatchGates | None = None) -> Template:
    """Fold ``t`` into ``super_t`` using a correspondence from ``correspond(super_t, t)``.

    Paired minutiae and descriptors are averaged with weights equal to the
    number of impressions behind each side; unpaired minutiae of ``t`` are
    moved into the super-template frame and appended unless they duplicate
    an existing minutia.
    """
    gates = gates or MatchGates()
    w_s, w_t = super_t.source_count, t.source_count
    frac = w_t / (w_s + w_t)
    has_desc = super_t.descriptors is not None and t.descriptors is not None
    minutiae = list(super_t.minutiae)
    desc = [row for row in super_t.descriptors] if has_desc else None
    moved = [corr.transform.apply(m) for m in t.minutiae]
    paired_b = set()
    for i, j in corr.pairs:
        paired_b.add(j)
        s, m = minutiae[i], moved[j]
        x = s.x + (m.x - s.x) * frac
        y = s.y + (m.y - s.y) * frac
        theta = _circular_blend(s.theta, m.theta, w_s, w_t)
        minutiae[i] = Minutia(x, y, theta, s.kind)
        if has_desc:
            desc[i] = desc[i] + (t.descriptors[j] - desc[i]) * frac
    for j, m in enumerate(moved):
        if j in paired_b or _is_duplicate(m, minutiae, gates):
            continue
        minutiae.append(m)
        if has_desc:
            desc.append(t.descriptors[j])
    return Template(tuple(minutiae), np.array(desc) if has_desc else None, w_s + w_t)


def _is_duplicate(m: Minutia, existing: Sequence[Minutia], gates: MatchGates) -> bool:
    for e in existing:
        if math.hypot(e.x - m.x, e.y - m.y) < gates.dedup_distance \
                and abs(float(angle_diff(e.theta, m.theta))) < gates.dedup_angle:
            return True
    return False


def build_super_template(templates: Sequence[Template], gates: MatchGates | None = None) -> Template:
    if not templates:
        raise ParameterError("need at least one template")
    gates = gates or MatchGates()
    result = templates[0]
    for t in templates[1:]:
        result = merge(result, t, correspond(result, t, gates), gates)
    return result


# -- FPTPL text format -------------------------------------------------------

def template_to_text(t: Template) -> str:
    lines = [f"FPTPL 1 {len(t)} {t.source_count}"]
    for i, m in enumerate(t.minutiae):
        lines.append(format_minutia(m))
        if t.descriptors is not None:
            row = t.descriptors[i]
            lines.append(f"D{len(row)} " + " ".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def template_from_text(text: str, where: str = "<template>") -> Template:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise FormatError(f"{where}: empty template")
    head = lines[0].split()
    if len(head) != 4 or head[0] != "FPTPL" or head[1] != "1" or not (head[2].isdigit() and head[3].isdigit()):
        raise FormatError(f"{where}: bad header {lines[0]!r}, expected 'FPTPL 1 <count> <source_count>'")
    count, source_count = int(head[2]), int(head[3])
    minutiae, desc = [], []
    for lineno, ln in enumerate(lines[1:], start=2):
        tag = ln.split(maxsplit=1)[0]
        if tag[0] == "D" and tag[1:].isdigit():
            vals = ln.split()[1:]
            if len(vals) != int(tag[1:]) or len(desc) != len(minutiae) - 1:
                raise FormatError(f"{where}:{lineno}: misplaced or malformed descriptor line")
            try:
                desc.append([float(v) for v in vals])
            except ValueError as exc:
                raise FormatError(f"{where}:{lineno}: {exc}") from exc
        else:
            minutiae.append(parse_minutia(ln, f"{where}:{lineno}"))
    if len(minutiae) != count:
        raise FormatError(f"{where}: header declares {count} minutiae, found {len(minutiae)}")
    if desc and len(desc) != count:
        raise FormatError(f"{where}: {len(desc)} descriptor lines for {count} minutiae")
    try:
        return Template(tuple(minutiae), np.array(desc) if desc else None, source_count)
    except ParameterError as exc:
        raise FormatError(f"{where}: {exc}") from exc


def save_template(path: str | os.PathLike, t: Template) -> None:
    Path(path).write_text(template_to_text(t), encoding="utf-8")


def load_template(path: str | os.PathLike) -> Template:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: not UTF-8 text") from exc
    return template_from_text(text, str(path))
