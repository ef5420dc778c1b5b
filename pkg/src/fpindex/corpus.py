"""Corpus manifests tying images, minutiae files and labels together.

A manifest is a text file::

    FPCORPUS 1
    # subject impression image minutiae [labels]
    f0000 0 f0000_0.pgm f0000_0.fpmin f0000_0.gt

Paths are relative to the manifest's directory.  A labels file
(``FPGT 1 <count>`` then one integer per minutia) names which finger-level
minutia each entry is; ``-1`` marks minutiae without a label.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .descriptor import FeatureParams, Minutia, extract_features, read_minutiae, write_minutiae
from .errors import FormatError
from .imaging import CANONICAL_DPI, GrayImage, read_pgm, write_pgm
from .synthgen import FingerConfig, ImpressionConfig, finger_seeds, gen_finger, gen_impression

MANIFEST_HEADER = "FPCORPUS 1"


@dataclass(frozen=True)
class CorpusEntry:
    subject_id: str
    impression: int
    image: Path
    minutiae: Path
    labels: Path | None = None

    def load(self, dpi: float = CANONICAL_DPI) -> tuple[GrayImage, list[Minutia], list[int] | None]:
        img = read_pgm(self.image, dpi)
        mins = read_minutiae(self.minutiae)
        labels = read_labels(self.labels) if self.labels else None
        if labels is not None and len(labels) != len(mins):
            raise FormatError(f"{self.labels}: {len(labels)} labels for {len(mins)} minutiae")
        return img, mins, labels


def write_labels(path: str | os.PathLike, labels: Sequence[int]) -> None:
    Path(path).write_text("\n".join([f"FPGT 1 {len(labels)}"] + [str(int(v)) for v in labels]) + "\n")


def read_labels(path: str | os.PathLike) -> list[int]:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    head = lines[0].split() if lines else []
    if len(head) != 3 or head[:2] != ["FPGT", "1"]:
        raise FormatError(f"{path}: bad labels header, expected 'FPGT 1 <count>'")
    try:
        labels = [int(ln) for ln in lines[1:]]
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if len(labels) != int(head[2]):
        raise FormatError(f"{path}: header declares {head[2]} labels, found {len(labels)}")
    return labels


def write_manifest(path: str | os.PathLike, entries: Iterable[CorpusEntry]) -> None:
    base = Path(path).parent
    lines = [MANIFEST_HEADER, "# subject impression image minutiae [labels]"]
    for e in entries:
        cols = [e.subject_id, str(e.impression), os.path.relpath(e.image, base), os.path.relpath(e.minutiae, base)]
        if e.labels:
            cols.append(os.path.relpath(e.labels, base))
        lines.append(" ".join(cols))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path: str | os.PathLike) -> list[CorpusEntry]:
    path = Path(path)
    base = path.parent
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != MANIFEST_HEADER:
        raise FormatError(f"{path}: missing '{MANIFEST_HEADER}' header")
    entries = []
    for lineno, ln in enumerate(lines[1:], start=2):
        ln = ln.split("#", 1)[0].strip()
        if not ln:
            continue
        cols = ln.split()
        if len(cols) not in (4, 5) or not cols[1].lstrip("-").isdigit():
            raise FormatError(f"{path}:{lineno}: expected 'subject impression image minutiae [labels]'")
        labels = base / cols[4] if len(cols) == 5 else None
        entries.append(CorpusEntry(cols[0], int(cols[1]), base / cols[2], base / cols[3], labels))
    return entries


def write_synthetic_corpus(out_dir: str | os.PathLike, n_fingers: int, n_impressions: int, seed: int,
                           finger_config: FingerConfig | None = None,
                           impression_config: ImpressionConfig | None = None) -> Path:
    """Render a synthetic corpus to PGM/FPMIN/FPGT files; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, fseed in enumerate(finger_seeds(seed, n_fingers)):
        finger = gen_finger(fseed, finger_config)
        sid = f"f{i:04d}"
        for j in range(n_impressions):
            imp = gen_impression(finger, j, impression_config)
            stem = out / f"{sid}_{j}"
            e = CorpusEntry(sid, j, stem.with_suffix(".pgm"), stem.with_suffix(".fpmin"), stem.with_suffix(".gt"))
            write_pgm(e.image, imp.image)
            write_minutiae(e.minutiae, imp.minutiae)
            write_labels(e.labels, imp.gt_ids)
            entries.append(e)
    manifest = out / "manifest.txt"
    write_manifest(manifest, entries)
    return manifest


def training_set(samples: Iterable[tuple[str, GrayImage, Sequence[Minutia], Sequence[int] | None]],
                 params: FeatureParams | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Gabor features and integer class ids for labeled impressions.

    One class is one labeled minutia of one subject; unlabeled minutiae get
    class id ``-1``.
    """
    classes: dict[tuple[str, int], int] = {}
    feats, ids = [], []
    for subject, img, mins, labels in samples:
        f, kept, _ = extract_features(img, mins, params)
        feats.append(f)
        for i in kept:
            lab = -1 if labels is None else int(labels[i])
            ids.append(classes.setdefault((subject, lab), len(classes)) if lab >= 0 else -1)
    n_feat = (params or FeatureParams()).gabor.feature_length
    x = np.vstack(feats) if feats else np.empty((0, n_feat))
    return x, np.array(ids, dtype=np.int64)
