"""Learning the descriptor transform (PCA then LDA) and the k-means codebook.

Trained artifacts are stored in a small versioned binary container::

    b"FPIX" | version:u32 | type:u8 (1 transform, 2 codebook) | rows:u32 | cols:u32 | float64[...]

All integers and floats are little-endian.  A transform record holds
``mean[rows]`` followed by ``matrix[rows x cols]``; a codebook record holds
``centroids[rows x cols]``.  Files ending in ``.json`` use a JSON mirror of
the same content.
"""

from __future__ import annotations

import json
import logging
import math
import os
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from .descriptor import DescriptorTransform
from .errors import FormatError, ParameterError, TrainingError

log = logging.getLogger(__name__)

MAGIC = b"FPIX"
FORMAT_VERSION = 1
RECORD_TRANSFORM = 1
RECORD_CODEBOOK = 2
_HEADER = struct.Struct("<4sIBII")


# -- PCA ---------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PCAResult:
    matrix: np.ndarray       # (in_dim, out_dim), orthonormal columns
    mean: np.ndarray         # (in_dim,)
    eigenvalues: np.ndarray  # (out_dim,), non-increasing

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.matrix


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip columns so that each column's largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def fit_pca(features, out_dim: int = 30) -> PCAResult:
    """Centered PCA keeping the ``out_dim`` leading components.

    Raises :class:`TrainingError` when the sample count cannot span
    ``out_dim`` directions.  Data that is numerically of lower rank is
    accepted; the trailing eigenvalues are then ~0.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ParameterError(f"features must be a 2-D array, got shape {x.shape}")
    n, d = x.shape
    achievable = min(n - 1, d)
    if achievable < out_dim:
        raise TrainingError(
            f"PCA to {out_dim} dims needs at least {out_dim + 1} samples of dim >= {out_dim}; "
            f"achievable rank is {max(achievable, 0)}"
        )
    mean = x.mean(axis=0)
    _, s, vt = np.linalg.svd(x - mean, full_matrices=False)
    eig = s ** 2 / (n - 1)
    if eig[0] > 0:
        rank = int(np.sum(eig > 1e-12 * eig[0]))
        if rank < out_dim:
            log.warning("PCA input has numerical rank %d < %d", rank, out_dim)
    vecs = _fix_signs(vt[:out_dim].T)
    return PCAResult(vecs, mean, eig[:out_dim])


# -- LDA ---------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LDAResult:
    matrix: np.ndarray       # (in_dim, out_dim), unit-norm columns
    eigenvalues: np.ndarray  # (out_dim,), non-increasing

    def apply(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.matrix


def scatter_matrices(x: np.ndarray, class_ids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Within-class and between-class scatter."""
    d = x.shape[1]
    mu = x.mean(axis=0)
    sw = np.zeros((d, d))
    sb = np.zeros((d, d))
    for c in np.unique(class_ids):
        xc = x[class_ids == c]
        mc = xc.mean(axis=0)
        dc = xc - mc
        sw += dc.T @ dc
        diff = (mc - mu)[:, None]
        sb += len(xc) * (diff @ diff.T)
    return sw, sb


def fit_lda(projected, class_ids, out_dim: int = 25, reg: float = 1e-4) -> LDAResult:
    """Fisher LDA on labeled samples.

    Classes with a single member are dropped.  The within-class scatter is
    regularized as ``S_W + reg * trace(S_W) / dim * I``.
    """
    x = np.asarray(projected, dtype=np.float64)
    labels = np.asarray(class_ids)
    if x.ndim != 2 or len(labels) != len(x):
        raise ParameterError("projected must be (n, dim) with one class id per row")
    counts = Counter(labels.tolist())
    singles = [c for c, n in counts.items() if n < 2]
    if singles:
        log.warning("dropping %d single-member classes", len(singles))
        keep = np.isin(labels, singles, invert=True)
        x, labels = x[keep], labels[keep]
    n_classes = len(counts) - len(singles)
    if n_classes < out_dim + 1:
        raise TrainingError(f"need ≥ {out_dim + 1} classes for a {out_dim}-D LDA, got {n_classes}")
    d = x.shape[1]
    if out_dim > d:
        raise TrainingError(f"cannot reduce {d}-D input to {out_dim} dims")
    sw, sb = scatter_matrices(x, labels)
    lam = reg * np.trace(sw) / d
    if not lam > 0:
        raise TrainingError("within-class scatter is zero; classes have no spread")
    vals, vecs = scipy.linalg.eigh(sb, sw + lam * np.eye(d))
    order = np.argsort(vals)[::-1][:out_dim]
    vecs = vecs[:, order]
    vecs = _fix_signs(vecs / np.linalg.norm(vecs, axis=0))
    return LDAResult(vecs, vals[order])


def compose_transform(pca: PCAResult, lda: LDAResult) -> DescriptorTransform:
    if pca.matrix.shape[1] != lda.matrix.shape[0]:
        raise ParameterError(
            f"PCA output dim {pca.matrix.shape[1]} does not match LDA input dim {lda.matrix.shape[0]}"
        )
    return DescriptorTransform(pca.matrix @ lda.matrix, pca.mean, provenance="trained")


# -- k-means -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Codebook:
    centroids: np.ndarray
    n_iter: int = 0
    inertia: float = float("nan")
    inertia_history: tuple[float, ...] = field(default=(), repr=False)

    def __post_init__(self):
        c = np.array(self.centroids, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] < 2:
            raise ParameterError(f"codebook needs a (k >= 2, dim) array, got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ParameterError("codebook centroids must be finite")
        if len(np.unique(c, axis=0)) != len(c):
            raise ParameterError("codebook contains identical centroids")
        c.setflags(write=False)
        object.__setattr__(self, "centroids", c)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = (x * x).sum(axis=1)[:, None] - 2.0 * (x @ c.T) + (c * c).sum(axis=1)[None, :]
    return np.maximum(d, 0.0)


def kmeanspp_seed(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Greedy k-means++ seeding (best of several D^2-weighted candidates)."""
    n = len(x)
    n_trials = 2 + int(math.log(k))
    centers = np.empty((k, x.shape[1]))
    first = rng.integers(n)
    centers[0] = x[first]
    closest = _sq_dists(x, centers[0:1])[:, 0]
    for j in range(1, k):
        cum = np.cumsum(closest)
        r = rng.random(n_trials) * cum[-1]
        cand = np.minimum(np.searchsorted(cum, r, side="right"), n - 1)
        cand_d = np.minimum(closest[None, :], _sq_dists(x[cand], x))
        best = int(np.argmin(cand_d.sum(axis=1)))
        centers[j] = x[cand[best]]
        closest = cand_d[best]
    return centers


def fit_codebook(descriptors, k: int = 200, seed: int = 0, max_iter: int = 300, tol: float = 1e-6) -> Codebook:
    """Lloyd k-means with squared Euclidean distance.

    Stops when no centroid moves by ``tol`` or more, or after ``max_iter``
    update steps.  Empty clusters are re-seeded at the point farthest from
    its centroid.
    """
    x = np.asarray(descriptors, dtype=np.float64)
    if x.ndim != 2:
        raise ParameterError(f"descriptors must be (n, dim), got shape {x.shape}")
    if k < 2:
        raise ParameterError("k must be >= 2")
    n_distinct = len(np.unique(x, axis=0))
    if n_distinct < k:
        raise TrainingError(f"k-means with k={k} needs >= {k} distinct points, got {n_distinct}")
    rng = np.random.default_rng(seed)
    c = kmeanspp_seed(x, k, rng)
    history = []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        d = _sq_dists(x, c)
        labels = np.argmin(d, axis=1)
        history.append(float(((x - c[labels]) ** 2).sum()))
        new_c = np.empty_like(c)
        empty = []
        for j in range(k):
            members = x[labels == j]
            if len(members):
                new_c[j] = members.mean(axis=0)
            else:
                empty.append(j)
        if empty:
            far = np.argsort(-d[np.arange(len(x)), labels], kind="stable")
            for j, i in zip(empty, far):
                new_c[j] = x[i]
        shift = float(np.sqrt(((new_c - c) ** 2).sum(axis=1)).max())
        c = new_c
        if shift < tol:
            break
    labels = np.argmin(_sq_dists(x, c), axis=1)
    inertia = float(((x - c[labels]) ** 2).sum())
    history.append(inertia)
    if len(np.unique(c, axis=0)) != k:
        raise TrainingError("k-means produced duplicate centroids")
    return Codebook(c, n_iter, inertia, tuple(history))


@dataclass(frozen=True)
class TrainingReport:
    n_features: int
    n_labeled: int
    n_classes: int
    n_iter: int
    inertia: float


def train_models(features, class_ids, pca_dim: int = 30, lda_dim: int = 25, k: int = 200,
                 seed: int = 0, max_iter: int = 300, tol: float = 1e-6):
    """PCA on all features, LDA on the labeled ones, k-means on all descriptors.

    ``class_ids`` holds one integer per feature row; negative ids mark
    features without a class (e.g. spurious minutiae) which take part in
    PCA and clustering only.
    """
    x = np.asarray(features, dtype=np.float64)
    ids = np.asarray(class_ids)
    labeled = ids >= 0
    pca = fit_pca(x, pca_dim)
    lda = fit_lda(pca.apply(x[labeled]), ids[labeled], lda_dim)
    transform = compose_transform(pca, lda)
    descriptors = (x - transform.mean) @ transform.matrix
    cb = fit_codebook(descriptors, k=k, seed=seed, max_iter=max_iter, tol=tol)
    report = TrainingReport(len(x), int(labeled.sum()), len(np.unique(ids[labeled])), cb.n_iter, cb.inertia)
    return transform, cb, report


# -- persistence -------------------------------------------------------------

def _pack(kind: int, rows: int, cols: int, *arrays: np.ndarray) -> bytes:
    head = _HEADER.pack(MAGIC, FORMAT_VERSION, kind, rows, cols)
    return head + b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)


def _unpack(data: bytes, path, expected: int) -> tuple[int, int, np.ndarray]:
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: file too short for an FPIX header")
    magic, version, kind, rows, cols = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    if kind != expected:
        raise FormatError(f"{path}: record type {kind}, expected {expected}")
    n = rows * cols + (rows if kind == RECORD_TRANSFORM else 0)
    body = data[_HEADER.size:]
    if len(body) != 8 * n:
        raise FormatError(f"{path}: expected {8 * n} payload bytes, found {len(body)}")
    return rows, cols, np.frombuffer(body, dtype="<f8").astype(np.float64)


def transform_to_bytes(t: DescriptorTransform) -> bytes:
    return _pack(RECORD_TRANSFORM, t.in_dim, t.out_dim, t.mean, t.matrix)


def codebook_to_bytes(cb: Codebook) -> bytes:
    return _pack(RECORD_CODEBOOK, cb.k, cb.dim, cb.centroids)


def _is_json(path) -> bool:
    return str(path).lower().endswith(".json")


def save_transform(path: str | os.PathLike, t: DescriptorTransform) -> None:
    if _is_json(path):
        doc = {"format": "FPIX", "version": FORMAT_VERSION, "type": "transform",
               "mean": t.mean.tolist(), "matrix": t.matrix.tolist()}
        Path(path).write_text(json.dumps(doc), encoding="utf-8")
    else:
        Path(path).write_bytes(transform_to_bytes(t))


def load_transform(path: str | os.PathLike) -> DescriptorTransform:
    if _is_json(path):
        doc = _load_json(path, "transform")
        return DescriptorTransform(np.array(doc["matrix"]), np.array(doc["mean"]), provenance="loaded")
    rows, cols, flat = _unpack(Path(path).read_bytes(), path, RECORD_TRANSFORM)
    return DescriptorTransform(flat[rows:].reshape(rows, cols), flat[:rows], provenance="loaded")


def save_codebook(path: str | os.PathLike, cb: Codebook) -> None:
    if _is_json(path):
        doc = {"format": "FPIX", "version": FORMAT_VERSION, "type": "codebook",
               "centroids": cb.centroids.tolist()}
        Path(path).write_text(json.dumps(doc), encoding="utf-8")
    else:
        Path(path).write_bytes(codebook_to_bytes(cb))


def load_codebook(path: str | os.PathLike) -> Codebook:
    if _is_json(path):
        return Codebook(np.array(_load_json(path, "codebook")["centroids"]))
    rows, cols, flat = _unpack(Path(path).read_bytes(), path, RECORD_CODEBOOK)
    return Codebook(flat.reshape(rows, cols))


def _load_json(path, kind: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc
    if doc.get("format") != "FPIX" or doc.get("type") != kind:
        raise FormatError(f"{path}: not an FPIX {kind} document")
    return doc
