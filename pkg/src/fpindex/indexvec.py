"""Soft cluster memberships and the fixed-length search vector.

Each minutia descriptor is spread over the codebook with weights
``exp(-(d_k - min d))`` normalized to sum to one.  The memberships of all
minutiae are summed, centered across clusters, and scaled by
``sqrt(sum(centered**2) / N)`` where ``N`` is the minutia count.  The
resulting vector sums to zero and has squared norm ``N``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .descriptor import DescriptorTransform, FeatureParams, Minutia, describe_all
from .errors import DegenerateVectorError, EmptyTemplateError, ParameterError
from .imaging import GrayImage
from .training import Codebook

DEGENERATE_SS = 1e-12

# called with every IndexVector (plus its normalize_unit flag) and every
# membership matrix produced; the test-suite uses these to check invariants
observers: list[Callable[["IndexVector", bool], None]] = []
membership_observers: list[Callable[[np.ndarray], None]] = []


@dataclass(frozen=True, eq=False)
class IndexVector:
    values: np.ndarray
    n_minutiae: int

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ParameterError("index vector must be 1-D")
        if not np.all(np.isfinite(v)):
            raise ParameterError("index vector must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def k(self) -> int:
        return len(self.values)


def squared_distances(descriptors: np.ndarray, cb: Codebook) -> np.ndarray:
    """``d[i, k] = ||C_k - V_i||^2`` computed by direct differences."""
    v = np.atleast_2d(np.asarray(descriptors, dtype=np.float64))
    if v.shape[1] != cb.dim:
        raise ParameterError(f"descriptor dim {v.shape[1]} does not match codebook dim {cb.dim}")
    diff = v[:, None, :] - cb.centroids[None, :, :]
    return np.einsum("ikj,ikj->ik", diff, diff)


def membership_from_distances(d: np.ndarray) -> np.ndarray:
    """Rows of squared distances to rows of memberships."""
    d = np.atleast_2d(np.asarray(d, dtype=np.float64))
    e = np.exp(-(d - d.min(axis=1, keepdims=True)))
    m = e / e.sum(axis=1, keepdims=True)
    for obs in membership_observers:
        obs(m)
    return m


def membership(v, cb: Codebook) -> np.ndarray:
    """Membership of one descriptor (1-D result) or a stack of them (2-D)."""
    m = membership_from_distances(squared_distances(v, cb))
    return m[0] if np.ndim(v) == 1 else m


def index_vector(memberships, n: int | None = None, normalize_unit: bool = False) -> IndexVector:
    """Aggregate per-minutia memberships into the search vector.

    ``n`` defaults to the number of membership rows and must equal it when
    given.  With ``normalize_unit`` the result is further divided by
    ``sqrt(n)`` so that its norm no longer depends on the minutia count.
    """
    m = np.atleast_2d(np.asarray(memberships, dtype=np.float64))
    rows = 0 if np.size(memberships) == 0 else m.shape[0]
    if n is None:
        n = rows
    if n < 1 or rows == 0:
        raise EmptyTemplateError("index vector needs at least one membership")
    if n != rows:
        raise ParameterError(f"n={n} does not match {rows} membership rows")
    sm = m.sum(axis=0)
    sm = sm - sm.sum() / len(sm)
    ss = np.sqrt((sm * sm).sum() / n)
    if ss < DEGENERATE_SS:
        raise DegenerateVectorError("memberships are uniform; search vector is undefined")
    f = sm / ss
    if normalize_unit:
        f = f / np.sqrt(n)
    iv = IndexVector(f, n)
    for obs in observers:
        obs(iv, normalize_unit)
    return iv


def index_from_descriptors(descriptors: np.ndarray, cb: Codebook, normalize_unit: bool = False) -> IndexVector:
    d = np.atleast_2d(np.asarray(descriptors, dtype=np.float64))
    if d.size == 0:
        raise EmptyTemplateError("no descriptors")
    return index_vector(membership_from_distances(squared_distances(d, cb)), len(d), normalize_unit)


def build_index(img: GrayImage, minutiae: Sequence[Minutia], t: DescriptorTransform, cb: Codebook,
                params: FeatureParams | None = None, normalize_unit: bool = False) -> IndexVector:
    desc = describe_all(img, minutiae, t, params).descriptors
    return index_from_descriptors(desc, cb, normalize_unit)
