"""Enrolled-record store and ranked Euclidean search.

Gallery file layout (all little-endian)::

    b"FPGL" | version:u32 | K:u32 | count:u32
    per record, ordered by subject id:
        id_len:u32 | id:utf-8 | enrolled_at:f64 | vector:f64[K] | tpl_len:u32 | template text (FPTPL)
"""

from __future__ import annotations

import math
import os
import struct
import tempfile
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .descriptor import DescriptorTransform, FeatureParams, Minutia
from .errors import ConflictError, FormatError, ParameterError, UnknownSubjectError
from .imaging import GrayImage
from .indexvec import IndexVector, index_from_descriptors
from .template import (
    MatchGates, Template, build_super_template, template_from_impression, template_from_text,
    template_to_text,
)
from .training import Codebook

MAGIC = b"FPGL"
FORMAT_VERSION = 1
_HEAD = struct.Struct("<4sIII")
_U32 = struct.Struct("<I")
_F64 = struct.Struct("<d")


@dataclass(frozen=True, eq=False)
class EnrolledRecord:
    subject_id: str
    index_vector: IndexVector
    template: Template
    enrolled_at: float


@dataclass(frozen=True)
class SearchResult:
    ranked: tuple[tuple[str, float], ...]
    penetration: float
    cutoff: int

    @property
    def ids(self) -> list[str]:
        return [sid for sid, _ in self.ranked]


def cutoff_count(n: int, pr: float) -> int:
    """``ceil(n * pr)``, guarded against representation error in ``pr``."""
    if not 0 < pr <= 1:
        raise ParameterError(f"penetration rate must be in (0, 1], got {pr}")
    return min(n, max(1, math.ceil(n * pr - 1e-9)))


class Gallery:
    """In-memory set of enrolled records.

    Readers work on an immutable snapshot ``(ids, matrix)`` that writers
    replace wholesale, so a search never sees a half-applied enrollment.
    Writers are serialized by a mutex.
    """

    def __init__(self, k: int):
        if k < 2:
            raise ParameterError("gallery dimension must be >= 2")
        self.k = int(k)
        self._records: dict[str, EnrolledRecord] = {}
        self._write_lock = threading.Lock()
        self._snapshot: tuple[tuple[str, ...], np.ndarray] | None = None

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, subject_id: str) -> bool:
        return subject_id in self._records

    def __iter__(self) -> Iterator[EnrolledRecord]:
        return iter([self._records[i] for i in sorted(self._records)])

    def get(self, subject_id: str) -> EnrolledRecord:
        try:
            return self._records[subject_id]
        except KeyError:
            raise UnknownSubjectError(f"unknown subject id {subject_id!r}") from None

    def add(self, record: EnrolledRecord) -> None:
        if record.index_vector.k != self.k:
            raise ParameterError(f"index vector has {record.index_vector.k} components, gallery expects {self.k}")
        with self._write_lock:
            if record.subject_id in self._records:
                raise ConflictError(f"subject id {record.subject_id!r} is already enrolled")
            records = dict(self._records)
            records[record.subject_id] = record
            self._records = records
            self._snapshot = None

    def remove(self, subject_id: str) -> None:
        with self._write_lock:
            if subject_id not in self._records:
                raise UnknownSubjectError(f"unknown subject id {subject_id!r}")
            records = dict(self._records)
            del records[subject_id]
            self._records = records
            self._snapshot = None

    def _current(self) -> tuple[tuple[str, ...], np.ndarray]:
        snap = self._snapshot
        if snap is None:
            with self._write_lock:
                recs = self._records
                ids = tuple(sorted(recs))
                mat = np.array([recs[i].index_vector.values for i in ids]).reshape(len(ids), self.k)
                mat.setflags(write=False)
                snap = self._snapshot = (ids, mat)
        return snap

    def search(self, query, pr: float = 1.0) -> SearchResult:
        q = np.asarray(query.values if isinstance(query, IndexVector) else query, dtype=np.float64)
        if q.shape != (self.k,):
            raise ParameterError(f"query has shape {q.shape}, gallery expects ({self.k},)")
        ids, mat = self._current()
        if not ids:
            raise ParameterError("cannot search an empty gallery")
        cut = cutoff_count(len(ids), pr)
        diff = mat - q
        dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        # ids are sorted, so a stable sort breaks distance ties by id
        order = np.argsort(dist, kind="stable")[:cut]
        return SearchResult(tuple((ids[i], float(dist[i])) for i in order), pr, cut)

    # -- persistence ---------------------------------------------------------

    def to_bytes(self) -> bytes:
        recs = self._records
        parts = [_HEAD.pack(MAGIC, FORMAT_VERSION, self.k, len(recs))]
        for sid in sorted(recs):
            r = recs[sid]
            raw_id = sid.encode("utf-8")
            tpl = template_to_text(r.template).encode("utf-8")
            parts += [_U32.pack(len(raw_id)), raw_id, _F64.pack(r.enrolled_at),
                      r.index_vector.values.astype("<f8").tobytes(), _U32.pack(len(tpl)), tpl]
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes, where: str = "<gallery>") -> "Gallery":
        if len(data) < _HEAD.size:
            raise FormatError(f"{where}: too short for a gallery header")
        magic, version, k, count = _HEAD.unpack_from(data)
        if magic != MAGIC:
            raise FormatError(f"{where}: bad magic {magic!r}, expected {MAGIC!r}")
        if version != FORMAT_VERSION:
            raise FormatError(f"{where}: unsupported gallery version {version}")
        g = cls(k)
        pos = _HEAD.size
        try:
            for _ in range(count):
                (n,), pos = _U32.unpack_from(data, pos), pos + 4
                sid = data[pos:pos + n].decode("utf-8")
                pos += n
                (stamp,), pos = _F64.unpack_from(data, pos), pos + 8
                vec = np.frombuffer(data, dtype="<f8", count=k, offset=pos).astype(np.float64)
                pos += 8 * k
                (n,), pos = _U32.unpack_from(data, pos), pos + 4
                blob = data[pos:pos + n]
                if len(blob) != n:
                    raise FormatError(f"{where}: truncated template for {sid!r}")
                pos += n
                tpl = template_from_text(blob.decode("utf-8"), f"{where}[{sid}]")
                g.add(EnrolledRecord(sid, IndexVector(vec, len(tpl)), tpl, stamp))
        except (struct.error, ValueError, UnicodeDecodeError) as exc:
            raise FormatError(f"{where}: corrupt record data ({exc})") from exc
        if pos != len(data):
            raise FormatError(f"{where}: {len(data) - pos} trailing bytes after {count} records")
        return g

    def save(self, path: str | os.PathLike) -> None:
        """Write atomically (temp file + rename)."""
        path = Path(path)
        data = self.to_bytes()
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Gallery":
        return cls.from_bytes(Path(path).read_bytes(), str(path))


def enroll(g: Gallery, subject_id: str, impressions: Sequence[tuple[GrayImage, Sequence[Minutia]]],
           t: DescriptorTransform, cb: Codebook, params: FeatureParams | None = None,
           gates: MatchGates | None = None, normalize_unit: bool = False,
           enrolled_at: float | None = None) -> EnrolledRecord:
    """Build a (super-)template from one or more impressions and add it.

    Nothing is added when any step fails.
    """
    if not impressions:
        raise ParameterError("need at least one impression")
    if subject_id in g:
        raise ConflictError(f"subject id {subject_id!r} is already enrolled")
    templates = [template_from_impression(img, mins, t, params) for img, mins in impressions]
    tpl = build_super_template(templates, gates)
    iv = index_from_descriptors(tpl.descriptors, cb, normalize_unit)
    record = EnrolledRecord(subject_id, iv, tpl, time.time() if enrolled_at is None else float(enrolled_at))
    g.add(record)
    return record


def search(g: Gallery, query, pr: float = 1.0) -> SearchResult:
    return g.search(query, pr)
