"""Penetration-rate vs error-rate curves and search timing."""

from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EvaluationError, ParameterError
from .gallery import Gallery, cutoff_count

DEFAULT_GRID = (0.01, 0.02, 0.05, 0.10, 0.15, 0.20, 0.30, 0.50, 1.00)


@dataclass(frozen=True)
class PrErCurve:
    points: tuple[tuple[float, float], ...]
    n_queries: int

    @property
    def penetration(self) -> list[float]:
        return [p for p, _ in self.points]

    @property
    def error(self) -> list[float]:
        return [e for _, e in self.points]

    def error_at(self, pr: float) -> float:
        for p, e in self.points:
            if abs(p - pr) < 1e-12:
                return e
        raise KeyError(pr)


def _check_grid(grid: Sequence[float]) -> list[float]:
    g = sorted(set(float(p) for p in grid))
    if not g or any(not 0 < p <= 1 for p in g):
        raise ParameterError(f"penetration grid values must lie in (0, 1], got {list(grid)}")
    return g


def mate_ranks(g: Gallery, queries: Sequence[tuple[object, str]]) -> list[int]:
    """1-based rank of each query's true mate in the full ranking."""
    ranks = []
    for vec, true_id in queries:
        if true_id not in g:
            raise EvaluationError(f"query mate {true_id!r} is not enrolled")
        ids = g.search(vec, 1.0).ids
        ranks.append(ids.index(true_id) + 1)
    return ranks


def pr_er_curve(g: Gallery, queries: Sequence[tuple[object, str]], grid: Sequence[float] = DEFAULT_GRID) -> PrErCurve:
    """Error rate (mate outside the first ceil(N*Pr) candidates) per grid point."""
    grid = _check_grid(grid)
    if not queries:
        raise EvaluationError("no queries")
    ranks = np.array(mate_ranks(g, queries))
    n = len(g)
    points = tuple((pr, float(np.mean(ranks > cutoff_count(n, pr)))) for pr in grid)
    return PrErCurve(points, len(queries))


def write_curve_csv(path: str | os.PathLike, curve: PrErCurve) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pr", "er"])
        for pr, er in curve.points:
            w.writerow([repr(pr), repr(er)])


def read_curve_csv(path: str | os.PathLike) -> PrErCurve:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return PrErCurve(tuple((float(r["pr"]), float(r["er"])) for r in rows), 0)


@dataclass(frozen=True)
class BenchStats:
    mean_ms: float
    p95_ms: float
    n_samples: int
    gallery_size: int

    def report(self) -> str:
        return (f"gallery_size={self.gallery_size}\nsamples={self.n_samples}\n"
                f"mean_ms={self.mean_ms:.6f}\np95_ms={self.p95_ms:.6f}\n")


def bench_search(g: Gallery, queries: Sequence[object], repetitions: int = 5, pr: float = 1.0) -> BenchStats:
    """Wall-clock time of ``g.search`` alone, per query."""
    if not len(g) or not queries:
        raise ParameterError("benchmark needs a nonempty gallery and query set")
    g.search(queries[0], pr)  # build the search snapshot outside the timed region
    times = []
    for _ in range(repetitions):
        for q in queries:
            t0 = time.perf_counter()
            g.search(q, pr)
            times.append(time.perf_counter() - t0)
    ms = np.array(times) * 1e3
    return BenchStats(float(ms.mean()), float(np.percentile(ms, 95)), len(ms), len(g))
