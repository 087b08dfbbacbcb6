"""Descriptive statistics, ECDFs, exact 1-Wasserstein distances, histograms."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError


@dataclass(frozen=True)
class SummaryStats:
    count: int
    mean: float
    std: float
    min: float
    q25: float
    median: float
    q75: float
    max: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def summarize(values) -> SummaryStats:
    """Table-style summary; sample std (n-1), linear-interpolation quantiles."""
    x = np.asarray(values, dtype=float).ravel()
    if x.size == 0:
        raise InputError("summarize: empty input")
    q25, q50, q75 = np.quantile(x, [0.25, 0.5, 0.75], method="linear")
    std = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
    return SummaryStats(int(x.size), float(x.mean()), std, float(x.min()), float(q25), float(q50), float(q75),
                        float(x.max()))


class Ecdf:
    """Empirical CDF over a sorted copy of the samples."""

    def __init__(self, values):
        x = np.sort(np.asarray(values, dtype=float).ravel())
        if x.size == 0:
            raise InputError("ecdf: empty input")
        if np.isnan(x).any():
            raise InputError("ecdf: NaN in samples")
        self.sorted_samples = x
        self.sorted_samples.setflags(write=False)

    def __len__(self):
        return self.sorted_samples.size

    def __call__(self, x):
        """F(x) = #(samples <= x) / n."""
        counts = np.searchsorted(self.sorted_samples, x, side="right")
        return counts / self.sorted_samples.size


def ecdf(values) -> Ecdf:
    return Ecdf(values)


def wasserstein1(a, b) -> float:
    """Exact W1 between two empirical distributions.

    Integrates |F_a - F_b| piecewise over the merged breakpoint grid; both
    ECDFs are constant between consecutive breakpoints, so the sum is exact.
    """
    a = a if isinstance(a, Ecdf) else Ecdf(a)
    b = b if isinstance(b, Ecdf) else Ecdf(b)
    xa, xb = a.sorted_samples, b.sorted_samples
    grid = np.concatenate([xa, xb])
    grid.sort(kind="mergesort")
    widths = np.diff(grid)
    left = grid[:-1]
    fa = np.searchsorted(xa, left, side="right") / xa.size
    fb = np.searchsorted(xb, left, side="right") / xb.size
    return float(np.sum(np.abs(fa - fb) * widths))


@dataclass
class WassersteinMatrix:
    labels: list[str]
    dist: np.ndarray
    sizes: list[int] = field(default_factory=list)
    excluded: list[str] = field(default_factory=list)

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([""] + list(self.labels))
            for label, row in zip(self.labels, self.dist):
                w.writerow([label] + [repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path: str | Path) -> "WassersteinMatrix":
        with Path(path).open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        labels = rows[0][1:]
        dist = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
        return cls(labels, dist)


def _label_order(labels):
    def key(s):
        try:
            return (0, float(s), s)
        except ValueError:
            return (1, 0.0, s)
    return sorted(labels, key=key)


def _group(durations, categories):
    d = np.asarray(durations, dtype=float)
    cats = [str(c) for c in categories]
    if d.size != len(cats):
        raise InputError("durations and categories differ in length")
    groups: dict[str, list[float]] = {}
    for v, c in zip(d, cats):
        groups.setdefault(c, []).append(v)
    return {k: np.asarray(v) for k, v in groups.items()}


def pairwise_wasserstein(durations, categories, min_group_size: int = 30) -> WassersteinMatrix:
    """W1 between the pooled duration samples of every pair of categories.

    Categories with fewer than ``min_group_size`` rows are left out and
    listed in ``excluded``. Numeric-looking labels sort numerically.
    """
    groups = _group(durations, categories)
    keep = [c for c in _label_order(groups) if groups[c].size >= min_group_size]
    excluded = [c for c in _label_order(groups) if groups[c].size < min_group_size]
    if len(keep) < 2:
        raise InputError(f"need at least 2 categories with >= {min_group_size} rows, got {len(keep)}")
    ecdfs = [Ecdf(groups[c]) for c in keep]
    k = len(keep)
    dist = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            dist[i, j] = dist[j, i] = wasserstein1(ecdfs[i], ecdfs[j])
    return WassersteinMatrix(keep, dist, [groups[c].size for c in keep], excluded)


@dataclass
class DensityTable:
    edges: np.ndarray
    categories: list[str]
    density: np.ndarray  # (n_categories, n_bins)

    def rows(self):
        for c, dens in zip(self.categories, self.density):
            for lo, hi, v in zip(self.edges[:-1], self.edges[1:], dens):
                yield float(lo), float(hi), c, float(v)

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_left", "bin_right", "category", "density"])
            for lo, hi, c, v in self.rows():
                w.writerow([repr(lo), repr(hi), c, repr(v)])


def density_export(durations, categories, bins: int = 50, upper: float | None = None) -> DensityTable:
    """Per-category normalized histograms on a shared grid over [0, max]."""
    if bins < 2:
        raise InputError("bins must be at least 2")
    groups = _group(durations, categories)
    groups = {k: v for k, v in groups.items() if v.size}
    if not groups:
        raise InputError("density_export: no data")
    hi = upper if upper is not None else max(float(v.max()) for v in groups.values())
    if not hi > 0:
        hi = 1.0
    edges = np.linspace(0.0, hi, bins + 1)
    labels = _label_order(groups)
    dens = np.array([np.histogram(groups[c], bins=edges, density=True)[0] for c in labels])
    return DensityTable(edges, labels, dens)


def is_metric(dist: np.ndarray, tol: float = 1e-9) -> bool:
    d = np.asarray(dist)
    if not np.allclose(np.diag(d), 0.0) or not np.array_equal(d, d.T) or (d < 0).any():
        return False
    k = d.shape[0]
    for i in range(k):
        if (d[i][:, None] > d[i][None, :] + d + tol).any():
            return False
    return math.isfinite(float(d.sum()))
