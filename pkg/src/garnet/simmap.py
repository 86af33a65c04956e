"""Similarity map: per-category clusters of 2-D points with KDE regions.

A cluster's confidence region is the superlevel set ``{x : f(x) >= tau}`` of
its isotropic Gaussian KDE, where ``tau`` is chosen so that a target fraction
``q`` (the coverage) of the cluster's own points lies inside. A point is
classified by the nearest centroid among the clusters whose region contains
it, or ``None`` (unknown) when no region does.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError

MIN_BANDWIDTH = 1e-6
DEFAULT_COVERAGE = 0.95
_CHUNK = 1 << 20  # pairwise distances per block


def as_points(points):
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts.reshape(1, -1)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise InputError(f"expected 2-D points, got array of shape {np.shape(points)}")
    return pts


def gsd(a, b):
    """Euclidean distance between two similarity points."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(math.hypot(a[0] - b[0], a[1] - b[1]))


def centroid(points):
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        raise InputError("centroid of an empty point set")
    return as_points(pts).mean(axis=0)


def scott_bandwidth(points):
    """Scott's rule for 2-D data: ``m**(-1/6)`` times the mean marginal std.

    Floors at ``MIN_BANDWIDTH`` so degenerate (coincident) clusters stay usable.
    """
    pts = as_points(points)
    m = len(pts)
    spread = float(np.mean(pts.std(axis=0, ddof=1))) if m > 1 else 0.0
    return max(m ** (-1.0 / 6.0) * spread, MIN_BANDWIDTH)


def kde(points, queries, bandwidth):
    """Isotropic bivariate Gaussian KDE of ``points`` evaluated at ``queries``.

    ``f(x) = 1/(m 2 pi h^2) * sum_i exp(-|x - p_i|^2 / (2 h^2))``. Returns one
    density per query row.
    """
    if not bandwidth > 0:
        raise InputError(f"bandwidth must be positive, got {bandwidth}")
    pts = as_points(points)
    q = as_points(queries)
    if len(pts) == 0:
        raise InputError("density of an empty cluster")
    norm = 1.0 / (len(pts) * 2.0 * math.pi * bandwidth * bandwidth)
    out = np.empty(len(q))
    step = max(1, _CHUNK // len(pts))
    for start in range(0, len(q), step):
        block = q[start:start + step]
        d2 = np.sum((block[:, None, :] - pts[None, :, :]) ** 2, axis=2)
        out[start:start + step] = norm * np.exp(-d2 / (2.0 * bandwidth * bandwidth)).sum(axis=1)
    return out


def coverage_threshold(densities, coverage):
    """Largest ``tau`` with at least ``ceil(coverage * m)`` densities ``>= tau``."""
    if not 0.0 < coverage <= 1.0:
        raise InputError(f"coverage must lie in (0, 1], got {coverage}")
    dens = np.sort(np.asarray(densities, dtype=np.float64))[::-1]
    # guard against 0.95 * 20 = 19.000000000000004 rounding up to 20
    k = max(1, math.ceil(round(coverage * len(dens), 9)))
    return float(dens[k - 1])


@dataclass(frozen=True, eq=False)
class GarmentCluster:
    label: str
    points: np.ndarray
    centroid: np.ndarray
    bandwidth: float
    threshold: float = 0.0
    coverage: float = 1.0

    @classmethod
    def fit(cls, label, points, coverage=DEFAULT_COVERAGE, bandwidth=None):
        pts = as_points(points).copy()
        if len(pts) == 0:
            raise InputError(f"cluster {label!r} has no points")
        h = scott_bandwidth(pts) if bandwidth is None else float(bandwidth)
        h = max(h, MIN_BANDWIDTH)
        cluster = cls(str(label), pts, centroid(pts), h, 0.0, 1.0)
        return cluster.with_coverage(coverage)

    @property
    def size(self):
        return len(self.points)

    def density(self, queries):
        return kde(self.points, queries, self.bandwidth)

    def own_densities(self):
        return self.density(self.points)

    def with_coverage(self, coverage):
        """Copy of this cluster with the region recalibrated to ``coverage``."""
        tau = coverage_threshold(self.own_densities(), coverage)
        return GarmentCluster(self.label, self.points, self.centroid, self.bandwidth, tau, float(coverage))

    def contains(self, queries):
        return self.density(queries) >= self.threshold


class SimilarityMap:
    """Ordered collection of fitted clusters for one task.

    Cluster order is the tie-break order for classification.
    """

    def __init__(self, task, clusters):
        clusters = list(clusters)
        labels = [c.label for c in clusters]
        if len(clusters) < 2:
            raise InputError("a similarity map needs at least two clusters")
        if len(set(labels)) != len(labels):
            raise InputError(f"duplicate cluster labels in {labels}")
        self.task = task
        self.clusters = tuple(clusters)
        self.labels = tuple(labels)
        self._centroids = np.stack([c.centroid for c in clusters])

    @classmethod
    def fit(cls, task, points, labels, label_order=None, coverage=DEFAULT_COVERAGE, bandwidth=None):
        """Build one cluster per label from embedded training points."""
        pts = as_points(points)
        labels = np.asarray(labels)
        if len(labels) != len(pts):
            raise InputError(f"{len(pts)} points but {len(labels)} labels")
        order = list(label_order) if label_order is not None else sorted(set(labels.tolist()))
        clusters = []
        for label in order:
            mask = labels == label
            if not mask.any():
                raise InputError(f"no training points for label {label!r}")
            clusters.append(GarmentCluster.fit(label, pts[mask], coverage, bandwidth))
        return cls(task, clusters)

    def with_coverage(self, coverage):
        return SimilarityMap(self.task, [c.with_coverage(coverage) for c in self.clusters])

    def cluster(self, label):
        return self.clusters[self.labels.index(label)]

    def classify_points(self, points):
        """Label (or ``None`` for unknown) for every row of ``points``."""
        pts = as_points(points)
        inside = np.stack([c.contains(pts) for c in self.clusters], axis=1)
        dist = np.sqrt(np.sum((pts[:, None, :] - self._centroids[None, :, :]) ** 2, axis=2))
        dist = np.where(inside, dist, np.inf)
        # argmin keeps the first of equal distances: insertion-order tie-break
        best = np.argmin(dist, axis=1)
        return [self.labels[b] if inside[i, b] else None for i, b in enumerate(best)]

    def classify(self, point):
        return self.classify_points(point)[0]

    def training_unknown_rate(self):
        """Fraction of the map's own training points that classify as unknown."""
        total = unknown = 0
        for c in self.clusters:
            votes = self.classify_points(c.points)
            unknown += sum(v is None for v in votes)
            total += len(votes)
        return unknown / total

    # export -------------------------------------------------------------------

    def export_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["label", "x", "y"])
            for c in self.clusters:
                for x, y in c.points:
                    writer.writerow([c.label, repr(float(x)), repr(float(y))])

    def density_grid(self, resolution=256, pad=0.15):
        """Per-cluster densities on a square grid covering every point.

        Returns ``(xs, ys, dens)`` with ``dens`` shaped ``(n_clusters, res, res)``.
        """
        allpts = np.concatenate([c.points for c in self.clusters])
        lo, hi = allpts.min(axis=0), allpts.max(axis=0)
        span = np.maximum(hi - lo, 1e-9)
        lo, hi = lo - pad * span, hi + pad * span
        xs = np.linspace(lo[0], hi[0], resolution)
        ys = np.linspace(lo[1], hi[1], resolution)
        gx, gy = np.meshgrid(xs, ys)
        grid = np.column_stack([gx.ravel(), gy.ravel()])
        dens = np.stack([c.density(grid).reshape(resolution, resolution) for c in self.clusters])
        return xs, ys, dens

    def plot(self, path, resolution=256, title=None):
        """Write a vector plot of points, centroids and region contours."""
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        # fixed hash salt keeps the SVG byte-stable across runs
        matplotlib.rcParams["svg.hashsalt"] = "garnet"
        xs, ys, dens = self.density_grid(resolution)
        fig, ax = plt.subplots(figsize=(6, 6))
        colors = plt.cm.tab10.colors
        for i, c in enumerate(self.clusters):
            color = colors[i % len(colors)]
            ax.scatter(c.points[:, 0], c.points[:, 1], s=3, alpha=0.4, color=color, label=c.label)
            if dens[i].max() >= c.threshold > 0:
                ax.contour(xs, ys, dens[i], levels=[c.threshold], colors=[color], linewidths=1.2)
            ax.plot(*c.centroid, marker="x", color="black", markersize=8)
        ax.set_aspect("equal", adjustable="datalim")
        ax.legend(loc="best", fontsize=8, markerscale=3)
        if title:
            ax.set_title(title)
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
