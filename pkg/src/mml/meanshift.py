"""One-dimensional Gaussian-kernel MeanShift over per-head loss averages."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

MAX_ITER = 500
CONVERGENCE_TOL = 1e-8
ABS_BANDWIDTH_FLOOR = 1e-12
KERNEL = "gaussian"


@dataclass
class ClusterResult:
    centroids: np.ndarray  # sorted ascending
    assignment: np.ndarray  # cluster index per input
    bandwidth_used: float
    kernel: str = KERNEL

    @property
    def n_clusters(self) -> int:
        return len(self.centroids)


def estimate_bandwidth(values) -> float:
    """Silverman's rule, 1.06 * min(std, IQR/1.34) * n^(-1/5), with floors (population std).

    A zero IQR falls back to the standard deviation alone.
    """
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size == 0:
        raise InvalidInputError("estimate_bandwidth needs at least one value")
    span = float(x.max() - x.min())
    floor = max(1e-6 * span, ABS_BANDWIDTH_FLOOR)
    if x.size < 2:
        return floor
    std = float(np.std(x))
    q75, q25 = np.percentile(x, [75, 25])
    iqr = float(q75 - q25)
    spread = min(std, iqr / 1.34) if iqr > 0 else std
    return max(1.06 * spread * x.size ** -0.2, floor)


def mean_shift_1d(values, bandwidth: float | None = None) -> ClusterResult:
    """Shift every point to the kernel-weighted mean of the data until it stops moving.

    Converged positions closer than ``bandwidth / 2`` (chained after sorting)
    form one cluster whose centroid is their mean.
    """
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size == 0:
        raise InvalidInputError("mean_shift_1d needs at least one value")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("mean_shift_1d: values must be finite")
    if bandwidth is None:
        bandwidth = estimate_bandwidth(x)
    if not bandwidth > 0:
        raise InvalidInputError(f"bandwidth must be > 0, got {bandwidth}")

    pos = x.copy()
    moving = np.ones(x.size, dtype=bool)
    inv_two_h2 = 1.0 / (2.0 * bandwidth * bandwidth)
    for _ in range(MAX_ITER):
        idx = np.flatnonzero(moving)
        if idx.size == 0:
            break
        diff = pos[idx, None] - x[None, :]
        # shift the exponent per row so far-away points cannot underflow every weight
        logw = -(diff * diff) * inv_two_h2
        w = np.exp(logw - logw.max(axis=1, keepdims=True))
        new = (w @ x) / w.sum(axis=1)
        step = np.abs(new - pos[idx])
        pos[idx] = new
        moving[idx[step < CONVERGENCE_TOL]] = False

    order = np.argsort(pos, kind="stable")
    merge_tol = bandwidth / 2.0
    labels_sorted = np.zeros(x.size, dtype=np.int64)
    for r in range(1, x.size):
        gap = pos[order[r]] - pos[order[r - 1]]
        labels_sorted[r] = labels_sorted[r - 1] + (1 if gap > merge_tol else 0)
    assignment = np.empty(x.size, dtype=np.int64)
    assignment[order] = labels_sorted
    n_clusters = int(labels_sorted[-1]) + 1
    centroids = np.array([pos[assignment == k].mean() for k in range(n_clusters)])
    return ClusterResult(centroids, assignment, float(bandwidth))


def min_centroid_members(result: ClusterResult, original_indices=None) -> np.ndarray:
    """Indices (into ``original_indices`` if given) of inputs in the lowest-centroid cluster."""
    members = np.flatnonzero(result.assignment == int(np.argmin(result.centroids)))
    if original_indices is None:
        return members
    return np.asarray(original_indices)[members]
