"""Two-sample distances used to test distribution transport quantitatively."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import wasserstein_distance

from .core import DataError

# Exact O(n^2) sums get expensive past this; larger inputs are subsampled.
MAX_EXACT_SIDE = 4096

NULL_QUANTILES = (0.50, 0.90, 0.95, 0.99)


@dataclass
class DistanceReport:
    statistic: float
    n_a: int
    n_b: int
    null_quantiles: dict | None = None

    def to_dict(self) -> dict:
        d = {"statistic": self.statistic, "n_a": self.n_a, "n_b": self.n_b}
        if self.null_quantiles is not None:
            d["null_quantiles"] = {str(k): v for k, v in self.null_quantiles.items()}
        return d


def _as_points(x) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(getattr(x, "points", x), dtype=float))
    return pts


def _maybe_subsample(pts, tag):
    if len(pts) > MAX_EXACT_SIDE:
        warnings.warn(f"{tag}: subsampling {len(pts)} points to {MAX_EXACT_SIDE} "
                      "for the exact pairwise sums")
        stride = np.linspace(0, len(pts) - 1, MAX_EXACT_SIDE).round().astype(int)
        return pts[stride]
    return pts


def _pairwise_mean(a, b) -> float:
    total = 0.0
    block = max(1, 4_000_000 // max(len(b), 1))
    for i0 in range(0, len(a), block):
        diff = a[i0:i0 + block, None, :] - b[None, :, :]
        total += np.sqrt(np.einsum("ijk,ijk->ij", diff, diff)).sum()
    return total / (len(a) * len(b))


def energy_distance(a, b) -> DistanceReport:
    """2 E|a-b| - E|a-a'| - E|b-b'| over all pairs (V-statistic)."""
    pa, pb = _as_points(a), _as_points(b)
    if pa.shape[1] != pb.shape[1]:
        raise DataError("datasets must share a dimension")
    pa = _maybe_subsample(pa, "energy_distance")
    pb = _maybe_subsample(pb, "energy_distance")
    stat = 2.0 * _pairwise_mean(pa, pb) - _pairwise_mean(pa, pa) - _pairwise_mean(pb, pb)
    return DistanceReport(float(max(stat, 0.0)), len(pa), len(pb))


def sliced_w1(a, b, n_projections: int = 64, stream=None) -> DistanceReport:
    """Mean 1-D Wasserstein-1 over random unit projection directions."""
    pa, pb = _as_points(a), _as_points(b)
    if pa.shape[1] != pb.shape[1]:
        raise DataError("datasets must share a dimension")
    if n_projections < 1:
        raise DataError("n_projections must be >= 1")
    dim = pa.shape[1]
    dirs = stream.standard_normal((n_projections, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    vals = [wasserstein_distance(pa @ u, pb @ u) for u in dirs]
    return DistanceReport(float(np.mean(vals)), len(pa), len(pb))


def permutation_null(a, b, statistic_fn, n_perm: int, stream) -> dict:
    """Null quantiles of statistic_fn under pooled-relabel permutations.

    statistic_fn takes two (n, D) arrays and returns a float.
    """
    if n_perm < 50:
        raise DataError("n_perm must be >= 50")
    pa, pb = _as_points(a), _as_points(b)
    pool = np.vstack([pa, pb])
    n_a = len(pa)
    stats = np.empty(n_perm)
    for i in range(n_perm):
        perm = stream.permutation(len(pool))
        stats[i] = statistic_fn(pool[perm[:n_a]], pool[perm[n_a:]])
    qs = np.quantile(stats, NULL_QUANTILES)
    return {f"{int(q * 100)}%": float(v) for q, v in zip(NULL_QUANTILES, qs)}


def energy_distance_with_null(a, b, n_perm: int = 200, stream=None) -> DistanceReport:
    rep = energy_distance(a, b)
    rep.null_quantiles = permutation_null(
        a, b, lambda x, y: energy_distance(x, y).statistic, n_perm, stream)
    return rep
