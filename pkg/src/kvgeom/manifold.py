"""Intrinsic-dimension estimation for key point clouds.

Three complementary estimators:
  * PCA effective dimension: components needed to explain a variance fraction.
  * Two-NN: closed-form estimate from the ratio of second to first nearest
    neighbor distances, n_valid / sum(log(r2/r1)).
  * k-NN MLE: mean over points of [mean_j log(r_k / r_j)]^-1.

Neighbor search is exact brute-force O(n^2) in float64; duplicates
(r1 < 1e-12) are discarded and counted. This targets desk-scale clouds
(n up to ~10^4), not production indexes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EstimationError, ValidationError

DUPLICATE_EPS = 1e-12


@dataclass(frozen=True)
class DimensionReport:
    pca_d95: int
    twonn: float
    mle: float
    n_points: int
    ambient_dim: int
    discarded_pairs: int

    @property
    def pca_ratio(self) -> float:
        """PCA effective dimension as a fraction of the ambient dimension."""
        return self.pca_d95 / self.ambient_dim

    def to_dict(self) -> dict:
        return {
            "pca_d95": self.pca_d95,
            "twonn": self.twonn,
            "mle": self.mle,
            "n_points": self.n_points,
            "ambient_dim": self.ambient_dim,
            "discarded_pairs": self.discarded_pairs,
            "pca_ratio": self.pca_ratio,
        }


def _as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2:
        raise ValidationError(f"expected an (n, d) matrix, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValidationError("points contain NaN or Inf")
    return arr


def pca_effective_dim(points, threshold: float = 0.95) -> int:
    """Smallest k whose top-k eigenvalues explain >= threshold of total variance."""
    arr = _as_points(points)
    if arr.shape[0] < 2:
        raise ValidationError(f"need at least 2 points, got {arr.shape[0]}")
    if not 0.0 < threshold <= 1.0:
        raise ValidationError(f"threshold must be in (0, 1], got {threshold}")
    centered = arr - arr.mean(axis=0)
    svals = np.linalg.svd(centered, compute_uv=False)
    eig = svals**2
    total = float(eig.sum())
    if total == 0.0:
        return 1
    cum = np.cumsum(eig) / total
    return int(np.searchsorted(cum, threshold - 1e-12) + 1)


def _sorted_nn_dists(points: np.ndarray, k: int) -> np.ndarray:
    """(n, k) matrix of each point's k smallest neighbor distances, ascending."""
    sq = (points**2).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (points @ points.T)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, np.inf)
    part = np.partition(d2, k - 1, axis=1)[:, :k]
    part.sort(axis=1)
    return np.sqrt(part)


def _twonn_from_dists(nn: np.ndarray) -> tuple[float, int]:
    r1 = nn[:, 0]
    r2 = nn[:, 1]
    valid = r1 >= DUPLICATE_EPS
    discarded = int((~valid).sum())
    if not valid.any():
        raise EstimationError("all points have duplicate nearest neighbors")
    log_mu = np.log(r2[valid] / r1[valid])
    denom = float(log_mu.sum())
    if denom <= 0.0:
        raise EstimationError("degenerate neighbor ratios; cannot estimate dimension")
    return float(valid.sum() / denom), discarded


def twonn_dim(points) -> float:
    """Two-NN intrinsic dimension estimate; duplicates are dropped."""
    arr = _as_points(points)
    if arr.shape[0] < 3:
        raise ValidationError(f"need at least 3 points, got {arr.shape[0]}")
    est, _ = _twonn_from_dists(_sorted_nn_dists(arr, 2))
    return est


def _mle_from_dists(nn: np.ndarray) -> float:
    rk = nn[:, -1:]
    valid = (nn >= DUPLICATE_EPS).all(axis=1)
    if not valid.any():
        raise EstimationError("all points degenerate for MLE estimation")
    logs = np.log(rk[valid] / nn[valid, :-1])
    inv = logs.mean(axis=1)
    good = inv > 0.0
    if not good.any():
        raise EstimationError("degenerate neighbor ratios; cannot estimate dimension")
    return float((1.0 / inv[good]).mean())


def mle_dim(points, k_neighbors: int = 10) -> float:
    """k-NN maximum-likelihood dimension estimate (plain mean over points)."""
    arr = _as_points(points)
    if k_neighbors < 2:
        raise ValidationError(f"k_neighbors must be >= 2, got {k_neighbors}")
    if arr.shape[0] <= k_neighbors:
        raise ValidationError(
            f"need more than k_neighbors={k_neighbors} points, got {arr.shape[0]}"
        )
    return _mle_from_dists(_sorted_nn_dists(arr, k_neighbors))


def estimate_dimensions(
    points, threshold: float = 0.95, k_neighbors: int = 10
) -> DimensionReport:
    """All three estimates from one shared distance computation."""
    arr = _as_points(points)
    if k_neighbors < 2:
        raise ValidationError(f"k_neighbors must be >= 2, got {k_neighbors}")
    if arr.shape[0] <= max(k_neighbors, 2):
        raise ValidationError(
            f"need more than {max(k_neighbors, 2)} points, got {arr.shape[0]}"
        )
    nn = _sorted_nn_dists(arr, k_neighbors)
    twonn, discarded = _twonn_from_dists(nn[:, :2])
    return DimensionReport(
        pca_d95=pca_effective_dim(arr, threshold),
        twonn=twonn,
        mle=_mle_from_dists(nn),
        n_points=arr.shape[0],
        ambient_dim=arr.shape[1],
        discarded_pairs=discarded,
    )
