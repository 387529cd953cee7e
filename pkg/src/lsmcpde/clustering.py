"""Path reduction by agglomerative clustering of interval path statistics.

Paths whose statistics over an interval are close produce nearly the same
conditional PDE solution, so a cluster can be replaced by one representative
(the member mean of the statistics) weighted by the cluster size.

Complete linkage on z-scored columns is delegated to scipy, whose
implementation uses the nearest-neighbour chain algorithm.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import pdist
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ParameterError

__all__ = ["ClusterAssignment", "cluster_paths", "clustered_weights", "PathStatisticClusterer"]


@dataclass(frozen=True)
class ClusterAssignment:
    """``labels[j]`` is the cluster of path ``j``; clusters are numbered by
    their smallest member index."""

    labels: np.ndarray
    sizes: np.ndarray
    representatives: np.ndarray

    @property
    def n_clusters(self) -> int:
        return len(self.sizes)

    @property
    def n_paths(self) -> int:
        return len(self.labels)

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.labels == k)


def _standardize(x: np.ndarray) -> np.ndarray:
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return (x - mean) / std


def _relabel(raw: np.ndarray) -> np.ndarray:
    # order clusters by first appearance so labels do not depend on scipy's numbering
    _, first, inverse = np.unique(raw, return_index=True, return_inverse=True)
    rank = np.empty(len(first), dtype=int)
    rank[np.argsort(first, kind="stable")] = np.arange(len(first))
    return rank[inverse]


def _assignment(theta: np.ndarray, labels: np.ndarray) -> ClusterAssignment:
    k = labels.max() + 1
    sizes = np.bincount(labels, minlength=k)
    sums = np.zeros((k, theta.shape[1]))
    np.add.at(sums, labels, theta)
    reps = sums / sizes[:, None]
    return ClusterAssignment(labels, sizes, reps)


def cluster_paths(theta_block, target: int, threshold: Optional[float] = None) -> ClusterAssignment:
    """Complete-linkage clustering of the rows of ``theta_block`` into at most
    ``target`` clusters.

    When ``threshold`` is given the tree is cut at that standardized
    dissimilarity instead, still capped at ``target`` clusters.
    """
    theta = np.asarray(theta_block, dtype=float)
    if theta.ndim != 2:
        raise ParameterError("theta_block must be a 2-d array")
    n = len(theta)
    if int(target) != target or not 1 <= target <= n:
        raise ParameterError(f"cluster count must lie in [1, {n}], got {target}")
    if not np.all(np.isfinite(theta)):
        raise ParameterError("path statistics must be finite")
    if target == n and threshold is None:
        return ClusterAssignment(np.arange(n), np.ones(n, dtype=int), theta.copy())
    if target == 1 or n == 1:
        return _assignment(theta, np.zeros(n, dtype=int))
    tree = linkage(pdist(_standardize(theta)), method="complete")
    raw = fcluster(tree, t=target, criterion="maxclust")
    if threshold is not None:
        cut = fcluster(tree, t=threshold, criterion="distance")
        if cut.max() <= raw.max():
            raw = cut
    return _assignment(theta, _relabel(raw))


def clustered_weights(assignment: ClusterAssignment) -> np.ndarray:
    """Representative weights: the cluster sizes (they sum to ``N``)."""
    return assignment.sizes.astype(float)


class PathStatisticClusterer(ClusterMixin, BaseEstimator):
    """Estimator wrapper around :func:`cluster_paths`."""

    def __init__(self, n_clusters=4500, threshold=None):
        self.n_clusters = n_clusters
        self.threshold = threshold

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=1)
        target = min(self.n_clusters, len(X))
        assignment = cluster_paths(X, target, self.threshold)
        self.assignment_ = assignment
        self.labels_ = assignment.labels
        self.cluster_centers_ = assignment.representatives
        self.weights_ = clustered_weights(assignment)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X=None):
        """Weighted representatives ``(centers, weights)`` of the fitted data."""
        check_is_fitted(self, "assignment_")
        return self.cluster_centers_, self.weights_
