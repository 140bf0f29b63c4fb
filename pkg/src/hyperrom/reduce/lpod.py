"""Local POD: k-means clusters of snapshots with one POD basis per cluster."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.cluster.vq import ClusterError, kmeans2

from .pod import PodBasis, pod_fit

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class LpodModel:
    centroids: np.ndarray  # (k, D)
    local_bases: tuple[PodBasis, ...]
    labels: np.ndarray  # (s,) cluster of each snapshot
    members: tuple[np.ndarray, ...]  # snapshot ids used for each local basis (incl. overlap)
    seed: int

    @property
    def n_clusters(self) -> int:
        return self.centroids.shape[0]

    def nearest(self, u: np.ndarray) -> int:
        dist = np.linalg.norm(self.centroids - np.asarray(u)[None, :], axis=1)
        return int(np.argmin(dist))


def kmeans(X: np.ndarray, k: int, seed: int, max_retries: int = 10):
    """k-means++ seeded Lloyd iterations on the rows of ``X``.

    An empty cluster triggers a re-seed; after ``max_retries`` attempts the
    error propagates.
    """
    rng = np.random.default_rng(seed)
    for attempt in range(max_retries):
        try:
            centroids, labels = kmeans2(X, k, iter=100, minit="++", missing="raise", seed=rng)
        except ClusterError:
            log.info("empty cluster in k-means attempt %d, re-seeding", attempt)
            continue
        if len(np.unique(labels)) == k:
            return centroids, labels
    raise ClusterError(f"k-means produced empty clusters in {max_retries} attempts")


def lpod_fit(U: np.ndarray, n_clusters: int, d_local: int, overlap: int = 2,
             seed: int = 0) -> LpodModel:
    U = np.asarray(U, dtype=float)
    s = U.shape[1]
    if n_clusters < 1:
        raise ValueError("n_clusters must be >= 1")
    if n_clusters == 1:
        labels = np.zeros(s, dtype=np.int64)
        centroids = U.mean(axis=1)[None, :]
    else:
        centroids, labels = kmeans(U.T, n_clusters, seed)
    bases, members = [], []
    for c in range(n_clusters):
        own = np.nonzero(labels == c)[0]
        extra = []
        for other in range(n_clusters):
            if other == c or overlap <= 0:
                continue
            cand = np.nonzero(labels == other)[0]
            dist = np.linalg.norm(U[:, cand] - centroids[c][:, None], axis=0)
            extra.extend(cand[np.argsort(dist, kind="stable")[:overlap]].tolist())
        ids = np.sort(np.concatenate([own, np.asarray(extra, dtype=np.int64)]))
        if len(ids) < d_local:
            raise ValueError(
                f"cluster {c} has {len(ids)} snapshots (with overlap), fewer than d_local={d_local}"
            )
        bases.append(pod_fit(U[:, ids], d_local))
        members.append(ids)
    return LpodModel(np.asarray(centroids), tuple(bases), labels, tuple(members), seed)


def lpod_select(model: LpodModel, query_state: np.ndarray) -> PodBasis:
    return model.local_bases[model.nearest(query_state)]
