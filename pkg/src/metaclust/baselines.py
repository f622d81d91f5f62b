"""Reference clusterers: k-means (Lloyd + k-means++), DBSCAN, thresholded
single-linkage."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import List

import numpy as np

from metaclust.numkit import pairwise_distances

NOISE = -1


@dataclass
class KMeansConfig:
    k: int = 2
    restarts: int = 10
    max_iters: int = 100
    tol: float = 1e-6

    def validate(self):
        if self.k < 1 or self.restarts < 1 or self.max_iters < 1:
            raise ValueError("k, restarts and max_iters must be >= 1")


@dataclass
class DbscanConfig:
    eps: float = 0.5
    min_pts: int = 4

    def validate(self):
        if self.eps <= 0 or self.min_pts < 1:
            raise ValueError("eps must be > 0 and min_pts >= 1")


@dataclass
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    inertia: float
    history: List[float] = field(default_factory=list)  # objective after each Lloyd iteration


class UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))
        self.rank = [0] * n

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1
        return True


def _sq_dists(X, C):
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=-1)


def _kmeanspp(X, k, rng):
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers.append(X[idx])
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def _lloyd(X, C, max_iters, tol):
    history = []
    for _ in range(max_iters):
        D = _sq_dists(X, C)
        labels = D.argmin(axis=1)
        obj = float(D[np.arange(len(X)), labels].sum())
        if history and obj > history[-1] * (1 + 1e-12) + 1e-12:
            raise AssertionError("Lloyd objective increased")
        history.append(obj)
        newC = C.copy()
        for j in range(C.shape[0]):
            members = labels == j
            if members.any():
                newC[j] = X[members].mean(axis=0)
            else:
                # reseed an empty cluster at the point farthest from its centre
                far = int(D[np.arange(len(X)), labels].argmax())
                newC[j] = X[far]
        shift = float(np.abs(newC - C).max())
        C = newC
        if shift < tol:
            break
    D = _sq_dists(X, C)
    labels = D.argmin(axis=1)
    obj = float(D[np.arange(len(X)), labels].sum())
    history.append(obj)
    return labels, C, obj, history


def kmeans_fit(X, config: KMeansConfig, rng: np.random.Generator) -> KMeansResult:
    config.validate()
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] < config.k:
        raise ValueError(f"need at least k={config.k} points, got {X.shape[0]}")
    best = None
    for _ in range(config.restarts):
        labels, C, obj, hist = _lloyd(X, _kmeanspp(X, config.k, rng), config.max_iters, config.tol)
        if best is None or obj < best.inertia:
            best = KMeansResult(labels, C, obj, hist)
    return best


def kmeans(X, config: KMeansConfig, rng: np.random.Generator) -> np.ndarray:
    """Best-of-restarts Lloyd partition (lowest within-cluster sum of squares)."""
    return kmeans_fit(X, config, rng).labels


def dbscan(X, config: DbscanConfig) -> np.ndarray:
    """DBSCAN labels; noise points get ``NOISE`` (-1).

    Clusters are numbered in order of their first core point, which makes the
    partition independent of the order in which points are supplied.
    """
    config.validate()
    D = pairwise_distances(X)
    n = D.shape[0]
    nbrs = [np.flatnonzero(D[i] <= config.eps) for i in range(n)]
    core = np.array([len(nb) >= config.min_pts for nb in nbrs], dtype=bool)
    labels = np.full(n, NOISE, dtype=np.int64)
    cluster = 0
    for i in range(n):
        if not core[i] or labels[i] != NOISE:
            continue
        labels[i] = cluster
        queue = deque([i])
        while queue:
            j = queue.popleft()
            if not core[j]:
                continue
            for m in nbrs[j]:
                if labels[m] == NOISE:
                    labels[m] = cluster
                    if core[m]:
                        queue.append(m)
        cluster += 1
    return labels


def single_linkage(d, threshold: float) -> np.ndarray:
    """Connected components of {(i, j) : d[i, j] < threshold}.

    Component ids are ordered by each component's smallest member index.
    """
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    D = np.asarray(d, dtype=np.float64)
    n = D.shape[0]
    uf = UnionFind(n)
    ii, jj = np.nonzero(np.triu(D < threshold, k=1))
    for a, b in zip(ii.tolist(), jj.tolist()):
        uf.union(a, b)
    labels = np.empty(n, dtype=np.int64)
    ids = {}
    for i in range(n):
        r = uf.find(i)
        if r not in ids:
            ids[r] = len(ids)
        labels[i] = ids[r]
    return labels


def dbscan_grid(X, truth, eps_grid=(0.05, 0.1, 0.15, 0.2, 0.3, 0.5), min_pts_grid=(2, 4, 8)):
    """Evaluate every grid point; returns list of (DbscanConfig, error)."""
    from metaclust.evaluation import best_match_error

    out = []
    for eps in eps_grid:
        for mp in min_pts_grid:
            cfg = DbscanConfig(eps, mp)
            out.append((cfg, best_match_error(dbscan(X, cfg), truth, noise_label=NOISE).zero_one_error))
    return out
