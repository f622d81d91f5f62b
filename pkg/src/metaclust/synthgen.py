"""Synthetic clustering tasks: Gaussian blobs, optional swirl, sorted labels."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from metaclust import DegenerateInputError
from metaclust.numkit import orthonormalize

MAX_REDRAWS = 100


@dataclass
class GenConfig:
    dims: int = 2
    cluster_count_range: tuple = (2, 2)
    points_per_task: int = 100
    mean_box: float = 1.0
    cov_scale_lo: float = 2.0
    cov_scale_span: float = 3.0
    swirl_applications: int = 2
    swirl_scale_lo: float = 1.0
    swirl_scale_span: float = 2.0
    balanced: bool = True
    bias_toward_more_clusters: bool = False

    def __post_init__(self):
        self.cluster_count_range = tuple(int(k) for k in self.cluster_count_range)

    def validate(self, max_clusters: Optional[int] = None):
        k_min, k_max = self.cluster_count_range
        if self.dims < 1:
            raise ValueError("dims must be >= 1")
        if not 1 <= k_min <= k_max:
            raise ValueError(f"bad cluster_count_range {self.cluster_count_range}")
        if self.points_per_task < k_max:
            raise ValueError("points_per_task must be >= the largest cluster count")
        if self.mean_box <= 0 or self.cov_scale_lo <= 0 or self.swirl_scale_lo <= 0:
            raise ValueError("mean_box, cov_scale_lo and swirl_scale_lo must be > 0")
        if self.cov_scale_span < 0 or self.swirl_scale_span < 0 or self.swirl_applications < 0:
            raise ValueError("spans and swirl_applications must be >= 0")
        if max_clusters is not None and k_max > max_clusters:
            raise ValueError(f"K_max={k_max} exceeds model output width {max_clusters}")

    def to_dict(self):
        d = asdict(self)
        d["cluster_count_range"] = list(self.cluster_count_range)
        return d


@dataclass
class ClusterSpec:
    mean: np.ndarray
    factor: np.ndarray  # covariance factor; covariance = factor.T @ factor
    scale: float

    @property
    def covariance(self):
        return self.factor.T @ self.factor


@dataclass
class Task:
    points: np.ndarray
    labels: Optional[np.ndarray] = None
    K: int = field(default=0)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2:
            raise ValueError("points must be an n x d array")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.points.shape[0],):
                raise ValueError("labels must have one entry per point")
            if self.labels.size and self.labels.min() < 0:
                raise ValueError("labels must be nonnegative")
            if not self.K:
                self.K = int(self.labels.max()) + 1 if self.labels.size else 0

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def d(self):
        return self.points.shape[1]


def sample_cluster_spec(config: GenConfig, rng: np.random.Generator) -> ClusterSpec:
    d = config.dims
    mean = rng.uniform(-config.mean_box, config.mean_box, size=d)
    scale = config.cov_scale_lo + config.cov_scale_span * rng.random()
    for _ in range(MAX_REDRAWS):
        C = rng.standard_normal((d, d))
        try:
            Q = orthonormalize(C)
        except DegenerateInputError:
            continue
        return ClusterSpec(mean=mean, factor=Q / scale, scale=scale)
    raise DegenerateInputError(f"no full-rank draw in {MAX_REDRAWS} attempts")


def sample_gaussian_cluster(spec: ClusterSpec, m: int, rng: np.random.Generator):
    """``m`` draws of mean + factor.T @ z with z standard normal."""
    if m < 1:
        raise ValueError("m must be >= 1")
    z = rng.standard_normal((m, spec.mean.shape[0]))
    return spec.mean + z @ spec.factor


def swirl_transform(X, p: int, q: int, k_r: float, inverse: bool = False):
    """Rotate each point in the (p, q) plane by pi * r / k_r, r = ||(x_p, x_q)||.

    The radius is unchanged by the rotation, so ``inverse=True`` undoes it.
    """
    X = np.array(X, dtype=np.float64, copy=True)
    if p == q:
        raise ValueError("p and q must differ")
    if k_r <= 0:
        raise ValueError("k_r must be > 0")
    xp, xq = X[:, p].copy(), X[:, q].copy()
    t = np.pi * np.hypot(xp, xq) / k_r
    if inverse:
        t = -t
    c, s = np.cos(t), np.sin(t)
    X[:, p] = c * xp + s * xq
    X[:, q] = -s * xp + c * xq
    return X


def assign_labels(means: Sequence) -> np.ndarray:
    """Label id for each cluster, ordered by first mean coordinate.

    Ties fall back to the second coordinate, then to input order. Accepts
    ClusterSpec objects or plain mean vectors.
    """
    ms = [np.asarray(m.mean if isinstance(m, ClusterSpec) else m, dtype=np.float64) for m in means]
    if not ms:
        raise ValueError("need at least one cluster")
    first = [m[0] for m in ms]
    second = [m[1] if m.shape[0] > 1 else 0.0 for m in ms]
    order = np.lexsort((np.arange(len(ms)), second, first))
    ids = np.empty(len(ms), dtype=np.int64)
    ids[order] = np.arange(len(ms))
    return ids


def _draw_cluster_count(config: GenConfig, rng):
    k_min, k_max = config.cluster_count_range
    ks = np.arange(k_min, k_max + 1)
    if config.bias_toward_more_clusters:
        w = ks / ks.sum()
        return int(rng.choice(ks, p=w))
    return int(rng.integers(k_min, k_max + 1))


def _cluster_sizes(n, K, balanced, rng):
    if balanced:
        sizes = np.full(K, n // K)
        sizes[: n % K] += 1
        return sizes
    # every cluster keeps at least one point
    return 1 + rng.multinomial(n - K, np.full(K, 1.0 / K))


def generate_task(config: GenConfig, rng: np.random.Generator, max_clusters: Optional[int] = None) -> Task:
    """One labelled task drawn from ``config``.

    Labels are ordered by the first coordinate of each cluster's centroid
    after the swirl, so the id order tracks where clusters actually lie.
    """
    config.validate(max_clusters)
    K = _draw_cluster_count(config, rng)
    sizes = _cluster_sizes(config.points_per_task, K, config.balanced, rng)
    d = config.dims
    blocks = []
    for i in range(K):
        spec = sample_cluster_spec(config, rng)
        pts = sample_gaussian_cluster(spec, int(sizes[i]), rng)
        for _ in range(config.swirl_applications if d >= 2 else 0):
            p, q = rng.choice(d, size=2, replace=False)
            k_r = config.swirl_scale_lo + config.swirl_scale_span * rng.random()
            pts = swirl_transform(pts, int(p), int(q), k_r)
        blocks.append(pts)
    ids = assign_labels([b.mean(axis=0) for b in blocks])
    points = np.concatenate(blocks)
    labels = np.concatenate([np.full(len(b), ids[i]) for i, b in enumerate(blocks)])
    perm = rng.permutation(points.shape[0])
    return Task(points=points[perm], labels=labels[perm], K=K)


def generate_tasks(config: GenConfig, count: int, seed: int, max_clusters: Optional[int] = None):
    """``count`` tasks, task i drawn from its own stream seeded base_seed XOR i."""
    from metaclust.numkit import make_rng, split_seed

    return [generate_task(config, make_rng(split_seed(seed, i)), max_clusters) for i in range(count)]
