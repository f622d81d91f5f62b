"""Threshold-selecting single-linkage as a meta-clusterer, and randomized
checks of meta scale-invariance, richness and consistency.

The meta step picks the threshold ``tau * max(d_reference)``; the clustering
step runs single-linkage on a (possibly different) distance matrix with that
threshold.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from metaclust import DegenerateInputError
from metaclust.baselines import single_linkage
from metaclust.numkit import pairwise_distances

BOUNDARY_REL = 1e-9


@dataclass(frozen=True)
class MetaClusterer:
    tau: float = 0.75

    def __post_init__(self):
        if not 0.5 < self.tau < 1.0:
            raise ValueError("tau must lie strictly between 1/2 and 1")


@dataclass(frozen=True)
class SelectedAlgorithm:
    threshold: float

    def __call__(self, d):
        return single_linkage(d, self.threshold)


def validate_distances(d, metric: bool = False):
    """Square, symmetric, nonnegative, zero diagonal; triangle inequality only if ``metric``."""
    D = np.asarray(d, dtype=np.float64)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ValueError("distance matrix must be square")
    if not np.all(np.isfinite(D)) or (D < 0).any():
        raise ValueError("distances must be finite and nonnegative")
    if not np.array_equal(D, D.T) or np.any(np.diag(D) != 0):
        raise ValueError("distance matrix must be symmetric with zero diagonal")
    if metric:
        viol = D[:, None, :] > D[:, :, None] + D[None, :, :] + 1e-12 * D.max()
        if viol.any():
            raise ValueError("triangle inequality violated")
    return D


def meta_select(mc: MetaClusterer, d) -> SelectedAlgorithm:
    D = validate_distances(d)
    if D.shape[0] < 2:
        raise ValueError("need at least two points")
    rho = float(D.max())
    if rho == 0.0:
        raise DegenerateInputError("all distances are zero")
    return SelectedAlgorithm(mc.tau * rho)


def meta_cluster(mc: MetaClusterer, d_reference, d_apply=None) -> np.ndarray:
    """Cluster ``d_apply`` with the threshold chosen from ``d_reference``."""
    d_apply = d_reference if d_apply is None else d_apply
    Da = validate_distances(d_apply)
    if Da.shape != np.shape(d_reference):
        raise ValueError("reference and applied distance matrices differ in size")
    return meta_select(mc, d_reference)(Da)


def canonical(partition):
    """Sorted tuple of sorted blocks; label ids play no role."""
    blocks = {}
    for i, lab in enumerate(np.asarray(partition).tolist()):
        blocks.setdefault(lab, []).append(i)
    return tuple(sorted(tuple(b) for b in blocks.values()))


def same_partition(a, b) -> bool:
    return canonical(a) == canonical(b)


def richness_metric(target) -> np.ndarray:
    """Distance 1 inside blocks and 2 across them.

    For a single block one arbitrary pair (the first two points) is set to 2,
    which needs at least three points to keep everything connected.
    """
    labels = np.asarray(target)
    n = labels.size
    if n < 2:
        raise ValueError("need at least two points")
    D = np.where(labels[:, None] == labels[None, :], 1.0, 2.0)
    if np.unique(labels).size == 1:
        if n <= 2:
            raise ValueError("a single-cluster target needs more than two points")
        D[0, 1] = D[1, 0] = 2.0
    np.fill_diagonal(D, 0.0)
    return D


def consistent_perturbation(d, partition, rng: np.random.Generator, within=(0.2, 1.0), across=(1.0, 3.0)):
    """Shrink within-cluster and stretch cross-cluster distances by random
    per-pair factors drawn from ``within`` and ``across``."""
    D = validate_distances(d)
    labels = np.asarray(partition)
    n = D.shape[0]
    same = labels[:, None] == labels[None, :]
    u_in = rng.uniform(*within, size=(n, n))
    u_out = rng.uniform(*across, size=(n, n))
    scale = np.triu(np.where(same, u_in, u_out), k=1)
    scale = scale + scale.T
    out = D * scale
    np.fill_diagonal(out, 0.0)
    return out


@dataclass
class Verdict:
    holds: bool
    boundary_case: bool = False
    detail: dict = field(default_factory=dict)

    @property
    def counterexample(self):
        return not self.holds and not self.boundary_case


def near_threshold(d, threshold, rel=BOUNDARY_REL) -> bool:
    D = np.asarray(d)
    off = ~np.eye(D.shape[0], dtype=bool)
    return bool(np.any(np.abs(D[off] - threshold) <= rel * D.max()))


def check_meta_scale_invariance(mc: MetaClusterer, d, alpha: float) -> Verdict:
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    D = validate_distances(d)
    a = meta_cluster(mc, D, D)
    Ds = alpha * D
    b = meta_cluster(mc, Ds, Ds)
    holds = same_partition(a, b)
    boundary = near_threshold(D, meta_select(mc, D).threshold)
    return Verdict(holds, boundary_case=boundary and not holds,
                   detail={"tau": mc.tau, "alpha": alpha, "d": D.tolist(),
                           "partition": a.tolist(), "scaled_partition": b.tolist()})


def check_meta_consistency(mc: MetaClusterer, d, rng: np.random.Generator, d_prime=None) -> Verdict:
    """C = M[d](d), d' a consistent perturbation of d w.r.t. C, then M[d](d') == C?

    Also checks the graph-level reason: every edge of d survives in d', and
    d' has no edge between different blocks of C.
    """
    D = validate_distances(d)
    C = meta_cluster(mc, D, D)
    Dp = consistent_perturbation(D, C, rng) if d_prime is None else validate_distances(d_prime)
    C2 = meta_cluster(mc, D, Dp)
    lam = meta_select(mc, D).threshold
    off = ~np.eye(D.shape[0], dtype=bool)
    e, ep = (D < lam) & off, (Dp < lam) & off
    cross = C[:, None] != C[None, :]
    graph_ok = bool(not (e & ~ep).any() and not (ep & cross).any())
    return Verdict(same_partition(C, C2) and graph_ok,
                   detail={"tau": mc.tau, "d": D.tolist(), "d_prime": Dp.tolist(),
                           "partition": C.tolist(), "perturbed_partition": C2.tolist(),
                           "graph_ok": graph_ok})


def check_meta_richness(mc: MetaClusterer, target) -> Verdict:
    D = richness_metric(target)
    out = meta_cluster(mc, D, D)
    return Verdict(same_partition(out, target),
                   detail={"tau": mc.tau, "target": np.asarray(target).tolist(), "partition": out.tolist()})


# -- random campaigns ----------------------------------------------------------

def random_distance_matrix(rng: np.random.Generator, n: Optional[int] = None, tau: Optional[float] = None,
                           max_redraws: int = 1000):
    """Random symmetric distance matrix, either Euclidean from a point cloud
    or arbitrary positive entries. With ``tau`` given, no entry lies within
    BOUNDARY_REL * max of the selected threshold."""
    n = int(rng.integers(3, 16)) if n is None else n
    for _ in range(max_redraws):
        if rng.random() < 0.5:
            pts = rng.normal(size=(n, int(rng.integers(1, 4)))) * rng.uniform(0.1, 10)
            D = pairwise_distances(pts)
        else:
            A = rng.uniform(0.01, 1.0, size=(n, n))
            D = np.triu(A, 1)
            D = D + D.T
        if D.max() == 0:
            continue
        if tau is None or not near_threshold(D, tau * D.max()):
            return D
    raise RuntimeError("could not draw a distance matrix outside the boundary zone")


def random_partition(rng: np.random.Generator, n: int) -> np.ndarray:
    mode = rng.random()
    if mode < 0.2:
        return np.zeros(n, dtype=np.int64)
    if mode < 0.3:
        return np.arange(n, dtype=np.int64)
    k = int(rng.integers(1, n + 1))
    return rng.integers(0, k, size=n)


@dataclass
class CampaignResult:
    name: str
    trials: int
    failures: List[dict] = field(default_factory=list)
    boundary_cases: int = 0

    @property
    def passed(self):
        return not self.failures


def scale_invariance_campaign(trials: int, rng: np.random.Generator) -> CampaignResult:
    res = CampaignResult("meta-scale-invariance", trials)
    for _ in range(trials):
        mc = MetaClusterer(_open_tau(rng))
        D = random_distance_matrix(rng, tau=mc.tau)
        alpha = float(10 ** rng.uniform(-3, 3))
        v = check_meta_scale_invariance(mc, D, alpha)
        if v.boundary_case:
            res.boundary_cases += 1
        elif not v.holds:
            res.failures.append(v.detail)
    return res


def richness_campaign(trials: int, rng: np.random.Generator) -> CampaignResult:
    res = CampaignResult("meta-richness", trials)
    for _ in range(trials):
        mc = MetaClusterer(_open_tau(rng))
        target = random_partition(rng, int(rng.integers(3, 31)))
        v = check_meta_richness(mc, target)
        if not v.holds:
            res.failures.append(v.detail)
    return res


def consistency_campaign(trials: int, rng: np.random.Generator) -> CampaignResult:
    res = CampaignResult("meta-consistency", trials)
    for _ in range(trials):
        mc = MetaClusterer(_open_tau(rng))
        D = random_distance_matrix(rng, tau=mc.tau)
        v = check_meta_consistency(mc, D, rng)
        if not v.holds:
            res.failures.append(v.detail)
    return res


def _open_tau(rng):
    # tau strictly inside (1/2, 1)
    while True:
        t = float(rng.uniform(0.5, 1.0))
        if 0.5 < t < 1.0:
            return t


def fixed_threshold_witness(rng: np.random.Generator, threshold: float = 1.0, tries: int = 1000):
    """A (d, alpha) for which plain single-linkage with a fixed threshold
    changes its partition under scaling; shows why the meta step matters."""
    for _ in range(tries):
        D = random_distance_matrix(rng)
        alpha = float(10 ** rng.uniform(-2, 2))
        a = single_linkage(D, threshold)
        b = single_linkage(alpha * D, threshold)
        if not same_partition(a, b):
            return {"d": D.tolist(), "alpha": alpha, "threshold": threshold,
                    "partition": a.tolist(), "scaled_partition": b.tolist()}
    return None
