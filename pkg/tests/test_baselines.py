import itertools

import numpy as np
import pytest

from metaclust.baselines import (NOISE, DbscanConfig, KMeansConfig, dbscan, dbscan_grid, kmeans,
                                 kmeans_fit, single_linkage)
from metaclust.evaluation import best_match_error
from metaclust.numkit import make_rng, pairwise_distances


def _two_blobs(rng, n=20, gap=100.0):
    a = rng.normal(size=(n, 2))
    b = rng.normal(size=(n, 2)) + [gap, 0]
    return np.vstack([a, b]), np.repeat([0, 1], n)


def test_kmeans_separable():
    X, y = _two_blobs(make_rng(0))
    pred = kmeans(X, KMeansConfig(k=2), make_rng(1))
    assert best_match_error(pred, y).zero_one_error == 0.0


def test_kmeans_matches_enumeration():
    rng = make_rng(2)
    for _ in range(5):
        X = rng.normal(size=(8, 2))
        best = np.inf
        for mask in itertools.product([0, 1], repeat=8):
            m = np.array(mask, bool)
            if m.all() or not m.any():
                continue
            obj = sum(((X[s] - X[s].mean(axis=0)) ** 2).sum() for s in (m, ~m))
            best = min(best, obj)
        res = kmeans_fit(X, KMeansConfig(k=2, restarts=20), rng)
        assert abs(res.inertia - best) < 1e-9


def test_lloyd_history_is_monotone():
    rng = make_rng(3)
    for _ in range(30):
        X = rng.normal(size=(60, 3))
        res = kmeans_fit(X, KMeansConfig(k=int(rng.integers(1, 6)), restarts=1), rng)
        h = np.array(res.history)
        assert (np.diff(h) <= 1e-9 * h[0]).all()


def test_restarts_dominate_single_run():
    for s in range(10):
        X = make_rng(s).normal(size=(50, 2))
        one = kmeans_fit(X, KMeansConfig(k=4, restarts=1), make_rng(100 + s))
        many = kmeans_fit(X, KMeansConfig(k=4, restarts=10), make_rng(100 + s))
        assert many.inertia <= one.inertia


def test_kmeans_errors():
    with pytest.raises(ValueError):
        kmeans(np.zeros((2, 2)), KMeansConfig(k=3), make_rng(0))
    with pytest.raises(ValueError):
        kmeans(np.zeros((5, 2)), KMeansConfig(k=2, restarts=0), make_rng(0))


def test_kmeans_duplicate_points():
    X = np.zeros((6, 2))
    labels = kmeans(X, KMeansConfig(k=3), make_rng(0))
    assert labels.shape == (6,)


def test_dbscan_blobs_and_noise():
    X, y = _two_blobs(make_rng(5), gap=50.0)
    X = np.vstack([X, [[25.0, 25.0]]])
    labels = dbscan(X, DbscanConfig(eps=1.5, min_pts=3))
    assert labels[-1] == NOISE
    assert best_match_error(labels[:-1], y, noise_label=NOISE).zero_one_error < 0.1
    assert len(set(labels.tolist()) - {NOISE}) == 2


def _dbscan_oracle(X, eps, min_pts):
    """Clusters as transitive closure of core-core density links, plus borders."""
    D = pairwise_distances(X)
    n = len(X)
    A = D <= eps
    core = A.sum(axis=1) >= min_pts
    R = A & core[:, None] & core[None, :]
    for k in range(n):  # Warshall closure
        R |= R[:, [k]] & R[[k], :]
    blocks = set()
    for i in np.flatnonzero(core):
        members = set(np.flatnonzero(R[i]).tolist())
        members |= {j for j in range(n) if any(A[c, j] for c in members)}
        blocks.add(frozenset(members))
    return blocks


def test_dbscan_matches_closure_oracle():
    rng = make_rng(6)
    for _ in range(20):
        X = rng.normal(size=(40, 2))
        eps, mp = float(rng.uniform(0.2, 0.8)), int(rng.integers(2, 6))
        labels = dbscan(X, DbscanConfig(eps, mp))
        oracle = _dbscan_oracle(X, eps, mp)
        core_blocks = {frozenset(np.flatnonzero(labels == c).tolist()) for c in set(labels.tolist()) - {NOISE}}
        # a border point may be reachable from two clusters; every found block
        # must be a subset of an oracle block sharing its core points
        assert len(core_blocks) == len(oracle)
        for blk in core_blocks:
            assert any(blk <= ob for ob in oracle)
        noise = set(np.flatnonzero(labels == NOISE).tolist())
        assert noise == set(range(40)) - set().union(*oracle) if oracle else noise == set(range(40))


def test_dbscan_permutation_invariant():
    rng = make_rng(7)
    X = rng.normal(size=(60, 2))
    cfg = DbscanConfig(eps=0.4, min_pts=3)
    base = dbscan(X, cfg)
    perm = rng.permutation(60)
    other = dbscan(X[perm], cfg)
    back = np.empty_like(other)
    back[perm] = other
    core = (pairwise_distances(X) <= 0.4).sum(axis=1) >= 3
    # core points and noise are order independent; borders may tie-break
    assert best_match_error(back[core], base[core]).zero_one_error == 0.0
    assert np.array_equal(back == NOISE, base == NOISE)


def test_dbscan_isolated_point():
    assert dbscan(np.array([[0.0, 0.0]]), DbscanConfig(eps=1.0, min_pts=2)).tolist() == [NOISE]


def test_dbscan_grid_shape():
    X, y = _two_blobs(make_rng(8), n=10)
    out = dbscan_grid(X * 0.05, y)
    assert len(out) == 18 and min(e for _, e in out) == 0.0


def test_single_linkage_extremes():
    D = pairwise_distances(make_rng(9).normal(size=(10, 2)))
    pos = D[D > 0].min()
    assert single_linkage(D, pos).tolist() == list(range(10))
    assert (single_linkage(D, D.max() + 1) == 0).all()


def test_single_linkage_planted_partition():
    target = np.array([0, 0, 1, 1, 1, 2])
    D = np.where(target[:, None] == target[None, :], 1.0, 2.0)
    np.fill_diagonal(D, 0)
    assert single_linkage(D, 1.5).tolist() == target.tolist()


def test_single_linkage_strict_threshold():
    D = np.array([[0, 1.0], [1.0, 0]])
    assert single_linkage(D, 1.0).tolist() == [0, 1]
    assert single_linkage(D, np.nextafter(1.0, 2)).tolist() == [0, 0]


def _refines(fine, coarse):
    return all(len(set(coarse[fine == c].tolist())) == 1 for c in set(fine.tolist()))


def test_single_linkage_monotone_sweeps():
    rng = make_rng(10)
    for _ in range(100):
        D = pairwise_distances(rng.normal(size=(int(rng.integers(2, 20)), 2)))
        ts = np.sort(rng.uniform(0, D.max() * 1.1, 6))
        parts = [single_linkage(D, t) for t in ts]
        for a, b in zip(parts, parts[1:]):
            assert _refines(a, b)


def test_single_linkage_monotone_transform():
    D = pairwise_distances(make_rng(11).normal(size=(15, 2)))
    t = 0.8
    assert np.array_equal(single_linkage(D, t), single_linkage(np.exp(D), np.exp(t)))


def test_single_linkage_ids_by_smallest_member():
    D = np.array([[0, 5, 1], [5, 0, 5], [1, 5, 0]], float)
    assert single_linkage(D, 2).tolist() == [0, 1, 0]
    with pytest.raises(ValueError):
        single_linkage(D, -1)
