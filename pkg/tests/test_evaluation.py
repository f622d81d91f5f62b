import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metaclust.evaluation import (REPORT_FIELDS, best_match_error, confusion_matrix,
                                  estimated_cluster_count, linear_assignment)
from metaclust.numkit import make_rng


def brute_force_error(pred, truth):
    """Try every injective relabelling of the predicted ids."""
    pv, tv = sorted(set(pred)), sorted(set(truth))
    m = max(len(pv), len(tv))
    targets = tv + [None] * (m - len(tv))
    best = 0
    for perm in itertools.permutations(targets, len(pv)):
        mapping = dict(zip(pv, perm))
        best = max(best, sum(mapping[p] == t for p, t in zip(pred, truth)))
    return 1 - best / len(pred)


def test_confusion_small_cases():
    assert confusion_matrix([0, 1, 1, 0], [0, 1, 1, 0]).tolist() == [[2, 0], [0, 2]]
    M = confusion_matrix([5, 5, 9], [0, 1, 1])
    assert M.tolist() == [[1, 1], [0, 1]]


def test_confusion_matches_counting_oracle():
    rng = make_rng(0)
    pred, truth = rng.integers(0, 4, 50), rng.integers(0, 3, 50)
    M = confusion_matrix(pred, truth)
    pv, tv = sorted(set(pred.tolist())), sorted(set(truth.tolist()))
    for a, p in enumerate(pv):
        for b, t in enumerate(tv):
            assert M[a, b] == sum(1 for j in range(50) if pred[j] == p and truth[j] == t)
    assert M.sum(axis=1).tolist() == [int((pred == p).sum()) for p in pv]
    assert M.sum(axis=0).tolist() == [int((truth == t).sum()) for t in tv]


def test_length_mismatch():
    with pytest.raises(ValueError):
        confusion_matrix([0, 1], [0])
    with pytest.raises(ValueError):
        best_match_error([0, 1], [0])


def test_linear_assignment_brute_force():
    rng = make_rng(1)
    for _ in range(200):
        n = int(rng.integers(1, 7))
        C = rng.integers(-20, 20, (n, n)).astype(float)
        col = linear_assignment(C)
        assert sorted(col.tolist()) == list(range(n))
        best = min(sum(C[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n)))
        assert C[np.arange(n), col].sum() == best


def test_identity_and_relabelling():
    truth = np.array([0, 0, 1, 2, 2, 1, 3])
    assert best_match_error(truth, truth).zero_one_error == 0.0
    rep = best_match_error(np.array([7, 3, 1, 0])[truth], truth)
    assert rep.zero_one_error == 0.0
    assert rep.matched_permutation == {7: 0, 3: 1, 1: 2, 0: 3}


def test_matches_brute_force_on_random_instances():
    rng = make_rng(2)
    for _ in range(300):
        n = int(rng.integers(1, 25))
        pred = rng.integers(0, int(rng.integers(1, 7)), n) * 3
        truth = rng.integers(0, int(rng.integers(1, 7)), n)
        assert best_match_error(pred, truth).zero_one_error == brute_force_error(pred.tolist(), truth.tolist())


def test_noise_always_counts_as_error():
    truth = np.array([0, 0, 1, 1])
    assert best_match_error([-1, -1, -1, -1], truth, noise_label=-1).zero_one_error == 1.0
    assert best_match_error([0, -1, 1, 1], truth, noise_label=-1).zero_one_error == 0.25
    # without the noise flag -1 is just another label
    assert best_match_error([-1, -1, 1, 1], truth).zero_one_error == 0.0


def test_mismatched_counts_padded():
    rep = best_match_error([0, 0, 0, 0], [0, 0, 1, 1])
    assert rep.zero_one_error == 0.5 and rep.predicted_cluster_count == 1 and rep.true_cluster_count == 2
    rep = best_match_error([0, 1, 2, 3], [0, 0, 1, 1])
    assert rep.zero_one_error == 0.5 and len(rep.matched_permutation) == 2


@settings(max_examples=100)
@given(st.lists(st.integers(0, 3), min_size=1, max_size=30), st.permutations([0, 1, 2, 3]), st.integers(0, 99))
def test_permutation_invariance(pred, sigma, seed):
    pred = np.array(pred)
    truth = make_rng(seed).integers(0, 3, pred.size)
    base = best_match_error(pred, truth).zero_one_error
    assert best_match_error(np.array(sigma)[pred], truth).zero_one_error == base
    assert 0.0 <= base <= 1.0


@settings(max_examples=100)
@given(st.integers(0, 10_000), st.integers(2, 5))
def test_symmetric_with_equal_label_counts(seed, k):
    rng = make_rng(seed)
    n = 20
    a = np.concatenate([np.arange(k), rng.integers(0, k, n - k)])
    b = np.concatenate([np.arange(k), rng.integers(0, k, n - k)])
    assert best_match_error(a, b).zero_one_error == best_match_error(b, a).zero_one_error


def test_estimated_cluster_count():
    assert estimated_cluster_count([4, 4, 4]) == 1
    assert estimated_cluster_count([0, 2, 2, 4]) == 3
    rng = make_rng(3)
    for _ in range(50):
        v = rng.integers(0, 10, int(rng.integers(1, 40)))
        assert estimated_cluster_count(v) == len(set(v.tolist()))


def test_report_row():
    row = best_match_error([0, 1], [1, 0]).row("kmeans", "swirl", 3)
    assert list(row) == REPORT_FIELDS
    assert row["error"] == "0.000000" and row["pred_k"] == 2
