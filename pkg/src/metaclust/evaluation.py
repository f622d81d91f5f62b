"""Confusion matrices, Kuhn-Munkres label matching and the 0-1 clustering error."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class EvalReport:
    zero_one_error: float
    matched_permutation: dict  # predicted label -> true label
    predicted_cluster_count: int
    true_cluster_count: int

    def row(self, method="", dataset="", seed=""):
        return {"method": method, "dataset": dataset, "error": f"{self.zero_one_error:.6f}",
                "pred_k": self.predicted_cluster_count, "true_k": self.true_cluster_count, "seed": seed}


REPORT_FIELDS = ["method", "dataset", "error", "pred_k", "true_k", "seed"]


def _as_labels(x):
    a = np.asarray(x)
    if a.ndim != 1 or a.size == 0:
        raise ValueError("a partition is a non-empty 1-d label vector")
    return a.astype(np.int64)


def compact(labels):
    """Map label values to 0..m-1 in increasing order; returns (ids, values)."""
    values, ids = np.unique(_as_labels(labels), return_inverse=True)
    return ids, values


def confusion_matrix(pred, truth):
    """Counts[a, b] = #{j : pred_j = a and truth_j = b} over compacted ids."""
    pred, truth = _as_labels(pred), _as_labels(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.size} vs {truth.size}")
    p, _ = compact(pred)
    t, _ = compact(truth)
    M = np.zeros((p.max() + 1, t.max() + 1), dtype=np.int64)
    np.add.at(M, (p, t), 1)
    return M


def linear_assignment(cost):
    """Kuhn-Munkres on a square cost matrix (shortest augmenting paths with
    potentials, O(n^3)). Returns ``col`` with row i assigned to column col[i].
    """
    C = np.asarray(cost, dtype=np.float64)
    n = C.shape[0]
    if C.shape != (n, n):
        raise ValueError("cost matrix must be square")
    INF = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)    # p[j]: row matched to column j (1-based, 0 = free)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, INF)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = INF
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = C[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    col = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        col[p[j] - 1] = j - 1
    return col


def best_match_error(pred, truth, noise_label=None) -> EvalReport:
    """0-1 error under the label bijection that matches the most points.

    The confusion matrix is zero-padded to square, so surplus predicted or true
    clusters simply match nothing. Points carrying ``noise_label`` in ``pred``
    always count as errors.
    """
    pred, truth = _as_labels(pred), _as_labels(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.size} vs {truth.size}")
    n = pred.size
    keep = np.ones(n, dtype=bool) if noise_label is None else pred != noise_label
    p_ids, p_vals = compact(pred[keep]) if keep.any() else (np.zeros(0, np.int64), np.zeros(0, np.int64))
    t_ids, t_vals = compact(truth)
    kp = len(p_vals)
    M = np.zeros((max(kp, 1), len(t_vals)), dtype=np.int64)
    np.add.at(M, (p_ids, t_ids[keep]), 1)
    m = max(M.shape)
    S = np.zeros((m, m), dtype=np.int64)
    S[:M.shape[0], :M.shape[1]] = M
    col = linear_assignment(-S)
    matched = int(S[np.arange(m), col].sum())
    perm = {int(p_vals[a]): int(t_vals[col[a]]) for a in range(kp) if col[a] < len(t_vals)}
    return EvalReport(zero_one_error=1.0 - matched / n, matched_permutation=perm,
                      predicted_cluster_count=estimated_cluster_count(pred[keep]) if keep.any() else 0,
                      true_cluster_count=len(t_vals))


def estimated_cluster_count(pred) -> int:
    return int(np.unique(np.asarray(pred)).size)
