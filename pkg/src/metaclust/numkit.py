"""Small deterministic numerics shared by the rest of the package."""
from __future__ import annotations

import numpy as np

from metaclust import DegenerateInputError

KL_EPS = 1e-9


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator; equal seeds give equal streams on every platform."""
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


def split_seed(base_seed: int, index: int) -> int:
    return (int(base_seed) ^ int(index)) & 0xFFFFFFFFFFFFFFFF


def _check_finite(a, name="input"):
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


def softmax(v, axis=-1):
    """Max-shifted softmax along ``axis``."""
    v = _check_finite(v)
    z = v - v.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def kl_divergence(p, q, eps=KL_EPS):
    """KL(p || q) with entries of both arguments clamped below by ``eps``.

    Works on the last axis, so stacks of distributions are accepted.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape[-1] != q.shape[-1]:
        raise ValueError(f"length mismatch: {p.shape[-1]} vs {q.shape[-1]}")
    pc = np.maximum(p, eps)
    qc = np.maximum(q, eps)
    return np.maximum((p * (np.log(pc) - np.log(qc))).sum(axis=-1), 0.0)


def orthonormalize(C, tol=1e-10):
    """Orthonormal basis for the columns of square ``C`` (Householder QR).

    Column signs are fixed so that R has a positive diagonal, which makes the
    result unique and idempotent.
    """
    C = _check_finite(C, "C")
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError("orthonormalize expects a square matrix")
    Q, R = np.linalg.qr(C)
    diag = np.diag(R)
    scale = max(np.abs(C).max(), 1.0)
    if np.any(np.abs(diag) <= tol * scale * C.shape[0]):
        raise DegenerateInputError("matrix is rank deficient")
    return Q * np.sign(diag)


def pairwise_distances(X):
    X = _check_finite(X, "X")
    if X.ndim == 1:
        X = X[:, None]
    diff = X[:, None, :] - X[None, :, :]
    D = np.sqrt((diff * diff).sum(axis=-1))
    return 0.5 * (D + D.T)


def knn(distances, k):
    """Indices of the ``k`` nearest neighbours of every point (self excluded).

    Ties go to the smaller index; the list is capped at n - 1 entries.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    D = np.asarray(distances, dtype=np.float64)
    n = D.shape[0]
    kk = min(k, n - 1)
    out = np.empty((n, kk), dtype=np.int64)
    for j in range(n):
        order = np.lexsort((np.arange(n), D[j]))
        order = order[order != j]
        out[j] = order[:kk]
    return out


def pca_project(X, out_dims, tol=1e-10, max_iter=10_000):
    """Project mean-centred ``X`` onto its top principal components.

    Components come from power iteration on the covariance with deflation.
    """
    X = _check_finite(X, "X")
    n, d = X.shape
    if n < 2:
        raise ValueError("need at least two points")
    if not 1 <= out_dims <= d:
        raise ValueError("out_dims must be in [1, d]")
    Xc = X - X.mean(axis=0)
    S = Xc.T @ Xc / (n - 1)
    if np.trace(S) <= 0:
        raise DegenerateInputError("data has zero variance")
    comps = []
    A = S.copy()
    for c in range(out_dims):
        # deterministic start that is not orthogonal to the top eigenvector
        v = np.ones(d) / np.sqrt(d) + 1e-3 * np.arange(1, d + 1)
        v /= np.linalg.norm(v)
        for _ in range(max_iter):
            w = A @ v
            nw = np.linalg.norm(w)
            if nw == 0.0:
                # remaining spectrum is zero: take any unit vector orthogonal to the found ones
                for e in np.eye(d):
                    w = e - sum((e @ u) * u for u in comps) if comps else e
                    if np.linalg.norm(w) > 1e-6:
                        break
                v = w / np.linalg.norm(w)
                break
            w = w / nw
            if w @ v < 0:
                w = -w
            done = np.abs(w - v).max() < tol
            v = w
            if done:
                break
        lam = v @ A @ v
        comps.append(v)
        A = A - lam * np.outer(v, v)
    W = np.stack(comps, axis=1)
    return Xc @ W
