"""Losses, Adam, the meta-training loop and multi-pass prediction."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Union

import numpy as np

from metaclust import TrainingDivergenceError
from metaclust.model import (ModelParams, RecurrentState, backward_sequence,
                             forward_sequence)
from metaclust.numkit import KL_EPS, knn, make_rng, pairwise_distances
from metaclust.synthgen import Task

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lam: float = 0.5
    neighbors: int = 3
    batch_size: int = 16
    epochs_per_iteration: int = 3
    iterations: int = 100
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    grad_clip: float = 5.0
    seed: int = 0
    teacher_forcing: bool = False
    share_state_across_batch: bool = False

    def validate(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")
        if self.neighbors < 1 or self.batch_size < 1 or self.epochs_per_iteration < 1 or self.iterations < 0:
            raise ValueError("neighbors, batch_size, epochs_per_iteration must be >= 1 and iterations >= 0")
        if not (self.lr > 0 and 0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps_adam > 0):
            raise ValueError("Adam constants out of range")
        if self.grad_clip <= 0:
            raise ValueError("grad_clip must be > 0")


# -- losses ------------------------------------------------------------------

def _check_labels(labels, K):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise ValueError(f"labels must lie in [0, {K})")
    return labels


def classification_loss(scores, labels, eps=KL_EPS, return_grad=False):
    """-sum_j log r_j[s_j]; scores are (n, K) or (n, B, K)."""
    S = np.asarray(scores, dtype=np.float64)
    labels = _check_labels(labels, S.shape[-1])
    picked = np.take_along_axis(S, labels[..., None], axis=-1)[..., 0]
    loss = -np.log(np.maximum(picked, eps)).sum(axis=0)
    if not return_grad:
        return loss
    grad = np.zeros_like(S)
    g = np.where(picked > eps, -1.0 / np.maximum(picked, eps), 0.0)
    np.put_along_axis(grad, labels[..., None], g[..., None], axis=-1)
    return loss, grad


def local_loss(scores, neighbors, eps=KL_EPS, return_grad=False):
    """sum_j sum_{j' in N(j)} KL(r_j || r_j').

    ``neighbors`` holds positions into the first axis of ``scores``; shape
    (n, k) for one task or (n, B, k) for a batch.
    """
    S = np.asarray(scores, dtype=np.float64)
    nb = np.asarray(neighbors, dtype=np.int64)
    single = S.ndim == 2
    if single:
        S, nb = S[:, None, :], nb[:, None, :]
    n, B, K = S.shape
    if nb.size and (nb.min() < 0 or nb.max() >= n):
        raise ValueError("neighbor index out of range")
    cols = np.broadcast_to(np.arange(B)[None, :, None], nb.shape)
    P = S[:, :, None, :]                # (n, B, 1, K)
    Q = S[nb, cols]                     # (n, B, k, K)
    lp = np.log(np.maximum(P, eps))
    lq = np.log(np.maximum(Q, eps))
    loss = (P * (lp - lq)).sum(axis=(0, 2, 3))
    if single:
        loss = loss[0]
    if not return_grad:
        return loss
    dP = ((lp - lq) + (P > eps)).sum(axis=2)
    dQ = np.where(Q > eps, -P / np.maximum(Q, eps), 0.0)
    grad = dP.copy()
    np.add.at(grad, (nb, cols), dQ)
    return loss, (grad[:, 0, :] if single else grad)


def meta_loss(scores, labels, neighbors, lam, return_grad=False):
    """lam * classification + (1 - lam) * local."""
    if not return_grad:
        return lam * classification_loss(scores, labels) + (1.0 - lam) * local_loss(scores, neighbors)
    lc, gc = classification_loss(scores, labels, return_grad=True)
    ll, gl = local_loss(scores, neighbors, return_grad=True)
    return lam * lc + (1.0 - lam) * ll, lam * gc + (1.0 - lam) * gl


# -- optimiser -----------------------------------------------------------------

@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros(cls, params: ModelParams):
        return cls([np.zeros_like(a) for a in params.arrays()],
                   [np.zeros_like(a) for a in params.arrays()], 0)


def adam_step(params: ModelParams, grads: ModelParams, state: AdamState, config: TrainConfig):
    """In-place bias-corrected Adam update after global-norm clipping.

    Returns the pre-clip gradient norm.
    """
    gs = grads.arrays()
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in gs)))
    if not np.isfinite(norm):
        raise TrainingDivergenceError("non-finite gradient")
    scale = min(1.0, config.grad_clip / norm) if norm > 0 else 1.0
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params.arrays(), gs, state.m, state.v):
        g = g * scale
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= config.lr * (m / c1) / (np.sqrt(v / c2) + config.eps_adam)
    return norm


# -- training --------------------------------------------------------------------

@dataclass
class TrainReport:
    loss: List[float] = field(default_factory=list)
    train_error: List[float] = field(default_factory=list)
    seconds: List[float] = field(default_factory=list)

    def rows(self):
        return [{"iteration": i + 1, "loss": l, "train_error": e, "seconds": s}
                for i, (l, e, s) in enumerate(zip(self.loss, self.train_error, self.seconds))]

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=["iteration", "loss", "train_error", "seconds"])
            w.writeheader()
            for row in self.rows():
                w.writerow(row)


TaskSource = Union[Sequence[Task], Callable[[np.random.Generator], Task]]


def _sample_batch(tasks: TaskSource, n: int, rng):
    if callable(tasks):
        return [tasks(rng) for _ in range(n)]
    idx = rng.choice(len(tasks), size=n, replace=len(tasks) < n)
    return [tasks[i] for i in idx]


def _neighbor_lists(task: Task, k: int):
    return knn(pairwise_distances(task.points), k)


def _error(pred, truth):
    from metaclust.evaluation import best_match_error
    return best_match_error(pred, truth).zero_one_error


class _Group:
    """Tasks of equal length pushed through the network as one batch."""

    def __init__(self, tasks, params, k):
        self.tasks = tasks
        self.nbrs = [_neighbor_lists(t, k) for t in tasks]
        self.state = RecurrentState.clear(params, len(tasks))

    def epoch(self, params, config, rng):
        n = self.tasks[0].n
        B = len(self.tasks)
        perms = [rng.permutation(n) for _ in range(B)]
        X = np.stack([t.points[p] for t, p in zip(self.tasks, perms)], axis=1)
        Y = np.stack([t.labels[p] for t, p in zip(self.tasks, perms)], axis=1)
        NP = np.empty((n, B, self.nbrs[0].shape[1]), dtype=np.int64)
        for b, p in enumerate(perms):
            inv = np.empty(n, dtype=np.int64)
            inv[p] = np.arange(n)
            NP[:, b, :] = inv[self.nbrs[b][p]]
        scores, self.state, tape = forward_sequence(
            params, X, self.state, teacher_labels=Y if config.teacher_forcing else None)
        loss, dS = meta_loss(scores, Y, NP, config.lam, return_grad=True)
        errs = [_error(scores[:, b].argmax(axis=1), Y[:, b]) for b in range(B)]
        return loss, errs, tape, dS


def train(params: ModelParams, tasks: TaskSource, config: TrainConfig,
          rng: Optional[np.random.Generator] = None, callback=None):
    """Meta-train ``params`` in place; returns (params, TrainReport).

    Each iteration samples ``batch_size`` tasks. Tasks of equal length run as
    one batch with independent recurrent states. Per epoch every task gets a
    fresh shuffle, the state carries over from the previous epoch without
    gradient, and the per-task losses are averaged into one Adam step.
    """
    config.validate()
    rng = rng if rng is not None else make_rng(config.seed)
    adam = AdamState.zeros(params)
    report = TrainReport()
    for it in range(config.iterations):
        t0 = time.perf_counter()
        batch = _sample_batch(tasks, config.batch_size, rng)
        for t in batch:
            if t.labels is None:
                raise ValueError("training tasks must carry labels")
            if t.d != params.d:
                raise ValueError(f"task has {t.d} features, model expects {params.d}")
            if t.labels.max() >= params.K_out:
                raise ValueError("task has more clusters than the model can output")
        losses, errors = [], []
        if config.share_state_across_batch:
            state = RecurrentState.clear(params, 1)
            for task in batch:
                g = _Group([task], params, config.neighbors)
                g.state = state
                for _ in range(config.epochs_per_iteration):
                    loss, errs, tape, dS = g.epoch(params, config, rng)
                    adam_step(params, backward_sequence(params, tape, dS), adam, config)
                    losses.append(float(loss.mean()) / task.n)
                state = g.state
                errors.extend(errs)
        else:
            by_len = {}
            for task in batch:
                by_len.setdefault(task.n, []).append(task)
            groups = [_Group(ts, params, config.neighbors) for ts in by_len.values()]
            for e in range(config.epochs_per_iteration):
                total = params.zeros_like()
                last = e == config.epochs_per_iteration - 1
                for g in groups:
                    loss, errs, tape, dS = g.epoch(params, config, rng)
                    grad = backward_sequence(params, tape, dS / len(batch))
                    for a, b in zip(total.arrays(), grad.arrays()):
                        a += b
                    losses.extend((loss / g.tasks[0].n).tolist())
                    if last:
                        errors.extend(errs)
                adam_step(params, total, adam, config)
        if not all(np.all(np.isfinite(a)) for a in params.arrays()):
            raise TrainingDivergenceError(f"non-finite parameters after iteration {it + 1}")
        report.loss.append(float(np.mean(losses)))
        report.train_error.append(float(np.mean(errors)))
        report.seconds.append(time.perf_counter() - t0)
        log.debug("iteration %d loss %.4f err %.3f", it + 1, report.loss[-1], report.train_error[-1])
        if callback is not None:
            callback(it, params, report)
    return params, report


# -- prediction -------------------------------------------------------------------

def predict_scores(params: ModelParams, points_list, epochs: int = 3,
                   rng: Optional[np.random.Generator] = None, seed: int = 0):
    """Final-pass score vectors for each dataset, in original point order."""
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    rng = rng if rng is not None else make_rng(seed)
    arrays = [np.asarray(p, dtype=np.float64) for p in points_list]
    for X in arrays:
        if X.ndim != 2 or X.shape[1] != params.d:
            raise ValueError(f"points must be (n, {params.d}); pad narrower data first")
    out = [None] * len(arrays)
    by_len = {}
    for i, X in enumerate(arrays):
        by_len.setdefault(X.shape[0], []).append(i)
    for n, idx in by_len.items():
        state = RecurrentState.clear(params, len(idx))
        for _ in range(epochs):
            perms = [rng.permutation(n) for _ in idx]
            Xs = np.stack([arrays[i][p] for i, p in zip(idx, perms)], axis=1)
            scores, state, _ = forward_sequence(params, Xs, state)
        for b, (i, p) in enumerate(zip(idx, perms)):
            s = np.empty((n, params.K_out))
            s[p] = scores[:, b]
            out[i] = s
    return out


def predict(params: ModelParams, points, epochs: int = 3,
            rng: Optional[np.random.Generator] = None, seed: int = 0):
    """Cluster ids for one dataset after ``epochs`` shuffled passes."""
    return predict_scores(params, [points], epochs, rng, seed)[0].argmax(axis=1)


def predict_many(params: ModelParams, points_list, epochs: int = 3,
                 rng: Optional[np.random.Generator] = None, seed: int = 0):
    return [s.argmax(axis=1) for s in predict_scores(params, points_list, epochs, rng, seed)]
