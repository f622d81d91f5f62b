"""Recurrent meta-clustering network.

Four stacked LSTM layers. Layer 1 reads the datapoint concatenated with the
previous score vector, layers 2 and 3 carry identity skips, and the hidden
state of layer 4 (one unit per cluster id) is softmax-normalised into the
score vector. Everything is float64 numpy with a hand-written BPTT pass.

Arrays inside the forward/backward pass are batched: shape (B, width), one row
per task, so several tasks of equal length can be pushed through together.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from metaclust.numkit import softmax

GATES = ("i", "f", "g", "o")
FORMAT_VERSION = 1


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class LayerParams:
    """Weights of one LSTM layer, gates stacked in i, f, g, o order."""

    W: np.ndarray  # (4H, in)
    U: np.ndarray  # (4H, H)
    b: np.ndarray  # (4H,)

    @property
    def hidden(self):
        return self.U.shape[1]

    @property
    def in_dim(self):
        return self.W.shape[1]

    def arrays(self):
        return [self.W, self.U, self.b]


@dataclass
class ModelParams:
    d: int
    hidden: int
    K_out: int
    layers: List[LayerParams]

    def arrays(self):
        return [a for layer in self.layers for a in layer.arrays()]

    def zeros_like(self) -> "ModelParams":
        return ModelParams(self.d, self.hidden, self.K_out,
                           [LayerParams(np.zeros_like(l.W), np.zeros_like(l.U), np.zeros_like(l.b))
                            for l in self.layers])

    def copy(self) -> "ModelParams":
        return ModelParams(self.d, self.hidden, self.K_out,
                           [LayerParams(l.W.copy(), l.U.copy(), l.b.copy()) for l in self.layers])

    def flat(self):
        return np.concatenate([a.ravel() for a in self.arrays()])

    def set_flat(self, v):
        v = np.asarray(v, dtype=np.float64)
        off = 0
        for a in self.arrays():
            a[...] = v[off:off + a.size].reshape(a.shape)
            off += a.size
        if off != v.size:
            raise ValueError("flat vector has the wrong length")

    def validate(self):
        widths = [self.hidden] * 3 + [self.K_out]
        ins = [self.d + self.K_out] + [self.hidden] * 3
        if len(self.layers) != 4:
            raise ValueError("expected four layers")
        for l, (h, i) in enumerate(zip(widths, ins)):
            L = self.layers[l]
            if L.W.shape != (4 * h, i) or L.U.shape != (4 * h, h) or L.b.shape != (4 * h,):
                raise ValueError(f"layer {l} has inconsistent shapes")
        if not all(np.all(np.isfinite(a)) for a in self.arrays()):
            raise ValueError("parameters must be finite")

    # -- checkpoint format -------------------------------------------------
    def to_dict(self):
        layers = []
        for L in self.layers:
            H = L.hidden
            entry = {}
            for k, gate in enumerate(GATES):
                entry[f"w_i{gate}"] = L.W[k * H:(k + 1) * H].ravel().tolist()
            for k, gate in enumerate(GATES):
                entry[f"w_h{gate}"] = L.U[k * H:(k + 1) * H].ravel().tolist()
            for k, gate in enumerate(GATES):
                entry[f"b_{gate}"] = L.b[k * H:(k + 1) * H].tolist()
            layers.append(entry)
        return {"format_version": FORMAT_VERSION,
                "dims": {"d": self.d, "hidden": self.hidden, "K_out": self.K_out},
                "layers": layers}

    @classmethod
    def from_dict(cls, obj) -> "ModelParams":
        if obj.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format {obj.get('format_version')!r}")
        dims = obj["dims"]
        d, hidden, K_out = int(dims["d"]), int(dims["hidden"]), int(dims["K_out"])
        if len(obj["layers"]) != 4:
            raise ValueError("checkpoint must hold four layers")
        widths = [hidden] * 3 + [K_out]
        ins = [d + K_out] + [hidden] * 3
        layers = []
        for entry, H, I in zip(obj["layers"], widths, ins):
            def block(key, size):
                arr = np.asarray(entry[key], dtype=np.float64)
                if arr.size != size:
                    raise ValueError(f"{key}: expected {size} values, got {arr.size}")
                return arr
            W = np.concatenate([block(f"w_i{g}", H * I).reshape(H, I) for g in GATES])
            U = np.concatenate([block(f"w_h{g}", H * H).reshape(H, H) for g in GATES])
            b = np.concatenate([block(f"b_{g}", H) for g in GATES])
            layers.append(LayerParams(W, U, b))
        p = cls(d, hidden, K_out, layers)
        p.validate()
        return p

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "ModelParams":
        return cls.from_dict(json.loads(text))


def init_params(d: int, hidden: int, K_out: int, rng: np.random.Generator) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, forget-gate bias 1."""
    if min(d, hidden, K_out) < 1:
        raise ValueError("all dimensions must be >= 1")
    layers = []
    for H, I in [(hidden, d + K_out), (hidden, hidden), (hidden, hidden), (K_out, hidden)]:
        s_w = 1.0 / np.sqrt(I)
        s_u = 1.0 / np.sqrt(H)
        W = rng.uniform(-s_w, s_w, size=(4 * H, I))
        U = rng.uniform(-s_u, s_u, size=(4 * H, H))
        b = np.zeros(4 * H)
        b[H:2 * H] = 1.0
        layers.append(LayerParams(W, U, b))
    return ModelParams(d, hidden, K_out, layers)


def zero_params(d: int, hidden: int, K_out: int) -> ModelParams:
    p = init_params(d, hidden, K_out, np.random.default_rng(0))
    for a in p.arrays():
        a[...] = 0.0
    return p


@dataclass
class RecurrentState:
    """Per-layer (h, c) plus the previous score vector, batched on axis 0."""

    h: List[np.ndarray]
    c: List[np.ndarray]
    a_prev: np.ndarray

    @classmethod
    def clear(cls, params: ModelParams, batch: int = 1) -> "RecurrentState":
        widths = [params.hidden] * 3 + [params.K_out]
        return cls(h=[np.zeros((batch, w)) for w in widths],
                   c=[np.zeros((batch, w)) for w in widths],
                   a_prev=np.full((batch, params.K_out), 1.0 / params.K_out))

    def copy(self) -> "RecurrentState":
        return RecurrentState([h.copy() for h in self.h], [c.copy() for c in self.c], self.a_prev.copy())

    @property
    def batch(self):
        return self.a_prev.shape[0]


def _gate_scale(H):
    # sigmoid(z) = (1 + tanh(z / 2)) / 2, so one tanh call covers all four gates
    s = np.full(4 * H, 0.5)
    s[2 * H:3 * H] = 1.0
    return s


def _prepare(layer: LayerParams):
    """Contiguous transposed weights with the gate scaling folded in."""
    s = _gate_scale(layer.hidden)
    return np.ascontiguousarray(layer.W.T * s), np.ascontiguousarray(layer.U.T * s), layer.b * s


def cell_forward(x_in, h, c, layer: LayerParams, prepared=None):
    """Standard LSTM cell. Returns (h', c', cache)."""
    H = layer.hidden
    WT, UT, b = _prepare(layer) if prepared is None else prepared
    y = np.tanh(x_in @ WT + h @ UT + b)
    i = 0.5 + 0.5 * y[..., :H]
    f = 0.5 + 0.5 * y[..., H:2 * H]
    g = y[..., 2 * H:3 * H]
    o = 0.5 + 0.5 * y[..., 3 * H:]
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    return h_new, c_new, (x_in, h, c, i, f, g, o, tc)


def _cell_dz(dh, dc_next, cache):
    x_in, h, c, i, f, g, o, tc = cache
    H = i.shape[-1]
    dc = dc_next + dh * o * (1.0 - tc * tc)
    dz = np.empty(i.shape[:-1] + (4 * H,))
    dz[..., :H] = dc * g * i * (1.0 - i)
    dz[..., H:2 * H] = dc * c * f * (1.0 - f)
    dz[..., 2 * H:3 * H] = dc * i * (1.0 - g * g)
    dz[..., 3 * H:] = dh * tc * o * (1.0 - o)
    return dz, dc * f


def cell_backward(dh, dc_next, cache, layer: LayerParams, grad: LayerParams):
    """Accumulate weight gradients into ``grad``; return (dx_in, dh_prev, dc_prev)."""
    dz, dc_prev = _cell_dz(dh, dc_next, cache)
    x_in, h = cache[0], cache[1]
    grad.W += dz.T @ x_in
    grad.U += dz.T @ h
    grad.b += dz.sum(axis=0)
    return dz @ layer.W, dz @ layer.U, dc_prev


def _step(params: ModelParams, x, state: RecurrentState, a_in, prepared=None):
    """One timestep over a batch. ``a_in`` is the score vector fed to layer 1."""
    if prepared is None:
        prepared = [_prepare(layer) for layer in params.layers]
    u = np.concatenate([x, a_in], axis=1)
    hs, cs, caches = [], [], []
    for l, layer in enumerate(params.layers):
        h_new, c_new, cache = cell_forward(u, state.h[l], state.c[l], layer, prepared[l])
        hs.append(h_new)
        cs.append(c_new)
        caches.append(cache)
        u = h_new + u if l in (1, 2) else h_new
    r = softmax(hs[3], axis=-1)
    return r, RecurrentState(hs, cs, r), caches


def step(params: ModelParams, x, state: RecurrentState):
    """Consume one datapoint; returns (score vector, new state).

    ``x`` may be a single d-vector (state batch 1) or a (B, d) batch.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[1] != params.d or state.batch != X.shape[0]:
        raise ValueError(f"datapoint shape {x.shape} does not match d={params.d}, batch={state.batch}")
    if state.a_prev.shape[1] != params.K_out or state.h[0].shape[1] != params.hidden:
        raise ValueError("state does not match parameters")
    r, new_state, _ = _step(params, X, state, state.a_prev)
    return (r[0] if single else r), new_state


@dataclass
class Tape:
    caches: list = field(default_factory=list)
    scores: Optional[np.ndarray] = None
    teacher_forced: bool = False


def forward_sequence(params: ModelParams, points, init_state: Optional[RecurrentState] = None,
                     teacher_labels=None):
    """Run ``step`` over a sequence.

    ``points`` is (T, d) for one task or (T, B, d) for a batch of tasks.
    With ``teacher_labels`` (same leading shape, ints) the fed-back score is
    the one-hot label of the previous point instead of the model's output.

    Returns (scores, final state, tape) with scores shaped like the input
    minus the feature axis plus K_out.
    """
    X = np.asarray(points, dtype=np.float64)
    single = X.ndim == 2
    if single:
        X = X[:, None, :]
    T, B, d = X.shape
    if T < 1:
        raise ValueError("empty sequence")
    if d != params.d:
        raise ValueError(f"points have {d} features, model expects {params.d}")
    state = init_state.copy() if init_state is not None else RecurrentState.clear(params, B)
    if state.batch != B:
        raise ValueError("state batch does not match input batch")
    onehots = None
    if teacher_labels is not None:
        lab = np.asarray(teacher_labels, dtype=np.int64).reshape(T, B)
        onehots = np.eye(params.K_out)[lab]
    tape = Tape(teacher_forced=onehots is not None)
    scores = np.empty((T, B, params.K_out))
    a_in = state.a_prev
    prepared = [_prepare(layer) for layer in params.layers]
    for t in range(T):
        r, state, caches = _step(params, X[t], state, a_in, prepared)
        tape.caches.append(caches)
        scores[t] = r
        a_in = r if onehots is None else onehots[t]
    state.a_prev = a_in
    tape.scores = scores
    return (scores[:, 0, :] if single else scores), state, tape


def backward_sequence(params: ModelParams, tape: Tape, dscores) -> ModelParams:
    """Reverse-mode gradient of a loss given dL/dscores for every timestep.

    Includes the path through the fed-back score vector. Gradients into the
    initial state are dropped (the state is a constant for this pass).
    """
    dS = np.asarray(dscores, dtype=np.float64)
    if dS.ndim == 2:
        dS = dS[:, None, :]
    T, B, K = dS.shape
    if T != len(tape.caches):
        raise ValueError("upstream gradient does not match the tape length")
    H = params.hidden
    widths = [H, H, H, K]
    dh_rec = [np.zeros((B, w)) for w in widths]
    dc_rec = [np.zeros((B, w)) for w in widths]
    dz_all = [np.empty((T, B, 4 * w)) for w in widths]
    da_next = np.zeros((B, K))
    scores = tape.scores
    d = params.d
    L = params.layers
    for t in range(T - 1, -1, -1):
        caches = tape.caches[t]
        r = scores[t]
        dr = dS[t] if tape.teacher_forced else dS[t] + da_next
        dlogit = r * (dr - (dr * r).sum(axis=1, keepdims=True))
        dz, dc_rec[3] = _cell_dz(dlogit + dh_rec[3], dc_rec[3], caches[3])
        dz_all[3][t] = dz
        dh_rec[3] = dz @ L[3].U
        du = dz @ L[3].W
        # layers 3 and 2 add their input back onto their output
        for l in (2, 1):
            dz, dc_rec[l] = _cell_dz(du + dh_rec[l], dc_rec[l], caches[l])
            dz_all[l][t] = dz
            dh_rec[l] = dz @ L[l].U
            du = du + dz @ L[l].W
        dz, dc_rec[0] = _cell_dz(du + dh_rec[0], dc_rec[0], caches[0])
        dz_all[0][t] = dz
        dh_rec[0] = dz @ L[0].U
        da_next = dz @ L[0].W[:, d:]
    grad = params.zeros_like()
    for l in range(4):
        xs = np.stack([tape.caches[t][l][0] for t in range(T)]).reshape(T * B, -1)
        hs = np.stack([tape.caches[t][l][1] for t in range(T)]).reshape(T * B, -1)
        dz = dz_all[l].reshape(T * B, -1)
        grad.layers[l].W[...] = dz.T @ xs
        grad.layers[l].U[...] = dz.T @ hs
        grad.layers[l].b[...] = dz.sum(axis=0)
    return grad


def predict_label(score) -> int:
    """Argmax; the smallest index wins ties."""
    return int(np.argmax(np.asarray(score)))
