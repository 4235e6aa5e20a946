"""Stacked LSTM + dense classifier with hand-derived backpropagation through time.

Gate blocks are stored row-stacked in the order forget, input, candidate,
output, so ``W`` has shape (4H, In), ``U`` (4H, H) and ``b`` (4H,).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from ..phasor import ShapeError

GATES = ("f", "i", "c", "o")
ACTIVATIONS = ("rectifier", "sigmoid", "identity")


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class LstmLayerParams:
    W: np.ndarray
    U: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        H = self.U.shape[1]
        if self.W.shape[0] != 4 * H or self.U.shape != (4 * H, H) or self.b.shape != (4 * H,):
            raise ShapeError(
                f"inconsistent LSTM shapes W{self.W.shape} U{self.U.shape} b{self.b.shape}"
            )

    @property
    def hidden(self) -> int:
        return self.U.shape[1]

    @property
    def input_dim(self) -> int:
        return self.W.shape[1]

    def gate(self, name: str):
        """(W_g, U_g, b_g) views for gate ``name`` in f, i, c, o."""
        k = GATES.index(name)
        s = slice(k * self.hidden, (k + 1) * self.hidden)
        return self.W[s], self.U[s], self.b[s]

    @classmethod
    def from_gates(cls, gates: dict) -> "LstmLayerParams":
        W = np.concatenate([gates[g][0] for g in GATES])
        U = np.concatenate([gates[g][1] for g in GATES])
        b = np.concatenate([gates[g][2] for g in GATES])
        return cls(W, U, b)

    def arrays(self):
        return [self.W, self.U, self.b]


@dataclass
class DenseLayerParams:
    W: np.ndarray
    b: np.ndarray
    activation: str = "rectifier"

    def __post_init__(self):
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ShapeError(f"inconsistent dense shapes W{self.W.shape} b{self.b.shape}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    def arrays(self):
        return [self.W, self.b]


@dataclass(frozen=True)
class NetworkConfig:
    input_dim: int
    lstm_sizes: tuple = (64, 64, 64, 64)
    dense_sizes: tuple = (32, 16)
    hidden_activation: str = "rectifier"

    def __post_init__(self):
        object.__setattr__(self, "lstm_sizes", tuple(int(s) for s in self.lstm_sizes))
        object.__setattr__(self, "dense_sizes", tuple(int(s) for s in self.dense_sizes))
        if self.input_dim < 1 or not self.lstm_sizes:
            raise ValueError("need a positive input dimension and at least one LSTM layer")

    @classmethod
    def main_block(cls, input_dim: int) -> "NetworkConfig":
        return cls(input_dim, (64, 64, 64, 64), (32, 16))

    @classmethod
    def ensemble_block(cls, input_dim: int) -> "NetworkConfig":
        return cls(input_dim, (32, 32), (16,))

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "lstm_sizes": list(self.lstm_sizes),
            "dense_sizes": list(self.dense_sizes),
            "hidden_activation": self.hidden_activation,
        }


class LstmNetwork:
    """Parameter container; the final dense layer has width 1 and a sigmoid."""

    def __init__(self, config: NetworkConfig, lstm: List[LstmLayerParams], dense: List[DenseLayerParams]):
        self.config = config
        self.lstm = list(lstm)
        self.dense = list(dense)
        dim = config.input_dim
        for layer in self.lstm:
            if layer.input_dim != dim:
                raise ShapeError(f"LSTM layer expects input {layer.input_dim}, chain gives {dim}")
            dim = layer.hidden
        for layer in self.dense:
            if layer.W.shape[1] != dim:
                raise ShapeError(f"dense layer expects input {layer.W.shape[1]}, chain gives {dim}")
            dim = layer.W.shape[0]
        if dim != 1 or self.dense[-1].activation != "sigmoid":
            raise ShapeError("the last layer must be a width-1 sigmoid")

    @classmethod
    def initialize(cls, config: NetworkConfig, rng: np.random.Generator) -> "LstmNetwork":
        lstm, dim = [], config.input_dim
        for H in config.lstm_sizes:
            s = 1.0 / np.sqrt(dim + H)
            lstm.append(LstmLayerParams(
                rng.uniform(-s, s, (4 * H, dim)),
                rng.uniform(-s, s, (4 * H, H)),
                rng.uniform(-s, s, 4 * H),
            ))
            dim = H
        dense = []
        widths = list(config.dense_sizes) + [1]
        for k, w in enumerate(widths):
            s = 1.0 / np.sqrt(dim)
            act = "sigmoid" if k == len(widths) - 1 else config.hidden_activation
            dense.append(DenseLayerParams(rng.uniform(-s, s, (w, dim)), rng.uniform(-s, s, w), act))
            dim = w
        return cls(config, lstm, dense)

    def parameters(self) -> List[np.ndarray]:
        out = []
        for layer in self.lstm + self.dense:
            out.extend(layer.arrays())
        return out

    def with_parameters(self, arrays: Sequence[np.ndarray]) -> "LstmNetwork":
        arrays = list(arrays)
        lstm = [LstmLayerParams(*arrays[3 * k:3 * k + 3]) for k in range(len(self.lstm))]
        off = 3 * len(self.lstm)
        dense = [
            DenseLayerParams(arrays[off + 2 * k], arrays[off + 2 * k + 1], layer.activation)
            for k, layer in enumerate(self.dense)
        ]
        return LstmNetwork(self.config, lstm, dense)

    def copy(self) -> "LstmNetwork":
        return self.with_parameters([a.copy() for a in self.parameters()])


def lstm_cell_forward(x_t, h_prev, C_prev, params: LstmLayerParams):
    """One LSTM step. Inputs may carry a leading batch axis."""
    x_t, h_prev, C_prev = np.asarray(x_t, float), np.asarray(h_prev, float), np.asarray(C_prev, float)
    H = params.hidden
    if x_t.shape[-1] != params.input_dim or h_prev.shape[-1] != H or C_prev.shape[-1] != H:
        raise ShapeError(
            f"cell expects x[..., {params.input_dim}], h/C[..., {H}]; got {x_t.shape}, {h_prev.shape}, {C_prev.shape}"
        )
    z = x_t @ params.W.T + h_prev @ params.U.T + params.b
    f = sigmoid(z[..., :H])
    i = sigmoid(z[..., H:2 * H])
    c = np.tanh(z[..., 2 * H:3 * H])
    o = sigmoid(z[..., 3 * H:])
    C = f * C_prev + i * c
    return o * np.tanh(C), C


def _activate(a, kind):
    if kind == "rectifier":
        return np.maximum(a, 0.0)
    if kind == "sigmoid":
        return sigmoid(a)
    return a


def _as_batch(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        return X[None], True
    if X.ndim != 3:
        raise ShapeError(f"expected (T, D) or (n, T, D) input, got shape {X.shape}")
    return X, False


def _forward(net: LstmNetwork, X: np.ndarray, keep: bool):
    n, T, _ = X.shape
    seq = X
    caches = []
    for layer in net.lstm:
        H = layer.hidden
        h = np.zeros((n, H))
        C = np.zeros((n, H))
        # input projection for all steps at once
        xz = seq @ layer.W.T + layer.b
        hs = np.empty((n, T, H))
        if keep:
            gates = np.empty((n, T, 4 * H))
            Cs = np.empty((n, T + 1, H))
            Cs[:, 0] = 0.0
        for t in range(T):
            z = xz[:, t] + h @ layer.U.T
            g = np.empty_like(z)
            g[:, :2 * H] = sigmoid(z[:, :2 * H])
            g[:, 2 * H:3 * H] = np.tanh(z[:, 2 * H:3 * H])
            g[:, 3 * H:] = sigmoid(z[:, 3 * H:])
            C = g[:, :H] * C + g[:, H:2 * H] * g[:, 2 * H:3 * H]
            h = g[:, 3 * H:] * np.tanh(C)
            hs[:, t] = h
            if keep:
                gates[:, t] = g
                Cs[:, t + 1] = C
        if keep:
            caches.append((seq, gates, Cs, hs))
        seq = hs
    a = seq.reshape(n * T, -1)
    dense_in = []
    for layer in net.dense:
        dense_in.append(a)
        a = _activate(a @ layer.W.T + layer.b, layer.activation)
        if keep:
            dense_in.append(a)
    y = a.reshape(n, T)
    return y, (caches, dense_in)


def network_forward(window, net: LstmNetwork) -> Optional[np.ndarray]:
    """Per-timestep outputs in (0, 1); ``None`` for an empty window.

    ``window`` is an :class:`~tsadw.phasor.InputWindow`, a (T, D) array or an
    (n, T, D) batch.
    """
    X = getattr(window, "values", window)
    X, single = _as_batch(X)
    if X.shape[1] == 0:
        return None
    if X.shape[2] != net.config.input_dim:
        raise ShapeError(f"window dimension {X.shape[2]} does not match network input {net.config.input_dim}")
    y, _ = _forward(net, X, keep=False)
    return y[0] if single else y


BCE_CLAMP = 1e-12


def bce_loss(predictions, labels) -> float:
    p = np.asarray(predictions, dtype=float)
    y = np.asarray(labels, dtype=float)
    if p.shape != y.shape:
        raise ShapeError(f"predictions {p.shape} and labels {y.shape} differ in shape")
    p = np.clip(p, BCE_CLAMP, 1.0 - BCE_CLAMP)
    return float(-np.sum(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def _supervision_weights(T: int, supervision: str) -> np.ndarray:
    w = np.zeros(T)
    if supervision == "last":
        w[-1] = 1.0
    elif supervision == "all":
        w[:] = 1.0 / T
    else:
        raise ValueError(f"supervision must be 'last' or 'all', got {supervision!r}")
    return w


def _loss_and_grads_uniform(net, X, labels, supervision):
    n, T, _ = X.shape
    y, (caches, dense_in) = _forward(net, X, keep=True)
    w = _supervision_weights(T, supervision)
    lab = np.asarray(labels, dtype=float)[:, None]
    pc = np.clip(y, BCE_CLAMP, 1.0 - BCE_CLAMP)
    per = -(lab * np.log(pc) + (1.0 - lab) * np.log(1.0 - pc))
    loss = float(np.sum(per * w))
    # d(BCE)/d(pre-sigmoid) = y - label
    delta = ((y - lab) * w).reshape(n * T, 1)
    dense_grads = []
    for k in range(len(net.dense) - 1, -1, -1):
        layer = net.dense[k]
        a_in, a_out = dense_in[2 * k], dense_in[2 * k + 1]
        if k < len(net.dense) - 1:
            if layer.activation == "rectifier":
                delta = delta * (a_out > 0)
            elif layer.activation == "sigmoid":
                delta = delta * a_out * (1.0 - a_out)
        dense_grads.append((delta.T @ a_in, delta.sum(axis=0)))
        delta = delta @ layer.W
    dense_grads.reverse()
    dseq = delta.reshape(n, T, -1)
    lstm_grads = []
    for layer, (xin, gates, Cs, hs) in zip(reversed(net.lstm), reversed(caches)):
        H = layer.hidden
        dh_next = np.zeros((n, H))
        dC_next = np.zeros((n, H))
        dz_all = np.empty((n, T, 4 * H))
        for t in range(T - 1, -1, -1):
            g = gates[:, t]
            f, i, c, o = g[:, :H], g[:, H:2 * H], g[:, 2 * H:3 * H], g[:, 3 * H:]
            C = Cs[:, t + 1]
            tC = np.tanh(C)
            dh = dseq[:, t] + dh_next
            dC = dh * o * (1.0 - tC * tC) + dC_next
            dz = dz_all[:, t]
            dz[:, :H] = dC * Cs[:, t] * f * (1.0 - f)
            dz[:, H:2 * H] = dC * c * i * (1.0 - i)
            dz[:, 2 * H:3 * H] = dC * i * (1.0 - c * c)
            dz[:, 3 * H:] = dh * tC * o * (1.0 - o)
            dh_next = dz @ layer.U
            dC_next = dC * f
        dz2 = dz_all.reshape(n * T, 4 * H)
        dW = dz2.T @ xin.reshape(n * T, -1)
        hprev = np.concatenate([np.zeros((n, 1, H)), hs[:, :-1]], axis=1).reshape(n * T, H)
        dU = dz2.T @ hprev
        db = dz2.sum(axis=0)
        dseq = (dz2 @ layer.W).reshape(n, T, -1)
        lstm_grads.append((dW, dU, db))
    lstm_grads.reverse()
    grads = []
    for g in lstm_grads:
        grads.extend(g)
    for g in dense_grads:
        grads.extend(g)
    return loss, grads


def network_gradients(batch, net: LstmNetwork, supervision: str = "last"):
    """Summed BCE over ``batch`` and its exact gradient for every parameter.

    ``batch`` is either ``(X, labels)`` with X of shape (n, T, D), or a
    sequence of ``(window, label)`` pairs of possibly different lengths.
    Returns ``(loss, grads)`` with ``grads`` aligned to ``net.parameters()``.
    """
    if isinstance(batch, tuple) and len(batch) == 2 and np.ndim(batch[0]) == 3:
        X, labels = batch
        return _loss_and_grads_uniform(net, np.asarray(X, float), np.asarray(labels), supervision)
    pairs = list(batch)
    if not pairs:
        raise ValueError("empty batch")
    groups = {}
    for window, label in pairs:
        Xw = np.asarray(getattr(window, "values", window), dtype=float)
        groups.setdefault(Xw.shape[0], ([], []))
        groups[Xw.shape[0]][0].append(Xw)
        groups[Xw.shape[0]][1].append(label)
    loss = 0.0
    total = [np.zeros_like(p) for p in net.parameters()]
    for T in sorted(groups):
        Xs, ys = groups[T]
        l, g = _loss_and_grads_uniform(net, np.stack(Xs), np.asarray(ys), supervision)
        loss += l
        for acc, gi in zip(total, g):
            acc += gi
    return loss, total


def initial_state(net: LstmNetwork):
    return [(np.zeros(layer.hidden), np.zeros(layer.hidden)) for layer in net.lstm]


def network_step(net: LstmNetwork, x_t, state):
    """Advance one cycle from ``state``; returns (y_t, new_state)."""
    a = np.asarray(x_t, dtype=float)
    new_state = []
    for layer, (h, C) in zip(net.lstm, state):
        h, C = lstm_cell_forward(a, h, C, layer)
        new_state.append((h, C))
        a = h
    for layer in net.dense:
        a = _activate(layer.W @ a + layer.b, layer.activation)
    return float(a[0]), new_state
