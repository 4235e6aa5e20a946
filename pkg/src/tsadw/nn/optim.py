"""Adam optimizer and the mini-batch training loop."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import List, Optional

import numpy as np

from .lstm import LstmNetwork, NetworkConfig, network_gradients

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, **hyper) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **hyper)


def adam_step(params, grads, state: AdamState):
    """Bias-corrected Adam update; returns new parameter arrays and state."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and state must align")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        mhat = m / (1.0 - b1 ** t)
        vhat = v / (1.0 - b2 ** t)
        new_p.append(p - state.lr * mhat / (np.sqrt(vhat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, replace(state, m=new_m, v=new_v, step=t)


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    supervision: str = "last"
    patience: int = 20
    min_improvement: float = 1e-6

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def train_block(X: np.ndarray, y: np.ndarray, config: NetworkConfig, train_cfg: TrainConfig,
                net: Optional[LstmNetwork] = None):
    """Mini-batch Adam on summed BCE. Returns (network, per-epoch mean loss)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 3 or len(X) == 0:
        raise ValueError("training needs a non-empty (n, T, D) tensor")
    rng = np.random.default_rng(train_cfg.seed)
    if net is None:
        net = LstmNetwork.initialize(config, rng)
    params = net.parameters()
    state = AdamState.for_params(params, lr=train_cfg.learning_rate)
    history = []
    best, stale = np.inf, 0
    n = len(X)
    for epoch in range(train_cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for bi, lo in enumerate(range(0, n, train_cfg.batch_size)):
            idx = order[lo:lo + train_cfg.batch_size]
            loss, grads = network_gradients((X[idx], y[idx]), net, train_cfg.supervision)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi}")
            params, state = adam_step(params, grads, state)
            net = net.with_parameters(params)
            total += loss
        history.append(total / n)
        if best - history[-1] > train_cfg.min_improvement:
            best, stale = history[-1], 0
        else:
            stale += 1
            if stale >= train_cfg.patience:
                log.debug("early stop at epoch %d (loss %.6g)", epoch, history[-1])
                break
    return net, history
