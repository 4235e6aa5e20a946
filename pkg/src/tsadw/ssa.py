"""Social spider algorithm for box-constrained minimization.

Spiders share fitness through vibrations that attenuate with L1 distance.
Each spider chases its strongest remembered vibration, with a per-dimension
mask deciding which coordinates follow the target and which follow a random
peer.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


@dataclass(frozen=True)
class MetaheuristicConfig:
    population: int = 30
    max_iter: int = 2000
    attenuation: float = 1.0
    change_prob: float = 0.7
    mask_prob: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.population < 2:
            raise ValueError("population must be at least 2")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        for name in ("change_prob", "mask_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.attenuation <= 0:
            raise ValueError("attenuation rate must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "MetaheuristicConfig":
        return cls(**d)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class SearchResult:
    x: np.ndarray
    fun: float
    history: np.ndarray  # best-so-far objective per iteration
    evaluations: int


def social_spider_minimize(
    fun: Callable[[np.ndarray], np.ndarray],
    lower,
    upper,
    cfg: MetaheuristicConfig = MetaheuristicConfig(),
    initial: Optional[np.ndarray] = None,
) -> SearchResult:
    """Minimize ``fun`` over the box [lower, upper].

    ``fun`` is vectorized: it maps a (pop, dim) array to (pop,) objectives.
    Rows of ``initial`` replace the first random spiders.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    dim = lower.size
    rng = np.random.default_rng(cfg.seed)
    pop = cfg.population
    pos = lower + rng.random((pop, dim)) * (upper - lower)
    if initial is not None:
        initial = np.atleast_2d(np.asarray(initial, dtype=float))[:pop]
        pos[: len(initial)] = np.clip(initial, lower, upper)
    prev = pos.copy()
    target = pos.copy()
    target_int = np.zeros(pop)
    inactive = np.zeros(pop)
    mask = np.zeros((pop, dim), dtype=bool)
    best_x, best_f = pos[0].copy(), np.inf
    history = np.empty(cfg.max_iter)
    evals = 0
    for it in range(cfg.max_iter):
        f = np.asarray(fun(pos), dtype=float)
        evals += pop
        k = int(np.argmin(f))
        if f[k] < best_f:
            best_f, best_x = float(f[k]), pos[k].copy()
        history[it] = best_f
        if it == cfg.max_iter - 1:
            break
        # source intensity: log(1 / (f - C) + 1), C below every fitness seen
        C = best_f - (np.std(f) + 1e-12)
        intensity = np.log(1.0 / (f - C) + 1.0)
        sigma = np.mean(np.std(pos, axis=0)) + 1e-12
        dist = np.abs(pos[:, None, :] - pos[None, :, :]).sum(axis=2)
        received = intensity[None, :] * np.exp(-dist / (sigma * cfg.attenuation))
        src = np.argmax(received, axis=1)
        best_recv = received[np.arange(pop), src]
        upgrade = best_recv > target_int
        target[upgrade] = pos[src[upgrade]]
        target_int[upgrade] = best_recv[upgrade]
        inactive = np.where(upgrade, 0, inactive + 1)
        change = rng.random(pop) > cfg.change_prob ** inactive
        if change.any():
            new_mask = rng.random((int(change.sum()), dim)) < cfg.mask_prob
            full = new_mask.all(axis=1)
            if full.any():
                rows = np.flatnonzero(full)
                new_mask[rows, rng.integers(0, dim, rows.size)] = False
            mask[change] = new_mask
        peers = pos[rng.integers(0, pop, (pop, dim)), np.arange(dim)[None, :]]
        follow = np.where(mask, peers, target)
        r = rng.random((pop, 1))
        R = rng.random((pop, dim))
        new = pos + (pos - prev) * r + (follow - pos) * R
        over = new > upper
        under = new < lower
        if over.any() or under.any():
            rb = rng.random((pop, dim))
            new = np.where(over, pos + (upper - pos) * rb, new)
            new = np.where(under, pos - (pos - lower) * rb, new)
        prev, pos = pos, new
    return SearchResult(best_x, best_f, history[: it + 1], evals)
