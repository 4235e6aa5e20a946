"""Threshold mapping, threshold optimization and the rule-based decision machine."""
from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .ssa import MetaheuristicConfig, social_spider_minimize

log = logging.getLogger(__name__)

THETA_EPS = 1e-6


class Z(enum.IntEnum):
    UNKNOWN = -1
    UNSTABLE = 0
    STABLE = 1


class Rule(str, enum.Enum):
    START = "R1"
    PRIMARY_FIRST = "R2"
    SECONDARY_SINGLE = "R3"
    MAJORITY = "R4"
    TIE = "R5"
    OVERWRITE = "R6"


def _check_theta(theta):
    theta = np.asarray(theta, dtype=float)
    if np.any(theta <= 0.0) or np.any(theta >= 0.5):
        raise ValueError("thresholds must lie strictly inside (0, 0.5)")
    return theta


def map_to_binary(y, theta):
    """1 if y > 1 - theta, 0 if y < theta, UNKNOWN (-1) otherwise. Vectorized."""
    theta = _check_theta(theta)
    y = np.asarray(y, dtype=float)
    z = np.where(y > 1.0 - theta, 1, np.where(y < theta, 0, -1))
    return Z(int(z)) if z.ndim == 0 else z


@dataclass(frozen=True)
class ThresholdSchedule:
    theta: tuple
    block_id: str = ""
    seed: int = 0

    def __post_init__(self):
        th = tuple(float(t) for t in self.theta)
        _check_theta(th)
        object.__setattr__(self, "theta", th)

    def __len__(self):
        return len(self.theta)

    def at(self, cycle: int) -> float:
        """Threshold for 1-based ``cycle``; beyond the schedule the last entry holds."""
        return self.theta[min(cycle, len(self.theta)) - 1]

    def to_dict(self) -> dict:
        return {"block_id": self.block_id, "seed": self.seed, "theta": list(self.theta)}

    @classmethod
    def from_dict(cls, d: dict) -> "ThresholdSchedule":
        return cls(tuple(d["theta"]), d.get("block_id", ""), int(d.get("seed", 0)))


def save_schedules(schedules: Sequence[ThresholdSchedule], path) -> None:
    with open(path, "w") as fh:
        json.dump([s.to_dict() for s in schedules], fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_schedules(path) -> dict:
    with open(path) as fh:
        return {d["block_id"]: ThresholdSchedule.from_dict(d) for d in json.load(fh)}


@dataclass
class ThresholdScore:
    accuracy: float
    mean_cycles: float
    objective: float


def _first_reliable(outputs: np.ndarray, theta: np.ndarray):
    """outputs (C, T), theta (..., T) -> (first index or T, verdict at it or -1)."""
    th = theta[..., None, :]
    hi = outputs > 1.0 - th
    rel = hi | (outputs < th)
    T = outputs.shape[-1]
    any_rel = rel.any(axis=-1)
    first = rel.argmax(axis=-1)
    at_first = np.take_along_axis(hi, first[..., None], -1)[..., 0]
    return np.where(any_rel, first, T), np.where(any_rel, at_first.astype(np.int8), -1)


def _scores(outputs, labels, theta, omega):
    first, verdict = _first_reliable(outputs, np.asarray(theta, dtype=float))
    acc = np.mean(verdict == labels, axis=-1)
    D = np.mean(first, axis=-1) + 1.0
    return acc, D, (1.0 - acc) * omega + D - 1.0


def evaluate_thresholds(outputs, labels, schedule, omega: float = 100.0) -> ThresholdScore:
    """Score a schedule on per-case output sequences (C, T).

    Each case is assessed at its first reliable cycle d; cases that never
    become reliable get d = T + 1 and count as wrong.
    """
    outputs = np.asarray(outputs, dtype=float)
    labels = np.asarray(labels)
    if outputs.ndim != 2 or len(outputs) == 0:
        raise ValueError("need a non-empty (cases, cycles) output array")
    if omega <= 0:
        raise ValueError("omega must be positive")
    theta = np.asarray(getattr(schedule, "theta", schedule), dtype=float)
    _check_theta(theta)
    if theta.shape != (outputs.shape[1],):
        raise ValueError(f"schedule has {theta.size} entries, outputs have {outputs.shape[1]} cycles")
    acc, D, obj = _scores(outputs, labels, theta, omega)
    return ThresholdScore(float(acc), float(D), float(obj))


def optimize_thresholds(outputs, labels, omega: float = 100.0,
                        cfg: MetaheuristicConfig = MetaheuristicConfig(),
                        block_id: str = "", baseline: float = 0.25) -> ThresholdSchedule:
    """Minimize (1 - A) * omega + D - 1 over (0, 0.5)^T with the spider search.

    The uniform ``baseline`` schedule seeds the population, so the result is
    never worse than it.
    """
    outputs = np.asarray(outputs, dtype=float)
    labels = np.asarray(labels)
    if outputs.ndim != 2 or len(outputs) == 0:
        raise ValueError("need a non-empty (cases, cycles) output array")
    if omega <= 0:
        raise ValueError("omega must be positive")
    T = outputs.shape[1]

    def fun(thetas):
        return _scores(outputs, labels, thetas, omega)[2]

    lo, hi = np.full(T, THETA_EPS), np.full(T, 0.5 - THETA_EPS)
    res = social_spider_minimize(fun, lo, hi, cfg, initial=np.full((1, T), baseline))
    return ThresholdSchedule(tuple(np.clip(res.x, lo, hi)), block_id, cfg.seed)


class ThresholdMapper(TransformerMixin, BaseEstimator):
    """Learns a per-cycle schedule from (C, T) outputs and labels; maps outputs to Z codes."""

    def __init__(self, omega=100.0, population=30, max_iter=2000, attenuation=1.0,
                 change_prob=0.7, mask_prob=0.1, random_state=0):
        self.omega = omega
        self.population = population
        self.max_iter = max_iter
        self.attenuation = attenuation
        self.change_prob = change_prob
        self.mask_prob = mask_prob
        self.random_state = random_state

    def fit(self, X, y):
        cfg = MetaheuristicConfig(self.population, self.max_iter, self.attenuation,
                                  self.change_prob, self.mask_prob, int(self.random_state))
        self.schedule_ = optimize_thresholds(X, y, self.omega, cfg)
        return self

    def transform(self, X):
        check_is_fitted(self, "schedule_")
        X = np.asarray(X, dtype=float)
        return map_to_binary(X, np.asarray(self.schedule_.theta)[: X.shape[-1]])

    def score_schedule(self, X, y) -> ThresholdScore:
        check_is_fitted(self, "schedule_")
        return evaluate_thresholds(X, y, self.schedule_, self.omega)


# --- decision machine -------------------------------------------------------

@dataclass(frozen=True)
class BlockVerdict:
    block_id: str
    kind: str  # "primary" or "secondary"
    value: int
    cycle: int = 0
    time_ms: float = 0.0

    def to_dict(self) -> dict:
        return {"block": self.block_id, "kind": self.kind, "value": int(self.value),
                "cycle": self.cycle, "time_ms": self.time_ms}


@dataclass(frozen=True)
class FinalAssessment:
    label: int
    time_ms: float
    blocks: tuple
    rule: Rule

    def to_dict(self) -> dict:
        return {"label": self.label, "time_ms": self.time_ms, "blocks": list(self.blocks),
                "rule": self.rule.value}


MODES = ("full", "primary", "secondary")


class DecisionMachine:
    """Combines primary and secondary verdicts into one final assessment.

    ``mode="full"`` applies the combination rules; ``"primary"`` concludes on
    the first primary verdict; ``"secondary"`` concludes once two secondary
    blocks hold the same live verdict.
    """

    def __init__(self, mode: str = "full"):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        self.mode = mode
        self.live = {}
        self.primary_id = None
        self.primary_first = False
        self.pending = None  # rule that requested a tie-break
        self.started = False
        self.final = None
        self.trace = []

    @property
    def terminal(self) -> bool:
        return self.final is not None

    def _secondaries(self):
        return {b: v for b, v in self.live.items() if b != self.primary_id}

    def _finish(self, label, verdict, blocks, rule):
        times = [verdict.time_ms]
        self.final = FinalAssessment(int(label), max(times), tuple(blocks), rule)
        self.trace.append({"event": "final", **self.final.to_dict()})
        return self.final

    def step(self, verdict: BlockVerdict) -> Optional[FinalAssessment]:
        if self.terminal:
            log.warning("verdict from %s after final assessment ignored", verdict.block_id)
            return None
        if verdict.value not in (0, 1):
            raise ValueError("only reliable verdicts enter the decision machine")
        self.trace.append({"event": "verdict", **verdict.to_dict()})
        self.started = True
        primary = verdict.kind == "primary"
        if primary:
            self.primary_id = verdict.block_id
        self.live[verdict.block_id] = verdict.value  # overwrite
        if self.mode == "primary":
            return self._finish(verdict.value, verdict, [verdict.block_id], Rule.START) if primary else None
        if self.mode == "secondary":
            if primary:
                return None
            agree = [b for b, v in self._secondaries().items() if v == verdict.value]
            if len(agree) >= 2:
                return self._finish(verdict.value, verdict, sorted(agree), Rule.MAJORITY)
            return None

        sec = self._secondaries()
        if self.pending is not None:
            if not primary:
                return self._finish(verdict.value, verdict, [self.primary_id, verdict.block_id], self.pending)
            return None
        if primary:
            if not sec:
                self.primary_first = True
                return None
            if len(sec) == 1:
                (b, v), = sec.items()
                if v == verdict.value:
                    return self._finish(v, verdict, [verdict.block_id, b], Rule.SECONDARY_SINGLE)
                self.pending = Rule.SECONDARY_SINGLE
                return None
            # several secondaries without a strict majority: the primary breaks the tie
            return self._finish(verdict.value, verdict, [verdict.block_id] + sorted(sec), Rule.TIE)
        if self.primary_id is not None:
            pv = self.live[self.primary_id]
            if verdict.value == pv:
                return self._finish(pv, verdict, [self.primary_id, verdict.block_id], Rule.PRIMARY_FIRST)
            self.pending = Rule.PRIMARY_FIRST
            return None
        if len(sec) >= 2:
            ones = sum(sec.values())
            zeros = len(sec) - ones
            if ones != zeros:
                label = int(ones > zeros)
                blocks = sorted(b for b, v in sec.items() if v == label)
                return self._finish(label, verdict, blocks, Rule.MAJORITY)
        return None


def decision_step(state: DecisionMachine, verdict: BlockVerdict) -> Optional[FinalAssessment]:
    return state.step(verdict)
