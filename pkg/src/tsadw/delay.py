"""Communication delay, measurement noise and the synchrophasor arrival stream."""
from __future__ import annotations

import csv
import zlib
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .phasor import ContingencyCase, wrap_angle

_NOISE_TAG = 0x4E4F4953


def case_stream(case_id: str, repetition: int = 0) -> tuple:
    """Stable integer stream key for a case (Python's str hash is salted)."""
    return (zlib.crc32(case_id.encode()), int(repetition))


@dataclass(frozen=True)
class DelayModel:
    """Shifted gamma delay in milliseconds; ``constant`` keeps only the shift."""

    shape: float = 20.0
    scale: float = 2.0
    shift: float = 10.0
    seed: int = 0
    constant: bool = False

    def __post_init__(self):
        if not self.constant and (self.shape <= 0 or self.scale <= 0):
            raise ValueError("gamma shape and scale must be positive")
        if self.shift < 0:
            raise ValueError("shift must be non-negative")

    @classmethod
    def constant_delay(cls, delay_ms: float, seed: int = 0) -> "DelayModel":
        return cls(shift=delay_ms, seed=seed, constant=True)

    @property
    def mean(self) -> float:
        return self.shift if self.constant else self.shift + self.shape * self.scale

    @property
    def variance(self) -> float:
        return 0.0 if self.constant else self.shape * self.scale ** 2

    def draw(self, rng: np.random.Generator, size=None):
        if self.constant:
            return np.full(size, self.shift) if size is not None else self.shift
        return self.shift + rng.gamma(self.shape, self.scale, size)

    def sample(self, size: int, stream=()) -> np.ndarray:
        """``size`` independent draws from one deterministic stream."""
        rng = np.random.default_rng([self.seed, *stream])
        return np.asarray(self.draw(rng, size), dtype=float)

    def cdf(self, x):
        from scipy.stats import gamma

        x = np.asarray(x, dtype=float)
        if self.constant:
            return (x >= self.shift).astype(float)
        return gamma.cdf(x - self.shift, self.shape, scale=self.scale)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def sample_delay(model: DelayModel, p: int, t: int, stream=()) -> float:
    """Delay of PMU ``p``'s packet for cycle ``t``; independent across (p, t)."""
    rng = np.random.default_rng([model.seed, *stream, int(p), int(t)])
    return float(model.draw(rng))


def delay_matrix(model: DelayModel, B: int, T: int, stream=()) -> np.ndarray:
    """(B, T) delays, entry [p, t-1] equal to ``sample_delay(model, p, t, stream)``."""
    if model.constant:
        return np.full((B, T), float(model.shift))
    return np.array([[sample_delay(model, p, t, stream) for t in range(1, T + 1)] for p in range(B)])


@dataclass(frozen=True)
class NoiseModel:
    sigma: float = 0.004
    tve_cap: float = 0.01
    nominal: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if not 0.0 < self.tve_cap < 1.0:
            raise ValueError("TVE cap must lie in (0, 1)")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def noise_phasors(model: NoiseModel, rng: np.random.Generator, size) -> np.ndarray:
    """Complex perturbations with N(0, sigma^2) parts, truncated at cap * nominal."""
    size = tuple(np.atleast_1d(size))
    n = int(np.prod(size))
    if model.sigma == 0 or n == 0:
        return np.zeros(size, dtype=complex)
    radius = model.tve_cap * model.nominal
    out = np.empty(n, dtype=complex)
    todo = np.arange(n)
    while todo.size:
        d = rng.normal(0.0, model.sigma, todo.size) + 1j * rng.normal(0.0, model.sigma, todo.size)
        ok = np.abs(d) <= radius
        out[todo[ok]] = d[ok]
        todo = todo[~ok]
    return out.reshape(size)


def apply_noise(magnitude, angle, model: NoiseModel, rng: np.random.Generator):
    """Add a truncated complex-normal perturbation to phasors given in polar form."""
    magnitude = np.asarray(magnitude, dtype=float)
    angle = np.asarray(angle, dtype=float)
    if np.any(magnitude < 0):
        raise ValueError("magnitude must be non-negative")
    if model.sigma == 0:
        return magnitude.copy(), angle.copy()
    v = magnitude * np.exp(1j * angle) + noise_phasors(model, rng, magnitude.shape or 1).reshape(magnitude.shape)
    return np.abs(v), wrap_angle(np.angle(v))


@dataclass(frozen=True)
class ArrivalEvent:
    bus: int
    cycle: int
    arrival_ms: float
    delay_ms: float
    magnitude: float
    angle: float

    @property
    def sort_key(self):
        return (self.arrival_ms, self.cycle, self.bus)


def schedule_arrivals(case: ContingencyCase, delay: DelayModel, noise: Optional[NoiseModel] = None,
                      horizon_cycles: Optional[int] = None, cycle_ms: float = 1000.0 / 60.0,
                      stream: Optional[tuple] = None) -> List[ArrivalEvent]:
    """One event per (bus, cycle) within the horizon, sorted by arrival time.

    Delays and noise use separate streams, so switching noise on or off
    leaves every arrival time unchanged.
    """
    m = case.matrix
    T = m.T if horizon_cycles is None else int(horizon_cycles)
    if T > m.T:
        raise ValueError(f"horizon {T} exceeds the case's {m.T} cycles")
    stream = case_stream(case.id) if stream is None else tuple(stream)
    delays = delay_matrix(delay, m.B, T, stream)
    mag, ang = m.mag[:, :T], m.ang[:, :T]
    if noise is not None:
        rng = np.random.default_rng([noise.seed, *stream, _NOISE_TAG])
        mag, ang = apply_noise(mag, ang, noise, rng)
    events = [
        ArrivalEvent(p, t + 1, float((t + 1) * cycle_ms + delays[p, t]), float(delays[p, t]),
                     float(mag[p, t]), float(ang[p, t]))
        for p in range(m.B) for t in range(T)
    ]
    events.sort(key=lambda e: e.sort_key)
    return events


def export_delay_trace(events: Sequence[ArrivalEvent], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pmu", "cycle", "delay_ms", "arrival_ms"])
        for e in sorted(events, key=lambda e: (e.bus, e.cycle)):
            w.writerow([e.bus, e.cycle, repr(e.delay_ms), repr(e.arrival_ms)])
