"""Phasor measurement data model, normalization and input-window gating."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

DEFAULT_FRAME_RATE = 60.0
_STD_FLOOR = 1e-9


class ShapeError(ValueError):
    """Raised when array dimensions do not line up."""


def wrap_angle(angle):
    """Wrap radians into [-pi, pi)."""
    return (np.asarray(angle) + np.pi) % (2.0 * np.pi) - np.pi


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PhasorSample:
    bus_id: int
    cycle: int
    magnitude: float
    angle: float

    def __post_init__(self):
        if self.bus_id < 0:
            raise ValueError("bus_id must be non-negative")
        if self.cycle < 1:
            raise ValueError("cycle index starts at 1")
        if not math.isfinite(self.magnitude) or self.magnitude < 0:
            raise ValueError("magnitude must be finite and >= 0")
        object.__setattr__(self, "angle", float(wrap_angle(self.angle)))


@dataclass(frozen=True, eq=False)
class MeasurementMatrix:
    """B x T voltage phasor record with a known-mask.

    Unknown entries hold 0.0 in both channels. Arrays are read-only.
    """

    mag: np.ndarray
    ang: np.ndarray
    known: np.ndarray

    def __post_init__(self):
        mag = np.asarray(self.mag, dtype=float)
        ang = np.asarray(self.ang, dtype=float)
        known = np.asarray(self.known, dtype=bool)
        if mag.ndim != 2 or mag.shape != ang.shape or mag.shape != known.shape:
            raise ShapeError(
                f"mag/ang/known must share a 2-D shape, got {mag.shape}, {ang.shape}, {known.shape}"
            )
        if not (np.all(np.isfinite(mag[known])) and np.all(np.isfinite(ang[known]))):
            raise ValueError("known entries must be finite")
        mag = np.where(known, mag, 0.0)
        ang = np.where(known, ang, 0.0)
        object.__setattr__(self, "mag", _frozen(mag))
        object.__setattr__(self, "ang", _frozen(ang))
        object.__setattr__(self, "known", _frozen(known, bool))

    @property
    def B(self) -> int:
        return self.mag.shape[0]

    @property
    def T(self) -> int:
        return self.mag.shape[1]

    @classmethod
    def full(cls, mag, ang) -> "MeasurementMatrix":
        mag = np.asarray(mag, dtype=float)
        return cls(mag, ang, np.ones(mag.shape, dtype=bool))

    @classmethod
    def empty(cls, B: int, T: int) -> "MeasurementMatrix":
        z = np.zeros((B, T))
        return cls(z, z, np.zeros((B, T), dtype=bool))

    @property
    def fully_known(self) -> bool:
        return bool(self.known.all())

    def truncate(self, T: int) -> "MeasurementMatrix":
        return MeasurementMatrix(self.mag[:, :T], self.ang[:, :T], self.known[:, :T])

    def __eq__(self, other):
        if not isinstance(other, MeasurementMatrix):
            return NotImplemented
        return (
            np.array_equal(self.known, other.known)
            and np.array_equal(self.mag, other.mag)
            and np.array_equal(self.ang, other.ang)
        )

    def interleaved(self) -> np.ndarray:
        """T x 2B array, per bus magnitude then angle."""
        out = np.empty((self.T, 2 * self.B))
        out[:, 0::2] = self.mag.T
        out[:, 1::2] = self.ang.T
        return out


@dataclass(frozen=True, eq=False)
class ContingencyCase:
    id: str
    matrix: MeasurementMatrix
    label: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")

    def __eq__(self, other):
        if not isinstance(other, ContingencyCase):
            return NotImplemented
        return (
            self.id == other.id
            and self.label == other.label
            and self.meta == other.meta
            and self.matrix == other.matrix
        )


@dataclass(frozen=True, eq=False)
class NormalizationStats:
    """Per-bus mean/std for the magnitude and angle channels, arrays of shape (B, 2)."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        std = np.asarray(self.std, dtype=float)
        if mean.shape != std.shape or mean.ndim != 2 or mean.shape[1] != 2:
            raise ShapeError(f"stats must be (B, 2), got {mean.shape} and {std.shape}")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(std))):
            raise ValueError("normalization stats must be finite")
        std = np.where(std < _STD_FLOOR, 1.0, std)
        object.__setattr__(self, "mean", _frozen(mean))
        object.__setattr__(self, "std", _frozen(std))

    @property
    def B(self) -> int:
        return self.mean.shape[0]

    @classmethod
    def from_cases(cls, cases: Sequence[ContingencyCase]) -> "NormalizationStats":
        if not cases:
            raise ValueError("cannot compute stats from zero cases")
        mags = np.concatenate([c.matrix.mag for c in cases], axis=1)
        angs = np.concatenate([c.matrix.ang for c in cases], axis=1)
        known = np.concatenate([c.matrix.known for c in cases], axis=1)
        mean = np.zeros((mags.shape[0], 2))
        std = np.ones((mags.shape[0], 2))
        for b in range(mags.shape[0]):
            k = known[b]
            if k.any():
                mean[b] = mags[b, k].mean(), angs[b, k].mean()
                std[b] = mags[b, k].std(), angs[b, k].std()
        return cls(mean, std)

    def __eq__(self, other):
        if not isinstance(other, NormalizationStats):
            return NotImplemented
        return np.array_equal(self.mean, other.mean) and np.array_equal(self.std, other.std)


@dataclass(frozen=True, eq=False)
class Dataset:
    cases: tuple
    stats: Optional[NormalizationStats] = None
    frame_rate: float = DEFAULT_FRAME_RATE

    def __post_init__(self):
        cases = tuple(self.cases)
        object.__setattr__(self, "cases", cases)
        if cases:
            B = cases[0].matrix.B
            if any(c.matrix.B != B for c in cases):
                raise ShapeError("all cases in a dataset must share the bus count")
            if self.stats is not None and self.stats.B != B:
                raise ShapeError(f"stats cover {self.stats.B} buses, cases have {B}")

    def __len__(self):
        return len(self.cases)

    def __iter__(self):
        return iter(self.cases)

    def __getitem__(self, i):
        return self.cases[i]

    @property
    def B(self) -> int:
        return self.cases[0].matrix.B

    @property
    def labels(self) -> np.ndarray:
        return np.array([c.label for c in self.cases], dtype=int)

    @property
    def cycle_ms(self) -> float:
        return 1000.0 / self.frame_rate

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.frame_rate == other.frame_rate
            and self.stats == other.stats
            and len(self.cases) == len(other.cases)
            and all(a == b for a, b in zip(self.cases, other.cases))
        )


def _check_stats(matrix: MeasurementMatrix, stats: NormalizationStats):
    if stats.B != matrix.B:
        raise ShapeError(f"case has {matrix.B} buses but stats cover {stats.B}")


def normalize_matrix(matrix: MeasurementMatrix, stats: NormalizationStats) -> MeasurementMatrix:
    _check_stats(matrix, stats)
    mag = (matrix.mag - stats.mean[:, :1]) / stats.std[:, :1]
    ang = (matrix.ang - stats.mean[:, 1:]) / stats.std[:, 1:]
    return MeasurementMatrix(mag, ang, matrix.known)


def denormalize_matrix(matrix: MeasurementMatrix, stats: NormalizationStats) -> MeasurementMatrix:
    _check_stats(matrix, stats)
    mag = matrix.mag * stats.std[:, :1] + stats.mean[:, :1]
    ang = matrix.ang * stats.std[:, 1:] + stats.mean[:, 1:]
    return MeasurementMatrix(mag, ang, matrix.known)


def normalize_case(case: ContingencyCase, stats: NormalizationStats) -> ContingencyCase:
    return replace(case, matrix=normalize_matrix(case.matrix, stats))


def denormalize_case(case: ContingencyCase, stats: NormalizationStats) -> ContingencyCase:
    return replace(case, matrix=denormalize_matrix(case.matrix, stats))


class PhasorScaler(TransformerMixin, BaseEstimator):
    """Per-bus z-score scaler over a sequence of cases.

    ``fit`` learns :class:`NormalizationStats`; ``transform`` and
    ``inverse_transform`` map lists of :class:`ContingencyCase`.
    """

    def fit(self, X, y=None):
        self.stats_ = NormalizationStats.from_cases(list(X))
        return self

    def transform(self, X):
        check_is_fitted(self, "stats_")
        return [normalize_case(c, self.stats_) for c in X]

    def inverse_transform(self, X):
        check_is_fitted(self, "stats_")
        return [denormalize_case(c, self.stats_) for c in X]


@dataclass(frozen=True, eq=False)
class InputWindow:
    """Gated network input: ``values`` is (T', D) with D = 2 * len(buses)."""

    values: np.ndarray
    buses: tuple
    padded: np.ndarray

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __len__(self):
        return self.length


def included_columns(
    known: np.ndarray, phi: float = 0.5, bus_subset: Optional[Iterable[int]] = None
) -> int:
    """Length of the gated column prefix for a (B, T) known-mask."""
    known = np.asarray(known, dtype=bool)
    if bus_subset is None:
        if not 0.0 <= phi <= 1.0:
            raise ValueError(f"phi must lie in [0, 1], got {phi}")
        frac = known.mean(axis=0)
        # a complete column always qualifies, so phi = 1 means "all known"
        ok = (frac > phi) | (frac == 1.0)
    else:
        buses = sorted(set(int(b) for b in bus_subset))
        ok = known[buses].all(axis=0) if buses else np.zeros(known.shape[1], dtype=bool)
    bad = np.flatnonzero(~ok)
    return int(bad[0]) if bad.size else known.shape[1]


def build_input_window(
    matrix: MeasurementMatrix, phi: float = 0.5, bus_subset: Optional[Iterable[int]] = None
) -> InputWindow:
    """Assemble the zero-padded (main) or complete-only (ensemble) window.

    Without ``bus_subset`` a column is admitted when its known fraction is
    strictly above ``phi`` (or the column is complete) and the previous
    column was admitted. With a
    subset, every subset entry must be known. Unknown values become 0.0.
    """
    if bus_subset is None:
        buses = tuple(range(matrix.B))
    else:
        buses = tuple(sorted(set(int(b) for b in bus_subset)))
        if any(b < 0 or b >= matrix.B for b in buses):
            raise ValueError(f"bus subset {buses} outside [0, {matrix.B})")
    n = included_columns(matrix.known, phi, None if bus_subset is None else buses)
    idx = list(buses)
    values = np.empty((n, 2 * len(idx)))
    values[:, 0::2] = matrix.mag[idx, :n].T
    values[:, 1::2] = matrix.ang[idx, :n].T
    padded = np.repeat(~matrix.known[idx, :n].T, 2, axis=1)
    return InputWindow(values, buses, padded)


def split_dataset(ds: Dataset, ratio: float = 0.75, seed: int = 0):
    """Shuffle deterministically and split; stats are refit on the train part."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    n = len(ds)
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    if n < 4:
        raise ValueError(f"need at least 4 cases to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(math.ceil(ratio * n - 1e-9))
    train_cases = [ds.cases[i] for i in order[:n_train]]
    test_cases = [ds.cases[i] for i in order[n_train:]]
    stats = NormalizationStats.from_cases(train_cases)
    return (
        Dataset(train_cases, stats, ds.frame_rate),
        Dataset(test_cases, stats, ds.frame_rate),
    )


def stack_windows(cases: Sequence[ContingencyCase], stats: Optional[NormalizationStats],
                  bus_subset: Optional[Sequence[int]] = None) -> np.ndarray:
    """Fully-known cases to an (n, T, D) training tensor."""
    out = []
    for c in cases:
        m = c.matrix if stats is None else normalize_matrix(c.matrix, stats)
        if bus_subset is None:
            out.append(m.interleaved())
        else:
            w = build_input_window(m, 1.0, bus_subset)
            if w.length != m.T:
                raise ValueError(f"case {c.id} is not fully known on buses {tuple(bus_subset)}")
            out.append(w.values)
    return np.stack(out) if out else np.empty((0, 0, 0))
