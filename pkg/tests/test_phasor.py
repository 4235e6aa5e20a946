import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_case, random_dataset
from tsadw.phasor import (
    ContingencyCase, Dataset, MeasurementMatrix, NormalizationStats, PhasorSample, PhasorScaler,
    ShapeError, build_input_window, denormalize_case, included_columns, normalize_case,
    split_dataset, stack_windows, wrap_angle,
)


def test_sample_wraps_angle_and_validates():
    s = PhasorSample(0, 1, 1.0, np.pi)
    assert -np.pi <= s.angle < np.pi
    with pytest.raises(ValueError):
        PhasorSample(0, 0, 1.0, 0.0)
    with pytest.raises(ValueError):
        PhasorSample(0, 1, -1.0, 0.0)


def test_unknown_entries_hold_zero_sentinel():
    m = MeasurementMatrix(np.ones((2, 3)), np.ones((2, 3)), np.eye(2, 3, dtype=bool))
    assert m.mag[0, 1] == 0.0 and m.ang[1, 0] == 0.0
    with pytest.raises(ValueError):
        m.mag[0, 0] = 5.0


def test_matrix_rejects_shape_mismatch():
    with pytest.raises(ShapeError):
        MeasurementMatrix(np.ones((2, 3)), np.ones((2, 2)), np.ones((2, 3), bool))


def test_normalize_constant_channel_falls_back_to_unit_std():
    m = MeasurementMatrix.full(np.full((1, 4), 1.05), np.zeros((1, 4)))
    stats = NormalizationStats.from_cases([ContingencyCase("a", m, 1)])
    assert np.all(stats.std == 1.0)
    out = normalize_case(ContingencyCase("a", m, 1), stats)
    assert np.all(out.matrix.mag == 0.0)


def test_normalize_arithmetic():
    stats = NormalizationStats(np.array([[1.0, 0.0]]), np.array([[0.02, 1.0]]))
    m = MeasurementMatrix.full([[1.02]], [[0.0]])
    out = normalize_case(ContingencyCase("a", m, 0), stats)
    assert out.matrix.mag[0, 0] == pytest.approx(1.0, abs=1e-12)
    assert out.label == 0


def test_normalize_shape_mismatch(rng):
    case = random_case(rng, B=4)
    stats = NormalizationStats(np.zeros((3, 2)), np.ones((3, 2)))
    with pytest.raises(ShapeError):
        normalize_case(case, stats)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_normalize_round_trip(seed):
    rng = np.random.default_rng(seed)
    ds = random_dataset(rng, 5, known_p=0.7)
    stats = NormalizationStats.from_cases(ds.cases)
    for c in ds.cases:
        back = denormalize_case(normalize_case(c, stats), stats)
        assert np.array_equal(back.matrix.known, c.matrix.known)
        assert np.abs(back.matrix.mag - c.matrix.mag).max() <= 1e-12
        assert np.abs(back.matrix.ang - c.matrix.ang).max() <= 1e-12


def test_scaler_estimator(rng):
    ds = random_dataset(rng, 6)
    sc = PhasorScaler().fit(ds.cases)
    out = sc.transform(ds.cases)
    back = sc.inverse_transform(out)
    assert np.allclose(back[0].matrix.mag, ds.cases[0].matrix.mag)
    assert sc.get_params() == {}


def _matrix(known):
    known = np.asarray(known, bool)
    return MeasurementMatrix(np.where(known, 2.0, 0), np.where(known, 0.5, 0), known)


def test_window_partial_column_is_padded():
    known = np.ones((4, 3), bool)
    known[3, 0] = False
    w = build_input_window(_matrix(known), 0.5)
    assert w.length == 3 and w.dim == 8
    assert w.values[0, 6] == 0.0 and w.values[0, 7] == 0.0
    assert w.padded[0].sum() == 2


def test_window_prefix_rule_blocks_later_columns():
    known = np.zeros((4, 2), bool)
    known[0, 0] = True
    known[:, 1] = True
    assert build_input_window(_matrix(known), 0.5).length == 0


def test_window_all_unknown_is_empty():
    assert build_input_window(MeasurementMatrix.empty(3, 5), 0.0).length == 0


def test_window_ensemble_mode_needs_complete_subset():
    known = np.ones((4, 3), bool)
    known[2, 1] = False
    m = _matrix(known)
    w = build_input_window(m, 0.5, {2, 0})
    assert w.length == 1 and w.buses == (0, 2) and not w.padded.any()
    assert build_input_window(m, 0.5, [0, 1]).length == 3


def test_window_channel_layout():
    mag = np.arange(6.0).reshape(3, 2)
    ang = -np.arange(6.0).reshape(3, 2) / 10
    w = build_input_window(MeasurementMatrix.full(mag, ang), 1.0)
    assert list(w.values[1]) == [mag[0, 1], ang[0, 1], mag[1, 1], ang[1, 1], mag[2, 1], ang[2, 1]]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.0, 1.0))
def test_window_invariants(seed, phi):
    rng = np.random.default_rng(seed)
    known = rng.random((5, 8)) < 0.7
    m = _matrix(known)
    n = build_input_window(m, phi).length
    frac = known.mean(axis=0)
    # contiguous prefix, strict inequality
    assert all(frac[:n] > phi)
    assert n == 8 or frac[n] <= phi
    full = build_input_window(m, 1.0).length
    assert full == (np.argmin(known.all(axis=0)) if not known.all() else 8)
    # lower phi never shortens the window
    assert build_input_window(m, phi / 2).length >= n
    sub = build_input_window(m, phi, [1, 3])
    assert not sub.padded.any()
    assert np.all(known[[1, 3], : sub.length])


def test_phi_zero_includes_any_known_column():
    known = np.zeros((4, 2), bool)
    known[0, :] = True
    assert included_columns(known, 0.0) == 2


def test_split_paper_sizes():
    rng = np.random.default_rng(0)
    cases = [random_case(rng, 2, 2, cid=f"c{i}") for i in range(4058)]
    tr, te = split_dataset(Dataset(cases), 0.75, 1)
    assert (len(tr), len(te)) == (3044, 1014)


def test_split_deterministic_partition_and_stats(rng):
    ds = random_dataset(rng, 13)
    a, b = split_dataset(ds, 0.75, 5)
    a2, b2 = split_dataset(ds, 0.75, 5)
    assert [c.id for c in a] == [c.id for c in a2] and [c.id for c in b] == [c.id for c in b2]
    assert sorted(c.id for c in list(a) + list(b)) == sorted(c.id for c in ds)
    assert a.stats == NormalizationStats.from_cases(a.cases) and b.stats == a.stats


def test_split_rejects_small_or_empty():
    with pytest.raises(ValueError):
        split_dataset(Dataset([]), 0.75, 0)
    with pytest.raises(ValueError):
        split_dataset(random_dataset(np.random.default_rng(0), 3), 0.75, 0)


def test_stack_windows_shapes(rng):
    ds = random_dataset(rng, 3, B=4, T=5)
    assert stack_windows(ds.cases, None).shape == (3, 5, 8)
    assert stack_windows(ds.cases, None, [1, 2]).shape == (3, 5, 4)


def test_wrap_angle_range():
    x = wrap_angle(np.linspace(-20, 20, 1001))
    assert np.all(x >= -np.pi) and np.all(x < np.pi)
