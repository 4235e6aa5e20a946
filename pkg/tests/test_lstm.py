import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tsadw.nn.checkpoint import CheckpointError, load_network, save_network
from tsadw.nn.estimator import LSTMClassifier, check_sequences
from tsadw.nn.lstm import (
    LstmLayerParams, LstmNetwork, NetworkConfig, ShapeError, bce_loss, initial_state,
    lstm_cell_forward, network_forward, network_gradients, network_step,
)
from tsadw.nn.optim import AdamState, TrainConfig, TrainingError, adam_step, train_block


def _sig(v):
    return 1.0 / (1.0 + math.exp(-v))


def scalar_cell(x, h, C, p: LstmLayerParams):
    """Element-by-element evaluation of the gate equations with Python floats."""
    H = p.hidden
    W, U, b = p.W.tolist(), p.U.tolist(), p.b.tolist()

    def pre(row):
        return (sum(W[row][j] * x[j] for j in range(len(x)))
                + sum(U[row][j] * h[j] for j in range(H)) + b[row])

    h_new, C_new = [], []
    for k in range(H):
        f = _sig(pre(k))
        i = _sig(pre(H + k))
        c = math.tanh(pre(2 * H + k))
        o = _sig(pre(3 * H + k))
        Ck = f * C[k] + i * c
        C_new.append(Ck)
        h_new.append(o * math.tanh(Ck))
    return h_new, C_new


def small_net(seed, In=3, sizes=(4, 3), dense=(3,)):
    return LstmNetwork.initialize(NetworkConfig(In, sizes, dense), np.random.default_rng(seed))


def test_zero_parameters_fixed_point():
    p = LstmLayerParams(np.zeros((8, 3)), np.zeros((8, 2)), np.zeros(8))
    h, C = lstm_cell_forward(np.ones(3), np.zeros(2), np.zeros(2), p)
    assert np.all(h == 0) and np.all(C == 0)


def test_saturated_gates_carry_memory(rng):
    H = 3
    b = np.zeros(4 * H)
    b[:H], b[H:2 * H] = 20.0, -20.0
    p = LstmLayerParams(0.1 * rng.normal(size=(4 * H, 2)), 0.1 * rng.normal(size=(4 * H, H)), b)
    C_prev = rng.normal(size=H)
    _, C = lstm_cell_forward(rng.normal(size=2), rng.normal(size=H), C_prev, p)
    assert np.abs(C - C_prev).max() < 1e-8


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_cell_matches_scalar_equations(seed):
    rng = np.random.default_rng(seed)
    In, H = int(rng.integers(1, 5)), int(rng.integers(1, 5))
    p = LstmLayerParams(rng.normal(0, 0.5, (4 * H, In)), rng.normal(0, 0.5, (4 * H, H)),
                        rng.normal(0, 0.5, 4 * H))
    h, C = np.zeros(H), np.zeros(H)
    hs, Cs = [0.0] * H, [0.0] * H
    for _ in range(3):
        x = rng.normal(size=In)
        h, C = lstm_cell_forward(x, h, C, p)
        hs, Cs = scalar_cell(x.tolist(), hs, Cs, p)
        assert np.abs(h - hs).max() <= 1e-12 and np.abs(C - Cs).max() <= 1e-12
        assert np.all(np.abs(h) < 1)


def test_cell_shape_error():
    p = LstmLayerParams(np.zeros((8, 3)), np.zeros((8, 2)), np.zeros(8))
    with pytest.raises(ShapeError):
        lstm_cell_forward(np.ones(4), np.zeros(2), np.zeros(2), p)


def test_outputs_in_open_interval_and_causal(rng):
    net = small_net(0)
    X = rng.normal(size=(7, 3))
    y = network_forward(X, net)
    assert y.shape == (7,) and np.all((y > 0) & (y < 1))
    X2 = X.copy()
    X2[4:] += 10.0
    y2 = network_forward(X2, net)
    assert np.array_equal(y[:4], y2[:4])


def test_single_step_composition(rng):
    net = small_net(1)
    x = rng.normal(size=3)
    a = x
    for layer in net.lstm:
        a, _ = lstm_cell_forward(a, np.zeros(layer.hidden), np.zeros(layer.hidden), layer)
    for layer in net.dense:
        z = layer.W @ a + layer.b
        a = np.maximum(z, 0) if layer.activation == "rectifier" else 1 / (1 + np.exp(-z))
    assert abs(network_forward(x[None], net)[0] - a[0]) < 1e-12


def test_streaming_step_equals_batch_forward(rng):
    net = small_net(2)
    X = rng.normal(size=(6, 3))
    state = initial_state(net)
    ys = []
    for t in range(6):
        yt, state = network_step(net, X[t], state)
        ys.append(yt)
    assert np.abs(np.array(ys) - network_forward(X, net)).max() < 1e-12


def test_empty_window_has_no_output():
    assert network_forward(np.zeros((0, 3)), small_net(0)) is None


def test_zero_scaled_input_equals_zero_input(rng):
    net = small_net(3)
    X = rng.normal(size=(4, 3))
    assert np.array_equal(network_forward(0 * X, net), network_forward(np.zeros((4, 3)), net))


def test_bce_values():
    assert bce_loss([0.5], [1]) == pytest.approx(math.log(2), abs=1e-12)
    assert bce_loss([1 - 1e-12], [1]) == pytest.approx(1e-12, abs=1e-13)
    assert bce_loss([0.0], [0]) == pytest.approx(0.0, abs=1e-11)
    p, y = np.array([0.2, 0.7, 0.9]), np.array([0, 1, 0])
    assert bce_loss(p, y) == pytest.approx(sum(bce_loss([a], [b]) for a, b in zip(p, y)))
    with pytest.raises(ShapeError):
        bce_loss([0.5, 0.5], [1])


def fd_check(net, X, y, supervision="last", h=1e-5, floor=1e-6):
    """Worst |analytic - central difference| / max(|a|, |n|, floor).

    The floor keeps gradients below the float64 difference resolution
    (about 1e-11 here) from dominating the relative error."""
    _, grads = network_gradients((X, y), net, supervision)
    params = net.parameters()
    worst = 0.0
    for k, p in enumerate(params):
        for idx in np.ndindex(p.shape):
            plus = [q.copy() for q in params]
            minus = [q.copy() for q in params]
            plus[k][idx] += h
            minus[k][idx] -= h
            num = (network_gradients((X, y), net.with_parameters(plus), supervision)[0]
                   - network_gradients((X, y), net.with_parameters(minus), supervision)[0]) / (2 * h)
            ana = grads[k][idx]
            worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), floor))
    return worst


@pytest.mark.parametrize("supervision", ["last", "all"])
def test_gradients_match_finite_differences(supervision):
    rng = np.random.default_rng(7)
    net = small_net(7, In=2, sizes=(3, 2), dense=(2,))
    X, y = rng.normal(size=(3, 4, 2)), np.array([1.0, 0.0, 1.0])
    assert fd_check(net, X, y, supervision) < 1e-4


def test_gradient_linearity_and_order(rng):
    net = small_net(4)
    X, y = rng.normal(size=(3, 5, 3)), np.array([1.0, 0.0, 1.0])
    l1, g1 = network_gradients((X[:1], y[:1]), net)
    l2, g2 = network_gradients((np.concatenate([X[:1], X[:1]]), np.array([1.0, 1.0])), net)
    assert l2 == pytest.approx(2 * l1)
    assert all(np.allclose(b, 2 * a, rtol=1e-12, atol=1e-15) for a, b in zip(g1, g2))
    perm = [2, 0, 1]
    _, ga = network_gradients((X, y), net)
    _, gb = network_gradients((X[perm], y[perm]), net)
    assert all(np.allclose(a, b, rtol=1e-12, atol=1e-15) for a, b in zip(ga, gb))


def test_ragged_batch_sums_singletons(rng):
    net = small_net(5)
    pairs = [(rng.normal(size=(T, 3)), lab) for T, lab in ((3, 1), (5, 0), (3, 0))]
    loss, grads = network_gradients(pairs, net)
    parts = [network_gradients((w[None], np.array([l])), net) for w, l in pairs]
    assert loss == pytest.approx(sum(p[0] for p in parts))
    for k, g in enumerate(grads):
        assert np.allclose(g, sum(p[1][k] for p in parts))


def test_adam_zero_gradient_is_null_update():
    p = [np.array([1.0, -2.0])]
    new, st_ = adam_step(p, [np.zeros(2)], AdamState.for_params(p))
    assert np.array_equal(new[0], p[0]) and st_.step == 1


def test_adam_first_step_size():
    p = [np.array([0.5, 0.5])]
    g = [np.array([3.0, -0.2])]
    new, _ = adam_step(p, g, AdamState.for_params(p, lr=1e-3))
    assert np.allclose(np.abs(new[0] - p[0]), 1e-3 * np.abs(g[0]) / (np.abs(g[0]) + 1e-8), rtol=1e-9)


def test_adam_hand_iteration():
    lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
    x, m, v = 2.0, 0.0, 0.0
    grads = [0.3, -1.2, 0.7]
    p, state = [np.array([2.0])], AdamState.for_params([np.array([2.0])], lr=lr)
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        p, state = adam_step(p, [np.array([g])], state)
    assert abs(p[0][0] - x) < 1e-12


def test_training_deterministic_and_descends(rng):
    X = rng.normal(size=(16, 4, 2))
    y = (X[:, :, 0].sum(axis=1) > 0).astype(float)
    cfg = NetworkConfig(2, (4,), (3,))
    tc = TrainConfig(epochs=30, batch_size=8, learning_rate=0.01, seed=3)
    a, ha = train_block(X, y, cfg, tc)
    b, hb = train_block(X, y, cfg, tc)
    assert all(np.array_equal(p, q) for p, q in zip(a.parameters(), b.parameters()))
    assert ha == hb and ha[-1] < ha[0]


def test_memorizes_eight_cases():
    rng = np.random.default_rng(11)
    X = rng.normal(size=(8, 5, 3))
    y = np.array([0, 1] * 4, dtype=float)
    net, _ = train_block(X, y, NetworkConfig(3, (8,), (8,)),
                         TrainConfig(epochs=500, batch_size=8, learning_rate=0.01, seed=0, patience=500))
    assert np.array_equal(network_forward(X, net)[:, -1] > 0.5, y == 1)


def test_non_finite_loss_aborts():
    X = np.full((2, 3, 2), np.nan)
    with pytest.raises(TrainingError, match="epoch 0, batch 0"):
        train_block(X, np.array([0.0, 1.0]), NetworkConfig(2, (2,), ()), TrainConfig(epochs=1))


def test_init_range():
    net = small_net(0, In=5, sizes=(6,), dense=(4,))
    assert np.abs(net.lstm[0].W).max() <= 1 / math.sqrt(5 + 6)
    assert np.abs(net.dense[0].W).max() <= 1 / math.sqrt(6)


def test_checkpoint_round_trip(tmp_path):
    net = small_net(9)
    save_network(net, tmp_path / "n.tsann", {"seed": 9})
    back = load_network(tmp_path / "n.tsann")
    assert all(np.array_equal(a, b) for a, b in zip(net.parameters(), back.parameters()))
    assert (tmp_path / "n.tsann.json").exists()
    raw = (tmp_path / "n.tsann").read_bytes()
    (tmp_path / "bad.tsann").write_bytes(raw[:-5])
    with pytest.raises(CheckpointError, match="truncated"):
        load_network(tmp_path / "bad.tsann")
    (tmp_path / "bad2.tsann").write_bytes(b"XXXXXX" + raw[6:])
    with pytest.raises(CheckpointError, match="magic"):
        load_network(tmp_path / "bad2.tsann")


def test_estimator_api(rng):
    X = rng.normal(size=(12, 4, 2))
    y = (X[:, -1, 0] > 0).astype(int)
    est = LSTMClassifier(lstm_sizes=(4,), dense_sizes=(3,), epochs=5, batch_size=4, random_state=1)
    assert est.get_params()["epochs"] == 5
    est.fit(X, y)
    assert est.predict(X).shape == (12,)
    assert est.predict_proba(X).shape == (12, 2)
    assert est.predict_sequence(X).shape == (12, 4)
    with pytest.raises(ValueError):
        est.predict(rng.normal(size=(2, 4, 3)))
    with pytest.raises(ValueError):
        check_sequences(np.full((1, 2, 2), np.inf))
