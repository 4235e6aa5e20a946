"""Fast property checks run by ``tsadw selftest``."""
from __future__ import annotations

import itertools
import tempfile
from pathlib import Path

import numpy as np

from .codec import load_dataset, save_dataset
from .decision import BlockVerdict, DecisionMachine, Rule
from .delay import DelayModel, NoiseModel, noise_phasors
from .ensemble import ObservabilityGraph, PmuAllocation, allocation_objective, solve_allocation
from .nn.lstm import LstmNetwork, NetworkConfig, lstm_cell_forward, network_gradients, sigmoid
from .phasor import ContingencyCase, Dataset, MeasurementMatrix
from .ssa import MetaheuristicConfig


def check_gradients(seed):
    rng = np.random.default_rng(seed)
    net = LstmNetwork.initialize(NetworkConfig(3, (4, 3), (3,)), rng)
    X, y = rng.normal(size=(2, 5, 3)), np.array([0.0, 1.0])
    _, grads = network_gradients((X, y), net)
    params = net.parameters()
    worst, h = 0.0, 1e-5
    for k, p in enumerate(params):
        for idx in list(np.ndindex(p.shape))[:6]:
            plus = [q.copy() for q in params]
            minus = [q.copy() for q in params]
            plus[k][idx] += h
            minus[k][idx] -= h
            fp = network_gradients((X, y), net.with_parameters(plus))[0]
            fm = network_gradients((X, y), net.with_parameters(minus))[0]
            num = (fp - fm) / (2 * h)
            worst = max(worst, abs(num - grads[k][idx]) / max(abs(num), abs(grads[k][idx]), 1e-8))
    return bool(worst < 1e-4), f"worst relative error {worst:.2e}"


def check_cell(seed):
    rng = np.random.default_rng(seed)
    net = LstmNetwork.initialize(NetworkConfig(2, (2,), ()), rng)
    layer = net.lstm[0]
    x, h, C = rng.normal(size=2), rng.normal(size=2), rng.normal(size=2)
    h1, C1 = lstm_cell_forward(x, h, C, layer)
    Wf, Uf, bf = layer.gate("f")
    Wi, Ui, bi = layer.gate("i")
    Wc, Uc, bc = layer.gate("c")
    Wo, Uo, bo = layer.gate("o")
    f = sigmoid(Wf @ x + Uf @ h + bf)
    i = sigmoid(Wi @ x + Ui @ h + bi)
    o = sigmoid(Wo @ x + Uo @ h + bo)
    C_ref = f * C + i * np.tanh(Wc @ x + Uc @ h + bc)
    err = max(np.abs(C1 - C_ref).max(), np.abs(h1 - o * np.tanh(C_ref)).max())
    return bool(err < 1e-12), f"max deviation {err:.1e}"


def check_decision(seed):
    m = DecisionMachine()
    m.step(BlockVerdict("main", "primary", 1))
    out = m.step(BlockVerdict("ens-a", "secondary", 1))
    ok = out is not None and out.rule is Rule.PRIMARY_FIRST and out.label == 1
    ok &= m.step(BlockVerdict("ens-b", "secondary", 0)) is None and m.final.label == 1
    m = DecisionMachine()
    for v in (BlockVerdict("ens-a", "secondary", 0), BlockVerdict("ens-b", "secondary", 0)):
        out = m.step(v)
    ok &= out is not None and out.rule is Rule.MAJORITY and out.label == 0
    return bool(ok), "primary-first agreement, terminal absorption, majority"


def check_delay(seed):
    d = DelayModel(seed=seed)
    x = d.sample(200_000, (1,))
    ok = abs(x.mean() / d.mean - 1) < 0.01 and abs(x.var() / d.variance - 1) < 0.03 and x.min() >= d.shift
    return bool(ok), f"mean {x.mean():.3f} ms, variance {x.var():.2f} ms^2, min {x.min():.2f} ms"


def check_noise(seed):
    n = NoiseModel(seed=seed)
    d = noise_phasors(n, np.random.default_rng(seed), 200_000)
    worst = np.abs(d).max()
    return bool(worst <= n.tve_cap), f"largest perturbation {worst:.5f} pu"


def check_allocation(seed):
    rng = np.random.default_rng(seed)
    P, N = 6, 2
    edges = [(i, i + 1) for i in range(P - 1)] + [tuple(rng.choice(P, 2, replace=False))]
    g = ObservabilityGraph.from_edges(P, edges)
    best = -np.inf
    for combo in itertools.combinations(range(P), P // N):
        rest = tuple(p for p in range(P) if p not in combo)
        best = max(best, allocation_objective(PmuAllocation((combo, rest)), g))
    res = solve_allocation(g, P, N, MetaheuristicConfig(population=20, max_iter=200, seed=seed))
    return bool(abs(res.objective - best) < 1e-9), f"search {res.objective:.3f} vs exhaustive {best:.3f}"


def check_codec(seed):
    rng = np.random.default_rng(seed)
    cases = []
    for k in range(3):
        known = rng.random((4, 5)) > 0.2
        m = MeasurementMatrix(rng.random((4, 5)), rng.uniform(-np.pi, np.pi, (4, 5)), known)
        cases.append(ContingencyCase(f"c{k}", m, k % 2, {"k": k}))
    ds = Dataset(cases)
    ok = True
    with tempfile.TemporaryDirectory() as tmp:
        for name in ("d.jsonl", "d.tsadw"):
            path = Path(tmp) / name
            save_dataset(ds, path)
            ok &= load_dataset(path) == ds
    return bool(ok), "jsonl and binary round trips"


CHECKS = (check_gradients, check_cell, check_decision, check_delay, check_noise,
          check_allocation, check_codec)


def run_all(seed: int = 0):
    """[(name, passed, detail)] for every quick check."""
    out = []
    for fn in CHECKS:
        try:
            ok, detail = fn(seed)
        except Exception as exc:  # noqa: BLE001 - report, don't crash
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append((fn.__name__[len("check_"):], ok, detail))
    return out
