"""Acceptance suite: one PASS/FAIL line per criterion (see the terminal summary)."""
import itertools
import time

import numpy as np
import pytest

from tsadw.cli import main as cli_main
from tsadw.decision import BlockVerdict, DecisionMachine
from tsadw.delay import DelayModel, NoiseModel, apply_noise
from tsadw.ensemble import solve_allocation
from tsadw.nn.lstm import LstmLayerParams, LstmNetwork, NetworkConfig, lstm_cell_forward
from tsadw.phasor import split_dataset
from tsadw.pipeline import PipelineConfig, train_suite
from tsadw.runtime import benchmark_dataset, default_mechanisms
from tsadw.simulate import generate_dataset
from tsadw.ssa import MetaheuristicConfig

from conftest import record_criterion
from test_cli import SMALL
from test_decision import BLOCKS, all_sequences, oracle
from test_ensemble import exhaustive_best, random_graph
from test_lstm import fd_check, scalar_cell


def check(k, ok, detail):
    record_criterion(k, bool(ok), detail)
    assert ok, detail


def test_c01_gradient_correctness():
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        net = LstmNetwork.initialize(NetworkConfig(3, (4, 3), (3,)), rng)
        net = net.with_parameters([rng.normal(0, 0.5, p.shape) for p in net.parameters()])
        X, y = rng.normal(size=(2, 4, 3)), rng.integers(0, 2, 2).astype(float)
        worst = max(worst, fd_check(net, X, y, "all"))
    check(1, worst < 1e-4, f"worst relative error {worst:.2e} over 20 seeds (< 1e-4, floor 1e-6)")


def test_c02_cell_fidelity():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(1000):
        In, H = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        p = LstmLayerParams(rng.normal(0, 0.5, (4 * H, In)), rng.normal(0, 0.5, (4 * H, H)),
                            rng.normal(0, 0.5, 4 * H))
        x, h, C = rng.normal(size=In), rng.normal(size=H), rng.normal(size=H)
        h1, C1 = lstm_cell_forward(x, h, C, p)
        hs, Cs = scalar_cell(x.tolist(), h.tolist(), C.tolist(), p)
        worst = max(worst, np.abs(h1 - hs).max(), np.abs(C1 - Cs).max())
    check(2, worst <= 1e-12, f"max deviation {worst:.1e} over 1000 configurations (<= 1e-12)")


def test_c03_decision_oracle():
    mismatches, n = 0, 0
    for seq in all_sequences(5):
        m = DecisionMachine()
        got = None
        for k, (block, v) in enumerate(seq):
            out = m.step(BlockVerdict(block, BLOCKS[block], v))
            if out is not None:
                got = (out.label, out.rule.value, k)
                break
        mismatches += got != oracle(seq)
        n += 1
    check(3, mismatches == 0, f"{mismatches} mismatches over {n} sequences")


def test_c04_delay_statistics():
    d = DelayModel(shape=20, scale=2, shift=10.0, seed=4)
    x = d.sample(1_000_000)
    mean_err = abs(x.mean() - 50.0) / 50.0
    var_err = abs(x.var() - 80.0) / 80.0
    ok = mean_err < 0.005 and var_err < 0.02 and x.min() >= 10.0
    check(4, ok, f"mean {x.mean():.3f} ms ({mean_err:.2%}), variance {x.var():.2f} ms^2 "
                 f"({var_err:.2%}), min {x.min():.2f} ms")


def test_c05_noise_cap():
    rng = np.random.default_rng(5)
    mag, ang = rng.uniform(0.0, 1.3, 1_000_000), rng.uniform(-np.pi, np.pi, 1_000_000)
    m2, a2 = apply_noise(mag, ang, NoiseModel(sigma=0.004, tve_cap=0.01), rng)
    tve = np.abs(m2 * np.exp(1j * a2) - mag * np.exp(1j * ang)) / 1.0
    m0, a0 = apply_noise(mag, ang, NoiseModel(sigma=0.0), rng)
    identity = np.array_equal(m0, mag) and np.array_equal(a0, ang)
    check(5, tve.max() <= 0.01 + 1e-12 and identity,
          f"max TVE {tve.max():.5f} over 1e6 phasors; zero-sigma identity {identity}")


def test_c06_allocation_optimality():
    rng = np.random.default_rng(6)
    misses = []
    for g_idx in range(10):
        P, N = int(rng.integers(4, 9)), int(rng.integers(1, 4))
        g = random_graph(rng, P)
        res = solve_allocation(g, P, N, MetaheuristicConfig(population=30, max_iter=300, seed=g_idx))
        best = exhaustive_best(g, N)
        if abs(res.objective - best) > 1e-9:
            misses.append((P, N, res.objective, best))
    violations = 0
    for P in range(8, 41, 4):
        g = random_graph(rng, P)
        for N in (3, 5, 7):
            res = solve_allocation(g, P, N, MetaheuristicConfig(population=10, max_iter=30, seed=P))
            try:
                res.allocation.check(P)
            except ValueError:
                violations += 1
    check(6, not misses and violations == 0,
          f"{10 - len(misses)}/10 small graphs optimal; {violations} constraint violations up to P=40")


@pytest.fixture(scope="module")
def pipeline():
    """Default configuration: generate, split, train, benchmark."""
    t0 = time.perf_counter()
    cfg = PipelineConfig.default()
    ds = generate_dataset(cfg.grid(), cfg.datagen())
    train, test = split_dataset(ds, float(cfg.data["data"]["split_ratio"]), cfg.seed("split"))
    suite, _, _ = train_suite(train, cfg)
    report = benchmark_dataset(suite, test, cfg.delay_model(), cfg.noise_model(), 1,
                               default_mechanisms((0.4, 0.5, 0.6, 0.8, 1.0), noisy=True), jobs=1)
    elapsed = time.perf_counter() - t0
    return {"cfg": cfg, "n_cases": len(ds), "train": len(train), "test": test, "suite": suite,
            "report": report, "summary": report.summary()["mechanisms"], "elapsed": elapsed}


def test_c07_end_to_end_speedup(pipeline):
    s = pipeline["summary"]
    da, sy = s["delay_aware"], s["synchronous"]
    ratio = da["average_ms"] / sy["average_ms"]
    ok = (ratio <= 0.75 and da["accuracy"] >= 0.95 and pipeline["n_cases"] >= 400
          and pipeline["elapsed"] < 900)
    check(7, ok, f"{pipeline['n_cases']} cases ({pipeline['train']} train), delay-aware "
                 f"{da['average_ms']:.1f} ms vs synchronous {sy['average_ms']:.1f} ms, ratio {ratio:.3f} "
                 f"(<= 0.75), accuracy {da['accuracy']:.2%} (>= 95%), {pipeline['elapsed']:.0f} s (< 900 s)")


def test_c08_phi_tradeoff(pipeline):
    s = pipeline["summary"]
    phis = (0.4, 0.6, 0.8, 1.0)
    avg = [s[f"main_phi{p:g}"]["average_ms"] for p in phis]
    acc = [s[f"main_phi{p:g}"]["accuracy"] for p in phis]
    ok = all(a <= b for a, b in zip(avg, avg[1:])) and acc[-1] >= acc[0] - 0.01
    check(8, ok, "main-only response " + " <= ".join(f"{a:.1f}" for a in avg)
          + f" ms; accuracy {acc[0]:.2%} at 0.4, {acc[-1]:.2%} at 1.0")


def test_c09_noise_robustness(pipeline):
    s = pipeline["summary"]
    clean, noisy = s["delay_aware"]["accuracy"], s["delay_aware+noise"]["accuracy"]
    check(9, abs(clean - noisy) <= 0.015, f"noiseless {clean:.2%}, noisy {noisy:.2%} (within 1.5 pp)")


def test_c10_reproducibility(pipeline, tmp_path):
    cfg_file = tmp_path / "small.toml"
    cfg_file.write_text(SMALL)
    outs = []
    for run in ("a", "b"):
        out = tmp_path / run
        for cmd in ("gen-data", "train", "bench"):
            assert cli_main([cmd, "--config", str(cfg_file), "--out", str(out)]) == 0
        outs.append(out)
    same_cli = all((outs[0] / "bench" / n).read_bytes() == (outs[1] / "bench" / n).read_bytes()
                   for n in ("rows.csv", "cdf.csv"))
    cfg = pipeline["cfg"]
    again = benchmark_dataset(pipeline["suite"], pipeline["test"], cfg.delay_model(), cfg.noise_model(), 1,
                              default_mechanisms((0.4, 0.5, 0.6, 0.8, 1.0), noisy=True), jobs=2)
    same_bench = (again.rows_csv() == pipeline["report"].rows_csv()
                  and again.cdf_csv() == pipeline["report"].cdf_csv())
    check(10, same_cli and same_bench,
          f"CLI pipeline reruns byte-identical: {same_cli}; default-suite benchmark rerun identical: {same_bench}")
