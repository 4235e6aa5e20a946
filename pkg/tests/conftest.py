import numpy as np
import pytest

from tsadw.phasor import ContingencyCase, Dataset, MeasurementMatrix


def random_case(rng, B=4, T=6, known_p=1.0, cid="c0", label=None):
    known = rng.random((B, T)) < known_p
    m = MeasurementMatrix(rng.uniform(0.8, 1.1, (B, T)), rng.uniform(-np.pi, np.pi, (B, T)), known)
    lab = int(rng.integers(0, 2)) if label is None else label
    return ContingencyCase(cid, m, lab, {"load_level_pct": 100, "fault_bus": 0, "removed": [0, 1]})


def random_dataset(rng, n=10, B=4, T=6, known_p=1.0):
    return Dataset([random_case(rng, B, T, known_p, f"c{i}") for i in range(n)])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_CRITERIA = {}


def record_criterion(k, ok, detail):
    line = f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    _CRITERIA[k] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[k])
