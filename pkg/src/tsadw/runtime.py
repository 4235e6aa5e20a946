"""Online assessment: event replay, the synchronous baseline and the benchmark harness."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .decision import BlockVerdict, DecisionMachine, FinalAssessment, ThresholdSchedule, map_to_binary
from .delay import ArrivalEvent, DelayModel, NoiseModel, case_stream, schedule_arrivals
from .ensemble import BlockSpec
from .nn.lstm import LstmNetwork, initial_state, network_forward, network_step
from .phasor import ContingencyCase, Dataset, NormalizationStats, included_columns

log = logging.getLogger(__name__)

ROW_FIELDS = ("case_id", "label", "verdict", "mechanism", "response_ms", "rule", "repetition")
CDF_FIELDS = ("mechanism", "response_ms", "fraction_decided")
DEFAULT_PHIS = (0.4, 0.5, 0.6, 0.8, 1.0)


@dataclass
class TrainedBlock:
    spec: BlockSpec
    network: LstmNetwork
    schedule: ThresholdSchedule

    @property
    def block_id(self) -> str:
        return self.spec.block_id

    @property
    def is_main(self) -> bool:
        return self.spec.kind == "main"


@dataclass
class AssessmentSuite:
    """Everything the online phase needs: trained blocks, their schedules and the scaler."""

    main: TrainedBlock
    ensembles: List[TrainedBlock]
    stats: NormalizationStats
    phi: float = 0.5
    cycle_ms: float = 1000.0 / 60.0

    def __post_init__(self):
        if not self.main.is_main:
            raise ValueError("the first block must be the main block")
        ids = [b.block_id for b in self.ensembles]
        if len(set(ids)) != len(ids) or "main" in ids:
            raise ValueError("block ids must be unique")

    @property
    def blocks(self) -> List[TrainedBlock]:
        return [self.main] + list(self.ensembles)

    @property
    def n_bus(self) -> int:
        return self.stats.B


@dataclass
class AssessmentOutcome:
    case_id: str
    truth: int
    label: Optional[int]
    response_ms: float
    rule: str = ""
    cycles: Dict[str, int] = field(default_factory=dict)
    inferences: int = 0
    mechanism: str = "delay_aware"
    repetition: int = 0

    @property
    def decided(self) -> bool:
        return self.label is not None

    @property
    def correct(self) -> bool:
        return self.label is not None and self.label == self.truth

    def row(self) -> dict:
        return {
            "case_id": self.case_id,
            "label": self.truth,
            "verdict": "" if self.label is None else self.label,
            "mechanism": self.mechanism,
            "response_ms": f"{self.response_ms:.6f}",
            "rule": self.rule,
            "repetition": self.repetition,
        }


class OnlineAssessor:
    """Per-case state for the delay-aware mechanism.

    ``mode`` selects which blocks run: ``"full"`` (main + ensembles),
    ``"primary"`` (main only) or ``"secondary"`` (ensembles only).
    """

    def __init__(self, suite: AssessmentSuite, T: int, mode: str = "full", phi: Optional[float] = None,
                 inference_cost_ms: float = 0.0):
        self.suite = suite
        self.mode = mode
        self.phi = suite.phi if phi is None else float(phi)
        self.T = int(T)
        self.inference_cost_ms = float(inference_cost_ms)
        B = suite.n_bus
        self.values = np.zeros((self.T, 2 * B))  # normalized, zero where unknown
        self.known = np.zeros((B, self.T), dtype=bool)
        self.machine = DecisionMachine(mode)
        if mode == "primary":
            self.blocks = [suite.main]
        elif mode == "secondary":
            self.blocks = list(suite.ensembles)
        else:
            self.blocks = suite.blocks
        self.lengths = {b.block_id: 0 for b in self.blocks}
        self._states = {b.block_id: initial_state(b.network) for b in self.blocks if not b.is_main}
        self.inferences = 0
        self.last_arrival = -math.inf

    @property
    def terminal(self) -> bool:
        return self.machine.terminal

    def _write(self, ev: ArrivalEvent) -> bool:
        t = ev.cycle - 1
        if not 0 <= ev.bus < self.known.shape[0] or not 0 <= t < self.T:
            raise ValueError(f"event for bus {ev.bus}, cycle {ev.cycle} outside the matrix")
        if self.known[ev.bus, t]:
            log.warning("duplicate arrival for bus %d cycle %d ignored", ev.bus, ev.cycle)
            return False
        s = self.suite.stats
        self.values[t, 2 * ev.bus] = (ev.magnitude - s.mean[ev.bus, 0]) / s.std[ev.bus, 0]
        self.values[t, 2 * ev.bus + 1] = (ev.angle - s.mean[ev.bus, 1]) / s.std[ev.bus, 1]
        self.known[ev.bus, t] = True
        return True

    def _infer(self, block: TrainedBlock, n: int) -> float:
        self.inferences += 1
        if block.is_main:
            return float(network_forward(self.values[:n], block.network)[-1])
        # ensemble windows never change once admitted, so advance the stored state
        cols = [c for b in block.spec.buses for c in (2 * b, 2 * b + 1)]
        state = self._states[block.block_id]
        y = math.nan
        for t in range(self.lengths[block.block_id], n):
            y, state = network_step(block.network, self.values[t, cols], state)
        self._states[block.block_id] = state
        return y

    def on_arrival(self, ev: ArrivalEvent) -> Optional[FinalAssessment]:
        if self.terminal:
            log.debug("event after final assessment ignored")
            return None
        self.last_arrival = max(self.last_arrival, ev.arrival_ms)
        if not self._write(ev):
            return None
        verdicts = []
        for block in self.blocks:
            if block.is_main:
                n = included_columns(self.known, self.phi)
            elif ev.bus in block.spec.buses:
                n = included_columns(self.known, 1.0, block.spec.buses)
            else:
                continue
            if n <= self.lengths[block.block_id]:
                continue
            y = self._infer(block, n)
            self.lengths[block.block_id] = n
            z = int(map_to_binary(y, block.schedule.at(n)))
            if z >= 0:
                kind = "primary" if block.is_main else "secondary"
                verdicts.append(BlockVerdict(block.block_id, kind, z, n, ev.arrival_ms))
        for v in verdicts:
            final = self.machine.step(v)
            if final is not None:
                return final
        return None

    def outcome(self, case: ContingencyCase, mechanism: str = "delay_aware", repetition: int = 0):
        final = self.machine.final
        if final is None:
            return AssessmentOutcome(case.id, case.label, None, self.last_arrival, "", {},
                                     self.inferences, mechanism, repetition)
        cycles = {b: self.lengths[b] for b in final.blocks}
        return AssessmentOutcome(case.id, case.label, final.label,
                                 final.time_ms + self.inference_cost_ms, final.rule.value, cycles,
                                 self.inferences, mechanism, repetition)


def _events(case, delay, noise, cycle_ms, repetition):
    return schedule_arrivals(case, delay, noise, cycle_ms=cycle_ms,
                             stream=case_stream(case.id, repetition))


def run_case_delay_aware(suite: AssessmentSuite, case: ContingencyCase, delay: DelayModel,
                         noise: Optional[NoiseModel] = None, mode: str = "full",
                         phi: Optional[float] = None, repetition: int = 0,
                         mechanism: str = "delay_aware", inference_cost_ms: float = 0.0,
                         events: Optional[Sequence[ArrivalEvent]] = None) -> AssessmentOutcome:
    """Replay the case's arrival stream until a final assessment or exhaustion."""
    if events is None:
        events = _events(case, delay, noise, suite.cycle_ms, repetition)
    assessor = OnlineAssessor(suite, case.matrix.T, mode, phi, inference_cost_ms)
    for ev in events:
        if assessor.on_arrival(ev) is not None:
            break
    return assessor.outcome(case, mechanism, repetition)


def run_case_synchronous(suite: AssessmentSuite, case: ContingencyCase, delay: DelayModel,
                         noise: Optional[NoiseModel] = None, D_cycles: int = 1, repetition: int = 0,
                         mechanism: str = "synchronous", inference_cost_ms: float = 0.0,
                         events: Optional[Sequence[ArrivalEvent]] = None) -> AssessmentOutcome:
    """Wait for the complete first ``D_cycles`` columns, then run the main block once."""
    if D_cycles < 1 or D_cycles > case.matrix.T:
        raise ValueError(f"D_cycles must lie in [1, {case.matrix.T}]")
    if events is None:
        events = _events(case, delay, noise, suite.cycle_ms, repetition)
    first = [e for e in events if e.cycle <= D_cycles]
    B = suite.n_bus
    X = np.zeros((D_cycles, 2 * B))
    s = suite.stats
    for e in first:
        X[e.cycle - 1, 2 * e.bus] = (e.magnitude - s.mean[e.bus, 0]) / s.std[e.bus, 0]
        X[e.cycle - 1, 2 * e.bus + 1] = (e.angle - s.mean[e.bus, 1]) / s.std[e.bus, 1]
    y = float(network_forward(X, suite.main.network)[-1])
    response = max(e.arrival_ms for e in first) + inference_cost_ms
    return AssessmentOutcome(case.id, case.label, int(y > 0.5), response, "sync",
                             {"main": D_cycles}, 1, mechanism, repetition)


# --- benchmark ----------------------------------------------------------------

def parse_mechanism(name: str):
    """Mechanism name -> (kind, phi, noisy). Names: delay_aware, synchronous,
    main_phi<x>, ensembles; a ``+noise`` suffix replays noisy payloads."""
    base, noisy = (name[:-6], True) if name.endswith("+noise") else (name, False)
    if base in ("delay_aware", "synchronous", "ensembles"):
        return base, None, noisy
    if base.startswith("main_phi"):
        try:
            phi = float(base[len("main_phi"):])
        except ValueError:
            raise ValueError(f"bad mechanism {name!r}") from None
        if not 0.0 <= phi <= 1.0:
            raise ValueError(f"bad mechanism {name!r}")
        return "main", phi, noisy
    raise ValueError(f"unknown mechanism {name!r}")


def default_mechanisms(phis: Sequence[float] = DEFAULT_PHIS, noisy: bool = False) -> tuple:
    names = ["delay_aware", "synchronous"] + [f"main_phi{p:g}" for p in phis] + ["ensembles"]
    if noisy:
        names += ["delay_aware+noise", "synchronous+noise"]
    return tuple(names)


def _run_one(args):
    suite, case, delay, noise, mechanisms, rep, D_cycles, cost = args
    clean = _events(case, delay, None, suite.cycle_ms, rep)
    noisy = _events(case, delay, noise, suite.cycle_ms, rep) if noise is not None else None
    out = []
    for name in mechanisms:
        kind, phi, use_noise = parse_mechanism(name)
        if use_noise and noise is None:
            raise ValueError(f"mechanism {name!r} needs a noise model")
        events = noisy if use_noise else clean
        if kind == "synchronous":
            out.append(run_case_synchronous(suite, case, delay, None, D_cycles, rep, name, cost, events))
        else:
            mode = {"delay_aware": "full", "main": "primary", "ensembles": "secondary"}[kind]
            out.append(run_case_delay_aware(suite, case, delay, None, mode, phi, rep, name, cost, events))
    return out


def _summary(outcomes: Sequence[AssessmentOutcome]) -> dict:
    r = np.array([o.response_ms for o in outcomes])
    return {
        "n": len(outcomes),
        "accuracy": float(np.mean([o.correct for o in outcomes])),
        "decided_fraction": float(np.mean([o.decided for o in outcomes])),
        "average_ms": float(r.mean()),
        "best_ms": float(r.min()),
        "worst_ms": float(r.max()),
        "mean_inferences": float(np.mean([o.inferences for o in outcomes])),
    }


@dataclass
class BenchmarkReport:
    outcomes: List[AssessmentOutcome]
    config: dict = field(default_factory=dict)

    @property
    def mechanisms(self) -> List[str]:
        seen = []
        for o in self.outcomes:
            if o.mechanism not in seen:
                seen.append(o.mechanism)
        return seen

    def by_mechanism(self, name: str) -> List[AssessmentOutcome]:
        return [o for o in self.outcomes if o.mechanism == name]

    def summary(self) -> dict:
        per = {m: _summary(self.by_mechanism(m)) for m in self.mechanisms}
        out = {"mechanisms": per, "config": self.config}
        if "delay_aware" in per and "synchronous" in per:
            out["response_ratio"] = per["delay_aware"]["average_ms"] / per["synchronous"]["average_ms"]
        return out

    def rows_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, ROW_FIELDS, lineterminator="\n")
        w.writeheader()
        for o in self.outcomes:
            w.writerow(o.row())
        return buf.getvalue()

    def cdf_csv(self) -> str:
        return cdf_from_rows(list(csv.DictReader(io.StringIO(self.rows_csv()))))

    def save(self, out_dir) -> dict:
        os.makedirs(out_dir, exist_ok=True)
        paths = {
            "summary": os.path.join(out_dir, "report.json"),
            "rows": os.path.join(out_dir, "rows.csv"),
            "cdf": os.path.join(out_dir, "cdf.csv"),
        }
        texts = {
            "summary": json.dumps(self.summary(), indent=1, sort_keys=True) + "\n",
            "rows": self.rows_csv(),
            "cdf": self.cdf_csv(),
        }
        # stage everything first so a failure leaves no partial report
        for key, path in paths.items():
            with open(path + ".tmp", "w", newline="") as fh:
                fh.write(texts[key])
        for path in paths.values():
            os.replace(path + ".tmp", path)
        return paths


def read_rows(path) -> List[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != ROW_FIELDS:
            raise ValueError(f"{path}: expected header {','.join(ROW_FIELDS)}")
        rows = list(reader)
    for i, r in enumerate(rows, start=2):
        try:
            float(r["response_ms"])
            int(r["label"])
            int(r["repetition"])
            if r["verdict"] not in ("", "0", "1"):
                raise ValueError(r["verdict"])
        except (TypeError, ValueError) as exc:
            raise ValueError(f"{path}: line {i}: malformed row ({exc})") from None
    return rows


def cdf_from_rows(rows: Sequence[dict]) -> str:
    """Fraction decided by time tau at 1 ms resolution, one curve per mechanism."""
    groups: Dict[str, list] = {}
    for r in rows:
        groups.setdefault(r["mechanism"], []).append(r)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CDF_FIELDS)
    for mech, rs in groups.items():
        times = np.sort([float(r["response_ms"]) for r in rs if r["verdict"] != ""])
        n = len(rs)
        top = int(math.ceil(times[-1])) if times.size else 0
        grid = np.arange(0, top + 1)
        counts = np.searchsorted(times, grid, side="right")
        for tau, c in zip(grid, counts):
            w.writerow([mech, int(tau), f"{c / n:.6f}"])
    return buf.getvalue()


def benchmark_dataset(suite: AssessmentSuite, test: Dataset, delay: DelayModel,
                      noise: Optional[NoiseModel] = None, repetitions: int = 1,
                      mechanisms: Sequence[str] = ("delay_aware", "synchronous"),
                      D_cycles: int = 1, jobs: int = 1, inference_cost_ms: float = 0.0,
                      config: Optional[dict] = None) -> BenchmarkReport:
    """Run every mechanism on every test case and repetition.

    Rows come out ordered by (repetition, case, mechanism) whatever ``jobs`` is.
    """
    if len(test) == 0:
        raise ValueError("benchmark needs a non-empty test set")
    if repetitions < 1:
        raise ValueError("repetitions must be positive")
    for m in mechanisms:
        parse_mechanism(m)
    tasks = [(suite, c, delay, noise, tuple(mechanisms), rep, D_cycles, inference_cost_ms)
             for rep in range(repetitions) for c in test.cases]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_run_one, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        results = [_run_one(t) for t in tasks]
    outcomes = [o for chunk in results for o in chunk]
    cfg = {"delay": delay.to_dict(), "noise": None if noise is None else noise.to_dict(),
           "repetitions": repetitions, "D_cycles": D_cycles, "phi": suite.phi,
           "n_cases": len(test), "inference_cost_ms": inference_cost_ms}
    cfg.update(config or {})
    return BenchmarkReport(outcomes, cfg)
