"""Offline phase: configuration, suite training and on-disk artifacts."""
from __future__ import annotations

import copy
import json
import logging
import os
import platform
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import __version__
from .decision import ThresholdSchedule, optimize_thresholds
from .delay import DelayModel, NoiseModel
from .ensemble import BlockSpec, ObservabilityGraph, build_ensemble_suite
from .grid import GridModel, load_grid
from .nn.checkpoint import CheckpointError, load_network, save_network
from .nn.lstm import NetworkConfig, network_forward
from .nn.optim import TrainConfig, train_block
from .phasor import Dataset, NormalizationStats, stack_windows
from .runtime import AssessmentSuite, TrainedBlock, run_case_delay_aware
from .simulate import DatagenConfig
from .ssa import MetaheuristicConfig

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class MissingArtifactError(FileNotFoundError):
    pass


# stage seed = base seed + offset
SEED_OFFSETS = {"split": 0, "allocation": 1, "training": 2, "thresholds": 3, "delay": 4, "noise": 5}

DEFAULTS = {
    "grid": {"path": ""},
    "data": {
        # 13 levels, 0.8 to 1.1 in 2.5 % steps
        "load_levels": [0.8, 0.825, 0.85, 0.875, 0.9, 0.925, 0.95, 0.975, 1.0, 1.025, 1.05,
                        1.075, 1.1],
        "clearance_s": 0.2,
        "horizon_s": 10.0,
        "dt_s": 0.001,
        "record_cycles": 10,
        "fault_terminals": "both",
        "first_outages": [],  # empty = every branch
        "second_outages": [],
        "dataset": "dataset.jsonl",
        "split_ratio": 0.75,
    },
    "assessment": {"phi": 0.5, "N_values": [3, 4, 5, 6, 7, 9], "omega": 100.0,
                   "distinct_subsets": True},
    "allocation": {"population": 30, "max_iter": 2000, "attenuation": 1.0,
                   "change_prob": 0.7, "mask_prob": 0.1},
    "thresholds": {"population": 30, "max_iter": 2000, "attenuation": 1.0,
                   "change_prob": 0.7, "mask_prob": 0.1},
    "main": {"lstm_sizes": [64, 64, 64, 64], "dense_sizes": [32, 16], "epochs": 30,
             "batch_size": 32, "learning_rate": 0.003, "supervision": "all",
             "patience": 10, "min_improvement": 1e-5},
    "ensemble": {"lstm_sizes": [32, 32], "dense_sizes": [16], "epochs": 60,
                 "batch_size": 32, "learning_rate": 0.003, "supervision": "all",
                 "patience": 10, "min_improvement": 1e-5},
    "delay": {"shape": 20.0, "scale": 2.0, "shift_ms": 10.0, "constant": False},
    "noise": {"enabled": True, "sigma": 0.004, "tve_cap": 0.01},
    "bench": {"repetitions": 1, "phis": [0.4, 0.5, 0.6, 0.8, 1.0], "D_cycles": 1,
              "inference_cost_ms": 0.0},
    "run": {"seed": 0, "jobs": 0},
}


def _merge(base: dict, over: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key {where}{k}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {where}{k} must be a table")
            out[k] = _merge(base[k], v, f"{where}{k}.")
        else:
            out[k] = v
    return out


@dataclass
class PipelineConfig:
    """Nested settings; every random stage derives its seed from ``run.seed``."""

    data: dict

    @classmethod
    def default(cls) -> "PipelineConfig":
        return cls(copy.deepcopy(DEFAULTS)).validated()

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        return cls(_merge(DEFAULTS, d)).validated()

    @classmethod
    def from_toml(cls, path) -> "PipelineConfig":
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except FileNotFoundError:
            raise MissingArtifactError(f"config file {path} not found") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return cls.from_dict(raw)

    def with_overrides(self, seed=None, phi=None, shift_ms=None, jobs=None) -> "PipelineConfig":
        d = copy.deepcopy(self.data)
        if seed is not None:
            d["run"]["seed"] = seed
        if phi is not None:
            d["assessment"]["phi"] = phi
        if shift_ms is not None:
            d["delay"]["shift_ms"] = shift_ms
        if jobs is not None:
            d["run"]["jobs"] = jobs
        return PipelineConfig(d).validated()

    def validated(self) -> "PipelineConfig":
        d = self.data
        a = d["assessment"]
        if not 0.0 <= float(a["phi"]) <= 1.0:
            raise ConfigError("assessment.phi must lie in [0, 1]")
        if float(a["omega"]) <= 0:
            raise ConfigError("assessment.omega must be positive")
        if not a["N_values"] or any(int(n) < 1 for n in a["N_values"]):
            raise ConfigError("assessment.N_values must be positive integers")
        if not 0.0 < float(d["data"]["split_ratio"]) < 1.0:
            raise ConfigError("data.split_ratio must lie in (0, 1)")
        seed = d["run"]["seed"]
        if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2 ** 64:
            raise ConfigError("run.seed must be an unsigned 64-bit integer")
        if int(d["run"]["jobs"]) < 0:
            raise ConfigError("run.jobs must be >= 0 (0 = all cores)")
        for block in ("main", "ensemble"):
            if d[block]["supervision"] not in ("last", "all"):
                raise ConfigError(f"{block}.supervision must be 'last' or 'all'")
        try:
            self.metaheuristic("allocation")
            self.metaheuristic("thresholds")
            self.delay_model()
            self.noise_model(force=True)
            self.datagen()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        for p in d["bench"]["phis"]:
            if not 0.0 <= float(p) <= 1.0:
                raise ConfigError("bench.phis must lie in [0, 1]")
        return self

    def seed(self, stage: str) -> int:
        return int(self.data["run"]["seed"]) + SEED_OFFSETS[stage]

    @property
    def phi(self) -> float:
        return float(self.data["assessment"]["phi"])

    @property
    def jobs(self) -> int:
        j = int(self.data["run"]["jobs"])
        return j if j > 0 else (os.cpu_count() or 1)

    def metaheuristic(self, section: str) -> MetaheuristicConfig:
        return MetaheuristicConfig(**self.data[section], seed=self.seed(section))

    def delay_model(self) -> DelayModel:
        c = self.data["delay"]
        return DelayModel(float(c["shape"]), float(c["scale"]), float(c["shift_ms"]),
                          self.seed("delay"), bool(c["constant"]))

    def noise_model(self, force: bool = False) -> Optional[NoiseModel]:
        c = self.data["noise"]
        if not (c["enabled"] or force):
            return None
        return NoiseModel(float(c["sigma"]), float(c["tve_cap"]), 1.0, self.seed("noise"))

    def datagen(self) -> DatagenConfig:
        c = {k: v for k, v in self.data["data"].items() if k not in ("dataset", "split_ratio")}
        for k in ("first_outages", "second_outages"):
            c[k] = c[k] or None
        return DatagenConfig.from_dict(c)

    def grid(self) -> GridModel:
        path = self.data["grid"]["path"]
        if path and not os.path.exists(path):
            raise MissingArtifactError(f"grid file {path} not found")
        return load_grid(path or None)

    def train_config(self, block: str, offset: int = 0) -> TrainConfig:
        c = self.data[block]
        return TrainConfig(int(c["epochs"]), int(c["batch_size"]), float(c["learning_rate"]),
                           self.seed("training") * 1000 + offset, c["supervision"],
                           int(c["patience"]), float(c["min_improvement"]))

    def network_factory(self, block: str):
        c = self.data[block]
        return lambda dim: NetworkConfig(dim, tuple(c["lstm_sizes"]), tuple(c["dense_sizes"]))

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)


def manifest(command: str, cfg: PipelineConfig, **extra) -> dict:
    return {
        "command": command,
        "config": cfg.to_dict(),
        "seeds": {k: cfg.seed(k) for k in SEED_OFFSETS},
        "versions": {"tsadw": __version__, "python": platform.python_version(),
                     "numpy": np.__version__},
        **extra,
    }


def write_json(path, obj) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")
    os.replace(tmp, path)


# --- offline training ---------------------------------------------------------

def block_outputs(block_net, spec: BlockSpec, ds: Dataset, stats: NormalizationStats) -> np.ndarray:
    """(C, T) per-cycle outputs on fully known cases."""
    X = stack_windows(ds.cases, stats, None if spec.kind == "main" else spec.buses)
    return network_forward(X, block_net)


def allocate(cfg: PipelineConfig, grid: GridModel):
    graph = ObservabilityGraph.from_grid(grid)
    return build_ensemble_suite(graph, tuple(int(n) for n in cfg.data["assessment"]["N_values"]),
                                cfg.metaheuristic("allocation"), cfg.network_factory("main"),
                                cfg.network_factory("ensemble"),
                                distinct=bool(cfg.data["assessment"]["distinct_subsets"]))


def train_suite(train: Dataset, cfg: PipelineConfig, specs=None, grid: Optional[GridModel] = None):
    """Train every block and fit its threshold schedule on the training outputs.

    Returns ``(suite, allocations, info)``; ``allocations`` is empty when
    ``specs`` are passed in.
    """
    if train.stats is None:
        raise ValueError("training set has no normalization stats; split it first")
    allocations = {}
    if specs is None:
        specs, allocations = allocate(cfg, grid or cfg.grid())
    y = train.labels
    omega = float(cfg.data["assessment"]["omega"])
    th_cfg = cfg.metaheuristic("thresholds")
    blocks, info = [], {}
    for k, spec in enumerate(specs):
        t0 = time.perf_counter()
        section = "main" if spec.kind == "main" else "ensemble"
        X = stack_windows(train.cases, train.stats, None if spec.kind == "main" else spec.buses)
        net, hist = train_block(X, y, spec.config, cfg.train_config(section, k))
        out = network_forward(X, net)
        sched = optimize_thresholds(out, y, omega, th_cfg, spec.block_id)
        blocks.append(TrainedBlock(spec, net, sched))
        info[spec.block_id] = {"epochs": len(hist), "final_loss": hist[-1],
                               "seconds": time.perf_counter() - t0}
        log.info("trained %s in %.1fs (%d epochs, loss %.4f)", spec.block_id,
                 info[spec.block_id]["seconds"], len(hist), hist[-1])
    suite = AssessmentSuite(blocks[0], blocks[1:], train.stats, cfg.phi, train.cycle_ms)
    return suite, allocations, info


def save_suite(suite: AssessmentSuite, out_dir) -> None:
    out = Path(out_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    entries = []
    for b in suite.blocks:
        rel = f"checkpoints/{b.block_id}.tsann"
        save_network(b.network, out / rel, {"block_id": b.block_id, "buses": list(b.spec.buses)})
        entries.append({"block_id": b.block_id, "kind": b.spec.kind, "buses": list(b.spec.buses),
                        "group": b.spec.group, "checkpoint": rel})
    write_json(out / "thresholds.json", [b.schedule.to_dict() for b in suite.blocks])
    write_json(out / "suite.json", {
        "blocks": entries,
        "phi": suite.phi,
        "cycle_ms": suite.cycle_ms,
        "stats": {"mean": suite.stats.mean.tolist(), "std": suite.stats.std.tolist()},
    })


def load_suite(out_dir, phi: Optional[float] = None) -> AssessmentSuite:
    out = Path(out_dir)
    need = [out / "suite.json", out / "thresholds.json"]
    for p in need:
        if not p.exists():
            raise MissingArtifactError(f"missing artifact {p}")
    meta = json.loads(need[0].read_text())
    schedules = {d["block_id"]: ThresholdSchedule.from_dict(d) for d in json.loads(need[1].read_text())}
    blocks = []
    for e in meta["blocks"]:
        path = out / e["checkpoint"]
        if not path.exists():
            raise MissingArtifactError(f"missing artifact {path}")
        if e["block_id"] not in schedules:
            raise MissingArtifactError(f"no threshold schedule for block {e['block_id']}")
        try:
            net = load_network(path)
        except CheckpointError as exc:
            raise ConfigError(str(exc)) from None
        spec = BlockSpec(e["kind"], tuple(e["buses"]), net.config, e["block_id"], e["group"])
        blocks.append(TrainedBlock(spec, net, schedules[e["block_id"]]))
    stats = NormalizationStats(np.array(meta["stats"]["mean"]), np.array(meta["stats"]["std"]))
    return AssessmentSuite(blocks[0], blocks[1:], stats,
                           meta["phi"] if phi is None else phi, meta["cycle_ms"])


# --- estimator facade ------------------------------------------------------------

class DelayAwareTSA(ClassifierMixin, BaseEstimator):
    """Fits the whole suite on a normalized training ``Dataset``; predicts per case.

    ``predict`` and ``score`` replay each case through the delay-aware
    assessor. Undecided cases predict -1.
    """

    def __init__(self, phi=0.5, N_values=(3, 4, 5, 6, 7, 9), omega=100.0, main_epochs=30,
                 ensemble_epochs=60, learning_rate=0.003, supervision="all",
                 metaheuristic_iters=2000, delay_shift_ms=10.0, random_state=0):
        self.phi = phi
        self.N_values = N_values
        self.omega = omega
        self.main_epochs = main_epochs
        self.ensemble_epochs = ensemble_epochs
        self.learning_rate = learning_rate
        self.supervision = supervision
        self.metaheuristic_iters = metaheuristic_iters
        self.delay_shift_ms = delay_shift_ms
        self.random_state = random_state

    def _config(self) -> PipelineConfig:
        block = {"learning_rate": self.learning_rate, "supervision": self.supervision}
        return PipelineConfig.from_dict({
            "assessment": {"phi": self.phi, "N_values": list(self.N_values), "omega": self.omega},
            "allocation": {"max_iter": self.metaheuristic_iters},
            "thresholds": {"max_iter": self.metaheuristic_iters},
            "main": dict(block, epochs=self.main_epochs),
            "ensemble": dict(block, epochs=self.ensemble_epochs),
            "delay": {"shift_ms": self.delay_shift_ms},
            "run": {"seed": int(self.random_state)},
        })

    def fit(self, X: Dataset, y=None, grid: Optional[GridModel] = None):
        if not isinstance(X, Dataset) or len(X) == 0:
            raise TypeError("fit expects a non-empty tsadw Dataset")
        if y is not None and not np.array_equal(np.asarray(y), X.labels):
            raise ValueError("y disagrees with the dataset labels")
        cfg = self._config()
        self.suite_, self.allocations_, self.training_info_ = train_suite(X, cfg, grid=grid)
        self.classes_ = np.array([0, 1])
        return self

    def assess(self, X: Dataset, noise: Optional[NoiseModel] = None):
        check_is_fitted(self, "suite_")
        delay = self._config().delay_model()
        return [run_case_delay_aware(self.suite_, c, delay, noise) for c in X.cases]

    def predict(self, X: Dataset) -> np.ndarray:
        return np.array([-1 if o.label is None else o.label for o in self.assess(X)])

    def score(self, X: Dataset, y=None, sample_weight=None) -> float:
        y = X.labels if y is None else np.asarray(y)
        return float(np.mean(self.predict(X) == y))
