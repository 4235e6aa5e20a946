"""PMU-to-ensemble allocation and block specifications."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .nn.lstm import NetworkConfig
from .ssa import MetaheuristicConfig, social_spider_minimize


class AllocationError(ValueError):
    pass


@dataclass(frozen=True)
class ObservabilityGraph:
    """Bus adjacency plus PMU locations (PMU id -> bus)."""

    adjacency: tuple
    pmu_buses: tuple = None

    def __post_init__(self):
        adj = tuple(tuple(sorted(set(int(j) for j in nb))) for nb in self.adjacency)
        B = len(adj)
        for i, nb in enumerate(adj):
            for j in nb:
                if not 0 <= j < B:
                    raise ValueError(f"bus {i} lists neighbour {j} outside [0, {B})")
                if i not in adj[j]:
                    raise ValueError(f"adjacency is not symmetric between {i} and {j}")
        object.__setattr__(self, "adjacency", adj)
        pmus = tuple(range(B)) if self.pmu_buses is None else tuple(int(b) for b in self.pmu_buses)
        object.__setattr__(self, "pmu_buses", pmus)

    @property
    def n_bus(self) -> int:
        return len(self.adjacency)

    @property
    def n_pmu(self) -> int:
        return len(self.pmu_buses)

    @classmethod
    def from_grid(cls, grid) -> "ObservabilityGraph":
        return cls(tuple(grid.adjacency()))

    @classmethod
    def from_edges(cls, n_bus: int, edges) -> "ObservabilityGraph":
        adj = [set() for _ in range(n_bus)]
        for a, b in edges:
            adj[a].add(b)
            adj[b].add(a)
        return cls(tuple(adj))

    def coverage_matrix(self) -> np.ndarray:
        """(P, B) boolean: PMU p observes bus b (its own bus and neighbours)."""
        cov = np.zeros((self.n_pmu, self.n_bus), dtype=bool)
        for p, bus in enumerate(self.pmu_buses):
            cov[p, bus] = True
            cov[p, list(self.adjacency[bus])] = True
        return cov


def observability(S, graph: ObservabilityGraph) -> int:
    """Number of buses hosting a PMU of ``S`` or adjacent to one."""
    S = list(S)
    for p in S:
        if not 0 <= p < graph.n_pmu:
            raise AllocationError(f"unknown PMU id {p}")
    if not S:
        return 0
    return int(graph.coverage_matrix()[S].any(axis=0).sum())


@dataclass(frozen=True)
class PmuAllocation:
    sets: tuple

    def __post_init__(self):
        object.__setattr__(self, "sets", tuple(tuple(sorted(int(p) for p in s)) for s in self.sets))

    @property
    def N(self) -> int:
        return len(self.sets)

    def check(self, P: int):
        N = self.N
        if N < 1:
            raise AllocationError("allocation has no sets")
        size = P // N
        for i, s in enumerate(self.sets[:-1]):
            if len(s) != size:
                raise AllocationError(f"set {i} has {len(s)} PMUs, expected {size}")
        flat = [p for s in self.sets for p in s]
        if len(flat) != len(set(flat)):
            raise AllocationError("PMU sets overlap")
        if set(flat) != set(range(P)):
            raise AllocationError("PMU sets do not cover every PMU")

    def to_json(self, objective: float, seed: int) -> str:
        return json.dumps({"N": self.N, "sets": [list(s) for s in self.sets],
                           "objective": objective, "seed": seed}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PmuAllocation":
        return cls(tuple(tuple(s) for s in json.loads(text)["sets"]))


def allocation_objective(alloc: PmuAllocation, graph: ObservabilityGraph,
                         variance_penalty: float = 0.0) -> float:
    """(1/N) * (sum O_i + sum(O_i - mean O)), optionally minus lambda * var(O)."""
    alloc.check(graph.n_pmu)
    O = np.array([observability(s, graph) for s in alloc.sets], dtype=float)
    N = len(O)
    value = (O.sum() + np.sum(O - O.sum() / N)) / N
    if variance_penalty:
        value -= variance_penalty * O.var()
    return float(value)


def _decode(keys: np.ndarray, P: int, N: int) -> np.ndarray:
    """Random keys (pop, P) -> set index per PMU (pop, P)."""
    perm = np.argsort(keys, axis=1, kind="stable")
    size = P // N
    slot = np.minimum(np.arange(P) // size, N - 1)
    assign = np.empty_like(perm)
    np.put_along_axis(assign, perm, np.broadcast_to(slot, perm.shape), axis=1)
    return assign


def _population_objective(assign: np.ndarray, cov: np.ndarray, N: int, variance_penalty: float):
    onehot = assign[:, None, :] == np.arange(N)[None, :, None]  # (pop, N, P)
    covered = (onehot.astype(np.int32) @ cov.astype(np.int32)) > 0
    O = covered.sum(axis=2).astype(float)
    value = (O.sum(axis=1) + np.sum(O - O.mean(axis=1, keepdims=True), axis=1)) / N
    if variance_penalty:
        value -= variance_penalty * O.var(axis=1)
    return value


def _to_allocation(assign_row: np.ndarray, N: int) -> PmuAllocation:
    return PmuAllocation(tuple(tuple(np.flatnonzero(assign_row == i)) for i in range(N)))


def random_allocations(P: int, N: int, count: int, seed: int) -> list:
    rng = np.random.default_rng(seed)
    assign = _decode(rng.random((count, P)), P, N)
    return [_to_allocation(a, N) for a in assign]


@dataclass
class AllocationResult:
    allocation: PmuAllocation
    objective: float
    history: np.ndarray
    seed: int


def solve_allocation(graph: ObservabilityGraph, P: Optional[int] = None, N: int = 3,
                     cfg: MetaheuristicConfig = MetaheuristicConfig(),
                     variance_penalty: float = 0.0) -> AllocationResult:
    """Maximize the allocation objective with the social spider search over random keys.

    Keys are sorted into a PMU permutation which is cut into N-1 blocks of
    floor(P/N) PMUs plus a final block with the remainder, so every candidate
    is feasible.
    """
    P = graph.n_pmu if P is None else P
    if P != graph.n_pmu:
        raise AllocationError(f"graph has {graph.n_pmu} PMUs, P={P}")
    if N < 1 or N > P:
        raise AllocationError(f"need 1 <= N <= P, got N={N}, P={P}")
    cov = graph.coverage_matrix()

    def fun(keys):
        return -_population_objective(_decode(keys, P, N), cov, N, variance_penalty)

    res = social_spider_minimize(fun, np.zeros(P), np.ones(P), cfg)
    alloc = _to_allocation(_decode(res.x[None], P, N)[0], N)
    alloc.check(P)
    return AllocationResult(alloc, -res.fun, -res.history, cfg.seed)


@dataclass(frozen=True)
class BlockSpec:
    kind: str  # "main" or "ensemble"
    buses: tuple
    config: NetworkConfig
    block_id: str = "main"
    group: int = 0  # N value the set came from (0 for the main block)

    def __post_init__(self):
        if self.kind not in ("main", "ensemble"):
            raise ValueError(f"unknown block kind {self.kind!r}")
        if self.kind == "ensemble" and not self.buses:
            raise ValueError("ensemble blocks need a non-empty bus subset")
        if self.config.input_dim != 2 * len(self.buses):
            raise ValueError("input dimension must be twice the bus count")


def build_ensemble_suite(graph: ObservabilityGraph, N_values: Sequence[int] = (3, 4, 5, 6, 7),
                         cfg: MetaheuristicConfig = MetaheuristicConfig(),
                         main_config: Callable = NetworkConfig.main_block,
                         ensemble_config: Callable = NetworkConfig.ensemble_block,
                         variance_penalty: float = 0.0, distinct: bool = False):
    """One main spec plus one ensemble spec per allocated PMU set.

    With ``distinct`` a bus subset already produced by an earlier N is not
    repeated: two blocks on identical inputs are not independent voters.
    Returns ``(specs, allocations)`` where allocations maps N to its result.
    """
    all_buses = tuple(range(graph.n_bus))
    specs = [BlockSpec("main", all_buses, main_config(2 * len(all_buses)), "main", 0)]
    allocations = {}
    for k, N in enumerate(N_values):
        sub_cfg = MetaheuristicConfig(**dict(cfg.to_dict(), seed=cfg.seed + k))
        res = solve_allocation(graph, graph.n_pmu, N, sub_cfg, variance_penalty)
        allocations[N] = res
        for i, pmus in enumerate(res.allocation.sets):
            buses = tuple(sorted(graph.pmu_buses[p] for p in pmus))
            if distinct and any(s.buses == buses for s in specs[1:]):
                continue
            specs.append(BlockSpec("ensemble", buses, ensemble_config(2 * len(buses)),
                                   f"ens-N{N}-{i}", N))
    return specs, allocations
