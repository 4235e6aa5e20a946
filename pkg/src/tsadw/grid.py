"""Grid description, admittance assembly and Kron reduction."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.linalg
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

FAULT_SHUNT = 1e6


class SingularNetworkError(np.linalg.LinAlgError):
    """Eliminated block of an admittance matrix is singular."""


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b: float = 0.0
    kind: str = "line"
    in_service: bool = True

    @property
    def admittance(self) -> complex:
        return 1.0 / complex(self.r, self.x)


@dataclass(frozen=True)
class MachineParams:
    bus: int
    H: float
    D: float
    xd_prime: float
    E: float
    P: float
    slack: bool = False

    def __post_init__(self):
        if self.H <= 0 or self.E <= 0 or self.D < 0:
            raise ValueError(f"machine at bus {self.bus}: need H > 0, E > 0, D >= 0")
        if self.xd_prime <= 0:
            raise ValueError(f"machine at bus {self.bus}: transient reactance must be positive")


@dataclass(frozen=True)
class GridModel:
    n_bus: int
    branches: tuple
    machines: tuple
    loads: tuple  # complex power per bus at nominal voltage, P + jQ
    frequency: float = 60.0
    name: str = "grid"

    def __post_init__(self):
        object.__setattr__(self, "branches", tuple(self.branches))
        object.__setattr__(self, "machines", tuple(self.machines))
        loads = tuple(complex(s) for s in self.loads)
        if len(loads) != self.n_bus:
            raise ValueError(f"expected {self.n_bus} load entries, got {len(loads)}")
        object.__setattr__(self, "loads", loads)
        if len(self.machines) < 2:
            raise ValueError("a grid needs at least two machines")
        for br in self.branches:
            if not (0 <= br.from_bus < self.n_bus and 0 <= br.to_bus < self.n_bus):
                raise ValueError(f"branch {br} references a bus outside [0, {self.n_bus})")
            if not np.isfinite(br.admittance):
                raise ValueError(f"branch {br} has a non-finite admittance")
        if not self.is_connected(ignore_status=True):
            raise ValueError("grid is not connected with all branches in service")

    @property
    def n_machines(self) -> int:
        return len(self.machines)

    @property
    def slack_index(self) -> int:
        flagged = [i for i, m in enumerate(self.machines) if m.slack]
        return flagged[0] if flagged else 0

    def without(self, removed: Iterable[int]) -> "GridModel":
        removed = set(removed)
        branches = tuple(
            replace(br, in_service=False) if i in removed else br for i, br in enumerate(self.branches)
        )
        return replace(self, branches=branches)

    def with_machines(self, machines: Sequence[MachineParams]) -> "GridModel":
        return replace(self, machines=tuple(machines))

    def is_connected(self, removed: Iterable[int] = (), ignore_status: bool = False) -> bool:
        removed = set(removed)
        rows, cols = [], []
        for i, br in enumerate(self.branches):
            if (br.in_service or ignore_status) and i not in removed:
                rows.append(br.from_bus)
                cols.append(br.to_bus)
        adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(self.n_bus, self.n_bus))
        n, _ = connected_components(adj, directed=False)
        return n == 1

    def adjacency(self) -> list:
        """Undirected bus adjacency over in-service branches."""
        nbrs = [set() for _ in range(self.n_bus)]
        for br in self.branches:
            if br.in_service and br.from_bus != br.to_bus:
                nbrs[br.from_bus].add(br.to_bus)
                nbrs[br.to_bus].add(br.from_bus)
        return [sorted(s) for s in nbrs]

    def ybus(self, load_scale: float = 1.0, fault_bus: Optional[int] = None) -> np.ndarray:
        """Bus admittance matrix with constant-impedance loads folded in."""
        Y = np.zeros((self.n_bus, self.n_bus), dtype=complex)
        for br in self.branches:
            if not br.in_service:
                continue
            y = br.admittance
            f, t = br.from_bus, br.to_bus
            Y[f, f] += y + 0.5j * br.b
            Y[t, t] += y + 0.5j * br.b
            Y[f, t] -= y
            Y[t, f] -= y
        for k, s in enumerate(self.loads):
            Y[k, k] += load_scale * s.conjugate()
        if fault_bus is not None:
            Y[fault_bus, fault_bus] += FAULT_SHUNT
        return Y

    def augmented(self, load_scale: float = 1.0, fault_bus: Optional[int] = None) -> np.ndarray:
        """Bus admittance extended with machine internal nodes (appended last)."""
        n, g = self.n_bus, self.n_machines
        Y = np.zeros((n + g, n + g), dtype=complex)
        Y[:n, :n] = self.ybus(load_scale, fault_bus)
        for i, m in enumerate(self.machines):
            y = 1.0 / complex(0.0, m.xd_prime)
            Y[m.bus, m.bus] += y
            Y[n + i, n + i] += y
            Y[m.bus, n + i] -= y
            Y[n + i, m.bus] -= y
        return Y

    def reduced(self, load_scale: float = 1.0, fault_bus: Optional[int] = None):
        """Reduced machine-node admittance and the bus-voltage map V_bus = K @ E."""
        Y = self.augmented(load_scale, fault_bus)
        n = self.n_bus
        machine_nodes = list(range(n, n + self.n_machines))
        Yred = kron_reduce(Y, machine_nodes)
        K = -np.linalg.solve(Y[:n, :n], Y[:n, n:])
        return Yred, K


def kron_reduce(Y: np.ndarray, retained: Sequence[int]) -> np.ndarray:
    """Schur complement of ``Y`` onto the ``retained`` nodes.

    Raises :class:`SingularNetworkError` naming the offending node when the
    eliminated block cannot be factorized.
    """
    Y = np.asarray(Y)
    keep = list(retained)
    elim = [k for k in range(Y.shape[0]) if k not in set(keep)]
    Yrr = Y[np.ix_(keep, keep)]
    if not elim:
        return Yrr.copy()
    Yee = Y[np.ix_(elim, elim)]
    with warnings.catch_warnings():
        # singular pivots are reported below with the node name
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(Yee, check_finite=True)
    diag = np.abs(np.diag(lu))
    scale = max(np.abs(Yee).max(), 1.0)
    bad = np.flatnonzero(diag <= 1e-12 * scale)
    if bad.size:
        k = int(bad[0])
        raise SingularNetworkError(
            f"eliminated block is singular: zero pivot {k} (node {elim[k]})"
        )
    X = scipy.linalg.lu_solve((lu, piv), Y[np.ix_(elim, keep)])
    return Yrr - Y[np.ix_(keep, elim)] @ X


def load_grid(path=None) -> GridModel:
    """Read a grid description (TOML). ``None`` loads the bundled 9-bus system."""
    if path is None:
        raw = resources.files("tsadw.data").joinpath("ninebus.toml").read_bytes()
    else:
        raw = Path(path).read_bytes()
    cfg = tomllib.loads(raw.decode())
    return grid_from_dict(cfg)


def grid_from_dict(cfg: dict) -> GridModel:
    system = cfg.get("system", {})
    n_bus = int(system["buses"])
    loads = [0j] * n_bus
    for ld in cfg.get("loads", []):
        loads[int(ld["bus"])] += complex(ld["p"], ld.get("q", 0.0))
    branches = [
        Branch(int(b["from"]), int(b["to"]), float(b.get("r", 0.0)), float(b["x"]),
               float(b.get("b", 0.0)), b.get("kind", "line"), bool(b.get("in_service", True)))
        for b in cfg.get("branches", [])
    ]
    machines = [
        MachineParams(int(m["bus"]), float(m["H"]), float(m.get("D", 0.0)), float(m["xd_prime"]),
                      float(m["E"]), float(m.get("P", 0.0)), bool(m.get("slack", False)))
        for m in cfg.get("machines", [])
    ]
    return GridModel(n_bus, branches, machines, loads, float(system.get("frequency", 60.0)),
                     system.get("name", "grid"))
