"""Classical-model swing-equation simulation and N-2 contingency dataset generation."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import root

from .grid import GridModel
from .phasor import ContingencyCase, Dataset, MeasurementMatrix, wrap_angle

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e6
MAX_DT = 2e-3


class EquilibriumError(RuntimeError):
    """No pre-fault operating point could be found."""


@dataclass(frozen=True)
class FaultSpec:
    """Bolted three-phase fault at ``fault_bus``.

    ``removed`` lists branch indices of the contingency. All but the last are
    out of service before the fault; the last one trips when the fault clears.
    """

    fault_bus: int
    clearance_s: float = 0.2
    removed: tuple = ()
    load_scale: float = 1.0

    def __post_init__(self):
        if self.clearance_s <= 0:
            raise ValueError("clearance time must be positive")
        object.__setattr__(self, "removed", tuple(int(r) for r in self.removed))

    def validate(self, grid: GridModel):
        if not 0 <= self.fault_bus < grid.n_bus:
            raise ValueError(f"fault bus {self.fault_bus} outside grid")
        for r in self.removed:
            if not 0 <= r < len(grid.branches):
                raise ValueError(f"removed component {r} does not exist")


@dataclass
class Trajectory:
    times: np.ndarray  # seconds, 0 = fault inception
    delta: np.ndarray  # (steps, G) rotor angles
    omega: np.ndarray  # (steps, G) per-unit speed deviation
    bus_voltage: np.ndarray  # (cycles, B) complex phasors, row k = cycle k+1 after clearance
    inertia: np.ndarray
    clearance_s: float
    cycle_ms: float
    divergent: bool = False
    reduced_post: Optional[np.ndarray] = None
    mechanical_power: Optional[np.ndarray] = None
    emf: Optional[np.ndarray] = None

    def coi_relative(self) -> np.ndarray:
        coi = self.delta @ self.inertia / self.inertia.sum()
        return self.delta - coi[:, None]

    def max_coi_excursion(self) -> float:
        return float(np.max(np.abs(self.coi_relative())))


@dataclass
class _Setup:
    E: np.ndarray
    delta0: np.ndarray
    Pm: np.ndarray
    M: np.ndarray
    D: np.ndarray
    Y_fault: np.ndarray
    Y_post: np.ndarray
    K_post: np.ndarray


def electrical_power(delta: np.ndarray, E: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """P_e for a batch: delta, E (..., G); Y (..., G, G)."""
    V = E * np.exp(1j * delta)
    I = np.einsum("...ij,...j->...i", Y, V)
    return (V * I.conj()).real


def _equilibrium(grid: GridModel, Y_pre: np.ndarray, load_scale: float):
    E = np.array([m.E for m in grid.machines])
    s = grid.slack_index
    others = [i for i in range(grid.n_machines) if i != s]
    Pm = np.array([m.P for m in grid.machines]) * load_scale

    def full(x):
        d = np.zeros(grid.n_machines)
        d[others] = x
        return d

    def resid(x):
        return electrical_power(full(x), E, Y_pre)[others] - Pm[others]

    x0 = np.zeros(len(others))
    # one finite-difference Newton step from the flat start
    r0 = resid(x0)
    J = np.column_stack([(resid(x0 + 1e-6 * e) - r0) / 1e-6 for e in np.eye(len(others))])
    try:
        guesses = [np.linalg.solve(J, -r0), x0]
    except np.linalg.LinAlgError:
        guesses = [x0]
    sol = None
    for guess in guesses:
        for method in ("hybr", "lm"):
            sol = root(resid, guess, method=method, tol=1e-13)
            if np.max(np.abs(resid(sol.x))) <= 1e-8:
                break
        else:
            continue
        break
    if np.max(np.abs(resid(sol.x))) > 1e-8:
        raise EquilibriumError(f"pre-fault equilibrium not found: {sol.message}")
    delta0 = full(sol.x)
    Pm[s] = electrical_power(delta0, E, Y_pre)[s]
    return E, delta0, Pm


def _prepare(grid: GridModel, fault: FaultSpec) -> _Setup:
    fault.validate(grid)
    if not grid.is_connected(fault.removed):
        raise ValueError(f"removing components {fault.removed} islands the network")
    pre_grid = grid.without(fault.removed[:-1])
    post_grid = grid.without(fault.removed)
    Y_pre, _ = pre_grid.reduced(fault.load_scale)
    Y_fault, _ = pre_grid.reduced(fault.load_scale, fault.fault_bus)
    Y_post, K_post = post_grid.reduced(fault.load_scale)
    E, delta0, Pm = _equilibrium(grid, Y_pre, fault.load_scale)
    M = np.array([2.0 * m.H for m in grid.machines])
    D = np.array([m.D for m in grid.machines])
    return _Setup(E, delta0, Pm, M, D, Y_fault, Y_post, K_post)


def _step_sizes(frequency: float, dt_s: float):
    cycle_s = 1.0 / frequency
    sub = int(np.ceil(cycle_s / dt_s - 1e-9))
    return cycle_s / sub, sub


def _integrate(setups: Sequence[_Setup], frequency: float, clearance_s: float, horizon_s: float,
               dt_s: float, record_cycles: int, keep_steps: bool):
    """Batched RK4 over cases sharing clearance, horizon and step size."""
    ws = 2.0 * np.pi * frequency
    dt, sub = _step_sizes(frequency, dt_s)
    n_fault = int(round(clearance_s / dt))
    n_post = int(round(horizon_s / dt))
    E = np.stack([s.E for s in setups])
    Pm = np.stack([s.Pm for s in setups])
    M = np.stack([s.M for s in setups])
    D = np.stack([s.D for s in setups])
    Yf = np.stack([s.Y_fault for s in setups])
    Yp = np.stack([s.Y_post for s in setups])
    Kp = np.stack([s.K_post for s in setups])
    delta = np.stack([s.delta0 for s in setups]).astype(float)
    omega = np.zeros_like(delta)
    Hw = M / M.sum(axis=1, keepdims=True)
    n = len(setups)
    max_exc = np.zeros(n)
    divergent = np.zeros(n, dtype=bool)
    n_rec = min(record_cycles, n_post // sub)
    volts = np.zeros((n, n_rec, Kp.shape[1]), dtype=complex)
    hist_d, hist_w = ([delta.copy()], [omega.copy()]) if keep_steps else (None, None)

    def rhs(d, w, Y):
        return ws * w, (Pm - electrical_power(d, E, Y) - D * w) / M

    for k in range(n_fault + n_post):
        Y = Yf if k < n_fault else Yp
        k1d, k1w = rhs(delta, omega, Y)
        k2d, k2w = rhs(delta + 0.5 * dt * k1d, omega + 0.5 * dt * k1w, Y)
        k3d, k3w = rhs(delta + 0.5 * dt * k2d, omega + 0.5 * dt * k2w, Y)
        k4d, k4w = rhs(delta + dt * k3d, omega + dt * k3w, Y)
        nd = delta + dt / 6.0 * (k1d + 2 * k2d + 2 * k3d + k4d)
        nw = omega + dt / 6.0 * (k1w + 2 * k2w + 2 * k3w + k4w)
        bad = ~np.all(np.isfinite(nd), axis=1) | (np.max(np.abs(nd), axis=1) > DIVERGENCE_LIMIT)
        divergent |= bad
        live = ~divergent
        delta[live] = nd[live]
        omega[live] = nw[live]
        coi = np.sum(delta * Hw, axis=1, keepdims=True)
        max_exc = np.maximum(max_exc, np.max(np.abs(delta - coi), axis=1))
        if keep_steps:
            hist_d.append(delta.copy())
            hist_w.append(omega.copy())
        j = k + 1 - n_fault
        if j > 0 and j % sub == 0 and j // sub <= n_rec:
            Vg = E * np.exp(1j * delta)
            volts[:, j // sub - 1] = np.einsum("nbg,ng->nb", Kp, Vg)
    max_exc[divergent] = np.inf
    out = {"max_excursion": max_exc, "divergent": divergent, "bus_voltage": volts, "dt": dt}
    if keep_steps:
        out["delta"] = np.stack(hist_d, axis=1)
        out["omega"] = np.stack(hist_w, axis=1)
        out["times"] = np.arange(n_fault + n_post + 1) * dt
    return out


def simulate_contingency(grid: GridModel, fault: FaultSpec, horizon_s: float = 10.0,
                         dt_s: float = 1e-3, record_cycles: Optional[int] = None) -> Trajectory:
    """Integrate one contingency with RK4, keeping every step.

    The fault-on network (faulted bus shunted) applies until clearance, then
    the post-fault network. Bus phasors are sampled once per cycle starting
    one cycle after clearance.
    """
    if dt_s > MAX_DT:
        raise ValueError(f"dt must be <= {MAX_DT} s")
    if horizon_s < fault.clearance_s:
        raise ValueError("horizon must cover the clearance time")
    setup = _prepare(grid, fault)
    if record_cycles is None:
        record_cycles = int(round(horizon_s * grid.frequency))
    res = _integrate([setup], grid.frequency, fault.clearance_s, horizon_s, dt_s, record_cycles, True)
    return Trajectory(
        times=res["times"],
        delta=res["delta"][0],
        omega=res["omega"][0],
        bus_voltage=res["bus_voltage"][0],
        inertia=np.array([m.H for m in grid.machines]),
        clearance_s=fault.clearance_s,
        cycle_ms=1000.0 / grid.frequency,
        divergent=bool(res["divergent"][0]),
        reduced_post=setup.Y_post,
        mechanical_power=setup.Pm,
        emf=setup.E,
    )


def label_from_excursion(max_excursion) -> np.ndarray:
    return (np.asarray(max_excursion) <= np.pi).astype(int)


def label_stability(traj: Trajectory) -> int:
    """1 when every machine stays within pi of the centre of inertia, else 0."""
    if traj.divergent:
        return 0
    return int(label_from_excursion(traj.max_coi_excursion()))


@dataclass
class DatagenConfig:
    load_levels: tuple = (0.8, 0.9, 1.0, 1.1)
    clearance_s: float = 0.2
    horizon_s: float = 10.0
    dt_s: float = 1e-3
    record_cycles: int = 30
    fault_terminals: str = "both"  # "both" or "from"
    first_outages: Optional[tuple] = None
    second_outages: Optional[tuple] = None
    batch_size: int = 512

    @classmethod
    def from_dict(cls, d: dict) -> "DatagenConfig":
        d = dict(d)
        for k in ("load_levels", "first_outages", "second_outages"):
            if d.get(k) is not None:
                d[k] = tuple(d[k])
        return cls(**d)


def enumerate_contingencies(grid: GridModel, cfg: DatagenConfig):
    """Yield (removed pair, fault bus, load level) for every non-islanding N-2 case."""
    n_br = len(grid.branches)
    firsts = range(n_br) if cfg.first_outages is None else cfg.first_outages
    for c1 in firsts:
        seconds = [c for c in range(n_br) if c != c1]
        if cfg.second_outages is not None:
            seconds = [c for c in seconds if c in cfg.second_outages]
        for c2 in seconds:
            if not grid.is_connected((c1, c2)):
                log.info("skipping contingency (%d, %d): network islands", c1, c2)
                continue
            br = grid.branches[c2]
            buses = (br.from_bus, br.to_bus) if cfg.fault_terminals == "both" else (br.from_bus,)
            for bus in buses:
                for level in cfg.load_levels:
                    yield (c1, c2), bus, level


def phasor_matrix(volts: np.ndarray) -> MeasurementMatrix:
    """(cycles, B) complex phasors to a fully-known matrix."""
    return MeasurementMatrix.full(np.abs(volts).T, wrap_angle(np.angle(volts)).T)


def generate_dataset(grid: GridModel, cfg: Optional[DatagenConfig] = None) -> Dataset:
    cfg = cfg or DatagenConfig()
    specs, setups = [], []
    for removed, bus, level in enumerate_contingencies(grid, cfg):
        fault = FaultSpec(bus, cfg.clearance_s, removed, level)
        try:
            setups.append(_prepare(grid, fault))
        except (EquilibriumError, np.linalg.LinAlgError) as exc:
            log.warning("skipping contingency %s at bus %d, load %.2f: %s", removed, bus, level, exc)
            continue
        specs.append(fault)
    cases = []
    for lo in range(0, len(setups), cfg.batch_size):
        chunk = setups[lo:lo + cfg.batch_size]
        res = _integrate(chunk, grid.frequency, cfg.clearance_s, cfg.horizon_s, cfg.dt_s,
                         cfg.record_cycles, False)
        labels = label_from_excursion(res["max_excursion"])
        for j, fault in enumerate(specs[lo:lo + cfg.batch_size]):
            c1, c2 = fault.removed
            cid = f"n2-{c1}-{c2}-b{fault.fault_bus}-l{int(round(fault.load_scale * 100))}"
            meta = {
                "load_level_pct": int(round(fault.load_scale * 100)),
                "fault_bus": fault.fault_bus,
                "removed": [c1, c2],
                "divergent": bool(res["divergent"][j]),
            }
            cases.append(ContingencyCase(cid, phasor_matrix(res["bus_voltage"][j]), int(labels[j]), meta))
    return Dataset(cases, None, grid.frequency)
