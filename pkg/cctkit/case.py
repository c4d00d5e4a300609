"""
Static description of a study system and of the fault scenario applied to it.

All electrical quantities held by these classes are per-unit on the system MVA
base. Conversion from MW and machine bases happens once, in
:func:`cctkit.io.read_case.load_case`.
"""

import dataclasses
import re
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

BUS_KINDS = ("slack", "pv", "pq")


@dataclass(frozen=True)
class Bus:
    index: int
    bus_kind: str
    base_kv: float = 345.0
    v_setpoint: float = 1.0
    p_load: float = 0.0
    q_load: float = 0.0


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_shunt: float = 0.0
    tap: float = 1.0
    in_service: bool = True

    @property
    def label(self) -> str:
        return f"{self.from_bus}-{self.to_bus}"


@dataclass(frozen=True)
class Load:
    bus: int
    p: float
    q: float


@dataclass(frozen=True)
class SyncMachineParams:
    bus: int
    h: float
    d: float
    xd_prime: float
    rated_mva: float
    p_sched: float = 0.0
    infinite: bool = False
    p_mech: float | None = None
    e_prime_mag: float | None = None


@dataclass(frozen=True)
class GflParams:
    bus: int
    p_vs: float
    t_v: float
    t_p: float
    h_v: float
    k_p: float
    k_i: float
    v_floor: float = 0.01
    rated_mva: float = 100.0
    p_sched: float | None = None

    @property
    def dispatch(self) -> float:
        return self.p_vs if self.p_sched is None else self.p_sched


@dataclass(frozen=True)
class FaultScenario:
    """
    Three-phase bolted fault at `fault_bus` applied at `t1` and cleared
    `t_cl_delay` seconds later by tripping branch number `tripped_branch`.

    A scenario without a fault bus is a plain equilibrium run.
    """

    fault_bus: int | None
    tripped_branch: int | None
    t1: float
    t_cl_delay: float
    horizon: float = 15.0
    dt: float = 0.01

    @property
    def t_cl(self) -> float:
        return self.t1 + self.t_cl_delay

    @property
    def has_fault(self) -> bool:
        return self.fault_bus is not None

    def with_clearing(self, t_cl_delay: float) -> "FaultScenario":
        return dataclasses.replace(self, t_cl_delay=t_cl_delay)


@dataclass(frozen=True)
class Violation:
    location: str
    message: str

    def __str__(self):
        return f"{self.location}: {self.message}"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    def add(self, location: str, message: str):
        self.violations.append(Violation(location, message))

    @property
    def is_valid(self) -> bool:
        return len(self.violations) == 0

    def __len__(self):
        return len(self.violations)

    def __iter__(self):
        return iter(self.violations)

    def __str__(self):
        if self.is_valid:
            return "No violations"
        return "\n".join(f"- {v}" for v in self.violations)


@dataclass(frozen=True)
class NetworkCase:
    name: str
    system_base_mva: float
    frequency_hz: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    loads: tuple[Load, ...] = ()
    sync_machines: tuple[SyncMachineParams, ...] = ()
    gfl_units: tuple[GflParams, ...] = ()
    scenario_defaults: dict = field(default_factory=dict, compare=False)

    def __repr__(self):
        return (
            f"< {self.name} >\n---------------------------\n"
            + f"Buses                 : {len(self.buses)}\n"
            + f"Branches              : {len(self.branches)}\n"
            + f"Synchronous machines  : {len(self.sync_machines)}\n"
            + f"GFL units             : {len(self.gfl_units)}"
        )

    @property
    def frequency_base(self) -> float:
        """Nominal angular frequency omega_0 in rad/s."""
        return 2 * np.pi * self.frequency_hz

    @property
    def bus_ids(self) -> list[int]:
        return [b.index for b in self.buses]

    def bus_position(self, index: int) -> int:
        for i, bus in enumerate(self.buses):
            if bus.index == index:
                return i
        raise KeyError(f"Bus {index} does not exist in case {self.name}")

    def load_power(self) -> np.ndarray:
        """Complex load per bus (case bus order), Load entries plus bus loads."""
        s = np.array([b.p_load + 1j * b.q_load for b in self.buses], dtype=complex)
        for load in self.loads:
            s[self.bus_position(load.bus)] += load.p + 1j * load.q
        return s

    def find_branch(self, reference: str | int) -> int:
        """
        Resolve a branch reference to its index in `branches`.

        Parameters
        ----------
        reference : str | int
            Integer index, "A-B" (first in-service branch joining buses A and B
            in either orientation) or "A-B:k" (k-th such branch, 1-based).

        Returns
        -------
        int
            Position of the branch in `branches`.
        """
        if isinstance(reference, (int, np.integer)):
            if not 0 <= reference < len(self.branches):
                raise KeyError(f"Branch number {reference} does not exist")
            return int(reference)
        match = re.fullmatch(r"\s*(\d+)\s*-\s*(\d+)\s*(?::\s*(\d+))?\s*", reference)
        if match is None:
            raise KeyError(f"Cannot interpret branch reference '{reference}'")
        a, b = int(match.group(1)), int(match.group(2))
        k = int(match.group(3)) if match.group(3) else 1
        candidates = [
            i
            for i, br in enumerate(self.branches)
            if {br.from_bus, br.to_bus} == {a, b} and br.in_service
        ]
        if len(candidates) < k or k < 1:
            raise KeyError(f"No in-service branch '{reference}' in case {self.name}")
        return candidates[k - 1]

    def scenario(self, **overrides) -> FaultScenario:
        """
        Build a FaultScenario from the case's scenario defaults and overrides.
        Branch references in `tripped_branch` may be given as text.
        """
        values = dict(
            fault_bus=None,
            tripped_branch=None,
            t1=1.0,
            t_cl_delay=0.1,
            horizon=15.0,
            dt=0.01,
        )
        values.update(self.scenario_defaults)
        values.update({k: v for k, v in overrides.items() if v is not None})
        if values["tripped_branch"] is not None:
            values["tripped_branch"] = self.find_branch(values["tripped_branch"])
        return FaultScenario(**values)


def connected_islands(bus_ids: list[int], branches: list[Branch]) -> list[list[int]]:
    """Group bus ids into electrically connected islands."""
    position = {b: i for i, b in enumerate(bus_ids)}
    rows = [position[br.from_bus] for br in branches]
    cols = [position[br.to_bus] for br in branches]
    graph = coo_matrix(
        (np.ones(len(rows)), (rows, cols)), shape=(len(bus_ids), len(bus_ids))
    )
    n_islands, labels = connected_components(graph, directed=False)
    return [
        [bus_ids[i] for i in np.flatnonzero(labels == label)]
        for label in range(n_islands)
    ]


def validate_case(case: NetworkCase) -> ValidationReport:
    """
    Check a NetworkCase against all structural and parameter invariants.

    Returns
    -------
    ValidationReport
        Every violated invariant with its location. Empty if the case is valid.
    """
    report = ValidationReport()
    if case.system_base_mva <= 0:
        report.add("system", "base_mva must be positive")
    if case.frequency_hz <= 0:
        report.add("system", "frequency_hz must be positive")

    seen = set()
    for bus in case.buses:
        location = f"bus {bus.index}"
        if bus.index in seen:
            report.add(location, "duplicate bus index")
        seen.add(bus.index)
        if bus.index < 1:
            report.add(location, "bus index must be >= 1")
        if bus.bus_kind not in BUS_KINDS:
            report.add(location, f"bus_kind must be one of {BUS_KINDS}")
        if bus.bus_kind in ("slack", "pv") and not bus.v_setpoint > 0:
            report.add(location, "v_setpoint must be positive")
    n_slack = sum(b.bus_kind == "slack" for b in case.buses)
    if n_slack != 1:
        report.add("buses", f"exactly one slack bus required, found {n_slack}")

    for i, br in enumerate(case.branches):
        location = f"branch {i} ({br.label})"
        for end in (br.from_bus, br.to_bus):
            if end not in seen:
                report.add(location, f"refers to nonexistent bus {end}")
        if br.r == 0 and br.x == 0:
            report.add(location, "series impedance must be nonzero")
        if not br.tap > 0:
            report.add(location, "tap must be positive")

    for i, load in enumerate(case.loads):
        if load.bus not in seen:
            report.add(f"load {i}", f"refers to nonexistent bus {load.bus}")

    kinds = {b.index: b.bus_kind for b in case.buses}
    device_buses = []
    if len(case.sync_machines) == 0:
        report.add("sync_machines", "at least one synchronous machine is required")
    for machine in case.sync_machines:
        location = f"sync machine at bus {machine.bus}"
        device_buses.append(machine.bus)
        if machine.bus not in seen:
            report.add(location, f"refers to nonexistent bus {machine.bus}")
        elif kinds[machine.bus] == "pq":
            report.add(location, "synchronous machines must sit on slack or pv buses")
        if not machine.h > 0:
            report.add(location, "inertia must be positive")
        if not machine.xd_prime > 0:
            report.add(location, "transient reactance must be positive")
        if not machine.d >= 0:
            report.add(location, "damping must be nonnegative")
        if not machine.rated_mva > 0:
            report.add(location, "rated_mva must be positive")

    for unit in case.gfl_units:
        location = f"gfl unit at bus {unit.bus}"
        device_buses.append(unit.bus)
        if unit.bus not in seen:
            report.add(location, f"refers to nonexistent bus {unit.bus}")
        elif kinds[unit.bus] != "pq":
            report.add(location, "GFL units must sit on pq buses")
        if not unit.t_v > 0:
            report.add(location, "t_v must be positive")
        if not unit.t_p > 0:
            report.add(location, "t_p must be positive")
        if not unit.h_v >= 0:
            report.add(location, "h_v must be nonnegative")
        if not unit.k_p > 0:
            report.add(location, "k_p must be positive")
        if not unit.k_i > 0:
            report.add(location, "k_i must be positive")
        if not 0 < unit.v_floor <= 0.1:
            report.add(location, "v_floor must lie in (0, 0.1]")

    for bus in set(device_buses):
        if device_buses.count(bus) > 1:
            report.add(f"bus {bus}", "more than one device connected")
    for bus in case.buses:
        if bus.bus_kind in ("slack", "pv") and bus.index not in device_buses:
            report.add(f"bus {bus.index}", f"{bus.bus_kind} bus without a machine")

    if report.is_valid:
        islands = connected_islands(
            case.bus_ids, [br for br in case.branches if br.in_service]
        )
        if len(islands) > 1:
            report.add("branches", f"network is split into islands {islands}")
    return report


def validate_scenario(
    case: NetworkCase, scenario: FaultScenario, strict: bool = True
) -> ValidationReport:
    """
    Check a FaultScenario against a case.

    Parameters
    ----------
    strict : bool, optional
        Also require the clearing instant to fall inside the horizon, which all
        critical clearing time computations need. Plain simulations may use
        events beyond the horizon (no-fault or uncleared runs).
    """
    report = ValidationReport()
    if scenario.fault_bus is not None and scenario.fault_bus not in case.bus_ids:
        report.add("scenario", f"fault bus {scenario.fault_bus} does not exist")
    if scenario.tripped_branch is not None:
        if not 0 <= scenario.tripped_branch < len(case.branches):
            report.add(
                "scenario", f"tripped branch {scenario.tripped_branch} does not exist"
            )
        elif not case.branches[scenario.tripped_branch].in_service:
            report.add("scenario", "tripped branch is already out of service")
    if scenario.t1 < 0:
        report.add("scenario", "t1 must be nonnegative")
    if not scenario.t_cl_delay > 0:
        report.add("scenario", "clearing delay must be positive")
    if not scenario.dt > 0:
        report.add("scenario", "dt must be positive")
    if not scenario.horizon > 0:
        report.add("scenario", "horizon must be positive")
    if strict:
        if scenario.fault_bus is None:
            report.add("scenario", "a fault bus is required")
        if not scenario.t_cl < scenario.horizon:
            report.add("scenario", "t1 + T_cl must lie before the horizon")
    return report
