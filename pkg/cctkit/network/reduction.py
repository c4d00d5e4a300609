import logging
from dataclasses import dataclass, field

import numpy as np

from cctkit.case import FaultScenario, NetworkCase
from cctkit.network.admittance import AdmittanceMatrix, build_admittance, kron_reduce
from cctkit.network.powerflow import PowerFlowSolution

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReducedNetwork:
    """
    Network reduced onto the synchronous machine internal nodes followed by the
    terminal buses of the GFL units that are not grounded by a fault.

    `recovery` maps the retained node voltages to the voltages of all physical
    buses (case order); its row of a faulted bus is zero.
    """

    y_reduced: np.ndarray
    retained_buses: tuple[int, ...]
    phase: str
    n_sync: int
    gfl_active: np.ndarray
    bus_ids: tuple[int, ...] = ()
    recovery: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_active(self) -> int:
        return int(np.sum(self.gfl_active))

    @property
    def y_ss(self) -> np.ndarray:
        return self.y_reduced[: self.n_sync, : self.n_sync]

    @property
    def y_sg(self) -> np.ndarray:
        return self.y_reduced[: self.n_sync, self.n_sync :]

    @property
    def y_gs(self) -> np.ndarray:
        return self.y_reduced[self.n_sync :, : self.n_sync]

    @property
    def y_gg(self) -> np.ndarray:
        return self.y_reduced[self.n_sync :, self.n_sync :]

    def bus_voltages(self, v_retained: np.ndarray) -> np.ndarray:
        if self.recovery is None:
            return np.full(len(self.bus_ids), np.nan, dtype=complex)
        return self.recovery @ v_retained


def load_admittance(pf: PowerFlowSolution) -> np.ndarray:
    """Constant shunt admittance per bus representing the loads, (P - jQ) / V^2."""
    return np.conj(pf.s_load) / np.abs(pf.v) ** 2


def reduce_to_sources(
    y: AdmittanceMatrix, case: NetworkCase, equilibrium: PowerFlowSolution
) -> ReducedNetwork:
    """
    Absorb loads as constant impedances, attach the machine internal nodes
    behind their transient reactance and eliminate every passive bus.

    Parameters
    ----------
    y : AdmittanceMatrix
        Network of one topology phase; a grounded fault bus is already removed.
    case : NetworkCase
        Study system.
    equilibrium : PowerFlowSolution
        Pre-fault operating point that freezes the load admittances.

    Returns
    -------
    ReducedNetwork
        Exact Schur-complement reduction onto the sync internal nodes and the
        non-grounded GFL buses.
    """
    n_bus = y.dimension
    n_sync = len(case.sync_machines)
    position = {b: i for i, b in enumerate(y.bus_ids)}
    y_load = load_admittance(equilibrium)
    pf_position = {b: i for i, b in enumerate(equilibrium.bus_ids)}

    augmented = np.zeros((n_bus + n_sync, n_bus + n_sync), dtype=complex)
    augmented[:n_bus, :n_bus] = y.matrix
    for bus in y.bus_ids:
        augmented[position[bus], position[bus]] += y_load[pf_position[bus]]
    for k, machine in enumerate(case.sync_machines):
        internal = n_bus + k
        y_d = 1 / (1j * machine.xd_prime)
        augmented[internal, internal] += y_d
        if machine.bus in position:
            terminal = position[machine.bus]
            augmented[terminal, terminal] += y_d
            augmented[terminal, internal] -= y_d
            augmented[internal, terminal] -= y_d

    gfl_active = np.array([u.bus in position for u in case.gfl_units], dtype=bool)
    gfl_nodes = [position[u.bus] for u in case.gfl_units if u.bus in position]
    keep = [n_bus + k for k in range(n_sync)] + gfl_nodes
    labels = list(y.bus_ids) + [f"internal {m.bus}" for m in case.sync_machines]
    y_reduced, elimination = kron_reduce(augmented, keep, labels)

    eliminated = [i for i in range(n_bus + n_sync) if i not in set(keep)]
    recovery = np.zeros((len(case.buses), len(keep)), dtype=complex)
    for row, bus in enumerate(case.bus_ids):
        if bus not in position:
            continue
        node = position[bus]
        if node in gfl_nodes:
            recovery[row, keep.index(node)] = 1.0
        else:
            recovery[row] = elimination[eliminated.index(node)]

    logger.debug(
        f"Reduced {y.phase} network from {n_bus + n_sync} to {len(keep)} nodes"
    )
    return ReducedNetwork(
        y_reduced=y_reduced,
        retained_buses=tuple(m.bus for m in case.sync_machines)
        + tuple(u.bus for u, a in zip(case.gfl_units, gfl_active) if a),
        phase=y.phase,
        n_sync=n_sync,
        gfl_active=gfl_active,
        bus_ids=tuple(case.bus_ids),
        recovery=recovery,
    )


def phase_networks(
    case: NetworkCase, scenario: FaultScenario, equilibrium: PowerFlowSolution
) -> dict[str, ReducedNetwork]:
    """Reduced networks of the pre-fault, during-fault and post-fault phases."""
    pre = reduce_to_sources(build_admittance(case, "pre_fault"), case, equilibrium)
    networks = {"pre_fault": pre, "during_fault": pre, "post_fault": pre}
    if scenario.has_fault:
        for phase in ("during_fault", "post_fault"):
            networks[phase] = reduce_to_sources(
                build_admittance(case, phase, scenario), case, equilibrium
            )
    return networks
