import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from cctkit.case import Branch, FaultScenario, NetworkCase, connected_islands
from cctkit.exceptions import IslandingError, NetworkError, SingularNetworkError

logger = logging.getLogger(__name__)

PHASES = ("pre_fault", "during_fault", "post_fault")


@dataclass(frozen=True)
class AdmittanceMatrix:
    matrix: np.ndarray
    bus_ids: tuple[int, ...]
    phase: str
    faulted_bus: int | None = None

    @property
    def dimension(self) -> int:
        return len(self.bus_ids)

    def position(self, bus: int) -> int:
        return self.bus_ids.index(bus)


def branch_admittance(branches: list[Branch], bus_ids: list[int]) -> np.ndarray:
    """
    Assemble the bus admittance matrix of a set of branches. Taps sit on the
    from side: Yff = (ys + jb/2)/a^2, Yft = Ytf = -ys/a, Ytt = ys + jb/2.
    """
    position = {b: i for i, b in enumerate(bus_ids)}
    y = np.zeros((len(bus_ids), len(bus_ids)), dtype=complex)
    for br in branches:
        f, t = position[br.from_bus], position[br.to_bus]
        ys = 1 / complex(br.r, br.x)
        ysh = 0.5j * br.b_shunt
        y[f, f] += (ys + ysh) / br.tap**2
        y[t, t] += ys + ysh
        y[f, t] -= ys / br.tap
        y[t, f] -= ys / br.tap
    return y


def build_admittance(
    case: NetworkCase, phase: str = "pre_fault", scenario: FaultScenario | None = None
) -> AdmittanceMatrix:
    """
    Bus admittance matrix of one topology phase.

    Parameters
    ----------
    case : NetworkCase
        Study system.
    phase : str
        "pre_fault" uses all in-service branches, "during_fault" grounds the
        fault bus of the pre-fault network and "post_fault" is the pre-fault
        network without the tripped branch.
    scenario : FaultScenario | None
        Needed for the during- and post-fault phases.

    Returns
    -------
    AdmittanceMatrix

    Raises
    ------
    NetworkError
        If the tripped branch is already out of service.
    IslandingError
        If tripping the branch splits the network.
    """
    if phase not in PHASES:
        raise ValueError(f"phase must be one of {PHASES}, not '{phase}'")
    if phase != "pre_fault" and scenario is None:
        raise ValueError(f"A fault scenario is required for the {phase} network")

    bus_ids = case.bus_ids
    branches = [br for br in case.branches if br.in_service]

    if phase == "post_fault" and scenario.tripped_branch is not None:
        tripped = case.branches[scenario.tripped_branch]
        if not tripped.in_service:
            raise NetworkError(f"Branch {tripped.label} is already out of service")
        branches = [
            br
            for i, br in enumerate(case.branches)
            if br.in_service and i != scenario.tripped_branch
        ]
        islands = connected_islands(bus_ids, branches)
        if len(islands) > 1:
            raise IslandingError(
                f"Tripping branch {tripped.label} islands buses "
                f"{sorted(islands, key=len)[0]}",
                islands,
            )

    y = AdmittanceMatrix(branch_admittance(branches, bus_ids), tuple(bus_ids), phase)
    if phase == "during_fault" and scenario.fault_bus is not None:
        y = apply_bolted_fault(y, scenario.fault_bus)
    logger.debug(f"Built {phase} admittance matrix of dimension {y.dimension}")
    return y


def apply_bolted_fault(y: AdmittanceMatrix, fault_bus: int) -> AdmittanceMatrix:
    """
    Ground `fault_bus` by eliminating its row and column. With V = 0 at the
    node, Kron elimination reduces to deleting it; `bus_ids` keeps the map to
    the remaining buses.
    """
    if fault_bus not in y.bus_ids:
        raise NetworkError(f"Fault bus {fault_bus} is not part of the network")
    keep = [i for i, b in enumerate(y.bus_ids) if b != fault_bus]
    return AdmittanceMatrix(
        y.matrix[np.ix_(keep, keep)].copy(),
        tuple(y.bus_ids[i] for i in keep),
        "during_fault",
        faulted_bus=fault_bus,
    )


def kron_reduce(
    matrix: np.ndarray, keep: list[int], labels: list | None = None
) -> tuple[np.ndarray, np.ndarray | None]:
    """
    Schur-complement reduction of an admittance matrix onto the `keep` nodes.

    Parameters
    ----------
    matrix : np.ndarray
        Square complex admittance matrix.
    keep : list[int]
        Positions of the retained nodes, in the order wanted in the result.
    labels : list | None, optional
        Node labels, only used to name buses in error messages.

    Returns
    -------
    tuple[np.ndarray, np.ndarray | None]
        Reduced matrix Y_kk - Y_ke Y_ee^-1 Y_ek, and the recovery matrix
        -Y_ee^-1 Y_ek that maps retained voltages to eliminated ones (None
        if nothing is eliminated).

    Raises
    ------
    SingularNetworkError
        If the eliminated block is singular.
    """
    keep = list(keep)
    eliminate = [i for i in range(matrix.shape[0]) if i not in set(keep)]
    y_kk = matrix[np.ix_(keep, keep)]
    if not eliminate:
        return y_kk.copy(), None

    y_ee = matrix[np.ix_(eliminate, eliminate)]
    y_ek = matrix[np.ix_(eliminate, keep)]
    y_ke = matrix[np.ix_(keep, eliminate)]
    lu, piv = lu_factor(y_ee, check_finite=True)
    pivots = np.abs(np.diag(lu))
    if pivots.min() <= 1e-12 * max(pivots.max(), 1.0):
        buses = [labels[i] for i in eliminate] if labels is not None else eliminate
        raise SingularNetworkError(
            f"Eliminated network block is singular (buses {buses})", buses
        )
    recovery = -lu_solve((lu, piv), y_ek)
    return y_kk + y_ke @ recovery, recovery
