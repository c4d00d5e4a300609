import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve

from cctkit.case import NetworkCase
from cctkit.exceptions import PowerFlowError
from cctkit.network.admittance import branch_admittance

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PowerFlowSolution:
    bus_ids: tuple[int, ...]
    v: np.ndarray
    s_bus: np.ndarray
    s_load: np.ndarray
    s_sync: np.ndarray
    s_gfl: np.ndarray
    iterations: int
    mismatch: float

    @property
    def v_mag(self) -> np.ndarray:
        return np.abs(self.v)

    @property
    def v_ang(self) -> np.ndarray:
        return np.angle(self.v)

    def voltage(self, bus: int) -> complex:
        return self.v[self.bus_ids.index(bus)]

    @property
    def losses(self) -> float:
        """Active power losses: total injection minus total load."""
        return float(np.sum(self.s_bus.real))


def _power_derivatives(y: np.ndarray, v: np.ndarray):
    """Partial derivatives of bus injections to voltage magnitude and angle."""
    i_bus = y @ v
    diag_v = np.diag(v)
    diag_i = np.diag(i_bus)
    diag_vnorm = np.diag(v / np.abs(v))
    ds_dvm = diag_v @ np.conj(y @ diag_vnorm) + np.conj(diag_i) @ diag_vnorm
    ds_dva = 1j * diag_v @ np.conj(diag_i - y @ diag_v)
    return ds_dvm, ds_dva


def initial_power_flow(
    case: NetworkCase, tol: float = 1e-8, max_iter: int = 50
) -> PowerFlowSolution:
    """
    Newton-Raphson AC power flow of the pre-fault network.

    Synchronous machines hold their bus voltage at the setpoint and inject their
    scheduled power (pv buses) or close the balance (slack bus). GFL units are
    pq injections of their dispatch with zero reactive power.

    Parameters
    ----------
    case : NetworkCase
        Study system with exactly one slack bus.
    tol : float, optional
        Maximum absolute power mismatch in pu, by default 1e-8.
    max_iter : int, optional
        Maximum number of Newton iterations, by default 50.

    Returns
    -------
    PowerFlowSolution
        Bus voltages and device injections.

    Raises
    ------
    PowerFlowError
        If the mismatch is still above `tol` after `max_iter` iterations.
    """
    bus_ids = case.bus_ids
    position = {b: i for i, b in enumerate(bus_ids)}
    y = branch_admittance([br for br in case.branches if br.in_service], bus_ids)
    kinds = np.array([b.bus_kind for b in case.buses])
    pv = np.flatnonzero(kinds == "pv")
    pq = np.flatnonzero(kinds == "pq")
    pvpq = np.concatenate([pv, pq])

    s_load = case.load_power()
    s_spec = -s_load.copy()
    for machine in case.sync_machines:
        if case.buses[position[machine.bus]].bus_kind == "pv":
            s_spec[position[machine.bus]] += machine.p_sched
    for unit in case.gfl_units:
        s_spec[position[unit.bus]] += unit.dispatch

    v_mag = np.array(
        [b.v_setpoint if b.bus_kind in ("slack", "pv") else 1.0 for b in case.buses]
    )
    v_ang = np.zeros(len(bus_ids))
    v = v_mag * np.exp(1j * v_ang)

    iterations = 0
    while True:
        mismatch = v * np.conj(y @ v) - s_spec
        f = np.concatenate([mismatch[pvpq].real, mismatch[pq].imag])
        norm = np.max(np.abs(f)) if f.size else 0.0
        logger.debug(f"Power flow iteration {iterations}: mismatch {norm:.3e}")
        if norm < tol:
            break
        if iterations >= max_iter:
            raise PowerFlowError(
                f"Power flow did not converge in {max_iter} iterations "
                f"(final mismatch {norm:.3e} pu)",
                norm,
            )
        ds_dvm, ds_dva = _power_derivatives(y, v)
        jacobian = np.block(
            [
                [ds_dva[np.ix_(pvpq, pvpq)].real, ds_dvm[np.ix_(pvpq, pq)].real],
                [ds_dva[np.ix_(pq, pvpq)].imag, ds_dvm[np.ix_(pq, pq)].imag],
            ]
        )
        try:
            dx = solve(jacobian, -f)
        except (np.linalg.LinAlgError, ValueError) as e:
            raise PowerFlowError(
                "Power flow Jacobian is singular or not finite at iteration "
                f"{iterations}",
                norm,
            ) from e
        v_ang[pvpq] += dx[: len(pvpq)]
        v_mag[pq] += dx[len(pvpq) :]
        v = v_mag * np.exp(1j * v_ang)
        iterations += 1

    s_bus = v * np.conj(y @ v)
    s_device = s_bus + s_load
    s_sync = np.array([s_device[position[m.bus]] for m in case.sync_machines])
    s_gfl = np.array([s_device[position[u.bus]] for u in case.gfl_units], dtype=complex)
    logger.debug(f"Power flow converged in {iterations} iterations")
    return PowerFlowSolution(
        bus_ids=tuple(bus_ids),
        v=v,
        s_bus=s_bus,
        s_load=s_load,
        s_sync=s_sync,
        s_gfl=s_gfl,
        iterations=iterations,
        mismatch=float(norm),
    )
