"""
Trajectory sensitivity to the fault clearing time by integration of the
variational equations along the post-fault part of a base trajectory.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from cctkit.case import FaultScenario, NetworkCase
from cctkit.dynamics.devices import DeviceModel, Equilibrium
from cctkit.dynamics.jacobian import device_rhs, jacobian_blocks
from cctkit.exceptions import SensitivityError
from cctkit.simulation.tds import SimOptions, Trajectory, simulate
from cctkit.utils import get_current_time, steps_on_grid

logger = logging.getLogger(__name__)

ALIGNMENTS = ("elapsed", "absolute")
CONDITION_LIMIT = 1e12


@dataclass
class SensitivityTrajectory:
    """
    W(s) = dx/dT_cl and U(s) = dy/dT_cl on the post-fault grid s = t - t_cl.

    All angles (delta, the PLL angle and the bus angles in U) are taken in the
    synchronous frame, so relative angle terms are unaffected and a no-fault
    scenario has zero sensitivity. In the elapsed alignment states are
    compared at equal time since each run's own clearing, in the absolute
    alignment at equal time t.
    """

    elapsed: np.ndarray
    w: np.ndarray
    u: np.ndarray
    method: str
    base_t_cl: float
    alignment: str
    model: DeviceModel
    truncated: bool = False
    runs: tuple[Trajectory, ...] = ()

    def __repr__(self):
        return (
            f"< Sensitivity ({self.method}, {self.alignment}) >\n"
            + "---------------------------\n"
            + f"Clearing time    : {self.base_t_cl} s\n"
            + f"Samples          : {len(self.elapsed)}\n"
            + f"Truncated        : {self.truncated}"
        )

    @property
    def state_names(self) -> list[str]:
        return self.model.state_names()

    @property
    def algebraic_names(self) -> list[str]:
        return self.model.algebraic_names()

    def block(self, name: str) -> np.ndarray:
        return self.w[:, self.model.block(name)]

    def window(self, end: float) -> "SensitivityTrajectory":
        """Restrict to elapsed times up to `end`."""
        keep = self.elapsed <= end + 1e-9
        return SensitivityTrajectory(
            self.elapsed[keep],
            self.w[keep],
            self.u[keep],
            self.method,
            self.base_t_cl,
            self.alignment,
            self.model,
            self.truncated,
            self.runs,
        )


def check_alignment(alignment: str):
    if alignment not in ALIGNMENTS:
        raise ValueError(f"alignment must be one of {ALIGNMENTS}, not '{alignment}'")


def clearing_index(traj: Trajectory) -> int:
    """Grid index of the clearing instant, also defined for no-fault runs."""
    return steps_on_grid(traj.scenario.t_cl, traj.dt, "t1 + T_cl")


def linearize(model: DeviceModel, net, x: np.ndarray, y: np.ndarray):
    """
    State matrix M = f_x - f_y S_y^-1 S_x at one sample, and the map
    W -> U = -S_y^-1 S_x W.

    Raises
    ------
    SensitivityError
        If S_y is singular.
    """
    blocks = jacobian_blocks(model, net, x, y)
    if blocks.s_y.size == 0:
        return blocks.f_x, lambda w: np.zeros(0)
    condition = np.linalg.cond(blocks.s_y)
    if not np.isfinite(condition) or condition > CONDITION_LIMIT:
        raise SensitivityError(
            f"Network Jacobian is singular (condition number {condition:.2e})",
            condition,
        )
    lu = lu_factor(blocks.s_y)
    m = blocks.f_x - blocks.f_y @ lu_solve(lu, blocks.s_x)
    return m, lambda w: -lu_solve(lu, blocks.s_x @ w)


def sensitivity_variational(
    case: NetworkCase,
    scenario: FaultScenario,
    options: SimOptions | None = None,
    alignment: str = "elapsed",
    base: Trajectory | None = None,
    equilibrium: Equilibrium | None = None,
) -> SensitivityTrajectory:
    """
    Integrate dW/ds = f_x W + f_y U, 0 = S_x W + S_y U along the post-fault
    trajectory with the base run's integrator and step.

    Parameters
    ----------
    case : NetworkCase
        Study system.
    scenario : FaultScenario
        Fault and clearing time T_cl.
    options : SimOptions | None, optional
        Simulation numerics of the base run.
    alignment : str, optional
        "elapsed" (default) starts from W(0) = f_during(x_cl, y_cl-);
        "absolute" from the jump f_during(x_cl, y_cl-) - f_post(x_cl, y_cl+).
    base : Trajectory | None, optional
        Already simulated trajectory of `scenario`; simulated if omitted.
    equilibrium : Equilibrium | None, optional
        Initialized operating point, passed on to the base simulation.

    Returns
    -------
    SensitivityTrajectory

    Raises
    ------
    SensitivityError
        If the base run never reaches the clearing instant or the network
        Jacobian S_y becomes singular.
    """
    check_alignment(alignment)
    options = options or SimOptions()
    if base is None:
        base = simulate(case, scenario, options, equilibrium=equilibrium)
    model = base.model
    h = base.dt
    k0 = clearing_index(base)
    if k0 >= len(base.times):
        raise SensitivityError(
            f"Base trajectory ends at {base.times[-1]:.3f} s before clearing at "
            f"{scenario.t_cl:.3f} s"
        )
    during, post = base.networks["during_fault"], base.networks["post_fault"]
    x = base.x[k0:]
    y = base.y[k0:]
    n = len(x)

    y_before = base.pre_switch.get("t_cl", y[0])
    w0 = device_rhs(model, during, x[0], y_before)
    if alignment == "absolute":
        w0 = w0 - device_rhs(model, post, x[0], y[0])

    w = np.zeros((n, model.n_states))
    u = np.zeros((n, 2 * model.n_gfl))
    m_prev, response = linearize(model, post, x[0], y[0])
    w[0] = w0
    u[0] = response(w0)

    identity = np.eye(model.n_states)
    for k in range(1, n):
        m_next, response = linearize(model, post, x[k], y[k])
        if base.options.integrator == "trapezoidal":
            lu = lu_factor(identity - 0.5 * h * m_next)
            w[k] = lu_solve(lu, (identity + 0.5 * h * m_prev) @ w[k - 1])
        else:
            m_mid = 0.5 * (m_prev + m_next)
            k1 = m_prev @ w[k - 1]
            k2 = m_mid @ (w[k - 1] + 0.5 * h * k1)
            k3 = m_mid @ (w[k - 1] + 0.5 * h * k2)
            k4 = m_next @ (w[k - 1] + h * k3)
            w[k] = w[k - 1] + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        u[k] = response(w[k])
        m_prev = m_next

    logger.info(
        f"{get_current_time()}: Variational sensitivity at T_cl = "
        f"{scenario.t_cl_delay:.3f} s over {n} samples"
    )
    return SensitivityTrajectory(
        elapsed=np.arange(n) * h,
        w=w,
        u=u,
        method="variational",
        base_t_cl=scenario.t_cl_delay,
        alignment=alignment,
        model=model,
        truncated=not base.is_complete,
        runs=(base,),
    )

