import dataclasses
import logging

import numpy as np

from cctkit.case import FaultScenario, NetworkCase
from cctkit.dynamics.devices import Equilibrium
from cctkit.exceptions import SensitivityError
from cctkit.sensitivity.variational import (
    SensitivityTrajectory,
    check_alignment,
    clearing_index,
)
from cctkit.simulation.tds import SimOptions, prepare_equilibrium, simulate
from cctkit.utils import get_current_time, steps_on_grid

logger = logging.getLogger(__name__)


def sensitivity_finite_difference(
    case: NetworkCase,
    scenario: FaultScenario,
    h: float | None = None,
    options: SimOptions | None = None,
    alignment: str = "elapsed",
    equilibrium: Equilibrium | None = None,
    refine: int = 1,
) -> SensitivityTrajectory:
    """
    Central difference of two simulations cleared at T_cl + h and T_cl - h.

    Parameters
    ----------
    case : NetworkCase
        Study system.
    scenario : FaultScenario
        Fault and clearing time T_cl.
    h : float | None, optional
        Clearing time perturbation in s, a multiple of the integration step.
        Defaults to one integration step.
    options : SimOptions | None, optional
        Simulation numerics.
    alignment : str, optional
        "elapsed" compares the runs at equal time since their own clearing,
        "absolute" at equal time t. In the absolute alignment the first
        samples (s < h) mix fault phases and are NaN.
    equilibrium : Equilibrium | None, optional
        Initialized operating point shared by both runs.
    refine : int, optional
        The perturbed runs are integrated with step dt / refine and the result
        is sampled back onto the dt grid of `scenario`, by default 1. With the
        default h this also shrinks the perturbation to dt / refine.

    Returns
    -------
    SensitivityTrajectory
        `truncated` is set when a perturbed run ended early and the window
        was shortened.

    Raises
    ------
    SensitivityError
        If T_cl - h is not positive or a perturbed run never reaches its
        clearing instant.
    """
    check_alignment(alignment)
    if refine < 1:
        raise SensitivityError(f"refine must be a positive integer, not {refine}")
    options = options or SimOptions()
    fine = dataclasses.replace(scenario, dt=scenario.dt / refine)
    dt = fine.dt
    h = dt if h is None else h
    n_h = steps_on_grid(h, dt, "h")
    if n_h < 1 or not scenario.t_cl_delay - h > 1e-12:
        raise SensitivityError(
            f"Perturbation h = {h} s must be a positive multiple of dt below "
            f"T_cl = {scenario.t_cl_delay} s"
        )
    if equilibrium is None:
        equilibrium = prepare_equilibrium(case, scenario, options.omega_pu)

    runs = []
    for t_cl in (scenario.t_cl_delay + h, scenario.t_cl_delay - h):
        traj = simulate(case, fine.with_clearing(t_cl), options, equilibrium)
        k_cl = clearing_index(traj)
        if k_cl >= len(traj.times):
            raise SensitivityError(
                f"Perturbed run with T_cl = {t_cl:.3f} s ends before clearing"
            )
        runs.append((traj, k_cl))
    (plus, k_plus), (minus, k_minus) = runs
    model = plus.model

    k_base = k_minus + n_h
    full = steps_on_grid(fine.horizon, dt, "horizon") - k_base + 1
    if alignment == "elapsed":
        # the later-cleared run has n_h fewer post-fault samples
        full -= n_h
        n = min(len(plus.times) - k_plus, len(minus.times) - k_minus, full)
        plus_rows = slice(k_plus, k_plus + n)
        minus_rows = slice(k_minus, k_minus + n)
    else:
        n = min(len(plus.times), len(minus.times), k_base + full) - k_base
        plus_rows = minus_rows = slice(k_base, k_base + n)

    w = (plus.x[plus_rows] - minus.x[minus_rows]) / (2 * h)
    u = (plus.y[plus_rows] - minus.y[minus_rows]) / (2 * h)
    if alignment == "absolute":
        w[: min(n_h, n)] = np.nan
        u[: min(n_h, n)] = np.nan
    truncated = n < full
    w, u = w[::refine], u[::refine]
    n_out = len(w)

    if truncated:
        logger.warning(
            f"Perturbed run ended early, finite-difference window shortened to "
            f"{(n_out - 1) * scenario.dt:.2f} s"
        )
    logger.info(
        f"{get_current_time()}: Finite-difference sensitivity at T_cl = "
        f"{scenario.t_cl_delay:.3f} s with h = {h} s"
    )
    return SensitivityTrajectory(
        elapsed=np.arange(n_out) * scenario.dt,
        w=w,
        u=u,
        method="finite_difference",
        base_t_cl=scenario.t_cl_delay,
        alignment=alignment,
        model=model,
        truncated=truncated,
        runs=(plus, minus),
    )
