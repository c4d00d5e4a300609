import logging
from dataclasses import dataclass

import numpy as np

from cctkit.dynamics.devices import DeviceModel
from cctkit.sensitivity.variational import SensitivityTrajectory

logger = logging.getLogger(__name__)

FLEETS = ("sync", "gfl")


@dataclass(frozen=True)
class SnSeries:
    """Sensitivity norm of one device fleet over the post-fault window."""

    elapsed: np.ndarray
    values: np.ndarray
    fleet: str
    reference_device: int


def sync_reference(model: DeviceModel) -> int:
    """Bus of the infinite machine if there is one, else of the largest H."""
    if np.any(model.infinite):
        return int(model.sync_buses[np.argmax(model.infinite)])
    return int(model.sync_buses[np.argmax(model.h)])


def gfl_reference(model: DeviceModel) -> int:
    if model.n_gfl == 0:
        raise ValueError("The case has no GFL units")
    return int(model.gfl_buses[np.argmax(model.h_v)])


def _position(buses: np.ndarray, bus: int, kind: str) -> int:
    matches = np.flatnonzero(buses == bus)
    if matches.size == 0:
        raise ValueError(f"Bus {bus} has no {kind}")
    return int(matches[0])


def sn_sync(sens: SensitivityTrajectory, reference: int | None = None) -> SnSeries:
    """
    SN of the synchronous fleet:
    sqrt(sum_i (dδ_i/dT_cl - dδ_j/dT_cl)^2 + (dω_i/dT_cl)^2) with j the
    reference machine.

    Parameters
    ----------
    sens : SensitivityTrajectory
        Sensitivities to the clearing time.
    reference : int | None, optional
        Bus of the reference machine, see `sync_reference` for the default.
    """
    model = sens.model
    reference = sync_reference(model) if reference is None else reference
    j = _position(model.sync_buses, reference, "synchronous machine")
    d_delta = sens.block("delta")
    d_omega = sens.block("omega")
    relative = d_delta - d_delta[:, [j]]
    values = np.sqrt(np.sum(relative**2 + d_omega**2, axis=1))
    return SnSeries(sens.elapsed, values, "sync", reference)


def sn_gfl(sens: SensitivityTrajectory, reference: int | None = None) -> SnSeries:
    """
    SN of the GFL fleet:
    sqrt(sum_i (dx_v,i)^2 + (dx_P,i)^2 + (dP_v,i)^2 + (dθ_P,i - dθ_P,k)^2),
    all derivatives to T_cl, with k the reference unit.
    """
    model = sens.model
    reference = gfl_reference(model) if reference is None else reference
    k = _position(model.gfl_buses, reference, "GFL unit")
    d_theta = sens.block("theta_p")
    relative = d_theta - d_theta[:, [k]]
    values = np.sqrt(
        np.sum(
            sens.block("x_v") ** 2
            + sens.block("x_p") ** 2
            + sens.block("p_v") ** 2
            + relative**2,
            axis=1,
        )
    )
    return SnSeries(sens.elapsed, values, "gfl", reference)


def fleet_series(
    sens: SensitivityTrajectory, fleet: str, reference: int | None = None
) -> SnSeries:
    if fleet == "sync":
        return sn_sync(sens, reference)
    if fleet == "gfl":
        return sn_gfl(sens, reference)
    raise ValueError(f"fleet must be one of {FLEETS}, not '{fleet}'")


def peak(
    sn: SnSeries, window: tuple[float, float] | None = None
) -> tuple[float, float]:
    """
    Peak m(SN) of a series and the elapsed time where it occurs.

    Parameters
    ----------
    sn : SnSeries
        Sensitivity norm series.
    window : tuple[float, float] | None, optional
        Elapsed-time window (s), by default the whole record. Undefined (NaN)
        samples are skipped.

    Returns
    -------
    tuple[float, float]
        (m(SN), elapsed time of the peak)

    Raises
    ------
    ValueError
        If the window holds no defined samples.
    """
    mask = np.isfinite(sn.values)
    if window is not None:
        start, end = window
        mask &= (sn.elapsed >= start - 1e-9) & (sn.elapsed <= end + 1e-9)
    if not np.any(mask):
        raise ValueError(f"No sensitivity samples in window {window}")
    candidates = np.flatnonzero(mask)
    best = candidates[np.argmax(sn.values[candidates])]
    return float(sn.values[best]), float(sn.elapsed[best])
