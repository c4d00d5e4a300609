import logging
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING

import numpy as np

from cctkit.exceptions import StabilityError
from cctkit.utils import wrap_angle

if TYPE_CHECKING:
    from cctkit.dynamics.devices import DeviceModel
    from cctkit.simulation.tds import Trajectory

logger = logging.getLogger(__name__)


class Reason(Enum):
    converged = 0
    angle_separation = 1
    pll_divergence = 2
    algebraic_collapse = 3
    integration_failure = 4


@dataclass(frozen=True)
class StabilityLimits:
    """
    Instability thresholds.

    angle_limit : maximum rotor angle spread between any two machines (rad)
    pll_limit : maximum PLL tracking error |theta - theta_P| (rad)
    pll_persistence : time the PLL error may stay above `pll_limit` (s)
    """

    angle_limit: float = 2 * np.pi
    pll_limit: float = np.pi / 2
    pll_persistence: float = 0.5

    @classmethod
    def from_config(cls, config) -> "StabilityLimits":
        section = config["stability"]
        return cls(
            angle_limit=section.getfloat("angle_limit"),
            pll_limit=section.getfloat("pll_limit"),
            pll_persistence=section.getfloat("pll_persistence"),
        )

    def scaled(self, factor: float) -> "StabilityLimits":
        return StabilityLimits(
            self.angle_limit * factor,
            self.pll_limit * factor,
            self.pll_persistence * factor,
        )


@dataclass(frozen=True)
class StabilityVerdict:
    stable: bool
    reason: Reason
    first_violation_time: float | None = None
    device: str | None = None

    def __str__(self):
        if self.stable:
            return "stable"
        text = f"unstable ({self.reason.name}"
        if self.first_violation_time is not None:
            text += f" at t = {self.first_violation_time:.2f} s"
        if self.device is not None:
            text += f", {self.device}"
        return text + ")"

    def to_dict(self) -> dict:
        return {
            "stable": self.stable,
            "reason": self.reason.name,
            "first_violation_time": self.first_violation_time,
            "device": self.device,
        }


class InstabilityMonitor:
    """
    Online instability detection, fed one sample at a time. The same monitor
    classifies stored trajectories, so online early stopping and offline
    classification always agree.
    """

    def __init__(
        self,
        sync_labels: list[str],
        gfl_labels: list[str],
        limits: StabilityLimits | None = None,
    ):
        self.sync_labels = sync_labels
        self.gfl_labels = gfl_labels
        self.limits = limits or StabilityLimits()
        self._pll_since = np.full(len(gfl_labels), np.nan)
        self.verdict: StabilityVerdict | None = None

    @property
    def fired(self) -> bool:
        return self.verdict is not None

    def update(
        self, t: float, delta: np.ndarray, pll_error: np.ndarray
    ) -> StabilityVerdict | None:
        """
        Feed one sample.

        Parameters
        ----------
        t : float
            Time of the sample (s).
        delta : np.ndarray
            Rotor angles of all machines (any common frame).
        pll_error : np.ndarray
            theta - theta_P per GFL unit.

        Returns
        -------
        StabilityVerdict | None
            The first violation found so far, None while stable.
        """
        if self.fired:
            return self.verdict
        if len(delta) > 1:
            spread = np.max(delta) - np.min(delta)
            if spread > self.limits.angle_limit:
                leader = self.sync_labels[int(np.argmax(delta))]
                self.verdict = StabilityVerdict(
                    False, Reason.angle_separation, float(t), leader
                )
                return self.verdict

        if len(pll_error):
            exceeded = np.abs(wrap_angle(pll_error)) > self.limits.pll_limit
            started = np.where(np.isnan(self._pll_since), t, self._pll_since)
            self._pll_since = np.where(exceeded, started, np.nan)
            duration = t - self._pll_since
            lost = np.flatnonzero(duration > self.limits.pll_persistence - 1e-9)
            if lost.size:
                k = int(lost[0])
                self.verdict = StabilityVerdict(
                    False,
                    Reason.pll_divergence,
                    float(self._pll_since[k]),
                    self.gfl_labels[k],
                )
        return self.verdict

    def collapse(self, t: float) -> StabilityVerdict:
        if not self.fired:
            self.verdict = StabilityVerdict(False, Reason.algebraic_collapse, float(t))
        return self.verdict

    def step_failure(self, t: float) -> StabilityVerdict:
        if not self.fired:
            self.verdict = StabilityVerdict(
                False, Reason.integration_failure, float(t)
            )
        return self.verdict

    def result(self) -> StabilityVerdict:
        return self.verdict or StabilityVerdict(True, Reason.converged)


def monitor_for(
    model: "DeviceModel", limits: StabilityLimits | None = None
) -> InstabilityMonitor:
    return InstabilityMonitor(
        [f"machine at bus {b}" for b in model.sync_buses],
        [f"GFL unit at bus {b}" for b in model.gfl_buses],
        limits,
    )


def classify_stability(
    traj: "Trajectory", limits: StabilityLimits | None = None
) -> StabilityVerdict:
    """
    Classify a stored trajectory.

    Unstable if the rotor angle spread exceeds the angle limit, a PLL stays out
    of lock longer than the persistence time, the network collapsed or the
    integrator failed to converge.

    Raises
    ------
    StabilityError
        If the trajectory ends before the fault is cleared without any
        violation, so that the post-fault behaviour is unknown.
    """
    monitor = monitor_for(traj.model, limits)
    delta = traj.x[:, traj.model.block("delta")]
    pll_error = traj.y[:, traj.model.n_gfl :] - traj.x[:, traj.model.block("theta_p")]
    for k, t in enumerate(traj.times):
        if monitor.update(t, delta[k], pll_error[k]) is not None:
            return monitor.verdict
    # the failing instant is the step after the last stored sample
    if traj.collapsed:
        return monitor.collapse(traj.times[-1] + traj.dt)
    if traj.step_failed:
        return monitor.step_failure(traj.times[-1] + traj.dt)
    if traj.scenario.has_fault and traj.times[-1] < traj.scenario.t_cl - 1e-9:
        raise StabilityError(
            f"Trajectory ends at {traj.times[-1]:.3f} s before the fault is cleared "
            f"at {traj.scenario.t_cl:.3f} s"
        )
    return monitor.result()
