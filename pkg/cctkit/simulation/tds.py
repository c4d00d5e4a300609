"""
Fixed-step time-domain simulation over the pre-fault, during-fault and
post-fault network phases.
"""

import logging
import time
from configparser import ConfigParser
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from cctkit.case import FaultScenario, NetworkCase, validate_scenario
from cctkit.dynamics.devices import DeviceModel, Equilibrium, init_devices
from cctkit.dynamics.jacobian import jacobian_blocks, reduced_jacobian
from cctkit.exceptions import (
    AlgebraicCollapseError,
    CaseValidationError,
    IntegrationError,
)
from cctkit.network.algebraic import AlgebraicSolution
from cctkit.network.powerflow import initial_power_flow
from cctkit.network.reduction import ReducedNetwork, phase_networks
from cctkit.simulation.stability import (
    StabilityLimits,
    StabilityVerdict,
    classify_stability,
    monitor_for,
)
from cctkit.utils import get_current_time, log_memory_usage, steps_on_grid

logger = logging.getLogger(__name__)

INTEGRATORS = ("trapezoidal", "rk4")


@dataclass(frozen=True)
class SimOptions:
    integrator: str = "trapezoidal"
    omega_pu: bool = False
    newton_tol: float = 1e-10
    newton_rtol: float = 1e-10
    newton_max_iter: int = 20
    algebraic_tol: float = 1e-10
    algebraic_max_iter: int = 100
    early_stop: bool = False
    limits: StabilityLimits = field(default_factory=StabilityLimits)

    def __post_init__(self):
        if self.integrator == "trap":
            object.__setattr__(self, "integrator", "trapezoidal")
        if self.integrator not in INTEGRATORS:
            raise ValueError(
                f"integrator must be one of {INTEGRATORS}, not '{self.integrator}'"
            )

    @classmethod
    def from_config(cls, config: ConfigParser, **overrides) -> "SimOptions":
        section = config["simulation"]
        values = dict(
            integrator=section.get("integrator"),
            omega_pu=section.getboolean("omega_pu"),
            newton_tol=section.getfloat("newton_tol"),
            newton_rtol=section.getfloat("newton_rtol", fallback=1e-10),
            newton_max_iter=section.getint("newton_max_iter"),
            algebraic_tol=section.getfloat("algebraic_tol"),
            algebraic_max_iter=section.getint("algebraic_max_iter"),
            limits=StabilityLimits.from_config(config),
        )
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


@dataclass
class Trajectory:
    """
    Recorded simulation.

    `x` holds the states in the synchronous frame (PLL angle phi), `states`
    the reported ones with absolute theta_P. At the grid index of an event
    the stored algebraic values belong to the new topology; the values just
    before the switch are kept in `pre_switch`.
    """

    case: NetworkCase
    scenario: FaultScenario
    model: DeviceModel
    options: SimOptions
    networks: dict[str, ReducedNetwork]
    times: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p_e: np.ndarray
    v_mag: np.ndarray
    v_ang: np.ndarray
    phase_marks: dict[str, int]
    pre_switch: dict[str, np.ndarray]
    collapsed: bool = False
    step_failed: bool = False
    verdict: StabilityVerdict | None = None
    elapsed_time: float = 0.0

    def __repr__(self):
        return (
            f"< Trajectory of {self.case.name} >\n---------------------------\n"
            + f"Fault bus        : {self.scenario.fault_bus}\n"
            + f"Clearing time    : {self.scenario.t_cl_delay} s\n"
            + f"Samples          : {len(self.times)}\n"
            + f"Verdict          : {self.verdict}"
        )

    @property
    def states(self) -> np.ndarray:
        return self.model.to_absolute(self.x, self.times)

    @property
    def state_names(self) -> list[str]:
        return self.model.state_names()

    @property
    def algebraic_names(self) -> list[str]:
        return self.model.algebraic_names()

    @property
    def dt(self) -> float:
        return self.scenario.dt

    @property
    def is_complete(self) -> bool:
        return len(self.times) == steps_on_grid(self.scenario.horizon, self.dt) + 1

    def phase_of_step(self, k: int) -> str:
        return _phase_of_step(k, self.phase_marks)

    def network_at(self, k: int) -> ReducedNetwork:
        """Network used for the sample at grid index k (post-switch at events)."""
        return self.networks[self.phase_of_step(k)]

    @property
    def clearing_index(self) -> int | None:
        k = self.phase_marks.get("t_cl")
        if k is None or k >= len(self.times):
            return None
        return k

    def post_fault(self) -> slice:
        k = self.clearing_index
        if k is None:
            return slice(len(self.times), len(self.times))
        return slice(k, len(self.times))

    def classify(self, limits: StabilityLimits | None = None) -> StabilityVerdict:
        return classify_stability(self, limits or self.options.limits)


def _phase_of_step(k: int, marks: dict[str, int]) -> str:
    if k < marks["t1"]:
        return "pre_fault"
    if k < marks["t_cl"]:
        return "during_fault"
    return "post_fault"


def prepare_equilibrium(
    case: NetworkCase, scenario: FaultScenario, omega_pu: bool = False
) -> Equilibrium:
    """Power flow and device initialization with the networks of `scenario`."""
    pf = initial_power_flow(case, tol=1e-10)
    return init_devices(case, pf, omega_pu=omega_pu, scenario=scenario)


def simulate(
    case: NetworkCase,
    scenario: FaultScenario,
    options: SimOptions | None = None,
    equilibrium: Equilibrium | None = None,
) -> Trajectory:
    """
    Integrate the system from its pre-fault equilibrium over the scenario.

    The fault is applied at grid index t1/dt and cleared at (t1 + T_cl)/dt;
    states are continuous at both switches and the algebraic variables are
    re-solved on the new network before the next step.

    Parameters
    ----------
    case : NetworkCase
        Study system.
    scenario : FaultScenario
        Fault, clearing time, horizon and step size.
    options : SimOptions | None, optional
        Integrator and numerics, defaults to SimOptions().
    equilibrium : Equilibrium | None, optional
        Already initialized operating point of `case`, reused between runs.

    Returns
    -------
    Trajectory
        Complete trajectory, or a partial one if the network collapsed or the
        instability monitor stopped the run (`options.early_stop`).

    Raises
    ------
    CaseValidationError
        If the scenario does not fit the case.
    EventAlignmentError
        If t1 or the clearing instant is not on the step grid.
    """
    options = options or SimOptions()
    report = validate_scenario(case, scenario, strict=False)
    if not report.is_valid:
        raise CaseValidationError(report)
    dt = scenario.dt
    n_steps = steps_on_grid(scenario.horizon, dt, "horizon")
    if scenario.has_fault:
        marks = {
            "t1": steps_on_grid(scenario.t1, dt, "t1"),
            "t_cl": steps_on_grid(scenario.t_cl, dt, "t1 + T_cl"),
        }
    else:
        marks = {"t1": n_steps + 1, "t_cl": n_steps + 1}

    start = time.perf_counter()
    if equilibrium is None:
        equilibrium = prepare_equilibrium(case, scenario, options.omega_pu)
    networks = phase_networks(equilibrium.case, scenario, equilibrium.pf)
    model = equilibrium.model
    x = equilibrium.x0.copy()
    if model.omega_pu != options.omega_pu:
        model = DeviceModel.from_case(equilibrium.case, options.omega_pu)
        x[model.block("omega")] = model.omega_nom

    def solve(net, x, guess):
        return model.solve_network(
            net,
            x,
            guess=guess,
            tol=options.algebraic_tol,
            max_iter=options.algebraic_max_iter,
        )

    step = _trapezoidal_step if options.integrator == "trapezoidal" else _rk4_step
    monitor = monitor_for(model, options.limits)

    xs, ys, pes, vms, vas = [], [], [], [], []
    pre_switch = {}
    collapsed = step_failed = False
    solution = equilibrium.algebraic
    net = networks["pre_fault"]

    for k in range(n_steps + 1):
        t = k * dt
        events = [event for event in ("t1", "t_cl") if marks[event] == k]
        try:
            for event in events:
                pre_switch[event] = solution.y
            if events:
                net = networks[_phase_of_step(k, marks)]
                solution = solve(net, x, np.abs(solution.v_gfl))
                logger.debug(f"Switched to {net.phase} network at t = {t:.3f} s")
        except AlgebraicCollapseError as e:
            logger.warning(f"Network collapse at t = {t:.3f} s: {e}")
            monitor.collapse(t)
            collapsed = True
            break

        xs.append(x)
        ys.append(solution.y)
        pes.append(solution.p_e)
        vms.append(solution.v_mag)
        vas.append(solution.v_ang)
        monitor.update(t, x[model.block("delta")], _pll_error(model, x, solution))
        if options.early_stop and monitor.fired:
            logger.debug(f"Stopped at t = {t:.3f} s: {monitor.verdict}")
            break
        if k == n_steps:
            break

        try:
            x, solution = step(model, net, x, solution, dt, options, solve)
        except AlgebraicCollapseError as e:
            logger.warning(f"Network collapse at t = {t + dt:.3f} s: {e}")
            monitor.collapse(t + dt)
            collapsed = True
            break
        except IntegrationError as e:
            logger.warning(f"Step to t = {t + dt:.3f} s failed: {e}")
            monitor.step_failure(t + dt)
            step_failed = True
            break

    elapsed = time.perf_counter() - start
    traj = Trajectory(
        case=equilibrium.case,
        scenario=scenario,
        model=model,
        options=options,
        networks=networks,
        times=np.arange(len(xs)) * dt,
        x=np.array(xs),
        y=np.array(ys).reshape(len(xs), 2 * model.n_gfl),
        p_e=np.array(pes),
        v_mag=np.array(vms),
        v_ang=np.array(vas),
        phase_marks=marks,
        pre_switch=pre_switch,
        collapsed=collapsed,
        step_failed=step_failed,
        verdict=monitor.result(),
        elapsed_time=elapsed,
    )
    logger.info(
        f"{get_current_time()}: Simulated {case.name} to t = {traj.times[-1]:.2f} s "
        f"in {elapsed:.2f} s ({traj.verdict}). {log_memory_usage()}"
    )
    return traj


def _pll_error(
    model: DeviceModel, x: np.ndarray, solution: AlgebraicSolution
) -> np.ndarray:
    return solution.theta_gfl - x[model.block("theta_p")]


def _corrector_converged(g: np.ndarray, x: np.ndarray, options: SimOptions) -> bool:
    """Per-state test |g_i| <= atol + rtol |x_i|, independent of the speed unit."""
    bound = options.newton_tol + options.newton_rtol * np.abs(x)
    return bool(np.all(np.abs(g) <= bound))


def _trapezoidal_step(model, net, x, solution, h, options, solve, splits=1):
    """
    Implicit trapezoidal rule. An explicit Euler predictor is corrected by
    simplified Newton iterations with I - h/2 M frozen at the start of the step.
    A stalled corrector gets one Jacobian refresh at its last iterate, then the
    step is split into two halves `splits` times.
    """
    f0 = model.rhs(x, solution)
    x_new = x + h * f0
    solution_new = solve(net, x_new, np.abs(solution.v_gfl))
    g = x_new - x - 0.5 * h * (f0 + model.rhs(x_new, solution_new))
    if _corrector_converged(g, x_new, options):
        return x_new, solution_new

    x_lin, y_lin = x, solution.y
    for _ in range(2):
        m = reduced_jacobian(jacobian_blocks(model, net, x_lin, y_lin))
        lu = lu_factor(np.eye(len(x)) - 0.5 * h * m)
        for _ in range(options.newton_max_iter):
            x_new = x_new - lu_solve(lu, g)
            solution_new = solve(net, x_new, np.abs(solution_new.v_gfl))
            g = x_new - x - 0.5 * h * (f0 + model.rhs(x_new, solution_new))
            if not np.all(np.isfinite(g)):
                break
            if _corrector_converged(g, x_new, options):
                return x_new, solution_new
        if not np.all(np.isfinite(g)):
            break
        x_lin, y_lin = x_new, solution_new.y

    if splits > 0:
        logger.debug(f"Trapezoidal corrector stalled, splitting the {h} s step")
        x_half, solution_half = _trapezoidal_step(
            model, net, x, solution, 0.5 * h, options, solve, splits - 1
        )
        return _trapezoidal_step(
            model, net, x_half, solution_half, 0.5 * h, options, solve, splits - 1
        )
    raise IntegrationError(
        f"Trapezoidal corrector did not converge (residual {np.max(np.abs(g)):.3e})"
    )


def _rk4_step(model, net, x, solution, h, options, solve):
    guess = np.abs(solution.v_gfl)
    k1 = model.rhs(x, solution)
    s2 = solve(net, x + 0.5 * h * k1, guess)
    k2 = model.rhs(x + 0.5 * h * k1, s2)
    s3 = solve(net, x + 0.5 * h * k2, np.abs(s2.v_gfl))
    k3 = model.rhs(x + 0.5 * h * k2, s3)
    s4 = solve(net, x + h * k3, np.abs(s3.v_gfl))
    k4 = model.rhs(x + h * k3, s4)
    x_new = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return x_new, solve(net, x_new, np.abs(s4.v_gfl))
