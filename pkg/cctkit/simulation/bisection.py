import dataclasses
import logging
import time
from dataclasses import dataclass, field

from cctkit.case import FaultScenario, NetworkCase
from cctkit.dynamics.devices import Equilibrium
from cctkit.exceptions import InvalidBracketError
from cctkit.simulation.stability import StabilityVerdict
from cctkit.simulation.tds import SimOptions, prepare_equilibrium, simulate
from cctkit.utils import get_current_time, snap_to_grid

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BisectionStep:
    t_cl: float
    verdict: StabilityVerdict

    @property
    def stable(self) -> bool:
        return self.verdict.stable


@dataclass
class CctBracket:
    """Largest tested stable and smallest tested unstable clearing time."""

    lower: float
    upper: float
    evaluations: int
    history: list[BisectionStep] = field(default_factory=list)
    elapsed_time: float = 0.0

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(f"Bracket lower {self.lower} must be below {self.upper}")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lower + self.upper)

    def contains(self, t: float, slack: float = 0.0) -> bool:
        return self.lower - slack <= t <= self.upper + slack

    def to_dict(self) -> dict:
        return {
            "lower": self.lower,
            "upper": self.upper,
            "evaluations": self.evaluations,
            "elapsed_time": self.elapsed_time,
            "history": [
                {"t_cl": s.t_cl, **s.verdict.to_dict()} for s in self.history
            ],
        }


class _Evaluator:
    """Runs early-stopped simulations and remembers every verdict."""

    def __init__(self, case, scenario, options, equilibrium, history):
        self.case = case
        self.scenario = scenario
        self.options = dataclasses.replace(options, early_stop=True)
        self.equilibrium = equilibrium
        self.history = list(history or [])
        self.evaluations = 0

    def __call__(self, t_cl: float) -> bool:
        t_cl = snap_to_grid(t_cl, self.scenario.dt)
        for step in self.history:
            if abs(step.t_cl - t_cl) < 1e-9:
                return step.stable
        traj = simulate(
            self.case,
            self.scenario.with_clearing(t_cl),
            self.options,
            equilibrium=self.equilibrium,
        )
        self.evaluations += 1
        self.history.append(BisectionStep(t_cl, traj.verdict))
        logger.debug(f"T_cl = {t_cl:.3f} s: {traj.verdict}")
        return traj.verdict.stable


def bisect_cct(
    case: NetworkCase,
    scenario: FaultScenario,
    bracket: tuple[float, float],
    tol: float = 0.01,
    options: SimOptions | None = None,
    equilibrium: Equilibrium | None = None,
    history: list[BisectionStep] | None = None,
) -> CctBracket:
    """
    Interval elimination on the clearing time.

    Parameters
    ----------
    case : NetworkCase
        Study system.
    scenario : FaultScenario
        Fault template; its clearing time is replaced by the candidates.
    bracket : tuple[float, float]
        Initial (stable, unstable) clearing times in s, both verified first.
    tol : float, optional
        Requested bracket width in s, by default 0.01. The bracket never
        becomes narrower than the step size.
    options : SimOptions | None, optional
        Simulation numerics; simulations are always early-stopped.
    equilibrium : Equilibrium | None, optional
        Initialized operating point shared by all runs.
    history : list[BisectionStep] | None, optional
        Verdicts already known, e.g. from a bracket expansion; those clearing
        times are not simulated again.

    Returns
    -------
    CctBracket

    Raises
    ------
    InvalidBracketError
        If the lower end is unstable or the upper end is stable.
    """
    options = options or SimOptions()
    start = time.perf_counter()
    if equilibrium is None:
        equilibrium = prepare_equilibrium(case, scenario, options.omega_pu)
    dt = scenario.dt
    lower, upper = (snap_to_grid(t, dt) for t in bracket)
    if not lower < upper:
        raise InvalidBracketError(f"Bracket ({lower}, {upper}) is empty")
    is_stable = _Evaluator(case, scenario, options, equilibrium, history)

    if not is_stable(lower):
        raise InvalidBracketError(
            f"Lower end T_cl = {lower:.3f} s of the bracket is already unstable"
        )
    if is_stable(upper):
        raise InvalidBracketError(
            f"Upper end T_cl = {upper:.3f} s of the bracket is still stable"
        )

    while upper - lower > tol + 1e-9:
        middle = snap_to_grid(0.5 * (lower + upper), dt)
        if middle <= lower + 1e-9 or middle >= upper - 1e-9:
            break
        if is_stable(middle):
            lower = middle
        else:
            upper = middle

    result = CctBracket(
        lower=lower,
        upper=upper,
        evaluations=is_stable.evaluations,
        history=is_stable.history,
        elapsed_time=time.perf_counter() - start,
    )
    logger.info(
        f"{get_current_time()}: CCT of {case.name} between {lower:.3f} s and "
        f"{upper:.3f} s after {result.evaluations} simulations"
    )
    return result


def expand_bracket(
    case: NetworkCase,
    scenario: FaultScenario,
    lower: float,
    step: float = 0.1,
    max_expansions: int = 6,
    options: SimOptions | None = None,
    equilibrium: Equilibrium | None = None,
) -> tuple[float, float, list[BisectionStep], int]:
    """
    Find an unstable clearing time above a stable one by stepping upward.

    Returns
    -------
    tuple[float, float, list[BisectionStep], int]
        Stable lower end, unstable upper end, the verdicts seen and the number
        of simulations run.

    Raises
    ------
    InvalidBracketError
        If `lower` is unstable or no unstable clearing time is found within
        `max_expansions` steps (or before the horizon).
    """
    options = options or SimOptions()
    if equilibrium is None:
        equilibrium = prepare_equilibrium(case, scenario, options.omega_pu)
    is_stable = _Evaluator(case, scenario, options, equilibrium, None)
    lower = snap_to_grid(lower, scenario.dt)
    if not is_stable(lower):
        raise InvalidBracketError(f"T_cl = {lower:.3f} s is already unstable")
    for _ in range(max_expansions):
        upper = snap_to_grid(lower + step, scenario.dt)
        if scenario.t1 + upper >= scenario.horizon:
            break
        if not is_stable(upper):
            return lower, upper, is_stable.history, is_stable.evaluations
        lower = upper
    raise InvalidBracketError(
        f"No unstable clearing time found up to T_cl = {lower:.3f} s"
    )


@dataclass(frozen=True)
class BisectionSettings:
    tol: float = 0.01
    initial_width: float = 0.1
    max_expansions: int = 6

    @classmethod
    def from_config(cls, config) -> "BisectionSettings":
        section = config["bisection"]
        return cls(
            tol=section.getfloat("tol"),
            initial_width=section.getfloat("initial_width"),
            max_expansions=section.getint("max_expansions"),
        )
