"""
Critical clearing time estimation from the trajectory sensitivity index.

For each device fleet the peak sensitivity norm m(SN) is computed at two
stable clearing times; lambda = 1/m(SN) falls almost linearly towards zero as
the clearing time approaches the critical one, so the line through the two
points crosses the T_cl axis near the CCT. The smallest fleet estimate is
the system CCT.
"""

import dataclasses
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from cctkit.case import FaultScenario, NetworkCase, validate_scenario
from cctkit.dynamics.devices import Equilibrium
from cctkit.exceptions import (
    CaseValidationError,
    ExtrapolationError,
    ProbeInstabilityError,
    SensitivityError,
)
from cctkit.sensitivity.finite_difference import sensitivity_finite_difference
from cctkit.sensitivity.indices import FLEETS, fleet_series, peak
from cctkit.sensitivity.variational import (
    SensitivityTrajectory,
    sensitivity_variational,
)
from cctkit.simulation.bisection import (
    BisectionSettings,
    CctBracket,
    _Evaluator,
    bisect_cct,
    expand_bracket,
)
from cctkit.simulation.tds import SimOptions, prepare_equilibrium
from cctkit.utils import get_current_time, log_memory_usage, snap_to_grid

logger = logging.getLogger(__name__)

METHODS = ("variational", "fd")


@dataclass(frozen=True)
class EstimatorSettings:
    method: str = "variational"
    alignment: str = "elapsed"
    fd_step: float | None = None
    fd_refine: int = 1
    probe_spacing: float = 0.02
    probe_offset: float = 0.06
    search_lower: float = 0.05
    search_upper: float = 0.85
    exploratory_steps: int = 3
    max_retreats: int = 5
    low_confidence_distance: float = 0.15

    def __post_init__(self):
        if self.method == "finite_difference":
            object.__setattr__(self, "method", "fd")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, not '{self.method}'")

    @classmethod
    def from_config(cls, config, **overrides) -> "EstimatorSettings":
        sensitivity, estimator = config["sensitivity"], config["estimator"]
        fd_step = sensitivity.get("fd_step", "").strip()
        values = dict(
            method=sensitivity.get("method"),
            alignment=sensitivity.get("alignment"),
            fd_step=float(fd_step) if fd_step else None,
            fd_refine=sensitivity.getint("fd_refine", fallback=1),
            probe_spacing=estimator.getfloat("probe_spacing"),
            probe_offset=estimator.getfloat("probe_offset"),
            search_lower=estimator.getfloat("search_lower"),
            search_upper=estimator.getfloat("search_upper"),
            exploratory_steps=estimator.getint("exploratory_steps"),
            max_retreats=estimator.getint("max_retreats"),
            low_confidence_distance=estimator.getfloat("low_confidence_distance"),
        )
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


@dataclass(frozen=True)
class LambdaPoint:
    t_cl: float
    m_sn: float
    fleet: str
    peak_time: float = float("nan")
    reference_device: int | None = None

    def __post_init__(self):
        if not (np.isfinite(self.m_sn) and self.m_sn > 0):
            raise SensitivityError(
                f"Peak sensitivity of the {self.fleet} fleet at T_cl = {self.t_cl} s "
                f"is {self.m_sn}, lambda is undefined"
            )

    @property
    def lambda_(self) -> float:
        return 1.0 / self.m_sn

    def to_dict(self) -> dict:
        return {
            "t_cl": self.t_cl,
            "m_sn": self.m_sn,
            "lambda": self.lambda_,
            "fleet": self.fleet,
            "peak_time": self.peak_time,
            "reference_device": self.reference_device,
        }


@dataclass(frozen=True)
class Extrapolation:
    t_cr: float
    slope: float
    distance: float
    low_confidence: bool = False


def extrapolate_root(
    p1: LambdaPoint, p2: LambdaPoint, low_confidence_distance: float = 0.15
) -> Extrapolation:
    """
    Intersection of the line through two (T_cl, lambda) points with the
    T_cl axis.

    Parameters
    ----------
    p1, p2 : LambdaPoint
        Points of the same fleet, in any order.
    low_confidence_distance : float, optional
        Extrapolation distance beyond the larger probe above which the result
        is flagged, by default 0.15 s.

    Returns
    -------
    Extrapolation
        Root t_cr, slope dlambda/dT_cl and distance t_cr - max(T_cl).

    Raises
    ------
    ExtrapolationError
        For mixed fleets, equal probe times or a slope that is not negative.
    """
    if p1.fleet != p2.fleet:
        raise ExtrapolationError(
            f"Cannot extrapolate across fleets ({p1.fleet} and {p2.fleet})"
        )
    first, second = sorted((p1, p2), key=lambda p: p.t_cl)
    if abs(second.t_cl - first.t_cl) < 1e-12:
        raise ExtrapolationError(f"Both probes are at T_cl = {first.t_cl} s")
    slope = (second.lambda_ - first.lambda_) / (second.t_cl - first.t_cl)
    if not slope < 0:
        raise ExtrapolationError(
            f"Sensitivity index of the {first.fleet} fleet does not decrease between "
            f"T_cl = {first.t_cl} s and {second.t_cl} s (slope {slope:.3e})"
        )
    t_cr = first.t_cl - first.lambda_ / slope
    distance = t_cr - second.t_cl
    low_confidence = distance > low_confidence_distance
    if low_confidence:
        logger.warning(
            f"Extrapolation of the {first.fleet} fleet reaches {distance:.3f} s "
            "beyond the probes, the estimate is of low confidence"
        )
    return Extrapolation(t_cr, slope, distance, low_confidence)


@dataclass
class CctEstimate:
    points: dict[str, tuple[LambdaPoint, LambdaPoint]]
    extrapolations: dict[str, Extrapolation]
    probes: tuple[float, float]
    simulations: int = 2
    exploratory_simulations: int = 0
    elapsed_time: float = 0.0

    def __repr__(self):
        return (
            "< CCT estimate >\n---------------------------\n"
            + f"Probes           : {self.probes[0]:.3f} s, {self.probes[1]:.3f} s\n"
            + f"Sync fleet       : {self.t_cr_sync:.4f} s\n"
            + (
                f"GFL fleet        : {self.t_cr_gfl:.4f} s\n"
                if self.t_cr_gfl is not None
                else ""
            )
            + f"System CCT       : {self.t_cr_system:.4f} s"
        )

    @property
    def t_cr_sync(self) -> float:
        return self.extrapolations["sync"].t_cr

    @property
    def t_cr_gfl(self) -> float | None:
        if "gfl" not in self.extrapolations:
            return None
        return self.extrapolations["gfl"].t_cr

    @property
    def limiting_fleet(self) -> str:
        # ties go to the synchronous fleet
        if self.t_cr_gfl is not None and self.t_cr_gfl < self.t_cr_sync:
            return "gfl"
        return "sync"

    @property
    def t_cr_system(self) -> float:
        return self.extrapolations[self.limiting_fleet].t_cr

    @property
    def low_confidence(self) -> bool:
        return self.extrapolations[self.limiting_fleet].low_confidence

    @property
    def total_simulations(self) -> int:
        """Probe runs, retreats and exploratory runs together."""
        return self.simulations + self.exploratory_simulations

    def to_dict(self) -> dict:
        return {
            "probes": list(self.probes),
            "t_cr_sync": self.t_cr_sync,
            "t_cr_gfl": self.t_cr_gfl,
            "t_cr_system": self.t_cr_system,
            "limiting_fleet": self.limiting_fleet,
            "low_confidence": self.low_confidence,
            "simulations": self.simulations,
            "exploratory_simulations": self.exploratory_simulations,
            "elapsed_time": self.elapsed_time,
            "fleets": {
                fleet: {
                    "points": [p.to_dict() for p in self.points[fleet]],
                    **dataclasses.asdict(self.extrapolations[fleet]),
                }
                for fleet in self.extrapolations
            },
        }


def present_fleets(case: NetworkCase) -> list[str]:
    return list(FLEETS) if case.gfl_units else list(FLEETS[:1])


def probe_sensitivity(
    case: NetworkCase,
    scenario: FaultScenario,
    t_cl: float,
    options: SimOptions | None = None,
    settings: EstimatorSettings | None = None,
    equilibrium: Equilibrium | None = None,
) -> SensitivityTrajectory:
    """
    Sensitivity at one probe clearing time.

    Raises
    ------
    ProbeInstabilityError
        If a simulation of the probe is unstable or collapsed.
    """
    options = options or SimOptions()
    settings = settings or EstimatorSettings()
    scenario = scenario.with_clearing(snap_to_grid(t_cl, scenario.dt))
    if settings.method == "variational":
        sens = sensitivity_variational(
            case, scenario, options, settings.alignment, equilibrium=equilibrium
        )
    else:
        sens = sensitivity_finite_difference(
            case,
            scenario,
            settings.fd_step,
            options,
            settings.alignment,
            equilibrium=equilibrium,
            refine=settings.fd_refine,
        )
    for run in sens.runs:
        if not run.verdict.stable:
            raise ProbeInstabilityError(
                f"Probe T_cl = {t_cl:.3f} s is {run.verdict}", t_cl
            )
    return sens


def lambda_at(
    case: NetworkCase,
    scenario: FaultScenario,
    t_cl: float,
    fleet: str,
    options: SimOptions | None = None,
    settings: EstimatorSettings | None = None,
    equilibrium: Equilibrium | None = None,
    sensitivity: SensitivityTrajectory | None = None,
) -> LambdaPoint:
    """
    lambda = 1/m(SN) of one fleet at clearing time `t_cl`.

    Raises
    ------
    ValueError
        If the fleet is not present in the case.
    SensitivityError
        If the peak sensitivity is zero (no fault).
    ProbeInstabilityError
        If the probe itself is unstable.
    """
    if fleet not in present_fleets(case):
        raise ValueError(f"Case {case.name} has no {fleet} fleet")
    if sensitivity is None:
        sensitivity = probe_sensitivity(
            case, scenario, t_cl, options, settings, equilibrium
        )
    series = fleet_series(sensitivity, fleet)
    m_sn, position = peak(series)
    return LambdaPoint(t_cl, m_sn, fleet, position, series.reference_device)


def auto_probes(
    case: NetworkCase,
    scenario: FaultScenario,
    settings: EstimatorSettings | None = None,
    options: SimOptions | None = None,
    equilibrium: Equilibrium | None = None,
) -> tuple[tuple[float, float], int]:
    """
    Probe clearing times from a coarse exploratory bisection.

    A few early-stopped simulations over [search_lower, search_upper] give an
    unstable clearing time b; the probes are (b - offset, b - offset + spacing).

    Returns
    -------
    tuple[tuple[float, float], int]
        Probes and the number of exploratory simulations.
    """
    settings = settings or EstimatorSettings()
    options = options or SimOptions()
    dt = scenario.dt
    is_stable = _Evaluator(case, scenario, options, equilibrium, None)
    lower, upper = settings.search_lower, settings.search_upper
    for _ in range(settings.exploratory_steps):
        middle = snap_to_grid(0.5 * (lower + upper), dt)
        if is_stable(middle):
            lower = middle
        else:
            upper = middle
    first = snap_to_grid(max(upper - settings.probe_offset, 2 * dt), dt)
    probes = (first, snap_to_grid(first + settings.probe_spacing, dt))
    logger.info(
        f"{get_current_time()}: Exploratory search found T_cl = {upper:.3f} s "
        f"unstable, probing at {probes[0]:.3f} s and {probes[1]:.3f} s"
    )
    return probes, is_stable.evaluations


def estimate_cct(
    case: NetworkCase,
    scenario: FaultScenario,
    probes: tuple[float, float] | None = None,
    options: SimOptions | None = None,
    settings: EstimatorSettings | None = None,
    equilibrium: Equilibrium | None = None,
) -> CctEstimate:
    """
    Estimate the critical clearing time from two probe clearing times.

    Parameters
    ----------
    case : NetworkCase
        Study system.
    scenario : FaultScenario
        Fault template; its own clearing time is not used.
    probes : tuple[float, float] | None, optional
        Two distinct stable clearing times. Chosen by `auto_probes` if omitted;
        automatic probes retreat by the probe spacing when one is unstable.
    options : SimOptions | None, optional
        Simulation numerics.
    settings : EstimatorSettings | None, optional
        Sensitivity method and probe rules.
    equilibrium : Equilibrium | None, optional
        Initialized operating point shared by all runs.

    Returns
    -------
    CctEstimate
        Per-fleet and system estimates. Both fleets share the same two
        sensitivity computations. With explicit probes that is the whole cost;
        automatic probes add exploratory runs and retreats, all counted in
        `simulations` and `exploratory_simulations`.

    Raises
    ------
    ProbeInstabilityError
        If an explicit probe is unstable, or automatic probes still are after
        the allowed retreats.
    ExtrapolationError
        If the probes coincide or lambda does not decrease.
    """
    options = options or SimOptions()
    settings = settings or EstimatorSettings()
    report = validate_scenario(case, scenario, strict=True)
    if not report.is_valid:
        raise CaseValidationError(report)
    start = time.perf_counter()
    if equilibrium is None:
        equilibrium = prepare_equilibrium(case, scenario, options.omega_pu)

    automatic = probes is None
    exploratory = 0
    if automatic:
        probes, exploratory = auto_probes(
            case, scenario, settings, options, equilibrium
        )
    probes = tuple(snap_to_grid(p, scenario.dt) for p in probes)
    if abs(probes[0] - probes[1]) < 1e-12:
        raise ExtrapolationError(f"Both probes are at T_cl = {probes[0]} s")

    retreats = 0
    simulations = 0
    while True:
        try:
            sensitivities = []
            for t_cl in probes:
                sens = probe_sensitivity(
                    case, scenario, t_cl, options, settings, equilibrium
                )
                simulations += len(sens.runs)
                sensitivities.append(sens)
            break
        except ProbeInstabilityError:
            simulations += 1 if settings.method == "variational" else 2
            if not automatic or retreats >= settings.max_retreats:
                raise
            retreats += 1
            probes = tuple(
                snap_to_grid(p - settings.probe_spacing, scenario.dt) for p in probes
            )
            if min(probes) <= 0:
                raise
            logger.warning(
                f"Probe unstable, retreating to {probes[0]:.3f} s and "
                f"{probes[1]:.3f} s"
            )

    points, extrapolations = {}, {}
    for fleet in present_fleets(case):
        pair = tuple(
            lambda_at(case, scenario, t, fleet, sensitivity=s)
            for t, s in zip(probes, sensitivities)
        )
        points[fleet] = pair
        extrapolations[fleet] = extrapolate_root(
            *pair, low_confidence_distance=settings.low_confidence_distance
        )

    estimate = CctEstimate(
        points=points,
        extrapolations=extrapolations,
        probes=probes,
        simulations=simulations,
        exploratory_simulations=exploratory,
        elapsed_time=time.perf_counter() - start,
    )
    logger.info(
        f"{get_current_time()}: Estimated CCT of {case.name} at "
        f"{estimate.t_cr_system:.4f} s ({estimate.limiting_fleet} fleet). "
        f"{log_memory_usage()}"
    )
    return estimate


@dataclass
class ComparisonReport:
    fault_bus: int | None
    tripped_line: str | None
    estimate: CctEstimate
    bracket: CctBracket
    tol: float
    tds_simulations: int
    estimate_time: float
    tds_time: float

    def __repr__(self):
        return (
            f"< Comparison at fault bus {self.fault_bus} >\n"
            + "---------------------------\n"
            + f"CCT (TDS)             : [{self.bracket.lower:.2f}, "
            + f"{self.bracket.upper:.2f}] s\n"
            + f"CCT (proposed method) : {self.estimate.t_cr_system:.4f} s\n"
            + f"Within bracket        : {self.contained}\n"
            + f"Within tolerance      : {self.within_tolerance}"
        )

    @property
    def contained(self) -> bool:
        """Estimate inside [lower, upper + tol]."""
        t = self.estimate.t_cr_system
        return self.bracket.lower - 1e-9 <= t <= self.bracket.upper + self.tol + 1e-9

    @property
    def within_tolerance(self) -> bool:
        """Estimate inside the bracket widened by tol on both sides."""
        return self.bracket.contains(self.estimate.t_cr_system, self.tol + 1e-9)

    @property
    def deviation(self) -> float:
        """Estimate minus the bracket midpoint (s)."""
        return self.estimate.t_cr_system - self.bracket.midpoint

    @property
    def speedup(self) -> float:
        return self.tds_time / self.estimate_time if self.estimate_time > 0 else np.inf

    def to_dict(self) -> dict:
        return {
            "fault_bus": self.fault_bus,
            "tripped_line": self.tripped_line,
            "estimate": self.estimate.to_dict(),
            "bracket": self.bracket.to_dict(),
            "tol": self.tol,
            "contained": self.contained,
            "within_tolerance": self.within_tolerance,
            "deviation": self.deviation,
            "simulations": {
                "estimate": self.estimate.total_simulations,
                "tds": self.tds_simulations,
            },
            "wall_clock": {
                "estimate": self.estimate_time,
                "tds": self.tds_time,
                "speedup": self.speedup,
            },
        }


def tripped_label(case: NetworkCase, scenario: FaultScenario) -> str | None:
    if scenario.tripped_branch is None:
        return None
    return case.branches[scenario.tripped_branch].label


def compare_with_tds(
    case: NetworkCase,
    scenario: FaultScenario,
    probes: tuple[float, float] | None = None,
    tol: float = 0.01,
    options: SimOptions | None = None,
    settings: EstimatorSettings | None = None,
    bisection: BisectionSettings | None = None,
    equilibrium: Equilibrium | None = None,
) -> ComparisonReport:
    """
    Run the estimator and the bisection oracle on the same fault.

    The bisection bracket starts at the larger probe and extends upward in
    steps of `bisection.initial_width` until an unstable clearing time is
    found; all verifying simulations are counted.
    """
    options = options or SimOptions()
    bisection = bisection or BisectionSettings()
    if equilibrium is None:
        equilibrium = prepare_equilibrium(case, scenario, options.omega_pu)

    estimate = estimate_cct(case, scenario, probes, options, settings, equilibrium)

    start = time.perf_counter()
    lower, upper, history, expansions = expand_bracket(
        case,
        scenario,
        max(estimate.probes),
        bisection.initial_width,
        bisection.max_expansions,
        options,
        equilibrium,
    )
    bracket = bisect_cct(
        case, scenario, (lower, upper), tol, options, equilibrium, history
    )
    tds_time = time.perf_counter() - start
    return ComparisonReport(
        fault_bus=scenario.fault_bus,
        tripped_line=tripped_label(case, scenario),
        estimate=estimate,
        bracket=bracket,
        tol=tol,
        tds_simulations=expansions + bracket.evaluations,
        estimate_time=estimate.elapsed_time,
        tds_time=tds_time,
    )


@dataclass
class SweepRow:
    fault_bus: int
    tripped_line: str
    cct_tds_lower: float | None = None
    cct_tds_upper: float | None = None
    cct_estimate: float | None = None
    t_cr_sync: float | None = None
    t_cr_gfl: float | None = None
    contained: bool | None = None
    within_tolerance: bool | None = None
    deviation: float | None = None
    error: str | None = None
    report: ComparisonReport | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        row = dataclasses.asdict(self)
        row.pop("report")
        return row


def _sweep_fault(arguments) -> SweepRow:
    case, template, fault_bus, branch, probes, tol, options, settings, bisection = (
        arguments
    )
    row = SweepRow(fault_bus=fault_bus, tripped_line=str(branch))
    try:
        scenario = dataclasses.replace(
            template, fault_bus=fault_bus, tripped_branch=case.find_branch(branch)
        )
        row.tripped_line = tripped_label(case, scenario)
        report = compare_with_tds(
            case, scenario, probes, tol, options, settings, bisection
        )
    except Exception as e:
        logger.warning(f"Fault at bus {fault_bus} failed: {e}")
        row.error = f"{type(e).__name__}: {e}"
        return row
    row.cct_tds_lower = report.bracket.lower
    row.cct_tds_upper = report.bracket.upper
    row.cct_estimate = report.estimate.t_cr_system
    row.t_cr_sync = report.estimate.t_cr_sync
    row.t_cr_gfl = report.estimate.t_cr_gfl
    row.contained = report.contained
    row.within_tolerance = report.within_tolerance
    row.deviation = report.deviation
    row.report = report
    return row


def sweep_faults(
    case: NetworkCase,
    faults: list[tuple[int, str | int]],
    probes: tuple[float, float] | None = None,
    tol: float = 0.01,
    options: SimOptions | None = None,
    settings: EstimatorSettings | None = None,
    bisection: BisectionSettings | None = None,
    workers: int = 4,
    scenario: FaultScenario | None = None,
) -> list[SweepRow]:
    """
    Compare estimator and bisection for a list of (fault bus, tripped branch)
    pairs, evaluated in separate processes.

    Parameters
    ----------
    case : NetworkCase
        Study system.
    faults : list[tuple[int, str | int]]
        Fault bus and branch reference per fault.
    scenario : FaultScenario | None, optional
        Template for t1, horizon and dt; the case's scenario defaults if omitted.
    workers : int, optional
        Number of worker processes, by default 4. 1 runs in this process.

    Returns
    -------
    list[SweepRow]
        One row per fault in input order. A failing fault gives a row with
        `error` set and does not stop the sweep.
    """
    template = scenario or case.scenario()
    jobs = [
        (case, template, bus, branch, probes, tol, options, settings, bisection)
        for bus, branch in faults
    ]
    if not jobs:
        return []
    start = time.perf_counter()
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as executor:
            rows = list(executor.map(_sweep_fault, jobs))
    else:
        rows = [_sweep_fault(job) for job in jobs]
    logger.info(
        f"{get_current_time()}: Swept {len(rows)} faults in "
        f"{time.perf_counter() - start:.1f} s. {log_memory_usage()}"
    )
    return rows
