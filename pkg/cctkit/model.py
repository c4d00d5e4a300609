import logging
from pathlib import Path
from typing import Self

from cctkit import utils
from cctkit.analyze import cct
from cctkit.case import FaultScenario, NetworkCase, validate_scenario
from cctkit.dynamics.devices import Equilibrium
from cctkit.exceptions import CaseValidationError
from cctkit.io import export
from cctkit.io.read_case import resolve_case
from cctkit.sensitivity.finite_difference import sensitivity_finite_difference
from cctkit.sensitivity.variational import (
    SensitivityTrajectory,
    sensitivity_variational,
)
from cctkit.simulation.bisection import BisectionSettings, CctBracket, bisect_cct
from cctkit.simulation.tds import SimOptions, Trajectory, prepare_equilibrium, simulate

logger = logging.getLogger(__name__)


class StabilityStudy:
    def __init__(
        self,
        case: NetworkCase,
        settings_file: str | Path | None = None,
        simulation_overrides: dict | None = None,
        sensitivity_overrides: dict | None = None,
        **scenario_overrides,
    ):
        """
        Transient stability study of one case and fault. Collects the settings
        of all stages and reuses the pre-fault equilibrium between them.

        Parameters
        ----------
        case : NetworkCase
            Study system.
        settings_file : str | Path | None
            User .ini file on top of config/default_settings.ini.
        simulation_overrides : dict | None
            Values replacing [simulation] settings (e.g. integrator, omega_pu).
        sensitivity_overrides : dict | None
            Values replacing [sensitivity]/[estimator] settings (e.g. method,
            alignment, fd_step).
        **scenario_overrides
            fault_bus, tripped_branch, t1, t_cl_delay, horizon, dt on top of the
            case's scenario defaults.
        """
        self.case = case
        self.config = utils.load_settings(settings_file)
        self.options = SimOptions.from_config(
            self.config, **(simulation_overrides or {})
        )
        self.estimator_settings = cct.EstimatorSettings.from_config(
            self.config, **(sensitivity_overrides or {})
        )
        self.bisection_settings = BisectionSettings.from_config(self.config)
        self.workers = self.config["sweep"].getint("workers")
        self.scenario = case.scenario(**scenario_overrides)
        self._equilibrium = None

    def __repr__(self):
        return (
            f"< Study of {self.case.name} >\n---------------------------\n"
            + f"Fault bus             : {self.scenario.fault_bus}\n"
            + f"Tripped line          : {cct.tripped_label(self.case, self.scenario)}\n"
            + f"Clearing time         : {self.scenario.t_cl_delay} s\n"
            + f"Integrator            : {self.options.integrator}\n"
            + f"Sensitivity method    : {self.estimator_settings.method}"
        )

    @classmethod
    def from_source(
        cls, source: str | Path, settings_file: str | Path | None = None, **kwargs
    ) -> Self:
        """
        Constructor from a case file path, a name in CCTKIT_CASE_DIR or a bundled
        case name.
        """
        return cls(resolve_case(source), settings_file, **kwargs)

    @property
    def equilibrium(self) -> Equilibrium:
        if self._equilibrium is None:
            self._equilibrium = prepare_equilibrium(
                self.case, self.scenario, self.options.omega_pu
            )
        return self._equilibrium

    def check(self, strict: bool = True):
        report = validate_scenario(self.case, self.scenario, strict=strict)
        if not report.is_valid:
            raise CaseValidationError(report)

    def at_clearing(self, t_cl: float | None) -> FaultScenario:
        if t_cl is None:
            return self.scenario
        return self.scenario.with_clearing(t_cl)

    def simulate(self, t_cl: float | None = None) -> Trajectory:
        scenario = self.at_clearing(t_cl)
        report = validate_scenario(self.case, scenario, strict=False)
        if not report.is_valid:
            raise CaseValidationError(report)
        return simulate(self.case, scenario, self.options, self.equilibrium)

    def sensitivity(self, t_cl: float | None = None) -> SensitivityTrajectory:
        self.check()
        scenario = self.at_clearing(t_cl)
        settings = self.estimator_settings
        if settings.method == "variational":
            return sensitivity_variational(
                self.case,
                scenario,
                self.options,
                settings.alignment,
                equilibrium=self.equilibrium,
            )
        return sensitivity_finite_difference(
            self.case,
            scenario,
            settings.fd_step,
            self.options,
            settings.alignment,
            equilibrium=self.equilibrium,
            refine=settings.fd_refine,
        )

    def estimate_cct(
        self, probes: tuple[float, float] | None = None
    ) -> cct.CctEstimate:
        return cct.estimate_cct(
            self.case,
            self.scenario,
            probes,
            self.options,
            self.estimator_settings,
            self.equilibrium,
        )

    def bisect(
        self, bracket: tuple[float, float], tol: float | None = None
    ) -> CctBracket:
        self.check()
        return bisect_cct(
            self.case,
            self.scenario,
            bracket,
            self.bisection_settings.tol if tol is None else tol,
            self.options,
            self.equilibrium,
        )

    def compare(
        self, probes: tuple[float, float] | None = None, tol: float | None = None
    ) -> cct.ComparisonReport:
        return cct.compare_with_tds(
            self.case,
            self.scenario,
            probes,
            self.bisection_settings.tol if tol is None else tol,
            self.options,
            self.estimator_settings,
            self.bisection_settings,
            self.equilibrium,
        )

    def sweep(
        self,
        faults: list[tuple[int, str | int]],
        probes: tuple[float, float] | None = None,
        tol: float | None = None,
        workers: int | None = None,
    ) -> list[cct.SweepRow]:
        return cct.sweep_faults(
            self.case,
            faults,
            probes,
            self.bisection_settings.tol if tol is None else tol,
            self.options,
            self.estimator_settings,
            self.bisection_settings,
            self.workers if workers is None else workers,
            self.scenario,
        )

    def export_trajectory(
        self, traj: Trajectory, out_dir: str | Path, format="both", gnuplot=False
    ) -> list[Path]:
        return export.write_trajectory(traj, out_dir, format, gnuplot)
