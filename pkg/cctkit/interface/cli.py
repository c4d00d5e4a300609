"""
Command-line entry point.

Exit codes: 0 on success (and a stable simulation), 2 for an unstable
simulation, 1 on any error.
"""

import argparse
import logging
import sys
from pathlib import Path

import cctkit
from cctkit.analyze.cct import present_fleets
from cctkit.case import validate_case, validate_scenario
from cctkit.exceptions import CaseValidationError
from cctkit.io import export
from cctkit.io.read_case import list_builtin_cases, resolve_case
from cctkit.model import StabilityStudy
from cctkit.sensitivity.indices import fleet_series, peak
from cctkit.utils import get_current_time, log_memory_usage

logger = logging.getLogger(__name__)
logging.basicConfig(level=logging.INFO)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_UNSTABLE = 2


def time_pair(text: str) -> tuple[float, float]:
    try:
        a, b = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two times 'a,b', got '{text}'")
    return a, b


def fault_spec(text: str) -> tuple[int, str]:
    try:
        bus, branch = text.split(",", 1)
        return int(bus), branch.strip()
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'BUS,A-B', got '{text}'")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cctkit",
        description="Transient stability simulation and critical clearing time "
        "estimation from trajectory sensitivities.",
    )
    parser.add_argument("--version", action="version", version=cctkit.__version__)
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Debug log.")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Warnings only.")
    parser.add_argument(
        "--settings", type=Path, help="Settings .ini file on top of the defaults."
    )

    case_options = argparse.ArgumentParser(add_help=False)
    case_options.add_argument(
        "--case",
        required=True,
        help="Case file, name in CCTKIT_CASE_DIR or bundled case name.",
    )

    study = argparse.ArgumentParser(add_help=False, parents=[case_options])
    study.add_argument("--fault-bus", type=int, help="Faulted bus number.")
    study.add_argument("--trip", help="Branch tripped at clearing, as A-B or A-B:k.")
    study.add_argument("--t1", type=float, help="Fault inception time (s).")
    study.add_argument("--tcl", type=float, help="Fault duration T_cl (s).")
    study.add_argument("--dt", type=float, help="Step size (s).")
    study.add_argument("--horizon", type=float, help="Simulated time span (s).")
    study.add_argument("--integrator", choices=["trap", "trapezoidal", "rk4"])
    study.add_argument(
        "--omega-pu",
        action="store_true",
        default=None,
        help="Rotor speeds in per-unit instead of rad/s.",
    )
    study.add_argument(
        "--sens", choices=["variational", "fd"], help="Sensitivity method."
    )
    study.add_argument("--alignment", choices=["elapsed", "absolute"])
    study.add_argument(
        "--fd-refine", type=int, help="fd runs use the step dt / FD_REFINE."
    )
    study.add_argument("--out", type=Path, default=Path("cctkit_output"))
    study.add_argument(
        "--format", choices=list(export.FORMATS), default="both", dest="format"
    )
    study.add_argument(
        "--gnuplot", action="store_true", help="Also write a gnuplot script."
    )

    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser(
        "simulate", parents=[study], help="Time-domain simulation of one fault."
    )
    simulate.set_defaults(handler=cmd_simulate)

    sensitivity = commands.add_parser(
        "sensitivity",
        parents=[study],
        help="Trajectory sensitivity to the clearing time.",
    )
    sensitivity.set_defaults(handler=cmd_sensitivity)

    estimate = commands.add_parser(
        "cct", parents=[study], help="Estimate the CCT from two probes."
    )
    estimate.add_argument("--probes", type=time_pair, help="Two clearing times a,b.")
    estimate.add_argument(
        "--compare",
        action="store_true",
        help="Also bracket the CCT by bisection and report containment.",
    )
    estimate.add_argument("--tol", type=float, help="Bisection tolerance (s).")
    estimate.set_defaults(handler=cmd_cct)

    bisect = commands.add_parser(
        "bisect", parents=[study], help="Bracket the CCT by bisection."
    )
    bisect.add_argument(
        "--bracket", type=time_pair, required=True, help="Stable,unstable T_cl."
    )
    bisect.add_argument("--tol", type=float, help="Bracket width (s).")
    bisect.set_defaults(handler=cmd_bisect)

    sweep = commands.add_parser(
        "sweep", parents=[study], help="Estimator against bisection for many faults."
    )
    sweep.add_argument(
        "--fault",
        type=fault_spec,
        action="append",
        default=[],
        help="Fault as BUS,A-B. Repeatable.",
    )
    sweep.add_argument("--probes", type=time_pair)
    sweep.add_argument("--tol", type=float)
    sweep.add_argument("--workers", type=int)
    sweep.set_defaults(handler=cmd_sweep)

    validate = commands.add_parser(
        "validate", parents=[case_options], help="Check a case file."
    )
    validate.add_argument("--fault-bus", type=int)
    validate.add_argument("--trip")
    validate.set_defaults(handler=cmd_validate)

    cases = commands.add_parser("cases", help="List the bundled cases.")
    cases.set_defaults(handler=cmd_cases)
    return parser


def study_from_args(args) -> StabilityStudy:
    study = StabilityStudy.from_source(
        args.case,
        args.settings,
        simulation_overrides=dict(
            integrator=args.integrator, omega_pu=args.omega_pu
        ),
        sensitivity_overrides=dict(
            method=args.sens, alignment=args.alignment, fd_refine=args.fd_refine
        ),
        fault_bus=args.fault_bus,
        tripped_branch=args.trip,
        t1=args.t1,
        t_cl_delay=args.tcl,
        dt=args.dt,
        horizon=args.horizon,
    )
    logger.info(f"{get_current_time()}: Initialized study:\n\n{study}\n")
    return study


def cmd_simulate(args) -> int:
    study = study_from_args(args)
    traj = study.simulate()
    export.write_trajectory(traj, args.out, args.format, args.gnuplot)
    print(traj.verdict)
    return EXIT_OK if traj.verdict.stable else EXIT_UNSTABLE


def cmd_sensitivity(args) -> int:
    study = study_from_args(args)
    sens = study.sensitivity()
    export.write_sensitivity(sens, args.out, args.format, args.gnuplot)
    for fleet in present_fleets(study.case):
        m_sn, position = peak(fleet_series(sens, fleet))
        print(f"{fleet}: m(SN) = {m_sn:.6g} at s = {position:.2f} s")
    return EXIT_OK


def cmd_cct(args) -> int:
    study = study_from_args(args)
    scenario = export.scenario_dict(study.case, study.scenario)
    if args.compare:
        report = study.compare(args.probes, args.tol)
        export.write_json(
            {"scenario": scenario, **report.to_dict()}, args.out / "cct.json"
        )
        estimate = report.estimate
        print(report)
    else:
        estimate = study.estimate_cct(args.probes)
        export.write_json(
            {"scenario": scenario, **estimate.to_dict()}, args.out / "cct.json"
        )
    text = export.estimate_table(
        estimate, study.case.name, scenario["fault_bus"], scenario["tripped_line"]
    )
    (args.out / "cct.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


def cmd_bisect(args) -> int:
    study = study_from_args(args)
    bracket = study.bisect(args.bracket, args.tol)
    scenario = export.scenario_dict(study.case, study.scenario)
    export.write_json(
        {"scenario": scenario, **bracket.to_dict()}, args.out / "bracket.json"
    )
    export.bracket_frame(bracket).to_csv(args.out / "evaluations.csv", index=False)
    print(
        f"CCT in [{bracket.lower:.3f}, {bracket.upper:.3f}] s "
        f"after {bracket.evaluations} simulations"
    )
    return EXIT_OK


def cmd_sweep(args) -> int:
    study = study_from_args(args)
    rows = study.sweep(args.fault, args.probes, args.tol, args.workers)
    export.write_sweep(rows, args.out, args.format)
    print(export.comparison_table(rows), end="")
    logger.info(f"{get_current_time()}: Sweep completed. {log_memory_usage()}")
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        case = resolve_case(args.case)
    except CaseValidationError as e:
        print(e.report)
        return EXIT_ERROR
    report = validate_case(case)
    if args.fault_bus is not None or args.trip is not None:
        scenario = case.scenario(fault_bus=args.fault_bus, tripped_branch=args.trip)
        for violation in validate_scenario(case, scenario, strict=False):
            report.add(violation.location, violation.message)
    print(case)
    print(report)
    return EXIT_OK if report.is_valid else EXIT_ERROR


def cmd_cases(args) -> int:
    for name in list_builtin_cases():
        print(name)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    elif args.quiet:
        logging.getLogger().setLevel(logging.WARNING)
    try:
        return args.handler(args)
    except (ValueError, KeyError, RuntimeError, OSError) as e:
        print(f"cctkit {args.command}: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
