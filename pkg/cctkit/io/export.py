"""
Writers for trajectories, sensitivities and CCT reports.

Tables are written with pandas (CSV), reports as JSON and full trajectories as
netCDF through xarray with the h5netcdf engine. The only nondeterministic value
in any output is the `created` metadata field.
"""

import json
import logging
import math
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd
import xarray as xr
from mako.lookup import TemplateLookup

import cctkit
from cctkit.sensitivity.indices import fleet_series
from cctkit.sensitivity.variational import SensitivityTrajectory
from cctkit.simulation.tds import Trajectory

logger = logging.getLogger(__name__)

FORMATS = ("csv", "json", "both", "netcdf")
TEMPLATE_DIR = Path(__file__).parent.joinpath("templates")

# Compression parameters
ENCODINGS = {
    "states": {"zlib": True, "complevel": 9},
    "algebraic": {"zlib": True, "complevel": 9},
    "p_e": {"zlib": True, "complevel": 9},
    "v_mag": {"zlib": True, "complevel": 9},
    "v_ang": {"zlib": True, "complevel": 9},
}

SWEEP_COLUMNS = [
    "fault_bus",
    "tripped_line",
    "cct_tds_lower",
    "cct_tds_upper",
    "cct_estimate",
    "t_cr_sync",
    "t_cr_gfl",
    "contained",
    "within_tolerance",
    "deviation",
    "error",
]


def created_stamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def formats_for(format: str) -> set[str]:
    """Expand a --format value to the set of file types to write."""
    if format not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}, not '{format}'")
    return {"csv", "json"} if format == "both" else {format}


def _clean(value):
    """JSON-safe copy: numpy scalars/arrays to Python, NaN and inf to None."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return _clean(value.tolist())
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def write_json(payload: dict, out_file: str | Path) -> Path:
    out_file = Path(out_file)
    out_file.parent.mkdir(parents=True, exist_ok=True)
    document = {"created": created_stamp(), "cctkit_version": cctkit.__version__}
    document.update(_clean(payload))
    with open(out_file, "w", encoding="utf-8") as f:
        json.dump(document, f, indent=2)
        f.write("\n")
    return out_file


def scenario_dict(traj_or_case, scenario) -> dict:
    case = getattr(traj_or_case, "case", traj_or_case)
    tripped = (
        None
        if scenario.tripped_branch is None
        else case.branches[scenario.tripped_branch].label
    )
    return {
        "case": case.name,
        "fault_bus": scenario.fault_bus,
        "tripped_line": tripped,
        "t1": scenario.t1,
        "t_cl": scenario.t_cl_delay,
        "horizon": scenario.horizon,
        "dt": scenario.dt,
    }


def trajectory_frame(traj: Trajectory) -> pd.DataFrame:
    """
    Trajectory as a table.

    Columns: t, phase, the device states (delta_*, omega_*, x_v_*, p_v_*,
    theta_p_*, x_p_*), electrical power p_e_* per device and the voltage
    magnitude vm_* and angle va_* of every bus.
    """
    model = traj.model
    devices = [int(b) for b in model.sync_buses] + [int(b) for b in model.gfl_buses]
    columns = {
        "t": traj.times,
        "phase": [traj.phase_of_step(k) for k in range(len(traj.times))],
    }
    columns.update(dict(zip(traj.state_names, traj.states.T)))
    columns.update({f"p_e_{b}": traj.p_e[:, i] for i, b in enumerate(devices)})
    bus_ids = traj.case.bus_ids
    columns.update({f"vm_{b}": traj.v_mag[:, i] for i, b in enumerate(bus_ids)})
    columns.update({f"va_{b}": traj.v_ang[:, i] for i, b in enumerate(bus_ids)})
    return pd.DataFrame(columns)


def trajectory_summary(traj: Trajectory) -> dict:
    return {
        "scenario": scenario_dict(traj, traj.scenario),
        "integrator": traj.options.integrator,
        "omega_pu": traj.options.omega_pu,
        "samples": len(traj.times),
        "complete": traj.is_complete,
        "collapsed": traj.collapsed,
        "verdict": traj.verdict.to_dict() if traj.verdict else None,
    }


def create_trajectory_dataset(traj: Trajectory) -> xr.Dataset:
    model = traj.model
    devices = [int(b) for b in model.sync_buses] + [int(b) for b in model.gfl_buses]
    data_vars = dict(
        states=(
            ("time", "state"),
            traj.states,
            dict(long_name="Device states, PLL angle in absolute form", units="-"),
        ),
        algebraic=(
            ("time", "algebraic"),
            traj.y,
            dict(long_name="GFL bus voltage magnitudes and angles", units="pu, rad"),
        ),
        p_e=(
            ("time", "device"),
            traj.p_e,
            dict(long_name="Electrical power output per device", units="pu"),
        ),
        v_mag=(
            ("time", "bus"),
            traj.v_mag,
            dict(long_name="Bus voltage magnitude", units="pu"),
        ),
        v_ang=(
            ("time", "bus"),
            traj.v_ang,
            dict(long_name="Bus voltage angle", units="rad"),
        ),
    )
    coords = dict(
        time=("time", traj.times, dict(units="s")),
        state=traj.state_names,
        algebraic=traj.algebraic_names,
        device=devices,
        bus=traj.case.bus_ids,
    )
    summary = trajectory_summary(traj)
    attrs = {
        "created": created_stamp(),
        "cctkit_version": cctkit.__version__,
        "integrator": summary["integrator"],
        "omega_pu": int(summary["omega_pu"]),
        "verdict": json.dumps(_clean(summary["verdict"])),
        **{k: ("none" if v is None else v) for k, v in summary["scenario"].items()},
    }
    return xr.Dataset(data_vars, coords=coords, attrs=attrs)


def sensitivity_frame(sens: SensitivityTrajectory) -> pd.DataFrame:
    """Columns: s, the W columns dx/dT_cl as d_<state>, the U columns as
    d_<algebraic>, then sn_sync and (with GFL units) sn_gfl."""
    columns = {"s": sens.elapsed}
    columns.update({f"d_{n}": sens.w[:, i] for i, n in enumerate(sens.state_names)})
    columns.update(
        {f"d_{n}": sens.u[:, i] for i, n in enumerate(sens.algebraic_names)}
    )
    columns["sn_sync"] = fleet_series(sens, "sync").values
    if sens.model.n_gfl:
        columns["sn_gfl"] = fleet_series(sens, "gfl").values
    return pd.DataFrame(columns)


def render_gnuplot(
    data_file: str,
    series: list[tuple[int, str]],
    title: str,
    xlabel: str,
    ylabel: str,
    marks: list[tuple[str, float]] | None = None,
    output: str | None = None,
) -> str:
    lookup = TemplateLookup(
        directories=[str(TEMPLATE_DIR)],
        output_encoding="utf-8",
        encoding_errors="replace",
    )
    template = lookup.get_template("trajectory.gp.mako")
    return template.render_unicode(
        title=title,
        version=cctkit.__version__,
        data_file=data_file,
        xlabel=xlabel,
        ylabel=ylabel,
        marks=marks or [],
        output=output,
        series=series,
    )


def write_trajectory(
    traj: Trajectory,
    out_dir: str | Path,
    format: str = "both",
    gnuplot: bool = False,
    stem: str = "trajectory",
) -> list[Path]:
    """
    Write a trajectory and its verdict summary to `out_dir`.

    Returns
    -------
    list[Path]
        Files written: <stem>.csv / <stem>.json / <stem>.nc, summary.json and
        optionally <stem>.gp plotting the rotor angles.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    kinds = formats_for(format)
    written = []
    frame = trajectory_frame(traj)
    if "csv" in kinds or gnuplot:
        frame.to_csv(out_dir / f"{stem}.csv", index=False, float_format="%.10g")
        written.append(out_dir / f"{stem}.csv")
    if "json" in kinds:
        payload = trajectory_summary(traj)
        payload["columns"] = {c: frame[c].tolist() for c in frame.columns}
        written.append(write_json(payload, out_dir / f"{stem}.json"))
    if "netcdf" in kinds:
        ds = create_trajectory_dataset(traj)
        ds.to_netcdf(out_dir / f"{stem}.nc", engine="h5netcdf", encoding=ENCODINGS)
        written.append(out_dir / f"{stem}.nc")
    written.append(write_json(trajectory_summary(traj), out_dir / "summary.json"))
    if gnuplot:
        angle_columns = [
            (i + 1, name)
            for i, name in enumerate(frame.columns)
            if name.startswith("delta_")
        ]
        scenario = traj.scenario
        marks = [("fault", scenario.t1), ("clear", scenario.t_cl)]
        script = render_gnuplot(
            f"{stem}.csv",
            angle_columns,
            f"Rotor angles of {traj.case.name}",
            "t (s)",
            "delta (rad)",
            marks if scenario.has_fault else None,
        )
        (out_dir / f"{stem}.gp").write_text(script, encoding="utf-8")
        written.append(out_dir / f"{stem}.gp")
    logger.info(f"Wrote {', '.join(p.name for p in written)} to {out_dir}")
    return written


def write_sensitivity(
    sens: SensitivityTrajectory,
    out_dir: str | Path,
    format: str = "both",
    gnuplot: bool = False,
    stem: str = "sensitivity",
) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    kinds = formats_for(format)
    frame = sensitivity_frame(sens)
    written = []
    if kinds & {"csv", "netcdf"} or gnuplot:
        frame.to_csv(out_dir / f"{stem}.csv", index=False, float_format="%.10g")
        written.append(out_dir / f"{stem}.csv")
    if "json" in kinds:
        payload = {
            "method": sens.method,
            "alignment": sens.alignment,
            "t_cl": sens.base_t_cl,
            "truncated": sens.truncated,
            "columns": {c: frame[c].tolist() for c in frame.columns},
        }
        written.append(write_json(payload, out_dir / f"{stem}.json"))
    if gnuplot:
        series = [
            (i + 1, name)
            for i, name in enumerate(frame.columns)
            if name.startswith("sn_")
        ]
        script = render_gnuplot(
            f"{stem}.csv", series, "Sensitivity norm", "s (s)", "SN"
        )
        (out_dir / f"{stem}.gp").write_text(script, encoding="utf-8")
        written.append(out_dir / f"{stem}.gp")
    return written


def bracket_frame(bracket) -> pd.DataFrame:
    """Evaluation log of a bisection, in the order the simulations ran."""
    return pd.DataFrame(
        [
            {
                "t_cl": step.t_cl,
                "stable": step.stable,
                "reason": step.verdict.reason.name,
                "first_violation_time": step.verdict.first_violation_time,
            }
            for step in bracket.history
        ],
        columns=["t_cl", "stable", "reason", "first_violation_time"],
    )


def sweep_frame(rows) -> pd.DataFrame:
    return pd.DataFrame([row.to_dict() for row in rows], columns=SWEEP_COLUMNS)


def _format_time(value, digits: int) -> str:
    if value is None or (isinstance(value, float) and not math.isfinite(value)):
        return "-"
    return f"{value:.{digits}f}"


def comparison_table(rows) -> str:
    """
    Fixed-width text table with one row per fault:
    Fault Bus, Tripped Line, CCT (TDS), CCT (Proposed Method), In bracket and
    Within tol (bracket widened by tol on both sides).
    """
    header = (
        f"{'Fault Bus':>9}  {'Tripped Line':<12}  {'CCT (TDS)':<14}  "
        f"{'CCT (Proposed Method)':>21}  {'In bracket':>10}  {'Within tol':>10}"
    )
    lines = [header, "-" * len(header)]
    for row in rows:
        if row.error:
            lines.append(
                f"{row.fault_bus:>9}  {row.tripped_line:<12}  error: {row.error}"
            )
            continue
        bracket = (
            f"[{_format_time(row.cct_tds_lower, 2)}, "
            f"{_format_time(row.cct_tds_upper, 2)}]"
        )
        lines.append(
            f"{row.fault_bus:>9}  {row.tripped_line:<12}  {bracket:<14}  "
            f"{_format_time(row.cct_estimate, 4):>21}  "
            f"{'yes' if row.contained else 'no':>10}  "
            f"{'yes' if row.within_tolerance else 'no':>10}"
        )
    return "\n".join(lines) + "\n"


def estimate_table(estimate, case_name: str, fault_bus, tripped_line) -> str:
    lines = [
        f"{'Fault Bus':>9}  {'Tripped Line':<12}  {'Fleet':<6}  {'T_cr (s)':>9}",
        "-" * 44,
    ]
    for fleet, extrapolation in estimate.extrapolations.items():
        lines.append(
            f"{str(fault_bus):>9}  {str(tripped_line):<12}  {fleet:<6}  "
            f"{extrapolation.t_cr:>9.4f}"
        )
    lines.append(
        f"System CCT of {case_name}: {estimate.t_cr_system:.4f} s "
        f"({estimate.limiting_fleet} fleet"
        + (", low confidence)" if estimate.low_confidence else ")")
    )
    return "\n".join(lines) + "\n"


def write_sweep(rows, out_dir: str | Path, format: str = "both") -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    kinds = formats_for(format)
    written = []
    if kinds & {"csv", "netcdf"}:
        sweep_frame(rows).to_csv(out_dir / "sweep.csv", index=False)
        written.append(out_dir / "sweep.csv")
    if "json" in kinds:
        payload = {
            "rows": [row.to_dict() for row in rows],
            "reports": [row.report.to_dict() if row.report else None for row in rows],
        }
        written.append(write_json(payload, out_dir / "sweep.json"))
    (out_dir / "sweep.txt").write_text(comparison_table(rows), encoding="utf-8")
    written.append(out_dir / "sweep.txt")
    return written
