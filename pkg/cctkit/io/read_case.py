import dataclasses
import json
import logging
import os
from pathlib import Path

import numpy as np

from cctkit.case import (
    Branch,
    Bus,
    GflParams,
    Load,
    NetworkCase,
    SyncMachineParams,
    validate_case,
)
from cctkit.exceptions import CaseParseError, CaseValidationError, UnknownCaseError

logger = logging.getLogger(__name__)

builtin_case_folder = Path(__file__).parents[1].joinpath("cases")
CASE_DIR_VARIABLE = "CCTKIT_CASE_DIR"

# Section name, record class, required fields
SECTIONS = {
    "buses": (Bus, ("index", "bus_kind")),
    "branches": (Branch, ("from_bus", "to_bus", "r", "x")),
    "loads": (Load, ("bus", "p", "q")),
    "sync_machines": (SyncMachineParams, ("bus", "h", "d", "xd_prime", "rated_mva")),
    "gfl_units": (GflParams, ("bus", "p_vs", "t_v", "t_p", "h_v", "k_p", "k_i")),
}
POWER_FIELDS = {
    "buses": ("p_load", "q_load"),
    "loads": ("p", "q"),
    "sync_machines": ("p_sched", "p_mech"),
    "gfl_units": ("p_vs", "p_sched"),
}
SAVED_UNITS = {
    "buses": {"power": "pu"},
    "branches": {"impedance": "pu"},
    "loads": {"power": "pu"},
    "sync_machines": {"power": "pu", "impedance_base": "system", "damping": "pu"},
    "gfl_units": {"power": "pu"},
}


def list_builtin_cases() -> list[str]:
    return sorted(p.stem for p in builtin_case_folder.glob("*.json"))


def builtin_case(name: str) -> NetworkCase:
    """
    Load one of the cases shipped with cctkit.

    Parameters
    ----------
    name : str
        "smib", "ieee39_sync" or "ieee39_gfl2".

    Returns
    -------
    NetworkCase
        The bundled case, converted to per-unit on system base.

    Raises
    ------
    UnknownCaseError
        If no bundled case of that name exists.
    """
    path = builtin_case_folder.joinpath(f"{name}.json")
    if not path.is_file():
        raise UnknownCaseError(
            f"Unknown built-in case '{name}', choose from {list_builtin_cases()}"
        )
    return load_case(path)


def resolve_case(source: str | Path) -> NetworkCase:
    """
    Find a case by path, in the user case library (CCTKIT_CASE_DIR) or among
    the bundled cases, in that order.
    """
    path = Path(source)
    if path.is_file():
        return load_case(path)
    case_dir = os.environ.get(CASE_DIR_VARIABLE)
    if case_dir:
        for candidate in (Path(case_dir) / path, Path(case_dir) / f"{source}.json"):
            if candidate.is_file():
                logger.debug(f"Case '{source}' found in user library {case_dir}")
                return load_case(candidate)
    if str(source) in list_builtin_cases():
        return builtin_case(str(source))
    if path.suffix == ".json" or len(path.parts) > 1:
        raise FileNotFoundError(f"Case file {path} not found")
    raise UnknownCaseError(
        f"Case '{source}' is neither a file, nor in {CASE_DIR_VARIABLE}, nor one of "
        f"{list_builtin_cases()}"
    )


def load_case(path: str | Path, format: str = "json") -> NetworkCase:
    """
    Read a case file and convert it to per-unit on system base.

    Parameters
    ----------
    path : str | Path
        Location of the case file.
    format : str, optional
        Only "json" is supported.

    Returns
    -------
    NetworkCase
        Validated case.

    Raises
    ------
    FileNotFoundError
        If the file does not exist.
    CaseParseError
        If the file is malformed or a field cannot be interpreted.
    CaseValidationError
        If the case violates an invariant, see :func:`cctkit.case.validate_case`.
    """
    if format != "json":
        raise CaseParseError(f"Unsupported case format '{format}'")
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Case file {path} not found")
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise CaseParseError(f"{path.name} is not valid JSON: {e}") from e

    case = case_from_dict(document, default_name=path.stem)
    report = validate_case(case)
    if not report.is_valid:
        raise CaseValidationError(report)
    logger.debug(f"Loaded case {case.name} from {path}")
    return case


def case_from_dict(document: dict, default_name: str = "unnamed") -> NetworkCase:
    if not isinstance(document, dict):
        raise CaseParseError("Case document must be a JSON object")
    system = document.get("system")
    if not isinstance(system, dict):
        raise CaseParseError("Missing 'system' section")
    try:
        base_mva = float(system["base_mva"])
        frequency_hz = float(system.get("frequency_hz", 60.0))
    except (KeyError, TypeError, ValueError) as e:
        raise CaseParseError(f"Invalid field in 'system': {e}") from e

    parsed = {}
    for section, (record_class, required) in SECTIONS.items():
        parsed[section] = tuple(
            _parse_section(document, section, record_class, required, base_mva)
        )
    return NetworkCase(
        name=str(system.get("name", default_name)),
        system_base_mva=base_mva,
        frequency_hz=frequency_hz,
        scenario_defaults=dict(document.get("scenario", {})),
        **parsed,
    )


def _parse_section(document, section, record_class, required, base_mva):
    block = document.get(section, {"records": []})
    if isinstance(block, list):
        block = {"records": block}
    units = block.get("units", {})
    records = block.get("records", [])
    power_unit = units.get("power", "pu")
    if power_unit not in ("MW", "pu"):
        raise CaseParseError(f"{section}.units.power must be 'MW' or 'pu'")
    impedance_base = units.get("impedance_base", "system")
    if impedance_base not in ("system", "machine"):
        raise CaseParseError(
            f"{section}.units.impedance_base must be 'system' or 'machine'"
        )
    damping_unit = units.get("damping", "pu")
    if damping_unit not in ("pu", "pu_per_rad_s"):
        raise CaseParseError(f"{section}.units.damping must be 'pu' or 'pu_per_rad_s'")
    frequency_base = 2 * np.pi * float(document["system"].get("frequency_hz", 60.0))

    known = {f.name for f in dataclasses.fields(record_class)}
    for i, record in enumerate(records):
        location = f"{section}[{i}]"
        if not isinstance(record, dict):
            raise CaseParseError(f"{location} must be an object")
        for name in required:
            if name not in record:
                raise CaseParseError(f"{location} is missing field '{name}'")
        for name in record:
            if name not in known:
                raise CaseParseError(f"{location} has unknown field '{name}'")
        values = dict(record)
        try:
            if power_unit == "MW":
                for name in POWER_FIELDS.get(section, ()):
                    if values.get(name) is not None:
                        values[name] = float(values[name]) / base_mva
            if section == "sync_machines":
                if damping_unit == "pu_per_rad_s":
                    values["d"] = float(values["d"]) * frequency_base
                if impedance_base == "machine":
                    ratio = float(values["rated_mva"]) / base_mva
                    values["h"] = float(values["h"]) * ratio
                    values["d"] = float(values["d"]) * ratio
                    values["xd_prime"] = float(values["xd_prime"]) / ratio
            yield record_class(**_coerce(record_class, values))
        except (TypeError, ValueError) as e:
            raise CaseParseError(f"{location}: {e}") from e


def _coerce(record_class, values: dict) -> dict:
    coerced = {}
    types = {f.name: f.type for f in dataclasses.fields(record_class)}
    for name, value in values.items():
        kind = types[name]
        if value is None:
            coerced[name] = None
        elif kind is int or name in ("index", "bus", "from_bus", "to_bus"):
            if float(value) != int(value):
                raise ValueError(f"field '{name}' must be an integer")
            coerced[name] = int(value)
        elif kind is bool:
            if not isinstance(value, bool):
                raise ValueError(f"field '{name}' must be true or false")
            coerced[name] = value
        elif kind is str:
            coerced[name] = str(value)
        else:
            coerced[name] = float(value)
    return coerced


def case_to_dict(case: NetworkCase) -> dict:
    document = {
        "system": {
            "name": case.name,
            "base_mva": case.system_base_mva,
            "frequency_hz": case.frequency_hz,
        }
    }
    for section in SECTIONS:
        document[section] = {
            "units": SAVED_UNITS[section],
            "records": [
                {k: v for k, v in dataclasses.asdict(r).items() if v is not None}
                for r in getattr(case, section)
            ],
        }
    if case.scenario_defaults:
        document["scenario"] = dict(case.scenario_defaults)
    return document


def save_case(case: NetworkCase, path: str | Path) -> Path:
    """
    Write a case as JSON in system-base per-unit, with the units declared, so
    that load_case gives back an identical NetworkCase.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(case_to_dict(case), indent=2), encoding="utf-8")
    return path
