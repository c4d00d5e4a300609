import dataclasses
import json
from pathlib import Path

import pytest
from numpy.testing import assert_allclose

from cctkit.case import Branch, FaultScenario, validate_case, validate_scenario
from cctkit.exceptions import CaseParseError, CaseValidationError, UnknownCaseError
from cctkit.io import read_case


class TestCaseModel:
    data_folder = Path(__file__).parent / "data"

    @pytest.fixture
    def four_bus(self):
        return read_case.load_case(self.data_folder / "four_bus_gfl.json")

    @pytest.fixture
    def document(self):
        return json.loads((self.data_folder / "four_bus_gfl.json").read_text())

    @pytest.mark.unittest
    def test_builtin_cases(self):
        assert read_case.list_builtin_cases() == ["ieee39_gfl2", "ieee39_sync", "smib"]
        case = read_case.builtin_case("ieee39_gfl2")
        assert len(case.buses) == 39
        assert len(case.gfl_units) == 2
        assert {u.bus for u in case.gfl_units} == {36, 37}

    @pytest.mark.unittest
    def test_unknown_builtin(self):
        with pytest.raises(UnknownCaseError):
            read_case.builtin_case("ieee118")

    @pytest.mark.unittest
    def test_unit_conversion(self, four_bus):
        # rated 200 MVA machine on a 100 MVA system base
        machine = four_bus.sync_machines[0]
        assert_allclose(machine.h, 10.0)
        assert_allclose(machine.d, 4.0)
        assert_allclose(machine.xd_prime, 0.15)
        assert_allclose(four_bus.sync_machines[1].p_sched, 0.5)
        assert_allclose(four_bus.gfl_units[0].p_vs, 0.3)
        assert_allclose(four_bus.gfl_units[0].dispatch, 0.3)
        assert_allclose(four_bus.loads[0].p, 0.9)
        assert_allclose(four_bus.frequency_base, 2 * 3.141592653589793 * 50)

    @pytest.mark.unittest
    def test_save_and_load_identical(self, four_bus, tmp_path):
        path = read_case.save_case(four_bus, tmp_path / "copy.json")
        assert read_case.load_case(path) == four_bus

    @pytest.mark.unittest
    def test_missing_field(self, document, tmp_path):
        del document["branches"]["records"][0]["x"]
        path = tmp_path / "broken.json"
        path.write_text(json.dumps(document))
        with pytest.raises(CaseParseError, match="branches\\[0\\].*'x'"):
            read_case.load_case(path)

    @pytest.mark.unittest
    def test_unknown_field(self, document, tmp_path):
        document["buses"]["records"][0]["colour"] = "red"
        path = tmp_path / "broken.json"
        path.write_text(json.dumps(document))
        with pytest.raises(CaseParseError, match="colour"):
            read_case.load_case(path)

    @pytest.mark.unittest
    def test_invalid_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{ not json")
        with pytest.raises(CaseParseError):
            read_case.load_case(path)

    @pytest.mark.unittest
    def test_invalid_case_report(self):
        with pytest.raises(CaseValidationError) as info:
            read_case.load_case(self.data_folder / "invalid_case.json")
        messages = [str(v) for v in info.value.report]
        assert any("pv bus without a machine" in m for m in messages)

    @pytest.mark.unittest
    def test_validation_rules(self, four_bus):
        assert validate_case(four_bus).is_valid
        gfl_on_pv = dataclasses.replace(
            four_bus,
            gfl_units=(dataclasses.replace(four_bus.gfl_units[0], bus=2),),
        )
        messages = [str(v) for v in validate_case(gfl_on_pv)]
        assert any("GFL units must sit on pq buses" in m for m in messages)
        assert any("more than one device" in m for m in messages)

        split = dataclasses.replace(four_bus, branches=four_bus.branches[:3])
        assert any("islands" in str(v) for v in validate_case(split))

    @pytest.mark.unittest
    def test_resolve_case_order(self, four_bus, tmp_path, monkeypatch):
        read_case.save_case(four_bus, tmp_path / "mine.json")
        monkeypatch.setenv(read_case.CASE_DIR_VARIABLE, str(tmp_path))
        assert read_case.resolve_case("mine").name == "four_bus_gfl"
        assert read_case.resolve_case("smib").name == "smib"
        with pytest.raises(UnknownCaseError):
            read_case.resolve_case("nothing_here")
        with pytest.raises(FileNotFoundError):
            read_case.resolve_case(tmp_path / "missing.json")

    @pytest.mark.unittest
    @pytest.mark.parametrize(
        "reference, expected", [(0, 0), ("1-2", 0), ("2-1", 0), ("4-3", 3)]
    )
    def test_find_branch(self, four_bus, reference, expected):
        assert four_bus.find_branch(reference) == expected

    @pytest.mark.unittest
    def test_find_parallel_branch(self):
        smib = read_case.builtin_case("smib")
        assert smib.find_branch("1-2") == 0
        assert smib.find_branch("1-2:2") == 1
        with pytest.raises(KeyError):
            smib.find_branch("1-2:3")
        with pytest.raises(KeyError):
            smib.find_branch("1-5")

    @pytest.mark.unittest
    def test_scenario_defaults_and_overrides(self, four_bus):
        scenario = four_bus.scenario()
        assert scenario == FaultScenario(2, 0, 0.5, 0.1, 5.0, 0.01)
        assert_allclose(scenario.t_cl, 0.6)
        changed = four_bus.scenario(fault_bus=3, tripped_branch="2-3", t_cl_delay=0.2)
        assert (changed.fault_bus, changed.tripped_branch) == (3, 1)
        assert changed.with_clearing(0.3).t_cl_delay == 0.3

    @pytest.mark.unittest
    def test_validate_scenario(self, four_bus):
        assert validate_scenario(four_bus, four_bus.scenario()).is_valid
        late = four_bus.scenario(t_cl_delay=4.6)
        assert validate_scenario(four_bus, late, strict=False).is_valid
        assert not validate_scenario(four_bus, late, strict=True).is_valid
        no_fault = FaultScenario(None, None, 0.5, 0.1, 5.0, 0.01)
        assert validate_scenario(four_bus, no_fault, strict=False).is_valid
        assert not validate_scenario(four_bus, no_fault, strict=True).is_valid
        missing_bus = four_bus.scenario(fault_bus=9)
        assert not validate_scenario(four_bus, missing_bus).is_valid

    @pytest.mark.unittest
    def test_out_of_service_trip(self, four_bus):
        branches = list(four_bus.branches)
        branches[1] = dataclasses.replace(branches[1], in_service=False)
        case = dataclasses.replace(four_bus, branches=tuple(branches))
        scenario = FaultScenario(2, 1, 0.5, 0.1)
        report = validate_scenario(case, scenario)
        assert any("already out of service" in str(v) for v in report)

    @pytest.mark.unittest
    def test_branch_label(self):
        assert Branch(3, 18, 0.0, 0.1).label == "3-18"
