import json
from pathlib import Path

import pandas as pd
import pytest

from cctkit.interface import cli

DATA = Path(__file__).parent / "data"


class TestCli:
    @pytest.mark.unittest
    def test_cases(self, capsys):
        assert cli.main(["cases"]) == cli.EXIT_OK
        assert capsys.readouterr().out.split() == ["ieee39_gfl2", "ieee39_sync", "smib"]

    @pytest.mark.unittest
    def test_validate(self, capsys):
        assert cli.main(["validate", "--case", "smib"]) == cli.EXIT_OK
        assert "No violations" in capsys.readouterr().out
        invalid = str(DATA / "invalid_case.json")
        assert cli.main(["validate", "--case", invalid]) == cli.EXIT_ERROR
        assert "pv bus without a machine" in capsys.readouterr().out

    @pytest.mark.unittest
    def test_validate_scenario(self, capsys):
        argv = ["validate", "--case", "smib", "--fault-bus", "7"]
        assert cli.main(argv) == cli.EXIT_ERROR
        assert "fault bus 7 does not exist" in capsys.readouterr().out

    @pytest.mark.unittest
    def test_missing_case(self, capsys, tmp_path):
        argv = ["simulate", "--case", "no_such_case", "--out", str(tmp_path)]
        assert cli.main(argv) == cli.EXIT_ERROR
        assert "cctkit simulate" in capsys.readouterr().err

    @pytest.mark.unittest
    def test_equal_probes(self, capsys, tmp_path):
        argv = ["cct", "--case", "smib", "--probes", "0.15,0.15"]
        argv += ["--out", str(tmp_path)]
        assert cli.main(argv) == cli.EXIT_ERROR
        assert "Both probes" in capsys.readouterr().err

    @pytest.mark.unittest
    def test_malformed_probes(self):
        with pytest.raises(SystemExit) as info:
            cli.main(["cct", "--case", "smib", "--probes", "0.15"])
        assert info.value.code == 2

    @pytest.mark.unittest
    def test_empty_sweep(self, capsys, tmp_path):
        argv = ["sweep", "--case", "smib", "--out", str(tmp_path), "--format", "csv"]
        assert cli.main(argv) == cli.EXIT_OK
        assert pd.read_csv(tmp_path / "sweep.csv").empty
        assert "Fault Bus" in capsys.readouterr().out

    @pytest.mark.unittest
    @pytest.mark.parametrize("tcl, code", [("0.1", 0), ("0.3", 2)])
    def test_simulate_exit_code(self, tmp_path, tcl, code):
        argv = ["simulate", "--case", "smib", "--tcl", tcl, "--out", str(tmp_path)]
        assert cli.main(argv) == code
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["verdict"]["stable"] is (code == 0)
        assert summary["scenario"]["t_cl"] == float(tcl)

    @pytest.mark.unittest
    def test_simulate_options(self, tmp_path):
        argv = [
            "-q",
            "simulate",
            "--case",
            "smib",
            "--integrator",
            "trap",
            "--omega-pu",
            "--horizon",
            "2",
            "--format",
            "netcdf",
            "--out",
            str(tmp_path),
        ]
        assert cli.main(argv) == cli.EXIT_OK
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["integrator"] == "trapezoidal"
        assert summary["omega_pu"] is True
        assert summary["samples"] == 201
        assert (tmp_path / "trajectory.nc").exists()

    @pytest.mark.unittest
    def test_bisect(self, capsys, tmp_path):
        argv = ["bisect", "--case", "smib", "--bracket", "0.1,0.3"]
        argv += ["--out", str(tmp_path)]
        assert cli.main(argv) == cli.EXIT_OK
        bracket = json.loads((tmp_path / "bracket.json").read_text())
        assert bracket["lower"] <= 0.1952 + 0.01
        assert bracket["upper"] >= 0.1952 - 0.01
        evaluations = pd.read_csv(tmp_path / "evaluations.csv")
        assert len(evaluations) == bracket["evaluations"]
        assert "CCT in [" in capsys.readouterr().out

    @pytest.mark.unittest
    def test_cct(self, capsys, tmp_path):
        argv = ["cct", "--case", "smib", "--probes", "0.17,0.19"]
        argv += ["--out", str(tmp_path)]
        assert cli.main(argv) == cli.EXIT_OK
        document = json.loads((tmp_path / "cct.json").read_text())
        assert document["simulations"] == 2
        assert document["limiting_fleet"] == "sync"
        assert document["scenario"]["tripped_line"] == "1-2"
        assert "System CCT of smib" in (tmp_path / "cct.txt").read_text()

    @pytest.mark.unittest
    def test_sensitivity(self, capsys, tmp_path):
        argv = ["sensitivity", "--case", "smib", "--sens", "fd", "--out", str(tmp_path)]
        assert cli.main(argv) == cli.EXIT_OK
        assert capsys.readouterr().out.startswith("sync: m(SN) = ")
        assert (tmp_path / "sensitivity.csv").exists()

    @pytest.mark.integrationtest
    @pytest.mark.parametrize("tcl, code", [("0.20", 0), ("0.30", 2), ("0.60", 2)])
    def test_grid_following_case(self, tmp_path, tcl, code):
        argv = [
            "simulate",
            "--case",
            "ieee39_gfl2",
            "--fault-bus",
            "2",
            "--trip",
            "2-3",
            "--tcl",
            tcl,
            "--out",
            str(tmp_path),
        ]
        assert cli.main(argv) == code
