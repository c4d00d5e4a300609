import json

import numpy as np
import pandas as pd
import pytest
import xarray as xr
from numpy.testing import assert_allclose

from cctkit.analyze.cct import SweepRow
from cctkit.io import export
from cctkit.io.read_case import builtin_case
from cctkit.sensitivity.variational import sensitivity_variational
from cctkit.simulation.bisection import BisectionStep, CctBracket
from cctkit.simulation.stability import Reason, StabilityVerdict
from cctkit.simulation.tds import prepare_equilibrium, simulate


@pytest.fixture(scope="module")
def smib_trajectory():
    smib = builtin_case("smib")
    return simulate(smib, smib.scenario())


@pytest.fixture
def rows():
    return [
        SweepRow(3, "3-18", 0.21, 0.22, 0.2163, 0.2163, None, True, True, 0.0013),
        SweepRow(7, "7-8", 0.24, 0.25, 0.2352, 0.2352, None, False, True, -0.0098),
        SweepRow(14, "14-15", error="IslandingError: post-fault network splits"),
    ]


class TestTrajectoryExport:
    @pytest.mark.unittest
    def test_trajectory_frame(self, smib_trajectory):
        frame = export.trajectory_frame(smib_trajectory)
        assert list(frame.columns) == [
            "t",
            "phase",
            "delta_1",
            "delta_2",
            "omega_1",
            "omega_2",
            "p_e_1",
            "p_e_2",
            "vm_1",
            "vm_2",
            "va_1",
            "va_2",
        ]
        assert len(frame) == 501
        assert frame["phase"].iloc[55] == "during_fault"
        assert_allclose(frame["vm_1"].iloc[55], 0.0, atol=1e-9)

    @pytest.mark.unittest
    def test_write_both(self, smib_trajectory, tmp_path):
        written = export.write_trajectory(smib_trajectory, tmp_path, gnuplot=True)
        names = sorted(p.name for p in written)
        assert names == [
            "summary.json",
            "trajectory.csv",
            "trajectory.gp",
            "trajectory.json",
        ]
        table = pd.read_csv(tmp_path / "trajectory.csv")
        assert_allclose(table["delta_1"], smib_trajectory.states[:, 0], rtol=1e-9)
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["verdict"]["stable"] is True
        assert summary["verdict"]["reason"] == "converged"
        assert summary["scenario"]["tripped_line"] == "1-2"
        script = (tmp_path / "trajectory.gp").read_text()
        assert '"trajectory.csv" using 1:3 with lines title "delta_1"' in script
        assert 'set label "clear" at 0.6' in script

    @pytest.mark.unittest
    def test_write_netcdf(self, smib_trajectory, tmp_path):
        written = export.write_trajectory(smib_trajectory, tmp_path, format="netcdf")
        assert [p.name for p in written] == ["trajectory.nc", "summary.json"]
        with xr.open_dataset(tmp_path / "trajectory.nc", engine="h5netcdf") as ds:
            assert ds["states"].shape == (501, 4)
            assert list(ds["state"].values) == smib_trajectory.state_names
            assert ds.attrs["fault_bus"] == 1
            assert json.loads(ds.attrs["verdict"])["stable"] is True

    @pytest.mark.unittest
    def test_outputs_identical_apart_from_timestamp(self, smib_trajectory, tmp_path):
        first = tmp_path / "first"
        second = tmp_path / "second"
        export.write_trajectory(smib_trajectory, first, format="both")
        export.write_trajectory(smib_trajectory, second, format="both")
        assert (first / "trajectory.csv").read_bytes() == (
            second / "trajectory.csv"
        ).read_bytes()
        documents = [
            json.loads((folder / "trajectory.json").read_text())
            for folder in (first, second)
        ]
        for document in documents:
            document.pop("created")
        assert documents[0] == documents[1]

    @pytest.mark.unittest
    def test_unknown_format(self):
        with pytest.raises(ValueError, match="format"):
            export.formats_for("xlsx")
        assert export.formats_for("both") == {"csv", "json"}


class TestSensitivityExport:
    @pytest.mark.unittest
    def test_sensitivity_frame(self, tmp_path):
        smib = builtin_case("smib")
        scenario = smib.scenario()
        sens = sensitivity_variational(
            smib, scenario, equilibrium=prepare_equilibrium(smib, scenario)
        )
        frame = export.sensitivity_frame(sens)
        assert list(frame.columns) == [
            "s",
            "d_delta_1",
            "d_delta_2",
            "d_omega_1",
            "d_omega_2",
            "sn_sync",
        ]
        written = export.write_sensitivity(sens, tmp_path, format="json")
        document = json.loads(written[0].read_text())
        assert document["method"] == "variational"
        assert document["alignment"] == "elapsed"
        assert len(document["columns"]["s"]) == len(sens.elapsed)


class TestReports:
    @pytest.mark.unittest
    def test_clean(self):
        cleaned = export._clean(
            {"a": np.float64(1.5), "b": [np.nan, np.inf], "c": np.arange(2)}
        )
        assert cleaned == {"a": 1.5, "b": [None, None], "c": [0, 1]}

    @pytest.mark.unittest
    def test_bracket_frame(self):
        bracket = CctBracket(
            0.19,
            0.2,
            2,
            [
                BisectionStep(0.19, StabilityVerdict(True, Reason.converged)),
                BisectionStep(
                    0.2,
                    StabilityVerdict(False, Reason.angle_separation, 1.3, "machine"),
                ),
            ],
        )
        frame = export.bracket_frame(bracket)
        assert list(frame.columns) == [
            "t_cl",
            "stable",
            "reason",
            "first_violation_time",
        ]
        assert list(frame["reason"]) == ["converged", "angle_separation"]
        assert bracket.to_dict()["history"][1]["device"] == "machine"

    @pytest.mark.unittest
    def test_comparison_table(self, rows):
        table = export.comparison_table(rows).splitlines()
        assert "Fault Bus" in table[0]
        assert "CCT (Proposed Method)" in table[0]
        assert "[0.21, 0.22]" in table[2]
        assert "0.2163" in table[2]
        assert "Within tol" in table[0]
        assert table[2].split()[-2:] == ["yes", "yes"]
        # below the bracket but inside the widened one
        assert table[3].split()[-2:] == ["no", "yes"]
        assert "error: IslandingError" in table[4]

    @pytest.mark.unittest
    def test_write_sweep(self, rows, tmp_path):
        written = export.write_sweep(rows, tmp_path, format="both")
        assert sorted(p.name for p in written) == [
            "sweep.csv",
            "sweep.json",
            "sweep.txt",
        ]
        table = pd.read_csv(tmp_path / "sweep.csv")
        assert list(table.columns) == export.SWEEP_COLUMNS
        assert table["error"].isna().tolist() == [True, True, False]
        assert table["within_tolerance"].tolist()[:2] == [True, True]
        document = json.loads((tmp_path / "sweep.json").read_text())
        assert document["reports"] == [None, None, None]
        assert document["rows"][0]["t_cr_gfl"] is None

    @pytest.mark.unittest
    def test_empty_sweep(self, tmp_path):
        export.write_sweep([], tmp_path, format="csv")
        assert pd.read_csv(tmp_path / "sweep.csv").empty
        assert len(export.comparison_table([]).splitlines()) == 2
