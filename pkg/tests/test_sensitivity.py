import numpy as np
import pytest
from numpy.testing import assert_allclose

from cctkit.analyze.cct import auto_probes
from cctkit.case import FaultScenario
from cctkit.exceptions import SensitivityError
from cctkit.io.read_case import builtin_case
from cctkit.sensitivity.finite_difference import sensitivity_finite_difference
from cctkit.sensitivity.indices import (
    SnSeries,
    fleet_series,
    gfl_reference,
    peak,
    sn_gfl,
    sn_sync,
    sync_reference,
)
from cctkit.sensitivity.variational import sensitivity_variational
from cctkit.simulation.tds import prepare_equilibrium


def relative_l2(estimate, reference, elapsed, end=2.0):
    rows = elapsed <= end + 1e-9
    return np.linalg.norm(estimate[rows] - reference[rows]) / np.linalg.norm(
        reference[rows]
    )


@pytest.fixture(scope="module")
def smib():
    return builtin_case("smib")


@pytest.fixture(scope="module")
def smib_equilibrium(smib):
    return prepare_equilibrium(smib, smib.scenario())


class TestVariational:
    @pytest.mark.unittest
    def test_matches_finite_differences_smib(self, smib, smib_equilibrium):
        scenario = smib.scenario(t_cl_delay=0.15)
        variational = sensitivity_variational(
            smib, scenario, equilibrium=smib_equilibrium
        )
        fd = sensitivity_finite_difference(
            smib, scenario, equilibrium=smib_equilibrium, refine=4
        )
        n = len(fd.elapsed)
        assert_allclose(variational.elapsed[:n], fd.elapsed)
        assert relative_l2(variational.w[:n], fd.w, fd.elapsed) < 0.05
        sn_variational = sn_sync(variational).values[:n]
        assert relative_l2(sn_variational, sn_sync(fd).values, fd.elapsed) < 0.05

    @pytest.mark.integrationtest
    def test_matches_finite_differences_near_stability_margin(self):
        case = builtin_case("ieee39_gfl2")
        equilibrium = prepare_equilibrium(case, case.scenario())
        clearing_times, _ = auto_probes(case, case.scenario(), equilibrium=equilibrium)
        scenario = case.scenario(horizon=4.0)
        for t_cl in clearing_times:
            cleared = scenario.with_clearing(t_cl)
            variational = sensitivity_variational(
                case, cleared, equilibrium=equilibrium
            )
            fd = sensitivity_finite_difference(
                case, cleared, equilibrium=equilibrium, refine=4
            )
            n = len(fd.elapsed)
            assert relative_l2(variational.w[:n], fd.w, fd.elapsed) < 0.05

    @pytest.mark.unittest
    @pytest.mark.parametrize("alignment", ["elapsed", "absolute"])
    def test_no_fault_has_zero_sensitivity(self, smib, alignment):
        scenario = FaultScenario(None, None, 1.0, 0.1, 3.0, 0.01)
        sens = sensitivity_variational(smib, scenario, alignment=alignment)
        assert_allclose(sens.w, 0.0, atol=1e-6)

    @pytest.mark.unittest
    def test_initial_condition(self, smib, smib_equilibrium):
        scenario = smib.scenario(t_cl_delay=0.15)
        elapsed = sensitivity_variational(smib, scenario, equilibrium=smib_equilibrium)
        absolute = sensitivity_variational(
            smib, scenario, alignment="absolute", equilibrium=smib_equilibrium
        )
        # only the speed derivative jumps at clearing
        assert_allclose(absolute.w[0, 0], 0.0, atol=1e-12)
        assert elapsed.w[0, 0] > 0
        assert elapsed.w[0, 2] > 0
        assert absolute.w[0, 2] > 0
        assert elapsed.runs[0].scenario == scenario

    @pytest.mark.unittest
    def test_window(self, smib, smib_equilibrium):
        sens = sensitivity_variational(
            smib, smib.scenario(), equilibrium=smib_equilibrium
        )
        short = sens.window(1.0)
        assert_allclose(short.elapsed[-1], 1.0)
        assert short.w.shape == (101, 4)
        assert sens.block("omega").shape == (len(sens.elapsed), 2)

    @pytest.mark.unittest
    def test_unknown_alignment(self, smib):
        with pytest.raises(ValueError, match="alignment"):
            sensitivity_variational(smib, smib.scenario(), alignment="midpoint")


class TestFiniteDifference:
    @pytest.mark.unittest
    def test_absolute_alignment_start_undefined(self, smib, smib_equilibrium):
        sens = sensitivity_finite_difference(
            smib,
            smib.scenario(t_cl_delay=0.15),
            h=0.02,
            alignment="absolute",
            equilibrium=smib_equilibrium,
        )
        assert np.all(np.isnan(sens.w[:2]))
        assert np.all(np.isfinite(sens.w[2:]))
        assert len(sens.runs) == 2
        value, elapsed = peak(sn_sync(sens))
        assert np.isfinite(value)
        assert elapsed >= 0.02

    @pytest.mark.unittest
    def test_elapsed_window_length(self, smib, smib_equilibrium):
        scenario = smib.scenario(t_cl_delay=0.15)
        sens = sensitivity_finite_difference(
            smib, scenario, h=0.02, equilibrium=smib_equilibrium
        )
        # base clears at step 65, the later run has two samples less
        assert len(sens.elapsed) == 500 - 65 + 1 - 2
        assert not sens.truncated
        assert sens.method == "finite_difference"

    @pytest.mark.unittest
    def test_step_too_large(self, smib, smib_equilibrium):
        with pytest.raises(SensitivityError, match="Perturbation"):
            sensitivity_finite_difference(
                smib, smib.scenario(t_cl_delay=0.05), h=0.05
            )
        with pytest.raises(SensitivityError):
            sensitivity_finite_difference(smib, smib.scenario(), h=0.0)

    @pytest.mark.unittest
    def test_refined_runs_on_base_grid(self, smib, smib_equilibrium):
        scenario = smib.scenario(t_cl_delay=0.15)
        sens = sensitivity_finite_difference(
            smib, scenario, equilibrium=smib_equilibrium, refine=2
        )
        assert sens.runs[0].dt == pytest.approx(0.005)
        assert sens.runs[0].scenario.t_cl_delay == pytest.approx(0.155)
        assert_allclose(np.diff(sens.elapsed), 0.01)
        assert len(sens.elapsed) == 435
        with pytest.raises(SensitivityError, match="refine"):
            sensitivity_finite_difference(smib, scenario, refine=0)

    @pytest.mark.integrationtest
    def test_second_order_convergence(self, smib, smib_equilibrium):
        # T_cl + h stays far below the critical clearing time for every h
        scenario = smib.scenario(t_cl_delay=0.10)
        runs = [
            sensitivity_finite_difference(
                smib, scenario, h=h, equilibrium=smib_equilibrium
            )
            for h in (0.04, 0.02, 0.01)
        ]
        n = len(runs[0].elapsed)
        rows = runs[0].elapsed <= 1.0 + 1e-9
        coarse, medium, fine = (sens.w[:n][rows] for sens in runs)
        factor = np.linalg.norm(coarse - medium) / np.linalg.norm(medium - fine)
        assert 3.5 <= factor <= 4.5


class TestIndices:
    @pytest.mark.unittest
    def test_references(self, smib_equilibrium):
        assert sync_reference(smib_equilibrium.model) == 2
        case = builtin_case("ieee39_gfl2")
        gfl = prepare_equilibrium(case, case.scenario())
        assert gfl_reference(gfl.model) == 36
        with pytest.raises(ValueError, match="no GFL units"):
            gfl_reference(smib_equilibrium.model)

    @pytest.mark.unittest
    def test_sn_sync_relative_to_infinite_machine(self, smib, smib_equilibrium):
        sens = sensitivity_variational(
            smib, smib.scenario(), equilibrium=smib_equilibrium
        )
        series = sn_sync(sens)
        expected = np.sqrt(
            (sens.w[:, 0] - sens.w[:, 1]) ** 2 + sens.w[:, 2] ** 2 + sens.w[:, 3] ** 2
        )
        assert_allclose(series.values, expected)
        assert series.reference_device == 2
        assert fleet_series(sens, "sync").fleet == "sync"
        with pytest.raises(ValueError, match="fleet"):
            fleet_series(sens, "wind")
        with pytest.raises(ValueError, match="no GFL unit"):
            sn_gfl(sens, reference=1)

    @pytest.mark.unittest
    def test_peak_skips_undefined_samples(self):
        series = SnSeries(
            np.array([0.0, 0.1, 0.2, 0.3]),
            np.array([np.nan, 5.0, 7.0, 6.0]),
            "sync",
            1,
        )
        assert peak(series) == (7.0, 0.2)
        assert peak(series, window=(0.25, 1.0)) == (6.0, 0.3)
        with pytest.raises(ValueError, match="No sensitivity samples"):
            peak(series, window=(0.0, 0.05))
