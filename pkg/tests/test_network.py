import dataclasses
from pathlib import Path

import numpy as np
import pytest
from numpy.testing import assert_allclose

from cctkit.case import Branch, FaultScenario, Load
from cctkit.exceptions import IslandingError, PowerFlowError, SingularNetworkError
from cctkit.io.read_case import builtin_case, load_case
from cctkit.network.admittance import (
    apply_bolted_fault,
    branch_admittance,
    build_admittance,
    kron_reduce,
)
from cctkit.network.algebraic import solve_algebraic
from cctkit.network.powerflow import initial_power_flow
from cctkit.network.reduction import (
    ReducedNetwork,
    load_admittance,
    phase_networks,
    reduce_to_sources,
)
from cctkit.simulation.tds import prepare_equilibrium


class TestAdmittance:
    @pytest.mark.unittest
    def test_tap_convention(self):
        branch = Branch(1, 2, 0.0, 0.1, b_shunt=0.2, tap=1.1)
        y = branch_admittance([branch], [1, 2])
        ys = 1 / 0.1j
        assert_allclose(y[0, 0], (ys + 0.1j) / 1.1**2)
        assert_allclose(y[1, 1], ys + 0.1j)
        assert_allclose(y[0, 1], -ys / 1.1)
        assert_allclose(y[1, 0], -ys / 1.1)

    @pytest.mark.unittest
    def test_kron_reduce_series_chain(self):
        y1, y2 = 1 / 0.2j, 1 / 0.3j
        matrix = np.array(
            [[y1, -y1, 0], [-y1, y1 + y2, -y2], [0, -y2, y2]], dtype=complex
        )
        reduced, recovery = kron_reduce(matrix, [0, 2])
        series = 1 / 0.5j
        assert_allclose(reduced, [[series, -series], [-series, series]])
        # the middle node divides the voltage in proportion to the reactances
        assert_allclose(recovery, [[0.6, 0.4]])

    @pytest.mark.unittest
    def test_kron_reduce_keeps_everything(self):
        matrix = np.array([[2.0, -1.0], [-1.0, 2.0]], dtype=complex)
        reduced, recovery = kron_reduce(matrix, [1, 0])
        assert_allclose(reduced, [[2.0, -1.0], [-1.0, 2.0]])
        assert recovery is None

    @pytest.mark.unittest
    def test_kron_reduce_singular(self):
        matrix = np.array(
            [[1.0, 0.0, -1.0], [0.0, 0.0, 0.0], [-1.0, 0.0, 1.0]], dtype=complex
        )
        with pytest.raises(SingularNetworkError):
            kron_reduce(matrix, [0, 2], ["a", "b", "c"])

    @pytest.mark.unittest
    def test_bolted_fault_removes_bus(self):
        smib = builtin_case("smib")
        pre = build_admittance(smib)
        faulted = apply_bolted_fault(pre, 1)
        assert faulted.bus_ids == (2,)
        assert faulted.faulted_bus == 1
        assert_allclose(faulted.matrix, pre.matrix[1:, 1:])

    @pytest.mark.unittest
    def test_post_fault_islanding(self):
        case = load_case(Path(__file__).parent / "data/four_bus_gfl.json")
        scenario = case.scenario(fault_bus=3, tripped_branch="3-4")
        with pytest.raises(IslandingError) as info:
            build_admittance(case, "post_fault", scenario)
        assert [4] in info.value.islands


class TestPowerFlow:
    @pytest.fixture
    def four_bus(self):
        return load_case(Path(__file__).parent / "data/four_bus_gfl.json")

    @pytest.mark.unittest
    def test_smib_power_flow(self):
        pf = initial_power_flow(builtin_case("smib"), tol=1e-10)
        assert_allclose(pf.s_sync.real, [0.8, -0.8], atol=1e-9)
        assert_allclose(pf.v_mag, [1.0, 1.0])
        # lossless lines: P = V1 V2 sin(theta) / X with X = 0.25
        assert_allclose(np.sin(pf.v_ang[0] - pf.v_ang[1]) / 0.25, 0.8, atol=1e-9)
        assert_allclose(pf.losses, 0.0, atol=1e-9)

    @pytest.mark.unittest
    def test_four_bus_power_flow(self, four_bus):
        pf = initial_power_flow(four_bus, tol=1e-10)
        assert pf.mismatch < 1e-10
        assert_allclose(abs(pf.voltage(2)), 1.02)
        assert_allclose(pf.s_sync[1].real, 0.5, atol=1e-9)
        assert_allclose(pf.s_gfl.real, [0.3], atol=1e-9)
        assert_allclose(pf.s_gfl.imag, [0.0], atol=1e-9)
        assert pf.losses > 0
        generation = pf.s_sync.real.sum() + pf.s_gfl.real.sum()
        assert_allclose(generation, 1.0 + pf.losses, atol=1e-9)

    @pytest.mark.unittest
    def test_power_flow_diverges(self, four_bus):
        overloaded = dataclasses.replace(four_bus, loads=(Load(3, 60.0, 20.0),))
        with pytest.raises(PowerFlowError):
            initial_power_flow(overloaded, max_iter=10)


class TestReduction:
    @pytest.fixture
    def smib_networks(self):
        smib = builtin_case("smib")
        pf = initial_power_flow(smib, tol=1e-10)
        return phase_networks(smib, smib.scenario(), pf)

    @pytest.mark.unittest
    def test_smib_transfer_reactances(self, smib_networks):
        # machine 0.2 + lines + infinite machine 0.01
        pre = smib_networks["pre_fault"]
        post = smib_networks["post_fault"]
        assert_allclose(pre.y_reduced[0, 1], 1j / 0.46)
        assert_allclose(post.y_reduced[0, 1], 1j / 0.71)
        assert_allclose(smib_networks["during_fault"].y_reduced[0, 1], 0.0, atol=1e-12)

    @pytest.mark.unittest
    def test_reduced_matrix_symmetric(self, smib_networks):
        for net in smib_networks.values():
            assert_allclose(net.y_reduced, net.y_reduced.T)

    @pytest.mark.unittest
    def test_no_fault_phases_share_network(self):
        smib = builtin_case("smib")
        pf = initial_power_flow(smib)
        networks = phase_networks(smib, FaultScenario(None, None, 1.0, 0.1), pf)
        assert networks["during_fault"] is networks["pre_fault"]
        assert networks["post_fault"] is networks["pre_fault"]

    @pytest.mark.unittest
    def test_grounded_gfl_bus(self):
        case = load_case(Path(__file__).parent / "data/four_bus_gfl.json")
        pf = initial_power_flow(case)
        networks = phase_networks(case, case.scenario(fault_bus=3), pf)
        assert networks["pre_fault"].n_active == 1
        assert networks["during_fault"].n_active == 0
        assert networks["during_fault"].retained_buses == (1, 2)
        # recovery row of the faulted bus is zero
        row = case.bus_ids.index(3)
        assert_allclose(networks["during_fault"].recovery[row], 0.0)


class TestAlgebraic:
    @staticmethod
    def network(y_reduced, n_sync, gfl_active):
        return ReducedNetwork(
            y_reduced=np.asarray(y_reduced, dtype=complex),
            retained_buses=tuple(range(len(y_reduced))),
            phase="pre_fault",
            n_sync=n_sync,
            gfl_active=np.asarray(gfl_active, dtype=bool),
        )

    @pytest.mark.unittest
    def test_without_gfl_units(self):
        y = 1 / 0.5j
        net = self.network([[y, -y], [-y, y]], 2, [])
        e_sync = np.array([1.0 * np.exp(0.2j), 1.0])
        empty = np.zeros(0)
        solution = solve_algebraic(net, e_sync, empty, empty, empty)
        assert solution.iterations == 0
        assert_allclose(solution.p_e_sync, [2 * np.sin(0.2), -2 * np.sin(0.2)])

    @pytest.mark.unittest
    def test_gfl_at_stiff_bus(self):
        y = -1e6j
        net = self.network([[y, -y], [-y, y]], 1, [True])
        p_v, phi, v_floor = np.array([0.5]), np.array([0.3]), np.array([0.01])
        solution = solve_algebraic(net, np.array([1.0 + 0j]), p_v, phi, v_floor)
        assert_allclose(np.abs(solution.v_gfl), 1.0, atol=1e-5)
        assert_allclose(solution.p_e_gfl, 0.5 * np.cos(0.3), rtol=1e-5)

    @pytest.mark.unittest
    def test_grounded_gfl_unit(self):
        net = self.network([[1 / 0.3j]], 1, [False])
        p_v, phi, v_floor = np.array([0.5]), np.array([0.3]), np.array([0.01])
        solution = solve_algebraic(net, np.array([1.0 + 0j]), p_v, phi, v_floor)
        assert solution.v_gfl[0] == 0
        assert solution.theta_gfl[0] == pytest.approx(0.3)
        assert abs(solution.i_inj[1]) == pytest.approx(50.0)
        assert solution.p_e_gfl[0] == 0


def full_network(case, y, pf):
    """Bus matrix with load shunts and the machine internal nodes appended."""
    n_bus = y.dimension
    position = {b: i for i, b in enumerate(y.bus_ids)}
    y_load = load_admittance(pf)
    full = np.zeros((n_bus + len(case.sync_machines),) * 2, dtype=complex)
    full[:n_bus, :n_bus] = y.matrix
    for bus in y.bus_ids:
        full[position[bus], position[bus]] += y_load[pf.bus_ids.index(bus)]
    for k, machine in enumerate(case.sync_machines):
        internal = n_bus + k
        y_d = 1 / (1j * machine.xd_prime)
        full[internal, internal] += y_d
        if machine.bus in position:
            terminal = position[machine.bus]
            full[terminal, terminal] += y_d
            full[internal, terminal] -= y_d
            full[terminal, internal] -= y_d
    keep = [n_bus + k for k in range(len(case.sync_machines))]
    keep += [position[u.bus] for u in case.gfl_units if u.bus in position]
    return full, keep


class TestThirtyNineBus:
    @pytest.fixture(scope="class", params=["ieee39_sync", "ieee39_gfl2"])
    def initialized(self, request):
        case = builtin_case(request.param)
        return prepare_equilibrium(case, case.scenario())

    @pytest.mark.integrationtest
    @pytest.mark.parametrize("phase", ["pre_fault", "post_fault"])
    def test_kron_reduction_is_exact(self, initialized, phase):
        case, pf = initialized.case, initialized.pf
        y = build_admittance(case, phase, case.scenario())
        net = reduce_to_sources(y, case, pf)
        full, keep = full_network(case, y, pf)
        rng = np.random.default_rng(7)
        for _ in range(5):
            injection = rng.normal(size=len(keep)) + 1j * rng.normal(size=len(keep))
            current = np.zeros(full.shape[0], dtype=complex)
            current[keep] = injection
            v_full = np.linalg.solve(full, current)
            v_reduced = np.linalg.solve(net.y_reduced, injection)
            assert_allclose(v_reduced, v_full[keep], rtol=0, atol=1e-10)
            # eliminated buses follow from the recovery matrix
            v_bus = net.bus_voltages(v_reduced)
            rows = [case.bus_ids.index(b) for b in y.bus_ids]
            assert_allclose(v_bus[rows], v_full[: y.dimension], rtol=0, atol=1e-10)

    @pytest.mark.integrationtest
    def test_algebraic_residual_and_power_balance(self, initialized):
        model = initialized.model
        networks = initialized.networks
        rng = np.random.default_rng(11)
        for phase, net in networks.items():
            x = initialized.x0.copy()
            x[model.block("delta")] += rng.normal(scale=0.05, size=model.n_sync)
            solution = model.solve_network(net, x)
            active = np.concatenate([np.ones(model.n_sync, bool), net.gfl_active])
            v_retained = np.concatenate([model.e_sync(x), solution.v_gfl])[active]
            current = solution.i_inj[active]
            residual = net.y_reduced @ v_retained - current
            assert np.max(np.abs(residual)) < 1e-9, phase
            # injected power equals the power absorbed by the reduced network
            absorbed = np.real(v_retained @ np.conj(net.y_reduced @ v_retained))
            assert np.sum(solution.p_e[active]) == pytest.approx(absorbed, abs=1e-7)
