"""
Classical synchronous machine and grid-following converter models.

State vector layout (blocks in this order, one entry per device in each):

    x = [delta, omega, x_v, P_v, theta_P, x_P]

During integration the PLL angle is carried in the synchronous frame,
phi = theta_P - omega_0 * t, which keeps the system autonomous. Trajectories
report theta_P in absolute form again, see DeviceModel.to_absolute.
"""

import dataclasses
import logging
from dataclasses import dataclass
from typing import NamedTuple

import numba
import numpy as np

from cctkit.case import FaultScenario, GflParams, NetworkCase, SyncMachineParams
from cctkit.exceptions import AlgebraicCollapseError, InitializationError
from cctkit.network.algebraic import AlgebraicSolution, solve_algebraic
from cctkit.network.powerflow import PowerFlowSolution
from cctkit.network.reduction import ReducedNetwork, phase_networks

logger = logging.getLogger(__name__)

STATE_BLOCKS = ("delta", "omega", "x_v", "p_v", "theta_p", "x_p")


class SyncState(NamedTuple):
    delta: float
    omega: float


class GflState(NamedTuple):
    x_v: float
    p_v: float
    theta_p: float
    x_p: float


def speed_parameters(omega_0: float, omega_pu: bool = False) -> tuple[float, float]:
    """
    Nominal rotor speed and the factor converting a speed deviation to an angle
    rate: (omega_0, 1) for speeds in rad/s, (1, omega_0) for per-unit speeds.
    """
    if omega_pu:
        return 1.0, omega_0
    return omega_0, 1.0


@numba.njit
def numba_sync_rhs(omega, p_e, p_m, h, d, omega_nom, omega_scale):
    d_delta = omega_scale * (omega - omega_nom)
    d_omega = (
        omega_nom / (2.0 * h) * (p_m - p_e - d * (omega - omega_nom) / omega_nom)
    )
    return d_delta, d_omega


@numba.njit
def numba_gfl_rhs(v, theta, x_v, p_v, theta_p, x_p, p_vs, t_v, t_p, h_v, k_p, k_i):
    """Returns dx_v/dt, dP_v/dt, the PLL frequency deviation and v_q."""
    v_q = v * np.sin(theta - theta_p)
    omega_p = k_p * v_q + k_i * x_p
    d_x_v = (omega_p - x_v) / t_v
    d_p_v = (p_vs - 2.0 * h_v * d_x_v - p_v) / t_p
    return d_x_v, d_p_v, omega_p, v_q


@numba.njit
def numba_state_derivatives(
    x,
    p_e_sync,
    v_gfl,
    theta_gfl,
    h,
    d,
    p_m,
    infinite,
    p_vs,
    t_v,
    t_p,
    h_v,
    k_p,
    k_i,
    omega_nom,
    omega_scale,
):
    n_sync = h.shape[0]
    n_gfl = p_vs.shape[0]
    f = np.zeros(x.shape[0])
    for i in range(n_sync):
        if infinite[i]:
            continue
        d_delta, d_omega = numba_sync_rhs(
            x[n_sync + i], p_e_sync[i], p_m[i], h[i], d[i], omega_nom, omega_scale
        )
        f[i] = d_delta
        f[n_sync + i] = d_omega
    base = 2 * n_sync
    for k in range(n_gfl):
        d_x_v, d_p_v, omega_p, v_q = numba_gfl_rhs(
            v_gfl[k],
            theta_gfl[k],
            x[base + k],
            x[base + n_gfl + k],
            x[base + 2 * n_gfl + k],
            x[base + 3 * n_gfl + k],
            p_vs[k],
            t_v[k],
            t_p[k],
            h_v[k],
            k_p[k],
            k_i[k],
        )
        f[base + k] = d_x_v
        f[base + n_gfl + k] = d_p_v
        f[base + 2 * n_gfl + k] = omega_p
        f[base + 3 * n_gfl + k] = v_q
    return f


def sync_derivatives(
    state: SyncState,
    p_e: float,
    params: SyncMachineParams,
    omega_0: float,
    omega_pu: bool = False,
) -> tuple[float, float]:
    """
    Swing equation of the classical machine model.

    dδ/dt = ω − ω₀ and dω/dt = (ω₀ / 2H)·(P_M − P_e − D·(ω − ω₀)/ω₀) with the
    speed in rad/s; with `omega_pu` the speed is per-unit and dδ/dt = ω₀(ω − 1).
    D is in pu power per pu speed in both cases.
    """
    if params.p_mech is None:
        raise ValueError(f"Machine at bus {params.bus} has not been initialized")
    if params.infinite:
        return 0.0, 0.0
    omega_nom, omega_scale = speed_parameters(omega_0, omega_pu)
    return numba_sync_rhs(
        state.omega, p_e, params.p_mech, params.h, params.d, omega_nom, omega_scale
    )


def gfl_derivatives(
    state: GflState, v: float, theta: float, params: GflParams, omega_0: float
) -> tuple[float, float, float, float]:
    """
    Virtual-inertia converter with its PLL.

    Returns (dx_v/dt, dP_v/dt, dθ_P/dt, dx_P/dt) with v_q = V·sin(θ − θ_P),
    ω_P = K_p·v_q + K_i·x_P and dθ_P/dt = ω_P + ω₀.
    """
    d_x_v, d_p_v, omega_p, v_q = numba_gfl_rhs(
        v,
        theta,
        state.x_v,
        state.p_v,
        state.theta_p,
        state.x_p,
        params.p_vs,
        params.t_v,
        params.t_p,
        params.h_v,
        params.k_p,
        params.k_i,
    )
    return d_x_v, d_p_v, omega_p + omega_0, v_q


@dataclass(frozen=True)
class DeviceModel:
    """Device parameters of an initialized case as flat arrays."""

    omega_0: float
    omega_pu: bool
    sync_buses: np.ndarray
    h: np.ndarray
    d: np.ndarray
    xd_prime: np.ndarray
    p_mech: np.ndarray
    e_prime: np.ndarray
    infinite: np.ndarray
    gfl_buses: np.ndarray
    p_vs: np.ndarray
    t_v: np.ndarray
    t_p: np.ndarray
    h_v: np.ndarray
    k_p: np.ndarray
    k_i: np.ndarray
    v_floor: np.ndarray

    @classmethod
    def from_case(cls, case: NetworkCase, omega_pu: bool = False) -> "DeviceModel":
        machines = case.sync_machines
        if any(m.p_mech is None or m.e_prime_mag is None for m in machines):
            raise InitializationError(
                "Machine setpoints are missing, initialize the case first"
            )
        units = case.gfl_units

        def column(items, name, dtype=float):
            return np.array([getattr(i, name) for i in items], dtype=dtype)

        return cls(
            omega_0=case.frequency_base,
            omega_pu=omega_pu,
            sync_buses=column(machines, "bus", int),
            h=column(machines, "h"),
            d=column(machines, "d"),
            xd_prime=column(machines, "xd_prime"),
            p_mech=column(machines, "p_mech"),
            e_prime=column(machines, "e_prime_mag"),
            infinite=column(machines, "infinite", bool),
            gfl_buses=column(units, "bus", int),
            p_vs=column(units, "p_vs"),
            t_v=column(units, "t_v"),
            t_p=column(units, "t_p"),
            h_v=column(units, "h_v"),
            k_p=column(units, "k_p"),
            k_i=column(units, "k_i"),
            v_floor=column(units, "v_floor"),
        )

    @property
    def n_sync(self) -> int:
        return len(self.sync_buses)

    @property
    def n_gfl(self) -> int:
        return len(self.gfl_buses)

    @property
    def n_states(self) -> int:
        return 2 * self.n_sync + 4 * self.n_gfl

    @property
    def omega_nom(self) -> float:
        return speed_parameters(self.omega_0, self.omega_pu)[0]

    @property
    def omega_scale(self) -> float:
        return speed_parameters(self.omega_0, self.omega_pu)[1]

    def block(self, name: str) -> slice:
        """Slice of one state block, e.g. block("omega")."""
        ns, ng = self.n_sync, self.n_gfl
        starts = {
            "delta": (0, ns),
            "omega": (ns, ns),
            "x_v": (2 * ns, ng),
            "p_v": (2 * ns + ng, ng),
            "theta_p": (2 * ns + 2 * ng, ng),
            "x_p": (2 * ns + 3 * ng, ng),
        }
        start, length = starts[name]
        return slice(start, start + length)

    def state_names(self) -> list[str]:
        names = []
        for name in STATE_BLOCKS:
            buses = self.sync_buses if name in ("delta", "omega") else self.gfl_buses
            names.extend(f"{name}_{b}" for b in buses)
        return names

    def algebraic_names(self) -> list[str]:
        return [f"v_{b}" for b in self.gfl_buses] + [
            f"theta_{b}" for b in self.gfl_buses
        ]

    def e_sync(self, x: np.ndarray) -> np.ndarray:
        return self.e_prime * np.exp(1j * x[self.block("delta")])

    def solve_network(
        self,
        net: ReducedNetwork,
        x: np.ndarray,
        guess: np.ndarray | None = None,
        tol: float = 1e-10,
        max_iter: int = 100,
    ) -> AlgebraicSolution:
        return solve_algebraic(
            net,
            self.e_sync(x),
            x[self.block("p_v")],
            x[self.block("theta_p")],
            self.v_floor,
            guess=guess,
            tol=tol,
            max_iter=max_iter,
        )

    def derivatives(
        self,
        x: np.ndarray,
        p_e_sync: np.ndarray,
        v_gfl: np.ndarray,
        theta_gfl: np.ndarray,
    ) -> np.ndarray:
        """Right-hand side in the synchronous frame (PLL angle rate = ω_P)."""
        return numba_state_derivatives(
            np.ascontiguousarray(x, dtype=np.float64),
            np.ascontiguousarray(p_e_sync, dtype=np.float64),
            np.ascontiguousarray(v_gfl, dtype=np.float64),
            np.ascontiguousarray(theta_gfl, dtype=np.float64),
            self.h,
            self.d,
            self.p_mech,
            self.infinite,
            self.p_vs,
            self.t_v,
            self.t_p,
            self.h_v,
            self.k_p,
            self.k_i,
            self.omega_nom,
            self.omega_scale,
        )

    def rhs(self, x: np.ndarray, solution: AlgebraicSolution) -> np.ndarray:
        return self.derivatives(
            x, solution.p_e_sync, np.abs(solution.v_gfl), solution.theta_gfl
        )

    def to_absolute(self, x: np.ndarray, t: np.ndarray | float) -> np.ndarray:
        """Synchronous-frame states to reported states (theta_P = phi + ω₀t)."""
        x = np.array(x, dtype=float, copy=True)
        x[..., self.block("theta_p")] += self.omega_0 * np.asarray(t)[..., np.newaxis]
        return x

    def to_internal(self, x: np.ndarray, t: np.ndarray | float) -> np.ndarray:
        x = np.array(x, dtype=float, copy=True)
        x[..., self.block("theta_p")] -= self.omega_0 * np.asarray(t)[..., np.newaxis]
        return x

    def device_label(self, state_index: int) -> str:
        return self.state_names()[state_index]


@dataclass(frozen=True)
class SystemState:
    t: float
    delta: np.ndarray
    omega: np.ndarray
    x_v: np.ndarray
    p_v: np.ndarray
    theta_p: np.ndarray
    x_p: np.ndarray

    @classmethod
    def from_vector(cls, model: DeviceModel, x: np.ndarray, t: float = 0.0):
        """Build from a synchronous-frame state vector."""
        x = model.to_absolute(x, t)
        return cls(t, *(x[model.block(name)].copy() for name in STATE_BLOCKS))

    def to_vector(self, model: DeviceModel) -> np.ndarray:
        x = np.concatenate([getattr(self, name) for name in STATE_BLOCKS])
        return model.to_internal(x, self.t)

    @property
    def sync(self) -> list[SyncState]:
        return [SyncState(d, w) for d, w in zip(self.delta, self.omega)]

    @property
    def gfl(self) -> list[GflState]:
        return [
            GflState(*values)
            for values in zip(self.x_v, self.p_v, self.theta_p, self.x_p)
        ]


@dataclass(frozen=True)
class Equilibrium:
    """Initialized operating point: filled-in case, device model and states."""

    case: NetworkCase
    model: DeviceModel
    x0: np.ndarray
    pf: PowerFlowSolution
    networks: dict
    algebraic: AlgebraicSolution
    residual: float

    @property
    def state(self) -> SystemState:
        return SystemState.from_vector(self.model, self.x0, 0.0)


def init_devices(
    case: NetworkCase,
    pf: PowerFlowSolution,
    omega_pu: bool = False,
    tol: float = 1e-8,
    scenario=None,
) -> Equilibrium:
    """
    Initialize all devices at the pre-fault equilibrium.

    Machines: E'<delta = V_t + j x_d' I_t from the terminal phasors, speed at
    nominal and P_M equal to the electrical power of the reduced network.
    GFL units: PLL locked to the bus angle, x_P = x_v = 0 and P_v = P_vs.

    Parameters
    ----------
    case : NetworkCase
        Study system.
    pf : PowerFlowSolution
        Converged pre-fault power flow.
    omega_pu : bool, optional
        Rotor speeds in per-unit instead of rad/s.
    tol : float, optional
        Maximum allowed derivative at the equilibrium, by default 1e-8.
    scenario : FaultScenario | None, optional
        If given, the reduced networks of all its phases are prepared as well.

    Returns
    -------
    Equilibrium

    Raises
    ------
    InitializationError
        If a GFL reference disagrees with its dispatch or the assembled state
        is not an equilibrium.
    """
    for unit in case.gfl_units:
        if abs(unit.p_vs - unit.dispatch) > 1e-9:
            raise InitializationError(
                f"GFL unit at bus {unit.bus}: P_vs = {unit.p_vs} pu differs from its "
                f"power-flow dispatch {unit.dispatch} pu"
            )

    machines = []
    deltas = []
    for machine, s_gen in zip(case.sync_machines, pf.s_sync):
        v_t = pf.voltage(machine.bus)
        current = np.conj(s_gen / v_t)
        e = v_t + 1j * machine.xd_prime * current
        deltas.append(np.angle(e))
        machines.append(
            dataclasses.replace(
                machine, e_prime_mag=float(np.abs(e)), p_mech=float(s_gen.real)
            )
        )
    case = dataclasses.replace(case, sync_machines=tuple(machines))
    model = DeviceModel.from_case(case, omega_pu)

    if scenario is None:
        scenario = FaultScenario(None, None, 0.0, 1.0)
    networks = phase_networks(case, scenario, pf)
    pre = networks["pre_fault"]

    ns, ng = model.n_sync, model.n_gfl
    x0 = np.zeros(model.n_states)
    x0[model.block("delta")] = deltas
    x0[model.block("omega")] = model.omega_nom
    x0[model.block("p_v")] = model.p_vs
    x0[model.block("theta_p")] = [np.angle(pf.voltage(u.bus)) for u in case.gfl_units]

    # Lock the PLL angles to the reduced-network bus angles
    guess = np.array([abs(pf.voltage(u.bus)) for u in case.gfl_units])
    try:
        solution = model.solve_network(pre, x0, guess=guess)
        for _ in range(20):
            theta_p = x0[model.block("theta_p")]
            drift = np.max(np.abs(solution.theta_gfl - theta_p), initial=0.0)
            if drift < 1e-14:
                break
            x0[model.block("theta_p")] = solution.theta_gfl
            solution = model.solve_network(pre, x0, guess=np.abs(solution.v_gfl))
    except AlgebraicCollapseError as e:
        raise InitializationError(f"Pre-fault network cannot be solved: {e}") from e

    # P_M from the reduced network removes the power-flow tolerance from the balance
    machines = [
        dataclasses.replace(m, p_mech=float(p))
        for m, p in zip(case.sync_machines, solution.p_e_sync)
    ]
    case = dataclasses.replace(case, sync_machines=tuple(machines))
    model = DeviceModel.from_case(case, omega_pu)

    f = model.rhs(x0, solution)
    residual = float(np.max(np.abs(f), initial=0.0))
    if residual > tol:
        worst = int(np.argmax(np.abs(f)))
        raise InitializationError(
            f"Initial state is not an equilibrium: derivative of "
            f"{model.device_label(worst)} is {f[worst]:.3e}"
        )
    logger.debug(
        f"Initialized {ns} machines and {ng} GFL units, residual {residual:.2e}"
    )
    return Equilibrium(
        case=case,
        model=model,
        x0=x0,
        pf=pf,
        networks=networks,
        algebraic=solution,
        residual=residual,
    )
