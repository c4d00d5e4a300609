import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve, solve

from cctkit.exceptions import AlgebraicCollapseError
from cctkit.network.reduction import ReducedNetwork

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AlgebraicSolution:
    """
    Network solution for given machine EMFs and GFL states.

    `v_mag` and `v_ang` cover every physical bus (case order), the device
    arrays list the synchronous machines first and the GFL units after them.
    """

    v_mag: np.ndarray
    v_ang: np.ndarray
    i_inj: np.ndarray
    p_e: np.ndarray
    v_gfl: np.ndarray
    theta_gfl: np.ndarray
    n_sync: int
    iterations: int = 0

    @property
    def p_e_sync(self) -> np.ndarray:
        return self.p_e[: self.n_sync]

    @property
    def p_e_gfl(self) -> np.ndarray:
        return self.p_e[self.n_sync :]

    @property
    def y(self) -> np.ndarray:
        """Algebraic vector [V_1..V_n, theta_1..theta_n] over the GFL buses."""
        return np.concatenate([np.abs(self.v_gfl), self.theta_gfl])


def current_injection(
    p_v: np.ndarray, phi: np.ndarray, v_mag: np.ndarray, v_floor: np.ndarray
) -> np.ndarray:
    """GFL current P_v / max(V, v_floor) aligned with the PLL angle."""
    return p_v / np.maximum(v_mag, v_floor) * np.exp(1j * phi)


def network_mismatch(
    net: ReducedNetwork,
    e_sync: np.ndarray,
    v_active: np.ndarray,
    i_active: np.ndarray,
) -> np.ndarray:
    """Current balance Y_gs E + Y_gg V - I at the non-grounded GFL buses."""
    return net.y_gs @ e_sync + net.y_gg @ v_active - i_active


def mismatch_jacobian(
    net: ReducedNetwork,
    v_mag: np.ndarray,
    theta: np.ndarray,
    p_v: np.ndarray,
    phi: np.ndarray,
    v_floor: np.ndarray,
) -> np.ndarray:
    """
    Real Jacobian of [Re R; Im R] to [V; theta] over the non-grounded GFL buses
    (all arguments restricted to those buses).
    """
    rotation = np.exp(1j * theta)
    d_v = net.y_gg * rotation[np.newaxis, :]
    d_theta = net.y_gg * (1j * v_mag * rotation)[np.newaxis, :]
    above = v_mag > v_floor
    d_current = np.where(above, -p_v / np.maximum(v_mag, v_floor) ** 2, 0.0)
    d_v = d_v - np.diag(d_current * np.exp(1j * phi))
    return np.block([[d_v.real, d_theta.real], [d_v.imag, d_theta.imag]])


def solve_algebraic(
    net: ReducedNetwork,
    e_sync: np.ndarray,
    p_v: np.ndarray,
    phi: np.ndarray,
    v_floor: np.ndarray,
    guess: np.ndarray | None = None,
    tol: float = 1e-10,
    max_iter: int = 100,
) -> AlgebraicSolution:
    """
    Solve the reduced network for the given machine EMFs and GFL injections.

    Synchronous machines are voltage sources E'<delta behind their reactance.
    GFL units inject P_v / max(V, v_floor) at the PLL angle; the dependency on
    the own terminal voltage magnitude is resolved by fixed-point iteration on
    the magnitudes with Aitken relaxation. If the iteration stalls, a damped
    Newton pass on the complex current balance is tried.

    Parameters
    ----------
    net : ReducedNetwork
        Network of the current topology phase.
    e_sync : np.ndarray
        Complex internal voltages of the synchronous machines.
    p_v, phi, v_floor : np.ndarray
        Output power, PLL angle (network frame) and voltage floor per GFL unit.
    guess : np.ndarray | None, optional
        Starting voltage magnitudes per GFL unit, usually the previous step.
    tol : float, optional
        Convergence threshold on the change of voltage magnitude, by default 1e-10.
    max_iter : int, optional
        Maximum fixed-point iterations, by default 100.

    Returns
    -------
    AlgebraicSolution

    Raises
    ------
    AlgebraicCollapseError
        If neither the fixed point nor the Newton fallback converges.
    """
    active = net.gfl_active
    n_gfl = len(active)
    iterations = 0
    v_active = np.zeros(0, dtype=complex)

    if net.n_active > 0:
        pa, fa, vfa = p_v[active], phi[active], v_floor[active]
        lu = lu_factor(net.y_gg)
        source = -net.y_gs @ e_sync
        direction = np.exp(1j * fa)

        def voltages(magnitude):
            return lu_solve(lu, pa / np.maximum(magnitude, vfa) * direction + source)

        if guess is not None:
            magnitude = np.maximum(np.asarray(guess, dtype=float)[active], vfa)
        else:
            magnitude = np.ones(net.n_active)
        relaxation = 1.0
        residual_prev = None
        converged = False
        for iterations in range(1, max_iter + 1):
            v_active = voltages(magnitude)
            residual = np.abs(v_active) - magnitude
            if not np.all(np.isfinite(residual)):
                break
            if np.max(np.abs(residual)) < tol:
                converged = True
                break
            if residual_prev is not None:
                change = residual - residual_prev
                denominator = change @ change
                if denominator > 0:
                    relaxation = -relaxation * (residual_prev @ change) / denominator
                    relaxation = float(np.clip(relaxation, 0.05, 1.5))
            magnitude = magnitude + relaxation * residual
            residual_prev = residual

        if converged:
            v_active = voltages(np.abs(v_active))
        else:
            logger.debug(
                f"Fixed point stalled after {iterations} iterations, trying Newton"
            )
            v_active = _newton_fallback(
                net, e_sync, pa, fa, vfa, v_active, magnitude, tol, max_iter
            )

    v_retained = np.concatenate([e_sync, v_active])
    i_sync = net.y_ss @ e_sync + net.y_sg @ v_active
    p_e_sync = (e_sync * np.conj(i_sync)).real

    v_gfl = np.zeros(n_gfl, dtype=complex)
    v_gfl[active] = v_active
    theta_gfl = np.where(active, np.angle(v_gfl), phi)
    i_gfl = current_injection(p_v, phi, np.abs(v_gfl), v_floor)
    p_e_gfl = (v_gfl * np.conj(i_gfl)).real

    v_bus = net.bus_voltages(v_retained)
    return AlgebraicSolution(
        v_mag=np.abs(v_bus),
        v_ang=np.angle(v_bus),
        i_inj=np.concatenate([i_sync, i_gfl]),
        p_e=np.concatenate([p_e_sync, p_e_gfl]),
        v_gfl=v_gfl,
        theta_gfl=theta_gfl,
        n_sync=net.n_sync,
        iterations=iterations,
    )


def _newton_fallback(net, e_sync, p_v, phi, v_floor, v_start, magnitude, tol, max_iter):
    v_start = np.where(np.isfinite(v_start), v_start, magnitude * np.exp(1j * phi))
    v_mag = np.maximum(np.abs(v_start), v_floor)
    theta = np.angle(v_start)
    n = len(v_mag)

    def residual(v_mag, theta):
        v = v_mag * np.exp(1j * theta)
        mismatch = network_mismatch(
            net, e_sync, v, current_injection(p_v, phi, v_mag, v_floor)
        )
        return np.concatenate([mismatch.real, mismatch.imag])

    r = residual(v_mag, theta)
    for _ in range(max_iter):
        if np.max(np.abs(r)) < tol:
            return v_mag * np.exp(1j * theta)
        jacobian = mismatch_jacobian(net, v_mag, theta, p_v, phi, v_floor)
        try:
            step = solve(jacobian, -r)
        except np.linalg.LinAlgError as e:
            raise AlgebraicCollapseError(f"Singular network Jacobian: {e}") from e
        damping = 1.0
        while damping > 1e-4:
            v_try = np.maximum(v_mag + damping * step[:n], 0.0)
            theta_try = theta + damping * step[n:]
            r_try = residual(v_try, theta_try)
            if np.max(np.abs(r_try)) < np.max(np.abs(r)):
                break
            damping /= 2
        v_mag, theta, r = v_try, theta_try, r_try
    if np.max(np.abs(r)) < tol:
        return v_mag * np.exp(1j * theta)
    raise AlgebraicCollapseError(
        f"Network solution did not converge (residual {np.max(np.abs(r)):.3e} pu)"
    )
