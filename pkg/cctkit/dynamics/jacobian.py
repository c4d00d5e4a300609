"""
Analytic Jacobians of the differential-algebraic system

    dx/dt = f(x, y),    0 = S(x, y)

with x the device states (synchronous frame, see devices.py) and
y = [V_1..V_n, theta_1..theta_n] over the GFL buses. For a GFL unit that sits
on a grounded bus the residual rows are replaced by V = 0 and theta = phi.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from cctkit.dynamics.devices import DeviceModel
from cctkit.network.algebraic import current_injection
from cctkit.network.reduction import ReducedNetwork

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class JacobianBlocks:
    """Partial derivatives f_x, f_y, S_x and S_y at one operating point."""

    f_x: np.ndarray
    f_y: np.ndarray
    s_x: np.ndarray
    s_y: np.ndarray

    def max_relative_error(self, other: "JacobianBlocks") -> float:
        errors = []
        for name in ("f_x", "f_y", "s_x", "s_y"):
            a, b = getattr(self, name), getattr(other, name)
            if a.size == 0:
                continue
            scale = max(float(np.max(np.abs(b))), 1.0)
            errors.append(float(np.max(np.abs(a - b))) / scale)
        return max(errors, default=0.0)


def _split(model: DeviceModel, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return y[: model.n_gfl], y[model.n_gfl :]


def _active_voltages(net: ReducedNetwork, v_mag: np.ndarray, theta: np.ndarray):
    active = net.gfl_active
    return v_mag[active] * np.exp(1j * theta[active])


def sync_electrical_power(
    model: DeviceModel, net: ReducedNetwork, x: np.ndarray, y: np.ndarray
) -> np.ndarray:
    v_mag, theta = _split(model, y)
    e = model.e_sync(x)
    i_sync = net.y_ss @ e + net.y_sg @ _active_voltages(net, v_mag, theta)
    return (e * np.conj(i_sync)).real


def device_rhs(
    model: DeviceModel, net: ReducedNetwork, x: np.ndarray, y: np.ndarray
) -> np.ndarray:
    """f(x, y) with the machine powers evaluated from the network."""
    v_mag, theta = _split(model, y)
    return model.derivatives(x, sync_electrical_power(model, net, x, y), v_mag, theta)


def network_residual(
    model: DeviceModel, net: ReducedNetwork, x: np.ndarray, y: np.ndarray
) -> np.ndarray:
    """S(x, y) = [Re R; Im R] per GFL unit, grounded units pinned to V = 0."""
    n = model.n_gfl
    v_mag, theta = _split(model, y)
    phi = x[model.block("theta_p")]
    active = net.gfl_active
    s = np.zeros(2 * n)
    s[:n] = v_mag
    s[n:] = theta - phi
    if net.n_active:
        i_active = current_injection(
            x[model.block("p_v")][active],
            phi[active],
            v_mag[active],
            model.v_floor[active],
        )
        mismatch = (
            net.y_gs @ model.e_sync(x)
            + net.y_gg @ _active_voltages(net, v_mag, theta)
            - i_active
        )
        s[:n][active] = mismatch.real
        s[n:][active] = mismatch.imag
    return s


def jacobian_blocks(
    model: DeviceModel, net: ReducedNetwork, x: np.ndarray, y: np.ndarray
) -> JacobianBlocks:
    """
    Analytic f_x, f_y, S_x, S_y.

    Parameters
    ----------
    model : DeviceModel
        Initialized devices.
    net : ReducedNetwork
        Network of the phase the point belongs to.
    x : np.ndarray
        State vector (synchronous frame).
    y : np.ndarray
        Algebraic vector consistent with x.

    Returns
    -------
    JacobianBlocks
    """
    ns, ng = model.n_sync, model.n_gfl
    nx = model.n_states
    f_x = np.zeros((nx, nx))
    f_y = np.zeros((nx, 2 * ng))
    s_x = np.zeros((2 * ng, nx))
    s_y = np.zeros((2 * ng, 2 * ng))

    v_mag, theta = _split(model, y)
    phi = x[model.block("theta_p")]
    p_v = x[model.block("p_v")]
    e = model.e_sync(x)
    active = net.gfl_active
    active_index = np.flatnonzero(active)
    v_active = _active_voltages(net, v_mag, theta)
    rotation = np.exp(1j * theta[active])

    # Machine electrical power
    i_sync = net.y_ss @ e + net.y_sg @ v_active
    dp_ddelta = np.real(np.diag(e) @ np.conj(net.y_ss @ np.diag(1j * e))) + np.diag(
        np.real(1j * e * np.conj(i_sync))
    )
    dp_dv = np.zeros((ns, ng))
    dp_dtheta = np.zeros((ns, ng))
    if net.n_active:
        dp_dv[:, active_index] = np.real(
            e[:, np.newaxis] * np.conj(net.y_sg * rotation[np.newaxis, :])
        )
        dp_dtheta[:, active_index] = np.real(
            e[:, np.newaxis]
            * np.conj(net.y_sg * (1j * v_mag[active] * rotation)[np.newaxis, :])
        )

    delta, omega = model.block("delta"), model.block("omega")
    for i in range(ns):
        if model.infinite[i]:
            continue
        gain = model.omega_nom / (2 * model.h[i])
        f_x[delta.start + i, omega.start + i] = model.omega_scale
        f_x[omega.start + i, omega.start + i] = -model.d[i] / (2 * model.h[i])
        f_x[omega.start + i, delta] = -gain * dp_ddelta[i]
        f_y[omega.start + i, :ng] = -gain * dp_dv[i]
        f_y[omega.start + i, ng:] = -gain * dp_dtheta[i]

    # GFL units
    x_v, p_vb = model.block("x_v"), model.block("p_v")
    theta_p, x_p = model.block("theta_p"), model.block("x_p")
    for k in range(ng):
        dq_dv = np.sin(theta[k] - phi[k])
        dq_dtheta = v_mag[k] * np.cos(theta[k] - phi[k])
        dq_dphi = -dq_dtheta
        k_p, k_i, t_v = model.k_p[k], model.k_i[k], model.t_v[k]
        lag = -2 * model.h_v[k] / model.t_p[k]
        rows = {
            "x_v": x_v.start + k,
            "p_v": p_vb.start + k,
            "theta_p": theta_p.start + k,
            "x_p": x_p.start + k,
        }
        # omega_P and v_q sensitivities to (V, theta, phi, x_P)
        d_omega_p = np.array([k_p * dq_dv, k_p * dq_dtheta, k_p * dq_dphi, k_i])
        d_vq = np.array([dq_dv, dq_dtheta, dq_dphi, 0.0])
        d_x_v = d_omega_p / t_v
        columns = (k, ng + k, theta_p.start + k, x_p.start + k)
        for row, derivative in (
            (rows["x_v"], d_x_v),
            (rows["p_v"], lag * d_x_v),
            (rows["theta_p"], d_omega_p),
            (rows["x_p"], d_vq),
        ):
            f_y[row, columns[0]] = derivative[0]
            f_y[row, columns[1]] = derivative[1]
            f_x[row, columns[2]] += derivative[2]
            f_x[row, columns[3]] += derivative[3]
        f_x[rows["x_v"], rows["x_v"]] += -1 / t_v
        f_x[rows["p_v"], rows["x_v"]] += lag * (-1 / t_v)
        f_x[rows["p_v"], rows["p_v"]] += -1 / model.t_p[k]

    # Network residual
    for k in range(ng):
        if not active[k]:
            s_y[k, k] = 1.0
            s_y[ng + k, ng + k] = 1.0
            s_x[ng + k, theta_p.start + k] = -1.0
    if net.n_active:
        vf = model.v_floor[active]
        i_active = current_injection(p_v[active], phi[active], v_mag[active], vf)
        d_current = np.where(
            v_mag[active] > vf, -p_v[active] / np.maximum(v_mag[active], vf) ** 2, 0.0
        )
        dr_ddelta = net.y_gs * (1j * e)[np.newaxis, :]
        dr_dv = net.y_gg * rotation[np.newaxis, :] - np.diag(
            d_current * np.exp(1j * phi[active])
        )
        dr_dtheta = net.y_gg * (1j * v_mag[active] * rotation)[np.newaxis, :]
        dr_dpv = -np.exp(1j * phi[active]) / np.maximum(v_mag[active], vf)
        dr_dphi = -1j * i_active

        re_rows, im_rows = active_index, ng + active_index
        for block_rows, part in ((re_rows, np.real), (im_rows, np.imag)):
            s_x[np.ix_(block_rows, np.arange(ns))] = part(dr_ddelta)
            s_x[block_rows, p_vb.start + active_index] = part(dr_dpv)
            s_x[block_rows, theta_p.start + active_index] = part(dr_dphi)
            s_y[np.ix_(block_rows, active_index)] = part(dr_dv)
            s_y[np.ix_(block_rows, ng + active_index)] = part(dr_dtheta)

    return JacobianBlocks(f_x=f_x, f_y=f_y, s_x=s_x, s_y=s_y)


def reduced_jacobian(blocks: JacobianBlocks) -> np.ndarray:
    """State matrix M = f_x - f_y S_y^-1 S_x of the index-1 system."""
    if blocks.s_y.size == 0:
        return blocks.f_x.copy()
    return blocks.f_x - blocks.f_y @ lu_solve(lu_factor(blocks.s_y), blocks.s_x)


def finite_difference_blocks(
    model: DeviceModel,
    net: ReducedNetwork,
    x: np.ndarray,
    y: np.ndarray,
    h: float = 1e-6,
) -> JacobianBlocks:
    """Central finite-difference counterpart of `jacobian_blocks`."""

    def derivative(function, n_rows, wrt_x):
        point = x if wrt_x else y
        result = np.zeros((n_rows, len(point)))
        for j in range(len(point)):
            step = np.zeros(len(point))
            step[j] = h
            if wrt_x:
                plus, minus = function(x + step, y), function(x - step, y)
            else:
                plus, minus = function(x, y + step), function(x, y - step)
            result[:, j] = (plus - minus) / (2 * h)
        return result

    def rhs(a, b):
        return device_rhs(model, net, a, b)

    def residual(a, b):
        return network_residual(model, net, a, b)

    return JacobianBlocks(
        f_x=derivative(rhs, len(x), True),
        f_y=derivative(rhs, len(x), False),
        s_x=derivative(residual, len(y), True),
        s_y=derivative(residual, len(y), False),
    )
