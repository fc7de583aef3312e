"""Linear bicycle model, steering actuation and planar kinematics.

Sign conventions: +Y is left of +X travel, heading is measured counter-clockwise
from +X, positive steering turns left, and curvature is positive on left turns.

The simulation state of one vehicle is the 7-vector

    [X, Y, theta, yaw_rate, v_y, delta_f, delta_f_dot]

and the error-coordinate state used by the analysis is

    [e_lat, e_lat_dot, theta_err, theta_err_dot].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

MPH = 0.44704  # m/s, exact
DT_MAX = 0.01

# indices into the simulation state bundle
IX, IY, ITHETA, IYAW, IVY, IDELTA, IDELTA_DOT = range(7)
N_STATES = 7


@dataclass(frozen=True)
class VehicleParams:
    """Bicycle-model constants.

    ``K_sg`` defaults to the analytic understeer gradient
    ``m_v / (a + b) * (b / C_f - a / C_r)`` when not given.
    """

    m_v: float
    I_z: float
    C_f: float
    C_r: float
    a: float
    b: float
    K_sg: float | None = None

    def __post_init__(self):
        for name in ("m_v", "I_z", "C_f", "C_r", "a", "b"):
            value = getattr(self, name)
            if not math.isfinite(value) or value <= 0:
                raise ValueError(f"{name} must be finite and > 0, got {value!r}")
        if self.K_sg is None:
            object.__setattr__(self, "K_sg", understeer_gradient(self))
        elif not math.isfinite(self.K_sg):
            raise ValueError(f"K_sg must be finite, got {self.K_sg!r}")

    @property
    def wheelbase(self) -> float:
        return self.a + self.b


def understeer_gradient(p: VehicleParams) -> float:
    return p.m_v / (p.a + p.b) * (p.b / p.C_f - p.a / p.C_r)


@dataclass(frozen=True)
class ActuationParams:
    """Second-order steering column, H_a(s) = wn^2 / (s^2 + 2 zeta wn s + wn^2)."""

    zeta: float = 0.4056
    omega_n: float = 21.4813

    def __post_init__(self):
        if not (math.isfinite(self.zeta) and self.zeta > 0):
            raise ValueError(f"zeta must be > 0, got {self.zeta!r}")
        if not (math.isfinite(self.omega_n) and self.omega_n > 0):
            raise ValueError(f"omega_n must be > 0, got {self.omega_n!r}")

    def transfer(self, s: complex) -> complex:
        wn2 = self.omega_n**2
        return wn2 / (s * s + 2.0 * self.zeta * self.omega_n * s + wn2)

    def denominator(self) -> np.ndarray:
        """Coefficients of s^2 + 2 zeta wn s + wn^2, highest power first."""
        return np.array([1.0, 2.0 * self.zeta * self.omega_n, self.omega_n**2])


class LateralState(NamedTuple):
    e_lat: float
    e_lat_dot: float
    theta_err: float
    theta_err_dot: float


class GlobalPose(NamedTuple):
    X: float
    Y: float
    theta: float
    yaw_rate: float
    v_y: float


class ActuationState(NamedTuple):
    delta_f: float
    delta_f_dot: float


class ErrorMatrices(NamedTuple):
    M: np.ndarray
    C: np.ndarray
    L: np.ndarray
    B: np.ndarray
    F: np.ndarray


def _check_speed(V0: float) -> None:
    if not math.isfinite(V0) or V0 <= 0:
        raise ValueError(f"speed must be finite and > 0, got {V0!r}")


def error_matrices(p: VehicleParams, V0: float) -> ErrorMatrices:
    """M, C, L, B, F of  M x'' + C x' + L x = B C_f delta_f - F / R."""
    _check_speed(V0)
    cf, cr, a, b = p.C_f, p.C_r, p.a, p.b
    M = np.diag([p.m_v, p.I_z])
    C = np.array([[cf + cr, a * cf - b * cr], [a * cf - b * cr, a * a * cf + b * b * cr]]) / V0
    L = np.array([[0.0, -(cf + cr)], [0.0, -(a * cf - b * cr)]])
    B = np.array([1.0, a])
    F = np.array([p.m_v * V0**2 + (a * cf - b * cr), a * a * cf + b * b * cr])
    return ErrorMatrices(M, C, L, B, F)


def error_dynamics_deriv(
    x: LateralState, delta_f: float, inv_R: float, p: VehicleParams, V0: float
) -> LateralState:
    values = (*x, delta_f, inv_R)
    if not all(math.isfinite(v) for v in values):
        raise ValueError(f"non-finite input: {values!r}")
    M, C, L, B, F = error_matrices(p, V0)
    pos = np.array([x.e_lat, x.theta_err])
    vel = np.array([x.e_lat_dot, x.theta_err_dot])
    rhs = B * p.C_f * delta_f - F * inv_R - C @ vel - L @ pos
    acc = rhs / np.diag(M)
    return LateralState(vel[0], float(acc[0]), vel[1], float(acc[1]))


def steady_state_heading_error(delta_f: float, inv_R: float, p: VehicleParams, V0: float) -> float:
    """Heading error at which the error dynamics sit in equilibrium.

    Solves L x = B C_f delta_f - F / R in the least-squares sense; the residual
    vanishes only when ``delta_f`` is the steady-state steering for ``inv_R``.
    """
    _, _, L, B, F = error_matrices(p, V0)
    rhs = B * p.C_f * delta_f - F * inv_R
    col = L[:, 1]
    return float(col @ rhs / (col @ col))


def actuation_deriv(s: ActuationState, delta_c: float, p: ActuationParams) -> ActuationState:
    wn = p.omega_n
    return ActuationState(
        s.delta_f_dot, wn * wn * (delta_c - s.delta_f) - 2.0 * p.zeta * wn * s.delta_f_dot
    )


def body_accelerations(v_y, yaw_rate, delta_f, v_x, p: VehicleParams):
    """(dv_y/dt, d(yaw_rate)/dt) from the force and moment balance; broadcasts."""
    cf, cr, a, b = p.C_f, p.C_r, p.a, p.b
    vy_dot = (
        cf * delta_f - (cf + cr) / v_x * v_y - (a * cf - b * cr) / v_x * yaw_rate
    ) / p.m_v - v_x * yaw_rate
    r_dot = (
        a * cf * delta_f - (a * cf - b * cr) / v_x * v_y - (a * a * cf + b * b * cr) / v_x * yaw_rate
    ) / p.I_z
    return vy_dot, r_dot


def global_kinematics_deriv(
    pose: GlobalPose, v_x: float, delta_f: float = 0.0, p: VehicleParams | None = None
) -> GlobalPose:
    """Planar rigid-body kinematics at constant longitudinal speed.

    Without ``p`` the body velocities are treated as frozen (zero accelerations).
    """
    _check_speed(v_x)
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    if p is None:
        vy_dot = r_dot = 0.0
    else:
        vy_dot, r_dot = body_accelerations(pose.v_y, pose.yaw_rate, delta_f, v_x, p)
    return GlobalPose(
        v_x * c - pose.v_y * s,
        v_x * s + pose.v_y * c,
        pose.yaw_rate,
        float(r_dot),
        float(vy_dot),
    )


def steady_state_yaw_rate(delta_f: float, p: VehicleParams, V0: float) -> float:
    """Yaw rate the body dynamics settle to under constant steering."""
    cf, cr, a, b = p.C_f, p.C_r, p.a, p.b
    A = np.array(
        [
            [-(cf + cr) / (p.m_v * V0), -(a * cf - b * cr) / (p.m_v * V0) - V0],
            [-(a * cf - b * cr) / (p.I_z * V0), -(a * a * cf + b * b * cr) / (p.I_z * V0)],
        ]
    )
    u = np.array([cf / p.m_v, a * cf / p.I_z]) * delta_f
    return float(np.linalg.solve(A, -u)[1])


@dataclass(frozen=True)
class Plant:
    """Coupled vehicle + actuator plant at constant speed, vectorised over vehicles."""

    vehicle: VehicleParams
    actuation: ActuationParams
    V0: float
    instantaneous_actuation: bool = False
    _coef: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        _check_speed(self.V0)
        p, v = self.vehicle, self.V0
        cf, cr, a, b = p.C_f, p.C_r, p.a, p.b
        coef = (
            cf / p.m_v,
            (cf + cr) / (v * p.m_v),
            (a * cf - b * cr) / (v * p.m_v) + v,
            a * cf / p.I_z,
            (a * cf - b * cr) / (v * p.I_z),
            (a * a * cf + b * b * cr) / (v * p.I_z),
            self.actuation.omega_n**2,
            2.0 * self.actuation.zeta * self.actuation.omega_n,
        )
        object.__setattr__(self, "_coef", coef)

    def deriv(self, y: np.ndarray, delta_c: np.ndarray) -> np.ndarray:
        """Time derivative of state bundles ``y`` (shape (..., 7))."""
        g1, g2, g3, h1, h2, h3, wn2, two_zw = self._coef
        theta, r, vy = y[..., ITHETA], y[..., IYAW], y[..., IVY]
        if self.instantaneous_actuation:
            delta = delta_c
        else:
            delta = y[..., IDELTA]
        c, s = np.cos(theta), np.sin(theta)
        out = np.empty_like(y)
        out[..., IX] = self.V0 * c - vy * s
        out[..., IY] = self.V0 * s + vy * c
        out[..., ITHETA] = r
        out[..., IYAW] = h1 * delta - h2 * vy - h3 * r
        out[..., IVY] = g1 * delta - g2 * vy - g3 * r
        if self.instantaneous_actuation:
            out[..., IDELTA] = 0.0
            out[..., IDELTA_DOT] = 0.0
        else:
            ddot = y[..., IDELTA_DOT]
            out[..., IDELTA] = ddot
            out[..., IDELTA_DOT] = wn2 * (delta_c - y[..., IDELTA]) - two_zw * ddot
        return out

    def step(self, y: np.ndarray, delta_c: np.ndarray, dt: float) -> np.ndarray:
        out = integrate_step(lambda state: self.deriv(state, delta_c), y, dt)
        if self.instantaneous_actuation:
            out[..., IDELTA] = delta_c
        return out


def integrate_step(f: Callable[[np.ndarray], np.ndarray], y: np.ndarray, dt: float) -> np.ndarray:
    """One classical fourth-order Runge-Kutta step of y' = f(y) (inputs held)."""
    if not (0.0 < dt <= DT_MAX):
        raise ValueError(f"dt must satisfy 0 < dt <= {DT_MAX}, got {dt!r}")
    k1 = f(y)
    k2 = f(y + 0.5 * dt * k1)
    k3 = f(y + 0.5 * dt * k2)
    k4 = f(y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def error_state_space(p: VehicleParams, act: ActuationParams, V0: float):
    """Linear 6-state model [e, e', th, th', delta_f, delta_f'] with inputs (delta_c, 1/R).

    Returns (A, B) with B columns for delta_c and for the curvature disturbance.
    """
    M, C, L, Bv, F = error_matrices(p, V0)
    Minv = np.diag(1.0 / np.diag(M))
    A = np.zeros((6, 6))
    A[0, 1] = 1.0
    A[2, 3] = 1.0
    # positions are states 0 and 2, velocities 1 and 3
    A[np.ix_([1, 3], [0, 2])] = -Minv @ L
    A[np.ix_([1, 3], [1, 3])] = -Minv @ C
    A[[1, 3], 4] = Minv @ Bv * p.C_f
    A[4, 5] = 1.0
    wn = act.omega_n
    A[5, 4] = -wn * wn
    A[5, 5] = -2.0 * act.zeta * wn
    Bm = np.zeros((6, 2))
    Bm[5, 0] = wn * wn
    Bm[[1, 3], 1] = -Minv @ F
    return A, Bm
