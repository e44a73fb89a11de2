"""Cascade PID controller: waypoint + yaw setpoints down to motor commands.

Runs at the physics rate underneath the planning policy. The outer loop
turns position error into a desired acceleration (with gravity feedforward),
which maps to a collective thrust and, via a small-angle inversion of the
thrust direction, to desired roll/pitch. The inner loop turns attitude error
into body torques, and the allocation inverse produces motor speeds.

The controller is a pure function of an explicit ControllerState, so callers
keep one state per drone and may run any number of drones concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .dynamics import (
    DroneParams,
    DroneState,
    MotorCommand,
    _wrap_pi,
    wrap_angle,
)


def _vec3(x, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.shape != (3,):
        raise ValueError(f"{name} must have shape (3,), got {a.shape}")
    return a


@dataclass(eq=False)
class Setpoint:
    """Target position (m, world) and yaw (rad) for the low-level controller."""

    target_position: np.ndarray
    target_yaw: float = 0.0

    def __post_init__(self):
        self.target_position = _vec3(self.target_position, "target_position")


@dataclass(frozen=True, eq=False)
class PidGains:
    """Gains and clamps for the position (outer) and attitude (inner) loops.

    Output limits clamp the outer loop's commanded acceleration (m/s^2) and
    the inner loop's commanded angular acceleration (rad/s^2); integrator
    limits clamp the accumulated error on each axis (anti-windup).
    """

    pos_p: np.ndarray
    pos_i: np.ndarray
    pos_d: np.ndarray
    att_p: np.ndarray
    att_i: np.ndarray
    att_d: np.ndarray
    pos_integrator_limit: np.ndarray
    att_integrator_limit: np.ndarray
    pos_output_limit: np.ndarray
    att_output_limit: np.ndarray
    max_tilt: float = math.radians(30.0)

    def __post_init__(self):
        for name in (
            "pos_p", "pos_i", "pos_d", "att_p", "att_i", "att_d",
            "pos_integrator_limit", "att_integrator_limit",
            "pos_output_limit", "att_output_limit",
        ):
            object.__setattr__(self, name, _vec3(getattr(self, name), name))
        gains = np.concatenate([self.pos_p, self.pos_i, self.pos_d,
                                self.att_p, self.att_i, self.att_d])
        if np.any(gains < 0.0):
            raise ValueError("PID gains must be non-negative")
        limits = np.concatenate([self.pos_integrator_limit, self.att_integrator_limit,
                                 self.pos_output_limit, self.att_output_limit])
        if np.any(limits <= 0.0):
            raise ValueError("limits must be positive")

    def packed(self) -> np.ndarray:
        """Flattened (31,) layout consumed by the numba core."""
        return np.concatenate(
            [
                self.pos_p, self.pos_i, self.pos_d,
                self.att_p, self.att_i, self.att_d,
                self.pos_integrator_limit, self.att_integrator_limit,
                self.pos_output_limit, self.att_output_limit,
                [self.max_tilt],
            ]
        )


def default_gains() -> PidGains:
    """Step-response-tuned defaults for the default drone parameters."""
    return PidGains(
        pos_p=[9.0, 9.0, 12.0],
        pos_i=[0.25, 0.25, 0.25],
        pos_d=[5.5, 5.5, 6.0],
        att_p=[400.0, 400.0, 120.0],
        att_i=[0.0, 0.0, 0.0],
        att_d=[40.0, 40.0, 25.0],
        pos_integrator_limit=[0.5, 0.5, 0.5],
        att_integrator_limit=[1.0, 1.0, 1.0],
        pos_output_limit=[5.5, 5.5, 10.0],
        att_output_limit=[250.0, 250.0, 100.0],
    )


@dataclass(eq=False)
class ControllerState:
    """PID memory: integrators and previous errors for the derivative terms."""

    pos_integral: np.ndarray = field(default_factory=lambda: np.zeros(3))
    att_integral: np.ndarray = field(default_factory=lambda: np.zeros(3))
    prev_pos_error: np.ndarray = field(default_factory=lambda: np.zeros(3))
    prev_att_error: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def as_vector(self) -> np.ndarray:
        return np.concatenate(
            [self.pos_integral, self.att_integral, self.prev_pos_error, self.prev_att_error]
        )

    @classmethod
    def from_vector(cls, v) -> "ControllerState":
        v = np.asarray(v, dtype=np.float64)
        return cls(v[0:3].copy(), v[3:6].copy(), v[6:9].copy(), v[9:12].copy())


@njit(cache=True)
def _pid_step(x, target_pos, target_yaw, ctl, gains, mass, grav, inertia,
              kf, km, arm, wsq_max, dt, out_wsq, out_ctl):
    """One controller tick: state + setpoint -> squared motor speeds.

    ctl/out_ctl layout: pos_integral(3), att_integral(3), prev_pos_err(3),
    prev_att_err(3). gains layout matches PidGains.packed().
    """
    max_tilt = gains[30]

    # Outer loop: position error -> desired world acceleration.
    ax = 0.0
    ay = 0.0
    az = 0.0
    for i in range(3):
        err = target_pos[i] - x[i]
        integ = ctl[i] + err * dt
        lim = gains[18 + i]
        if integ > lim:
            integ = lim
        elif integ < -lim:
            integ = -lim
        deriv = (err - ctl[6 + i]) / dt
        acc = gains[i] * err + gains[3 + i] * integ + gains[6 + i] * deriv
        lim = gains[24 + i]
        if acc > lim:
            acc = lim
        elif acc < -lim:
            acc = -lim
        out_ctl[i] = integ
        out_ctl[6 + i] = err
        if i == 0:
            ax = acc
        elif i == 1:
            ay = acc
        else:
            az = acc

    # Tilt compensation keeps the vertical thrust component at the commanded
    # value; the floor avoids blowup near the crash guard. Exactly 1 when level.
    tilt_cos = math.cos(x[6]) * math.cos(x[7])
    if tilt_cos < 0.5:
        tilt_cos = 0.5
    thrust = mass * (grav + az) / tilt_cos
    if thrust < 0.0:
        thrust = 0.0

    # Small-angle inversion of the thrust direction for desired roll/pitch.
    psi = x[8]
    cps = math.cos(psi)
    sps = math.sin(psi)
    phi_des = (ax * sps - ay * cps) / grav
    theta_des = (ax * cps + ay * sps) / grav
    if phi_des > max_tilt:
        phi_des = max_tilt
    elif phi_des < -max_tilt:
        phi_des = -max_tilt
    if theta_des > max_tilt:
        theta_des = max_tilt
    elif theta_des < -max_tilt:
        theta_des = -max_tilt

    # Inner loop: attitude error -> desired angular acceleration.
    a0 = 0.0
    a1 = 0.0
    a2 = 0.0
    for i in range(3):
        if i == 0:
            err = phi_des - x[6]
        elif i == 1:
            err = theta_des - x[7]
        else:
            err = _wrap_pi(target_yaw - x[8])
        integ = ctl[3 + i] + err * dt
        lim = gains[21 + i]
        if integ > lim:
            integ = lim
        elif integ < -lim:
            integ = -lim
        deriv = (err - ctl[9 + i]) / dt
        acc = gains[9 + i] * err + gains[12 + i] * integ + gains[15 + i] * deriv
        lim = gains[27 + i]
        if acc > lim:
            acc = lim
        elif acc < -lim:
            acc = -lim
        out_ctl[3 + i] = integ
        out_ctl[9 + i] = err
        if i == 0:
            a0 = acc
        elif i == 1:
            a1 = acc
        else:
            a2 = acc

    tau_x = inertia[0, 0] * a0 + inertia[0, 1] * a1 + inertia[0, 2] * a2
    tau_y = inertia[1, 0] * a0 + inertia[1, 1] * a1 + inertia[1, 2] * a2
    tau_z = inertia[2, 0] * a0 + inertia[2, 1] * a1 + inertia[2, 2] * a2

    # Allocation inverse with motor saturation.
    base = thrust / (4.0 * kf)
    d_roll = tau_x / (2.0 * arm * kf)
    d_pitch = tau_y / (2.0 * arm * kf)
    d_yaw = tau_z / (4.0 * km)
    out_wsq[0] = base - d_pitch + d_yaw
    out_wsq[1] = base + d_roll - d_yaw
    out_wsq[2] = base + d_pitch + d_yaw
    out_wsq[3] = base - d_roll - d_yaw
    for j in range(4):
        if out_wsq[j] < 0.0:
            out_wsq[j] = 0.0
        elif out_wsq[j] > wsq_max:
            out_wsq[j] = wsq_max


def control_step(
    state: DroneState,
    sp: Setpoint,
    ctl: ControllerState,
    gains: PidGains,
    params: DroneParams,
    dt: float,
) -> tuple[MotorCommand, ControllerState]:
    """Run one PID tick; returns the motor command and the updated memory."""
    out_wsq = np.empty(4)
    out_ctl = np.empty(12)
    _pid_step(
        state.as_vector(),
        sp.target_position,
        float(sp.target_yaw),
        ctl.as_vector(),
        gains.packed(),
        params.mass,
        params.gravity,
        params.inertia,
        params.thrust_coeff,
        params.torque_coeff,
        params.arm_length,
        params.max_speed_squared,
        dt,
        out_wsq,
        out_ctl,
    )
    return MotorCommand(speeds_squared=out_wsq), ControllerState.from_vector(out_ctl)


def clamp_setpoint(
    sp: Setpoint,
    state: DroneState,
    max_offset: float,
    bounds_min,
    bounds_max,
) -> Setpoint:
    """Clamp a setpoint to the action box around the drone and to world bounds."""
    bounds_min = np.asarray(bounds_min, dtype=np.float64)
    bounds_max = np.asarray(bounds_max, dtype=np.float64)
    lo = np.maximum(state.position - max_offset, bounds_min)
    hi = np.minimum(state.position + max_offset, bounds_max)
    target = np.clip(sp.target_position, lo, hi)
    return Setpoint(target_position=target, target_yaw=wrap_angle(float(sp.target_yaw)))
