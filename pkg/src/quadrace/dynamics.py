"""Rigid-body quadrotor dynamics with fixed-step RK4 integration.

World frame is z-up; the body frame has x forward and z along the thrust
axis. Attitude is parameterized by Z-Y-X (yaw-pitch-roll) Euler angles.
Translational drag acts on the world-frame velocity, and the four motors
map to collective thrust plus body torques through a fixed 4x4 allocation
matrix (motors numbered 1..4: front, left, back, right; odd motors spin
opposite to even ones, so speeding up {1,3} against {2,4} yaws positively).

All functions here are pure; the numerical cores are numba-compiled and
shared with the race environment's substep loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

GRAVITY = 9.81
PHYSICS_DT = 1.0 / 240.0

# Euler kinematics degenerate at 90 deg pitch; beyond this tilt the vehicle
# is considered crashed by callers.
TILT_LIMIT = math.radians(89.0)


def _as_vec(x, n, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.shape != (n,):
        raise ValueError(f"{name} must have shape ({n},), got {a.shape}")
    return a


def _default_inertia() -> np.ndarray:
    return np.diag([1.4e-5, 1.4e-5, 2.17e-5])


def _default_drag() -> np.ndarray:
    return np.full(3, 9.18e-7)


@dataclass(frozen=True, eq=False)
class DroneParams:
    """Physical constants of one quadrotor. Defaults describe a nano quad."""

    mass: float = 0.027                 # kg
    gravity: float = GRAVITY            # m/s^2
    inertia: np.ndarray = field(default_factory=_default_inertia)  # kg m^2, 3x3 SPD
    arm_length: float = 0.0397          # m, hub to motor
    thrust_coeff: float = 3.16e-10      # N s^2 / rad^2
    torque_coeff: float = 7.94e-12      # N m s^2 / rad^2
    drag_coeffs: np.ndarray = field(default_factory=_default_drag)  # N s/m, diagonal drag
    collision_radius: float = 0.06      # m, bounding sphere
    motor_speed_max: float = 21713.0    # rad/s
    inertia_inv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        inertia = np.atleast_2d(np.asarray(self.inertia, dtype=np.float64))
        if inertia.shape == (1, 3):
            inertia = np.diag(inertia[0])
        if inertia.shape != (3, 3):
            raise ValueError(f"inertia must be 3x3, got {inertia.shape}")
        if not np.allclose(inertia, inertia.T):
            raise ValueError("inertia must be symmetric")
        if np.any(np.linalg.eigvalsh(inertia) <= 0.0):
            raise ValueError("inertia must be positive-definite")
        object.__setattr__(self, "inertia", inertia)
        object.__setattr__(self, "drag_coeffs", _as_vec(self.drag_coeffs, 3, "drag_coeffs"))
        if self.mass <= 0.0:
            raise ValueError("mass must be positive")
        if min(self.arm_length, self.thrust_coeff, self.torque_coeff) <= 0.0:
            raise ValueError("arm_length, thrust_coeff, torque_coeff must be positive")
        if np.any(self.drag_coeffs < 0.0):
            raise ValueError("drag coefficients must be non-negative")
        if self.motor_speed_max <= 0.0:
            raise ValueError("motor_speed_max must be positive")
        object.__setattr__(self, "inertia_inv", np.linalg.inv(inertia))

    @property
    def max_speed_squared(self) -> float:
        return self.motor_speed_max ** 2

    @property
    def hover_speed_squared(self) -> float:
        """Per-motor squared speed that exactly balances gravity when level."""
        return self.mass * self.gravity / (4.0 * self.thrust_coeff)


@dataclass(eq=False)
class DroneState:
    """12-dimensional rigid-body state of one drone."""

    position: np.ndarray     # m, world frame
    velocity: np.ndarray     # m/s, world frame
    attitude: np.ndarray     # rad, (roll, pitch, yaw)
    body_rates: np.ndarray   # rad/s, body frame (p, q, r)

    def __post_init__(self):
        self.position = _as_vec(self.position, 3, "position")
        self.velocity = _as_vec(self.velocity, 3, "velocity")
        self.attitude = _as_vec(self.attitude, 3, "attitude")
        self.body_rates = _as_vec(self.body_rates, 3, "body_rates")

    @classmethod
    def at_rest(cls, position, yaw: float = 0.0) -> "DroneState":
        return cls(
            position=np.asarray(position, dtype=np.float64),
            velocity=np.zeros(3),
            attitude=np.array([0.0, 0.0, yaw]),
            body_rates=np.zeros(3),
        )

    @classmethod
    def from_vector(cls, x) -> "DroneState":
        x = _as_vec(x, 12, "state vector")
        return cls(x[0:3].copy(), x[3:6].copy(), x[6:9].copy(), x[9:12].copy())

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity, self.attitude, self.body_rates])

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.as_vector()).all())

    def is_upright(self) -> bool:
        """True while roll and pitch stay inside the crash guard."""
        return bool(abs(self.attitude[0]) < TILT_LIMIT and abs(self.attitude[1]) < TILT_LIMIT)


@dataclass(eq=False)
class MotorCommand:
    """Squared motor speeds (rad^2/s^2), one per rotor."""

    speeds_squared: np.ndarray

    def __post_init__(self):
        self.speeds_squared = _as_vec(self.speeds_squared, 4, "speeds_squared")


@dataclass(eq=False)
class Wrench:
    """Collective thrust (N, body z) and body torques (N m)."""

    thrust: float
    torques: np.ndarray

    def __post_init__(self):
        self.torques = _as_vec(self.torques, 3, "torques")


def wrap_angle(a: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def allocation_matrix(params: DroneParams) -> np.ndarray:
    """4x4 map from squared motor speeds to (thrust, roll, pitch, yaw torques)."""
    kf = params.thrust_coeff
    km = params.torque_coeff
    lk = params.arm_length * kf
    return np.array(
        [
            [kf, kf, kf, kf],
            [0.0, lk, 0.0, -lk],
            [-lk, 0.0, lk, 0.0],
            [km, -km, km, -km],
        ]
    )


def allocate(cmd: MotorCommand, params: DroneParams) -> Wrench:
    """Map squared motor speeds to collective thrust and body torques."""
    w = cmd.speeds_squared
    kf = params.thrust_coeff
    km = params.torque_coeff
    lk = params.arm_length * kf
    thrust = kf * (w[0] + w[1] + w[2] + w[3])
    torques = np.array(
        [
            lk * (w[1] - w[3]),
            lk * (w[2] - w[0]),
            km * (w[0] - w[1] + w[2] - w[3]),
        ]
    )
    return Wrench(thrust=thrust, torques=torques)


def allocate_inverse(wrench: Wrench, params: DroneParams) -> MotorCommand:
    """Invert the allocation map, clamping each motor to its feasible range.

    Infeasible wrenches saturate silently: entries are clamped to
    [0, motor_speed_max^2] and the resulting wrench deviation is accepted.
    """
    base = wrench.thrust / (4.0 * params.thrust_coeff)
    d_roll = wrench.torques[0] / (2.0 * params.arm_length * params.thrust_coeff)
    d_pitch = wrench.torques[1] / (2.0 * params.arm_length * params.thrust_coeff)
    d_yaw = wrench.torques[2] / (4.0 * params.torque_coeff)
    w = np.array(
        [
            base - d_pitch + d_yaw,
            base + d_roll - d_yaw,
            base + d_pitch + d_yaw,
            base - d_roll - d_yaw,
        ]
    )
    np.clip(w, 0.0, params.max_speed_squared, out=w)
    return MotorCommand(speeds_squared=w)


def hover_command(params: DroneParams) -> MotorCommand:
    """Open-loop command that holds a level hover exactly."""
    return MotorCommand(speeds_squared=np.full(4, params.hover_speed_squared))


def rotation_matrix(attitude) -> np.ndarray:
    """Body-to-world rotation R = Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
    phi, theta, psi = np.asarray(attitude, dtype=np.float64)
    cph, sph = math.cos(phi), math.sin(phi)
    cth, sth = math.cos(theta), math.sin(theta)
    cps, sps = math.cos(psi), math.sin(psi)
    return np.array(
        [
            [cps * cth, cps * sth * sph - sps * cph, cps * sth * cph + sps * sph],
            [sps * cth, sps * sth * sph + cps * cph, sps * sth * cph - cps * sph],
            [-sth, cth * sph, cth * cph],
        ]
    )


def euler_rate_matrix(attitude) -> np.ndarray:
    """Transform W(attitude) from body rates to Euler-angle rates."""
    phi, theta, _ = np.asarray(attitude, dtype=np.float64)
    cph, sph = math.cos(phi), math.sin(phi)
    cth, tth = math.cos(theta), math.tan(theta)
    return np.array(
        [
            [1.0, sph * tth, cph * tth],
            [0.0, cph, -sph],
            [0.0, sph / cth, cph / cth],
        ]
    )


# ---------------------------------------------------------------------------
# Numba cores. These operate on flat float64 arrays so the race environment
# can run them inside its own compiled substep loop.
# ---------------------------------------------------------------------------


@njit(cache=True)
def _wrap_pi(a):
    return (a + math.pi) % (2.0 * math.pi) - math.pi


@njit(cache=True)
def _state_deriv(x, wsq, mass, grav, inertia, inertia_inv, kd, kf, km, arm, out):
    """Time derivative of the 12-vector state under a fixed motor command."""
    phi = x[6]
    theta = x[7]
    psi = x[8]
    cph = math.cos(phi)
    sph = math.sin(phi)
    cth = math.cos(theta)
    sth = math.sin(theta)
    cps = math.cos(psi)
    sps = math.sin(psi)

    thrust = kf * (wsq[0] + wsq[1] + wsq[2] + wsq[3])
    tau_x = arm * kf * (wsq[1] - wsq[3])
    tau_y = arm * kf * (wsq[2] - wsq[0])
    tau_z = km * (wsq[0] - wsq[1] + wsq[2] - wsq[3])

    # Thrust along body z, rotated to the world frame (third column of R).
    fx = (cps * sth * cph + sps * sph) * thrust
    fy = (sps * sth * cph - cps * sph) * thrust
    fz = (cth * cph) * thrust

    out[0] = x[3]
    out[1] = x[4]
    out[2] = x[5]
    out[3] = (fx - kd[0] * x[3]) / mass
    out[4] = (fy - kd[1] * x[4]) / mass
    out[5] = (fz - kd[2] * x[5]) / mass - grav

    p = x[9]
    q = x[10]
    r = x[11]
    iw0 = inertia[0, 0] * p + inertia[0, 1] * q + inertia[0, 2] * r
    iw1 = inertia[1, 0] * p + inertia[1, 1] * q + inertia[1, 2] * r
    iw2 = inertia[2, 0] * p + inertia[2, 1] * q + inertia[2, 2] * r
    # tau - omega x (I omega)
    m0 = tau_x - (q * iw2 - r * iw1)
    m1 = tau_y - (r * iw0 - p * iw2)
    m2 = tau_z - (p * iw1 - q * iw0)

    tth = sth / cth
    out[6] = p + sph * tth * q + cph * tth * r
    out[7] = cph * q - sph * r
    out[8] = (sph * q + cph * r) / cth

    out[9] = inertia_inv[0, 0] * m0 + inertia_inv[0, 1] * m1 + inertia_inv[0, 2] * m2
    out[10] = inertia_inv[1, 0] * m0 + inertia_inv[1, 1] * m1 + inertia_inv[1, 2] * m2
    out[11] = inertia_inv[2, 0] * m0 + inertia_inv[2, 1] * m1 + inertia_inv[2, 2] * m2


@njit(cache=True)
def _rk4_step(x, wsq, mass, grav, inertia, inertia_inv, kd, kf, km, arm, dt, out):
    """One classical RK4 step; yaw is wrapped to [-pi, pi) afterwards."""
    k1 = np.empty(12)
    k2 = np.empty(12)
    k3 = np.empty(12)
    k4 = np.empty(12)
    tmp = np.empty(12)

    _state_deriv(x, wsq, mass, grav, inertia, inertia_inv, kd, kf, km, arm, k1)
    for i in range(12):
        tmp[i] = x[i] + 0.5 * dt * k1[i]
    _state_deriv(tmp, wsq, mass, grav, inertia, inertia_inv, kd, kf, km, arm, k2)
    for i in range(12):
        tmp[i] = x[i] + 0.5 * dt * k2[i]
    _state_deriv(tmp, wsq, mass, grav, inertia, inertia_inv, kd, kf, km, arm, k3)
    for i in range(12):
        tmp[i] = x[i] + dt * k3[i]
    _state_deriv(tmp, wsq, mass, grav, inertia, inertia_inv, kd, kf, km, arm, k4)
    for i in range(12):
        out[i] = x[i] + (dt / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    out[8] = _wrap_pi(out[8])


def step(state: DroneState, cmd: MotorCommand, params: DroneParams, dt: float = PHYSICS_DT) -> DroneState:
    """Advance the state by dt under a fixed motor command (RK4).

    Divergent integrations propagate non-finite values into the returned
    state rather than raising; callers treat such states as crashed.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    out = np.empty(12)
    _rk4_step(
        state.as_vector(),
        cmd.speeds_squared,
        params.mass,
        params.gravity,
        params.inertia,
        params.inertia_inv,
        params.drag_coeffs,
        params.thrust_coeff,
        params.torque_coeff,
        params.arm_length,
        dt,
        out,
    )
    return DroneState.from_vector(out)
