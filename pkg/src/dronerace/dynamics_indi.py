"""Simplified closed-loop quadcopter abstraction for thrust/body-rate control.

When an inner-loop controller tracks body-rate and thrust commands, the
plant seen by the outer policy reduces to kinematics, a linear body-drag
model, and first-order delays on the tracked quantities:

    p_dot     = v
    v_dot     = g*e3 + R(lam) @ F,   F = (-d_x*vx_body, -d_y*vy_body, -T)
    lam_dot   = Q(lam) @ Omega
    Omega_dot = (Omega_cmd - Omega) / tau_Omega
    T_dot     = (T_cmd - T) / tau_T

State (13 entries, flattened): p (3), v (3), lam (3), Omega (3), T (1),
with T the mass-normalized thrust (m/s^2). Drag acts on body-frame x/y
velocity only. Command clamping (rates to +-rate_bound, thrust to
[thrust_min, thrust_max]) happens inside the dynamics so the actuator
abstraction holds regardless of caller.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .mathcore import GRAVITY, euler_kinematics, euler_to_rotmat, integrate
from .dynamics_e2e import world_to_body, body_to_world, E3

STATE_DIM = 13
P = slice(0, 3)
V = slice(3, 6)
LAM = slice(6, 9)
OMEGA = slice(9, 12)
THRUST = 12


@dataclass
class IndiParams:
    """First-order delay constants and drag coefficients, with the command
    envelope of the inner-loop abstraction.

    Defaults are the flight-data-identified values: tau_Omega = tau_T =
    0.03 s, d_x = 0.34, d_y = 0.43 (1/s), rate commands in [-3, 3] rad/s,
    thrust commands in [0, 15] m/s^2.
    """

    tau_omega: float = 0.03
    tau_thrust: float = 0.03
    d_x: float = 0.34
    d_y: float = 0.43
    rate_bound: float = 3.0
    thrust_min: float = 0.0
    thrust_max: float = 15.0

    def __post_init__(self):
        if self.tau_omega <= 0 or self.tau_thrust <= 0:
            raise ValueError("delay constants must be > 0")
        if not self.thrust_min < self.thrust_max:
            raise ValueError("thrust_min must be < thrust_max")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "IndiParams":
        return cls(**d)


@dataclass
class QuadStateIndi:
    """Structured view of the 13-entry flat state vector."""

    p: np.ndarray
    v: np.ndarray
    lam: np.ndarray
    Omega: np.ndarray
    T: float

    def vec(self) -> np.ndarray:
        return np.concatenate(
            [self.p, self.v, self.lam, self.Omega, [self.T]]
        ).astype(float)

    @classmethod
    def from_vec(cls, x: np.ndarray) -> "QuadStateIndi":
        x = np.asarray(x, dtype=float)
        if x.shape != (STATE_DIM,):
            raise ValueError(f"expected shape ({STATE_DIM},), got {x.shape}")
        return cls(x[P].copy(), x[V].copy(), x[LAM].copy(), x[OMEGA].copy(),
                   float(x[THRUST]))


def hover_state(p=(0.0, 0.0, 0.0), psi: float = 0.0) -> np.ndarray:
    """Level hover: thrust balancing gravity, zero rates and velocity."""
    x = np.zeros(STATE_DIM)
    x[P] = np.asarray(p, dtype=float)
    x[8] = psi
    x[THRUST] = GRAVITY
    return x


def clamp_command(u: np.ndarray, params: IndiParams) -> np.ndarray:
    """Clamp (Omega_cmd, T_cmd) into the actuator envelope."""
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    out[..., 0:3] = np.clip(u[..., 0:3], -params.rate_bound, params.rate_bound)
    out[..., 3] = np.clip(u[..., 3], params.thrust_min, params.thrust_max)
    return out


def indi_derivative(x: np.ndarray, u: np.ndarray, params: IndiParams) -> np.ndarray:
    """Continuous-time derivative under command u = (p,q,r commands, T command).

    Commands are clamped before use. Broadcasts over leading batch axes of
    x (..., 11) and u (..., 4).

    Raises:
        PitchSingularityError: propagated from the Euler kinematics.
    """
    x = np.asarray(x, dtype=float)
    u_cl = clamp_command(u, params)

    v = x[..., V]
    lam = x[..., LAM]
    Om = x[..., OMEGA]
    T = x[..., THRUST]

    R = euler_to_rotmat(lam)
    v_body = world_to_body(R, v)
    F = np.empty(v_body.shape)
    F[..., 0] = -params.d_x * v_body[..., 0]
    F[..., 1] = -params.d_y * v_body[..., 1]
    F[..., 2] = -T

    dx = np.zeros_like(x)
    dx[..., P] = v
    dx[..., V] = GRAVITY * E3 + body_to_world(R, F)
    dx[..., LAM] = euler_kinematics(lam, Om)
    dx[..., OMEGA] = (u_cl[..., 0:3] - Om) / params.tau_omega
    dx[..., THRUST] = (u_cl[..., 3] - T) / params.tau_thrust
    return dx


def step_indi(x: np.ndarray, u: np.ndarray, dt: float, params: IndiParams,
              method: str = "euler") -> np.ndarray:
    """One fixed step of the simplified model."""
    return integrate(x, lambda s: indi_derivative(s, u, params), dt, method)
