"""Full quadcopter model driven by direct motor RPM commands.

State (22 entries, flattened in this order):

    p (3)      world position, m (NED)
    v (3)      world velocity, m/s
    lam (3)    Euler angles (phi, theta, psi), rad
    Omega (3)  body rates (p, q, r), rad/s
    omega (4)  propeller speeds, RPM, clamped to [omega_min, omega_max]
    M_ext (3)  constant body-moment offset, N*m
    F_ext (3)  constant body specific-force offset, m/s^2

Forces are mass-normalized (specific force, what an accelerometer reads);
moments act through the inertia matrix. The modeled force/moment is a
hybrid: an identified polynomial nominal model plus small neural residual
corrections fitted from flight data:

    F_mod = F_nom + F_res,  F_res = (0, 0, -N_T(omega, v_body))
    M_mod = M_nom + M_res,  M_res = N_M(omega, v_body, Omega)

Motors respond to commands through a first-order lag
``omega_dot = (u - omega) / tau_motor``; the external offsets are constant
states (their derivatives are zero) that the policy observes and learns to
compensate.

The nominal coefficient values shipped in ``NominalParams()`` are a
documented placeholder set producing a stable, controllable quadcopter
hovering near 7000 RPM; identified values for a specific airframe belong in
a parameter file (see config module), not in code.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from . import neuralnet
from .mathcore import GRAVITY, euler_kinematics, euler_to_rotmat, integrate
from .neuralnet import MlpNet

STATE_DIM = 22
P = slice(0, 3)
V = slice(3, 6)
LAM = slice(6, 9)
OMEGA = slice(9, 12)
RPM = slice(12, 16)
M_EXT = slice(16, 19)
F_EXT = slice(19, 22)

E3 = np.array([0.0, 0.0, 1.0])


def world_to_body(R: np.ndarray, vec: np.ndarray) -> np.ndarray:
    """Rotate world vectors into the body frame: R^T @ vec, batched."""
    return np.einsum("...ji,...j->...i", R, vec)


def body_to_world(R: np.ndarray, vec: np.ndarray) -> np.ndarray:
    """Rotate body vectors into the world frame: R @ vec, batched."""
    return np.einsum("...ij,...j->...i", R, vec)


@dataclass
class NominalParams:
    """Coefficients of the nominal force/moment model plus actuator limits.

    Force coefficients produce specific force (m/s^2) from RPM and body
    velocity; moment coefficients produce torque (N*m). The defaults are a
    placeholder set: hover at 7000 RPM (4*k_omega*7000^2 = g), lateral drag
    matched to the closed-loop drag identified for the simplified model,
    inertia typical of a ~0.4 kg quadcopter.
    """

    k_x: float = 1.214e-5
    k_y: float = 1.536e-5
    k_z: float = 1.2e-5
    k_omega: float = GRAVITY / (4.0 * 7000.0 ** 2)
    k_h: float = 3.0e-3
    k_p: float = 1.0e-8
    k_pv: float = 2.0e-3
    k_q: float = 1.0e-8
    k_qv: float = 2.0e-3
    k_r1: float = 1.0e-5
    k_r2: float = 1.0e-7
    k_rr: float = 5.0e-3
    inertia: np.ndarray = field(
        default_factory=lambda: np.array([9.06e-4, 1.242e-3, 2.054e-3])
    )
    tau_motor: float = 0.03  # s; placeholder, no flight-data provenance
    omega_min: float = 3000.0
    omega_max: float = 11000.0

    def __post_init__(self):
        self.inertia = np.asarray(self.inertia, dtype=float).reshape(3)
        if np.any(self.inertia <= 0):
            raise ValueError("inertia diagonal must be strictly positive")
        if self.tau_motor <= 0:
            raise ValueError("tau_motor must be > 0")
        if not self.omega_min < self.omega_max:
            raise ValueError("omega_min must be < omega_max")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["inertia"] = [float(x) for x in self.inertia]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NominalParams":
        return cls(**d)

    def hover_rpm(self) -> float:
        """Per-motor speed solving 4*k_omega*w^2 = g (level hover)."""
        return float(np.sqrt(GRAVITY / (4.0 * self.k_omega)))


# Residual net input normalization: RPM mapped from [3000, 11000] to
# [-1, 1], velocities and rates scaled by 1/10. Stored inside the net file
# so fitted nets are self-describing.
def _thrust_net_norm(params: NominalParams):
    mid = 0.5 * (params.omega_min + params.omega_max)
    half = 0.5 * (params.omega_max - params.omega_min)
    offset = np.array([mid] * 4 + [0.0] * 3)
    scale = np.array([1.0 / half] * 4 + [0.1] * 3)
    return offset, scale


def _moment_net_norm(params: NominalParams):
    offset_t, scale_t = _thrust_net_norm(params)
    return (
        np.concatenate([offset_t, np.zeros(3)]),
        np.concatenate([scale_t, np.full(3, 0.1)]),
    )


@dataclass
class ResidualNets:
    """Residual thrust and moment corrections on top of the nominal model.

    net_thrust: 4 RPM + 3 body velocity -> scalar specific thrust (enters
    the force as (0, 0, -output)). net_moment: 4 RPM + 3 body velocity +
    3 body rates -> 3 moment components.
    """

    net_thrust: MlpNet
    net_moment: MlpNet

    def __post_init__(self):
        if self.net_thrust.n_in != 7 or self.net_thrust.n_out != 1:
            raise ValueError(
                f"thrust net must be 7 -> 1, got "
                f"{self.net_thrust.n_in} -> {self.net_thrust.n_out}"
            )
        if self.net_moment.n_in != 10 or self.net_moment.n_out != 3:
            raise ValueError(
                f"moment net must be 10 -> 3, got "
                f"{self.net_moment.n_in} -> {self.net_moment.n_out}"
            )

    @classmethod
    def zeros(cls, params: Optional[NominalParams] = None, hidden: int = 32) -> "ResidualNets":
        """Zero-weighted nets: F_mod == F_nom and M_mod == M_nom exactly."""
        params = params or NominalParams()
        to, ts = _thrust_net_norm(params)
        mo, ms = _moment_net_norm(params)
        return cls(
            neuralnet.zero_mlp([7, hidden, 1], "tanh", to, ts),
            neuralnet.zero_mlp([10, hidden, 3], "tanh", mo, ms),
        )

    @classmethod
    def random(cls, rng: np.random.Generator,
               params: Optional[NominalParams] = None, hidden: int = 32,
               final_scale: float = 1.0) -> "ResidualNets":
        params = params or NominalParams()
        to, ts = _thrust_net_norm(params)
        mo, ms = _moment_net_norm(params)
        return cls(
            neuralnet.init_mlp([7, hidden, 1], "tanh", rng, to, ts,
                               final_scale=final_scale),
            neuralnet.init_mlp([10, hidden, 3], "tanh", rng, mo, ms,
                               final_scale=final_scale),
        )

    def evaluate(self, omega: np.ndarray, v_body: np.ndarray, Omega: np.ndarray):
        """Residual (F_res, M_res) for batched inputs shaped (..., n)."""
        x_t = np.concatenate([omega, v_body], axis=-1)
        x_m = np.concatenate([omega, v_body, Omega], axis=-1)
        thrust = neuralnet.forward(self.net_thrust, x_t)[..., 0]
        F_res = np.zeros(v_body.shape[:-1] + (3,))
        F_res[..., 2] = -thrust
        M_res = neuralnet.forward(self.net_moment, x_m)
        return F_res, M_res

    def save(self, path) -> None:
        arrays = neuralnet._net_arrays(self.net_thrust, "thrust/")
        arrays.update(neuralnet._net_arrays(self.net_moment, "moment/"))
        neuralnet.save_arrays(
            path, "residual_nets",
            {
                "thrust": {"layer_sizes": self.net_thrust.layer_sizes,
                           "activation": self.net_thrust.activation},
                "moment": {"layer_sizes": self.net_moment.layer_sizes,
                           "activation": self.net_moment.activation},
            },
            arrays,
        )

    @classmethod
    def load(cls, path) -> "ResidualNets":
        kind, meta, arrays = neuralnet.load_arrays(path)
        if kind != "residual_nets":
            raise neuralnet.WeightFileError(
                f"{path}: expected kind 'residual_nets', found {kind!r}"
            )
        return cls(
            neuralnet._net_from_arrays(meta["thrust"], arrays, "thrust/"),
            neuralnet._net_from_arrays(meta["moment"], arrays, "moment/"),
        )


@dataclass
class QuadStateE2E:
    """Structured view of the 22-entry flat state vector."""

    p: np.ndarray
    v: np.ndarray
    lam: np.ndarray
    Omega: np.ndarray
    omega: np.ndarray
    M_ext: np.ndarray
    F_ext: np.ndarray

    def vec(self) -> np.ndarray:
        return np.concatenate(
            [self.p, self.v, self.lam, self.Omega, self.omega, self.M_ext, self.F_ext]
        ).astype(float)

    @classmethod
    def from_vec(cls, x: np.ndarray) -> "QuadStateE2E":
        x = np.asarray(x, dtype=float)
        if x.shape != (STATE_DIM,):
            raise ValueError(f"expected shape ({STATE_DIM},), got {x.shape}")
        return cls(x[P].copy(), x[V].copy(), x[LAM].copy(), x[OMEGA].copy(),
                   x[RPM].copy(), x[M_EXT].copy(), x[F_EXT].copy())


def hover_state(params: NominalParams, p=(0.0, 0.0, 0.0), psi: float = 0.0) -> np.ndarray:
    """Level-hover state: motors at hover RPM, zero rates and offsets."""
    x = np.zeros(STATE_DIM)
    x[P] = np.asarray(p, dtype=float)
    x[8] = psi
    x[RPM] = params.hover_rpm()
    return x


def nominal_force(omega: np.ndarray, v_body: np.ndarray,
                  params: NominalParams) -> np.ndarray:
    """Nominal specific force in the body frame, shape (..., 3).

    x/y: linear drag proportional to body velocity times total prop speed;
    z: thrust from the squared speeds plus inflow and horizontal-speed
    corrections (negative z is upward in NED).
    """
    omega = np.asarray(omega, dtype=float)
    v_body = np.asarray(v_body, dtype=float)
    s1 = omega.sum(axis=-1)
    s2 = (omega * omega).sum(axis=-1)
    vx, vy, vz = v_body[..., 0], v_body[..., 1], v_body[..., 2]
    F = np.empty(np.broadcast_shapes(omega.shape[:-1], v_body.shape[:-1]) + (3,))
    F[..., 0] = -params.k_x * vx * s1
    F[..., 1] = -params.k_y * vy * s1
    F[..., 2] = -params.k_omega * s2 - params.k_z * vz * s1 - params.k_h * (vx * vx + vy * vy)
    return F


def nominal_moment(omega: np.ndarray, omega_dot: np.ndarray, v_body: np.ndarray,
                   Omega: np.ndarray, params: NominalParams) -> np.ndarray:
    """Nominal body moment (N*m), shape (..., 3).

    Roll/pitch from squared-speed differentials plus translational-velocity
    coupling; yaw from speed and acceleration differentials minus a linear
    damping term in r.
    """
    omega = np.asarray(omega, dtype=float)
    omega_dot = np.asarray(omega_dot, dtype=float)
    v_body = np.asarray(v_body, dtype=float)
    Omega = np.asarray(Omega, dtype=float)
    w2 = omega * omega
    shape = np.broadcast_shapes(
        omega.shape[:-1], omega_dot.shape[:-1], v_body.shape[:-1], Omega.shape[:-1]
    )
    M = np.empty(shape + (3,))
    M[..., 0] = (
        params.k_p * (w2[..., 0] - w2[..., 1] - w2[..., 2] + w2[..., 3])
        + params.k_pv * v_body[..., 1]
    )
    M[..., 1] = (
        params.k_q * (w2[..., 0] + w2[..., 1] - w2[..., 2] - w2[..., 3])
        + params.k_qv * v_body[..., 0]
    )
    M[..., 2] = (
        params.k_r1 * (-omega[..., 0] + omega[..., 1] - omega[..., 2] + omega[..., 3])
        + params.k_r2 * (-omega_dot[..., 0] + omega_dot[..., 1]
                         - omega_dot[..., 2] + omega_dot[..., 3])
        - params.k_rr * Omega[..., 2]
    )
    return M


def e2e_derivative(x: np.ndarray, u: np.ndarray, params: NominalParams,
                   nets: ResidualNets) -> np.ndarray:
    """Continuous-time derivative of the 22-entry state under RPM command u.

    Commands are clamped to [omega_min, omega_max] before use. Broadcasts
    over leading batch axes of x (..., 22) and u (..., 4).

    Raises:
        PitchSingularityError: propagated from the Euler kinematics.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    u_cl = np.clip(u, params.omega_min, params.omega_max)

    v = x[..., V]
    lam = x[..., LAM]
    Om = x[..., OMEGA]
    omega = x[..., RPM]

    R = euler_to_rotmat(lam)
    v_body = world_to_body(R, v)
    omega_dot = (u_cl - omega) / params.tau_motor

    F_res, M_res = nets.evaluate(omega, v_body, Om)
    F_mod = nominal_force(omega, v_body, params) + F_res
    M_mod = nominal_moment(omega, omega_dot, v_body, Om, params) + M_res

    I = params.inertia
    torque = -np.cross(Om, I * Om) + M_mod + x[..., M_EXT]

    dx = np.zeros_like(x)
    dx[..., P] = v
    dx[..., V] = GRAVITY * E3 + body_to_world(R, F_mod + x[..., F_EXT])
    dx[..., LAM] = euler_kinematics(lam, Om)
    dx[..., OMEGA] = torque / I
    dx[..., RPM] = omega_dot
    # M_ext, F_ext are constant states: derivatives stay zero
    return dx


def step_e2e(x: np.ndarray, u: np.ndarray, dt: float, params: NominalParams,
             nets: ResidualNets, method: str = "euler") -> np.ndarray:
    """One fixed step of the model; prop speeds re-clamped after the step."""
    x_new = integrate(x, lambda s: e2e_derivative(s, u, params, nets), dt, method)
    x_new[..., RPM] = np.clip(x_new[..., RPM], params.omega_min, params.omega_max)
    return x_new
