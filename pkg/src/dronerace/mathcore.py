"""Reference frames, rotation/kinematics matrices, and fixed-step integrators.

Conventions (shared by every module in this package):

* World frame is NED (north-east-down): gravity points along +z, altitude
  is negative z. Thrust acts along the -z body axis.
* Attitude is ZYX (yaw-pitch-roll) Euler angles ``lam = (phi, theta, psi)``.
  ``euler_to_rotmat`` returns the body-to-world rotation
  ``R = Rz(psi) @ Ry(theta) @ Rx(phi)``; world vectors are ``R @ v_body``.
* Body rates ``Omega = (p, q, r)`` are expressed in the body frame and map
  to Euler-angle rates through ``lam_dot = Q(lam) @ Omega``, which is
  singular at pitch +-90 deg. Evaluation is guarded at
  ``|theta| >= pi/2 - PITCH_GUARD_MARGIN``.

All functions broadcast over leading axes: states shaped ``(..., n)`` give
results shaped ``(..., n)`` (or ``(..., 3, 3)`` for rotation matrices), so
the same code path serves scalar calls and vectorized batches.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

GRAVITY = 9.81  # m/s^2, NED +z

# Pitch values closer than this to +-pi/2 are rejected by the Euler
# kinematics (Q blows up as 1/cos(theta)).
PITCH_GUARD_MARGIN = 1e-3
PITCH_LIMIT = np.pi / 2 - PITCH_GUARD_MARGIN


class PitchSingularityError(ValueError):
    """Pitch angle too close to +-90 deg for the Euler kinematics matrix."""


class IntegrationError(ArithmeticError):
    """A derivative evaluation produced a non-finite component."""

    def __init__(self, message: str, component_index: int):
        super().__init__(message)
        self.component_index = component_index


def wrap_angle(angle):
    """Wrap angle(s) to (-pi, pi]."""
    a = np.asarray(angle, dtype=float)
    wrapped = -((-a + np.pi) % (2.0 * np.pi) - np.pi)
    return wrapped if wrapped.ndim else float(wrapped)


def euler_to_rotmat(lam: np.ndarray) -> np.ndarray:
    """Body-to-world rotation matrix for ZYX Euler angles.

    Args:
        lam: Euler angles (phi, theta, psi), shape (..., 3).

    Returns:
        Orthonormal rotation matrix, shape (..., 3, 3).
    """
    lam = np.asarray(lam, dtype=float)
    phi, theta, psi = lam[..., 0], lam[..., 1], lam[..., 2]
    cphi, sphi = np.cos(phi), np.sin(phi)
    cth, sth = np.cos(theta), np.sin(theta)
    cpsi, spsi = np.cos(psi), np.sin(psi)

    R = np.empty(lam.shape[:-1] + (3, 3), dtype=float)
    R[..., 0, 0] = cpsi * cth
    R[..., 0, 1] = cpsi * sth * sphi - spsi * cphi
    R[..., 0, 2] = cpsi * sth * cphi + spsi * sphi
    R[..., 1, 0] = spsi * cth
    R[..., 1, 1] = spsi * sth * sphi + cpsi * cphi
    R[..., 1, 2] = spsi * sth * cphi - cpsi * sphi
    R[..., 2, 0] = -sth
    R[..., 2, 1] = cth * sphi
    R[..., 2, 2] = cth * cphi
    return R


def euler_kinematics(lam: np.ndarray, omega_body: np.ndarray) -> np.ndarray:
    """Euler-angle rates lam_dot = Q(lam) @ Omega for ZYX angles.

    Args:
        lam: Euler angles (phi, theta, psi), shape (..., 3).
        omega_body: body rates (p, q, r) in rad/s, shape (..., 3).

    Raises:
        PitchSingularityError: if any pitch is within PITCH_GUARD_MARGIN
            of +-pi/2.
    """
    lam = np.asarray(lam, dtype=float)
    omega_body = np.asarray(omega_body, dtype=float)
    theta = lam[..., 1]
    if np.any(np.abs(theta) >= PITCH_LIMIT):
        raise PitchSingularityError(
            f"pitch {float(np.max(np.abs(theta))):.6f} rad within "
            f"{PITCH_GUARD_MARGIN} of +-pi/2; Euler kinematics singular"
        )

    phi = lam[..., 0]
    p, q, r = omega_body[..., 0], omega_body[..., 1], omega_body[..., 2]
    sphi, cphi = np.sin(phi), np.cos(phi)
    tth = np.tan(theta)
    cth = np.cos(theta)

    lam_dot = np.empty(np.broadcast_shapes(lam.shape, omega_body.shape), dtype=float)
    lam_dot[..., 0] = p + (q * sphi + r * cphi) * tth
    lam_dot[..., 1] = q * cphi - r * sphi
    lam_dot[..., 2] = (q * sphi + r * cphi) / cth
    return lam_dot


def _check_finite(deriv_value: np.ndarray, label: str) -> np.ndarray:
    f = np.asarray(deriv_value, dtype=float)
    if not np.all(np.isfinite(f)):
        idx = int(np.flatnonzero(~np.isfinite(f))[0])
        raise IntegrationError(
            f"non-finite derivative in {label} at flat component {idx}", idx
        )
    return f


def integrate(
    x: np.ndarray,
    deriv: Callable[[np.ndarray], np.ndarray],
    dt: float,
    method: str = "euler",
) -> np.ndarray:
    """One fixed step of x_dot = deriv(x).

    ``method='euler'`` is the Forward Euler step ``x + dt * deriv(x)`` used
    for MDP time stepping; ``method='rk4'`` is the classical 4th-order
    Runge-Kutta step, kept as a consistency/convergence reference.

    ``x`` may carry leading batch axes as long as ``deriv`` preserves shape.

    Raises:
        IntegrationError: if a derivative evaluation is non-finite; the
            error carries the offending flat component index.
        ValueError: for negative dt or unknown method.
    """
    x = np.asarray(x, dtype=float)
    if dt < 0:
        raise ValueError(f"dt must be >= 0, got {dt}")
    if method == "euler":
        f = _check_finite(deriv(x), "euler stage")
        return x + dt * f
    if method == "rk4":
        k1 = _check_finite(deriv(x), "rk4 stage 1")
        k2 = _check_finite(deriv(x + 0.5 * dt * k1), "rk4 stage 2")
        k3 = _check_finite(deriv(x + 0.5 * dt * k2), "rk4 stage 3")
        k4 = _check_finite(deriv(x + dt * k3), "rk4 stage 4")
        return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    raise ValueError(f"unknown integration method {method!r}")
