"""Shared test oracles, independent of the implementations they check.

The rotation oracle builds matrices from quaternion composition; the MLP
oracle is a straight-line re-implementation of the dense forward pass.
Both are deliberately written without reusing package internals.
"""

import numpy as np
import pytest


# ---------------------------------------------------------------------------
# Quaternion oracle (scalar-first, Hamilton convention)
# ---------------------------------------------------------------------------

def quat_mul(a, b):
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def quat_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    return np.concatenate([[np.cos(angle / 2)], np.sin(angle / 2) * axis])


def quat_to_rotmat(q):
    w, x, y, z = q / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def rotmat_via_quat(phi, theta, psi):
    """Body-to-world rotation for ZYX angles via quaternion composition."""
    q = quat_mul(
        quat_mul(quat_axis_angle([0, 0, 1], psi), quat_axis_angle([0, 1, 0], theta)),
        quat_axis_angle([1, 0, 0], phi),
    )
    return quat_to_rotmat(q)


def euler_zyx_from_rotmat(R):
    """Extract (phi, theta, psi) from a body-to-world ZYX rotation."""
    theta = -np.arcsin(np.clip(R[2, 0], -1.0, 1.0))
    phi = np.arctan2(R[2, 1], R[2, 2])
    psi = np.arctan2(R[1, 0], R[0, 0])
    return np.array([phi, theta, psi])


def rodrigues(axis_angle):
    """Exact matrix exponential of a rotation vector (for kinematics oracle)."""
    v = np.asarray(axis_angle, dtype=float)
    angle = np.linalg.norm(v)
    if angle < 1e-15:
        return np.eye(3)
    k = v / angle
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)


# ---------------------------------------------------------------------------
# Reference dense-net forward (duplicate-evaluation oracle)
# ---------------------------------------------------------------------------

def reference_mlp_forward(weights, biases, activation, offset, scale, x):
    h = (np.asarray(x, dtype=float) - offset) * scale
    last = len(weights) - 1
    for i, (W, b) in enumerate(zip(weights, biases)):
        h = W @ h + b
        if i < last:
            h = np.maximum(h, 0.0) if activation == "relu" else np.tanh(h)
    return h


def central_diff_grad(f, arr, eps=1e-6):
    """Central finite-difference gradient of scalar f wrt array arr."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        old = arr[idx]
        arr[idx] = old + eps
        fp = f()
        arr[idx] = old - eps
        fm = f()
        arr[idx] = old
        g[idx] = (fp - fm) / (2 * eps)
        it.iternext()
    return g


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
