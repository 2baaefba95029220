import numpy as np
import pytest

from dronerace.dynamics_indi import (
    LAM,
    OMEGA,
    P,
    STATE_DIM,
    THRUST,
    V,
    IndiParams,
    QuadStateIndi,
    clamp_command,
    hover_state,
    indi_derivative,
    step_indi,
)
from dronerace.mathcore import GRAVITY


@pytest.fixture
def prm():
    return IndiParams()


def test_shipped_defaults_are_identified_values(prm):
    assert prm.tau_omega == 0.03
    assert prm.tau_thrust == 0.03
    assert prm.d_x == 0.34
    assert prm.d_y == 0.43
    assert prm.rate_bound == 3.0
    assert (prm.thrust_min, prm.thrust_max) == (0.0, 15.0)


def test_hover_balance(prm):
    x = hover_state()
    u = np.array([0.0, 0.0, 0.0, GRAVITY])
    dx = indi_derivative(x, u, prm)
    np.testing.assert_allclose(dx, np.zeros(STATE_DIM), atol=1e-12)


def test_body_x_drag_coefficient(prm):
    x = hover_state()
    x[V] = [1.0, 0.0, 0.0]  # level attitude: body x == world x
    dx = indi_derivative(x, np.array([0, 0, 0, GRAVITY]), prm)
    np.testing.assert_allclose(dx[V], [-0.34, 0.0, 0.0], atol=1e-12)


def test_body_y_drag_coefficient(prm):
    x = hover_state()
    x[V] = [0.0, 1.0, 0.0]
    dx = indi_derivative(x, np.array([0, 0, 0, GRAVITY]), prm)
    np.testing.assert_allclose(dx[V], [0.0, -0.43, 0.0], atol=1e-12)


def test_thrust_slew_at_full_command(prm):
    x = hover_state()
    x[THRUST] = 0.0
    dx = indi_derivative(x, np.array([0, 0, 0, 15.0]), prm)
    np.testing.assert_allclose(dx[THRUST], 15.0 / 0.03, rtol=1e-12)
    np.testing.assert_allclose(dx[THRUST], 500.0, rtol=1e-12)


def test_drag_in_body_frame_not_world(prm):
    # yawed 90 deg: world-x velocity becomes body -y, so d_y applies and
    # the reaction comes back rotated into the world frame.
    x = hover_state(psi=np.pi / 2)
    x[V] = [1.0, 0.0, 0.0]
    dx = indi_derivative(x, np.array([0, 0, 0, GRAVITY]), prm)
    np.testing.assert_allclose(dx[V], [-0.43, 0.0, 0.0], atol=1e-12)


def test_rate_step_response_tracks_exponential(prm):
    def max_gap(dt):
        x = hover_state()
        u = np.array([1.5, 0.0, 0.0, GRAVITY])
        gaps = []
        for k in range(1, int(round(0.15 / dt)) + 1):
            x = step_indi(x, u, dt, prm)
            exact = 1.5 * (1.0 - np.exp(-k * dt / prm.tau_omega))
            gaps.append(abs(x[OMEGA][0] - exact))
        return max(gaps)

    g1, g2 = max_gap(0.01), max_gap(0.001)
    assert g1 < 0.1 * 1.5
    assert g2 < 0.011 * 1.5
    assert 5.0 < g1 / g2 < 20.0


def test_step_zero_dt_identity(prm, rng):
    x = hover_state()
    x[V] = rng.uniform(-2, 2, 3)
    np.testing.assert_array_equal(
        step_indi(x, np.array([1.0, -2.0, 0.5, 12.0]), 0.0, prm), x)


def test_clamping_idempotence(prm, rng):
    for _ in range(50):
        x = hover_state()
        x[V] = rng.uniform(-3, 3, 3)
        x[LAM] = rng.uniform(-0.6, 0.6, 3)
        x[OMEGA] = rng.uniform(-2, 2, 3)
        x[THRUST] = rng.uniform(0, 15)
        u = rng.uniform(-20, 30, 4)
        np.testing.assert_array_equal(
            step_indi(x, u, 0.01, prm),
            step_indi(x, clamp_command(u, prm), 0.01, prm))


def test_out_of_bounds_rate_equals_bound(prm):
    x = hover_state()
    a = step_indi(x, np.array([10.0, 0.0, 0.0, GRAVITY]), 0.01, prm)
    b = step_indi(x, np.array([3.0, 0.0, 0.0, GRAVITY]), 0.01, prm)
    np.testing.assert_array_equal(a, b)


def test_thrust_converges_monotonically(prm):
    x = hover_state()
    x[THRUST] = 2.0
    prev = x[THRUST]
    for _ in range(200):
        x = step_indi(x, np.array([0, 0, 0, 12.0]), 0.01, prm)
        assert prev <= x[THRUST] <= 12.0
        prev = x[THRUST]
    np.testing.assert_allclose(x[THRUST], 12.0, atol=1e-3)


def test_zero_drag_hover_exact_velocity_fixed_point():
    prm = IndiParams(d_x=0.0, d_y=0.0)
    x = hover_state()
    x[V] = [3.0, -2.0, 0.0]
    dx = indi_derivative(x, np.array([0, 0, 0, GRAVITY]), prm)
    np.testing.assert_allclose(dx[V], np.zeros(3), atol=1e-12)


def test_batched_matches_scalar(prm, rng):
    X = np.stack([hover_state() for _ in range(8)])
    X[:, V.start:V.stop] = rng.uniform(-4, 4, (8, 3))
    X[:, LAM.start:LAM.stop] = rng.uniform(-0.6, 0.6, (8, 3))
    X[:, OMEGA.start:OMEGA.stop] = rng.uniform(-2.5, 2.5, (8, 3))
    X[:, THRUST] = rng.uniform(0, 15, 8)
    U = rng.uniform(-5, 18, (8, 4))
    batch = step_indi(X, U, 0.01, prm)
    for i in range(8):
        np.testing.assert_allclose(batch[i], step_indi(X[i], U[i], 0.01, prm),
                                    atol=1e-12)


def test_state_dataclass_roundtrip(rng):
    x = rng.normal(size=STATE_DIM)
    st = QuadStateIndi.from_vec(x)
    np.testing.assert_array_equal(st.vec(), x)


def test_params_validation():
    with pytest.raises(ValueError):
        IndiParams(tau_omega=0.0)
    with pytest.raises(ValueError):
        IndiParams(thrust_min=15.0, thrust_max=15.0)
