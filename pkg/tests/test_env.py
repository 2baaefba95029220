import numpy as np
import pytest
from scipy import stats

from dronerace import dynamics_e2e as d2e
from dronerace import dynamics_indi as din
from dronerace.env import (
    OBS_DIM_E2E,
    OBS_DIM_INDI,
    TERM_COLLISION,
    TERM_TIMEOUT,
    EpisodeConfig,
    RaceEnv,
    VecRaceEnv,
    build_obs_e2e,
    build_obs_indi,
    sample_initial_state,
)
from dronerace.mathcore import GRAVITY, wrap_angle
from dronerace.track import EVENT_COLLISION, EVENT_GATE_PASSED, Gate, Track

HOVER_CMD = np.array([0.0, 0.0, 0.0, GRAVITY])


def rotate_z(alpha, v):
    c, s = np.cos(alpha), np.sin(alpha)
    return np.array([c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]])


def rotated_track(track, alpha, offset):
    gates = [
        Gate(rotate_z(alpha, g.center) + offset, g.yaw + alpha, g.half_size)
        for g in track.gates
    ]
    return Track(gates, rotate_z(alpha, track.start) + offset, track.ground_z)


def transform_state(x, alpha, offset):
    y = x.copy()
    y[0:3] = rotate_z(alpha, x[0:3]) + offset
    y[3:6] = rotate_z(alpha, x[3:6])
    y[8] = x[8] + alpha
    return y


def test_obs_lengths():
    track = Track.canonical()
    assert build_obs_e2e(d2e.hover_state(d2e.NominalParams()), track, 0).shape \
        == (OBS_DIM_E2E,)
    assert build_obs_indi(din.hover_state(), track, 0).shape == (OBS_DIM_INDI,)


def test_obs_frame_coincidence_indi():
    track = Track.canonical()
    g = track.gates[0]
    x = din.hover_state(p=g.center, psi=g.yaw)
    obs = build_obs_indi(x, track, 0)
    np.testing.assert_allclose(obs[0:9], np.zeros(9), atol=1e-12)
    np.testing.assert_allclose(obs[9:12], np.zeros(3), atol=1e-12)  # rates


def test_obs_frame_coincidence_e2e_keeps_roll_pitch():
    track = Track.canonical()
    g = track.gates[1]
    prm = d2e.NominalParams()
    x = d2e.hover_state(prm, p=g.center, psi=g.yaw)
    x[6] = 0.2  # roll
    x[7] = -0.1  # pitch
    obs = build_obs_e2e(x, track, 1)
    np.testing.assert_allclose(obs[0:6], np.zeros(6), atol=1e-12)
    np.testing.assert_allclose(obs[6:9], [0.2, -0.1, 0.0], atol=1e-12)


def test_obs_e2e_blocks():
    track = Track.canonical()
    prm = d2e.NominalParams()
    x = d2e.hover_state(prm)
    x[d2e.RPM] = [4000.0, 5000.0, 6000.0, 7000.0]
    x[d2e.M_EXT] = [0.01, -0.02, 0.005]
    x[d2e.F_EXT] = [0.0, 0.0, -0.3]
    obs = build_obs_e2e(x, track, 0)
    np.testing.assert_array_equal(obs[12:16], x[d2e.RPM])
    np.testing.assert_array_equal(obs[16:19], x[d2e.M_EXT])
    assert obs[19] == -0.3  # F_ext z component only
    # next-gate block: gate 1 seen from gate 0's frame
    g0, g1 = track.gates[0], track.gates[1]
    rel = g1.center - g0.center
    np.testing.assert_allclose(obs[20:23], rotate_z(-g0.yaw, rel), atol=1e-12)
    np.testing.assert_allclose(obs[23], wrap_angle(g1.yaw - g0.yaw), atol=1e-12)


@pytest.mark.parametrize("model", ["e2e", "indi"])
def test_obs_translation_and_yaw_invariance(rng, model):
    track = Track.canonical()
    build = build_obs_e2e if model == "e2e" else build_obs_indi
    for _ in range(300):
        x = sample_initial_state(rng, model, track)
        alpha = rng.uniform(-np.pi, np.pi)
        offset = rng.uniform(-20, 20, 3)
        x2 = transform_state(x, alpha, offset)
        track2 = rotated_track(track, alpha, offset)
        idx = rng.integers(0, track.n_gates)
        np.testing.assert_allclose(build(x2, track2, idx), build(x, track, idx),
                                    atol=1e-9)


@pytest.mark.parametrize("model", ["e2e", "indi"])
def test_initial_state_sampling_ranges(model):
    track = Track.canonical()
    rng = np.random.default_rng(7)
    n = 20_000
    xs = np.stack([sample_initial_state(rng, model, track) for _ in range(n)])

    def check(col, lo, hi):
        assert xs[:, col].min() >= lo and xs[:, col].max() <= hi
        span = hi - lo
        assert xs[:, col].min() < lo + 0.01 * span
        assert xs[:, col].max() > hi - 0.01 * span

    for i in range(3):
        check(i, track.start[i] - 0.5, track.start[i] + 0.5)
        check(3 + i, -0.5, 0.5)
        check(9 + i, -1.0, 1.0)
    check(6, -2 * np.pi / 9, 2 * np.pi / 9)
    check(7, -2 * np.pi / 9, 2 * np.pi / 9)
    check(8, -np.pi, np.pi)
    if model == "e2e":
        for i in range(12, 16):
            check(i, 3000.0, 11000.0)
        check(16, -0.03, 0.03)
        check(17, -0.03, 0.03)
        check(18, -0.01, 0.01)
        check(21, -0.5, 0.5)
        assert np.all(xs[:, 19] == 0.0) and np.all(xs[:, 20] == 0.0)
    else:
        check(din.THRUST, 7.4, 7.6)


def test_initial_state_sampling_deterministic():
    track = Track.canonical()
    a = [sample_initial_state(np.random.default_rng(42), m, track)
         for m in ("e2e", "indi")]
    b = [sample_initial_state(np.random.default_rng(42), m, track)
         for m in ("e2e", "indi")]
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


def _indi_env(n=1, seed=0, auto_reset=True):
    cfg = EpisodeConfig(parallel_envs=n, model="indi")
    return VecRaceEnv(cfg, master_seed=seed, auto_reset=auto_reset)


def test_collision_gives_minus_ten_and_done():
    env = _indi_env()
    env.reset()
    x = din.hover_state(p=[1.0, -1.5, -0.05])
    x[5] = 8.0  # falling fast
    env.states[0] = x
    obs, r, done, info = env.step(HOVER_CMD[None, :])
    assert r[0] == -10.0 and done[0]
    assert info["termination"][0] == TERM_COLLISION


def test_gate_pass_rewards_and_advances_target():
    env = _indi_env()
    env.reset()
    g = env.track.gates[0]
    x = din.hover_state(p=g.center - 0.05 * g.normal, psi=g.yaw)
    x[3:6] = 10.0 * g.normal
    env.states[0] = x
    env.target_idx[0] = 0
    obs, r, done, info = env.step(HOVER_CMD[None, :])
    assert info["event"][0] == EVENT_GATE_PASSED
    assert r[0] > 9.9
    assert info["target"][0] == 1
    assert info["gates_passed"][0] == 1
    assert not done[0]


def test_timeout_after_max_duration():
    cfg = EpisodeConfig(parallel_envs=1, model="indi")
    env = VecRaceEnv(cfg, master_seed=3)
    env.reset()
    env.states[0] = din.hover_state(p=[1.0, -1.5, -1.5])
    done = False
    steps = 0
    while not done:
        obs, r, dones, info = env.step(HOVER_CMD[None, :])
        done = bool(dones[0])
        steps += 1
        assert steps <= cfg.max_steps
    assert steps == cfg.max_steps == 1200
    assert info["termination"][0] == TERM_TIMEOUT


def test_pitch_guard_terminates_as_collision():
    env = _indi_env()
    env.reset()
    x = din.hover_state(p=[1.0, -1.5, -1.5])
    x[7] = np.pi / 2 - 2e-3  # just below the guard, pitching up hard
    x[10] = 2.9
    env.states[0] = x
    obs, r, done, info = env.step(np.array([[0.0, 3.0, 0.0, GRAVITY]]))
    assert done[0] and r[0] == -10.0
    assert info["event"][0] == EVENT_COLLISION


def test_nonfinite_action_raises():
    env = _indi_env()
    env.reset()
    with pytest.raises(ValueError, match="non-finite"):
        env.step(np.array([[np.nan, 0.0, 0.0, 9.81]]))


def test_step_before_reset_raises():
    env = _indi_env()
    with pytest.raises(RuntimeError):
        env.step(HOVER_CMD[None, :])


def test_identical_states_give_identical_transitions():
    env = _indi_env(n=100, seed=5)
    env.reset()
    x = din.hover_state(p=[1.0, -1.5, -1.5])
    env.states[:] = x
    env.target_idx[:] = 0
    obs, r, done, info = env.step(np.tile([0.5, 0.1, -0.2, 11.0], (100, 1)))
    assert np.all(obs == obs[0])
    assert np.all(r == r[0])


def test_fixed_master_seed_bitwise_identical():
    def run(seed):
        env = _indi_env(n=8, seed=seed)
        obs = env.reset()
        traj = [obs]
        rng = np.random.default_rng(99)
        for _ in range(100):
            a = rng.uniform([-3, -3, -3, 0], [3, 3, 3, 15], (8, 4))
            obs, r, d, _ = env.step(a)
            traj.append(obs)
        return np.concatenate([t.ravel() for t in traj])

    np.testing.assert_array_equal(run(11), run(11))
    assert not np.array_equal(run(11), run(12))


def test_per_env_streams_independent():
    env_a = _indi_env(n=6, seed=21)
    env_b = _indi_env(n=6, seed=21)
    env_b._rngs[2] = np.random.default_rng(987654)  # perturb env 2 only
    obs_a = env_a.reset()
    obs_b = env_b.reset()
    others = [0, 1, 3, 4, 5]
    np.testing.assert_array_equal(obs_a[others], obs_b[others])
    assert not np.array_equal(obs_a[2], obs_b[2])
    rng = np.random.default_rng(0)
    for _ in range(200):
        a = rng.uniform([-1, -1, -1, 7], [1, 1, 1, 12], (6, 4))
        obs_a, _, d_a, _ = env_a.step(a)
        obs_b, _, d_b, _ = env_b.step(a)
        np.testing.assert_array_equal(obs_a[others], obs_b[others])
        np.testing.assert_array_equal(d_a[others], d_b[others])


def test_auto_reset_only_done_envs():
    env = _indi_env(n=4, seed=1)
    env.reset()
    for i in range(4):
        env.states[i] = din.hover_state(p=[1.0, -1.5, -1.5])
    env.states[1, 2] = -0.01
    env.states[1, 5] = 5.0  # env 1 will hit the ground this step
    before = env.states.copy()
    obs, r, done, info = env.step(np.tile(HOVER_CMD, (4, 1)))
    assert done[1] and not done[[0, 2, 3]].any()
    stepped = din.step_indi(before[0], HOVER_CMD, env.episode.dt, env.indi)
    for i in (0, 2, 3):
        np.testing.assert_allclose(env.states[i], stepped, atol=1e-12)
    assert env.step_counts[1] == 0 and env.gates_passed[1] == 0


def test_auto_reset_matches_fresh_sampling_distribution():
    # Observations right after an auto-reset must be indistinguishable from
    # observations of freshly sampled initial states.
    env = _indi_env(n=50, seed=77)
    env.reset()
    post_reset = []
    rng = np.random.default_rng(5)
    while len(post_reset) < 2000:
        a = rng.uniform([-3, -3, -3, 0], [3, 3, 3, 15], (50, 4))
        obs, r, done, info = env.step(a)
        post_reset.extend(obs[done])
    post_reset = np.array(post_reset)[:2000]

    fresh_rng = np.random.default_rng(123456)
    track = env.track
    fresh = np.stack([
        build_obs_indi(sample_initial_state(fresh_rng, "indi", track), track,
                       env._initial_target)
        for _ in range(2000)
    ])
    for col in range(OBS_DIM_INDI):
        if fresh[:, col].std() < 1e-12:  # constant columns (next-gate info)
            np.testing.assert_allclose(post_reset[:, col], fresh[0, col],
                                       atol=1e-9)
            continue
        p = stats.ks_2samp(post_reset[:, col], fresh[:, col]).pvalue
        assert p > 0.01, f"obs component {col} distribution drifted (p={p})"


def test_single_env_matches_vec_row():
    env = RaceEnv(EpisodeConfig(parallel_envs=1, model="indi"), seed=13)
    vec = _indi_env(n=1, seed=13, auto_reset=False)
    o1 = env.reset()
    o2 = vec.reset()
    np.testing.assert_array_equal(o1, o2[0])
    rng = np.random.default_rng(4)
    done = False
    while not done:
        a = rng.uniform([-1, -1, -1, 5], [1, 1, 1, 13], 4)
        o1, r1, done, i1 = env.step(a)
        o2, r2, d2, i2 = vec.step(a[None, :])
        np.testing.assert_array_equal(o1, o2[0])
        assert r1 == r2[0] and done == bool(d2[0])
    with pytest.raises(RuntimeError):
        env.step(HOVER_CMD)


def test_race_env_custom_initial_state():
    env = RaceEnv(EpisodeConfig(parallel_envs=1, model="indi"), seed=0)
    x0 = din.hover_state(p=[1.0, -1.5, -1.5])
    obs = env.reset(initial_state=x0)
    np.testing.assert_array_equal(env.state, x0)
    obs2, r, done, info = env.step(HOVER_CMD)
    assert not done


def test_e2e_env_runs_and_terminates(rng):
    cfg = EpisodeConfig(parallel_envs=4, model="e2e")
    env = VecRaceEnv(cfg, master_seed=9)
    obs = env.reset()
    assert obs.shape == (4, OBS_DIM_E2E)
    terminated = 0
    for _ in range(600):
        a = rng.uniform(3000, 11000, (4, 4))
        obs, r, done, info = env.step(a)
        terminated += int(done.sum())
    assert terminated > 0  # random motor commands crash eventually
    assert np.all(np.isfinite(obs))


def test_episode_config_validation():
    with pytest.raises(ValueError):
        EpisodeConfig(dt=0.0)
    with pytest.raises(ValueError):
        EpisodeConfig(dt=0.01, max_duration=0.015)
    with pytest.raises(ValueError):
        EpisodeConfig(parallel_envs=0)
    with pytest.raises(ValueError):
        EpisodeConfig(gamma=0.0)
    with pytest.raises(ValueError):
        EpisodeConfig(model="mpc")
    assert EpisodeConfig().max_steps == 1200
