"""MDP wrapper for the race task: observations, initial-state sampling,
episode logic, and vectorized parallel stepping.

Observations are expressed in the frame of the current target gate (the
"gate frame": origin at the gate center, rotated by the gate yaw only,
since gates hang vertically). This makes the policy equivariant to rigid
translations and common yaw rotations of drone plus track.

Observation layouts (all raw physical units; nets carry their own input
normalization):

    motor-command model (24): p_gate(3), v_gate(3), lam_gate(3), Omega(3),
        omega(4), M_ext(3), F_ext_z(1), next_gate_pos(3), next_gate_yaw(1)
    rate/thrust model (17):   p_gate(3), v_gate(3), lam_gate(3), Omega(3),
        T(1), next_gate_pos(3), next_gate_yaw(1)

F_ext contributes only its z component: the x/y components are pinned to
zero by the initial-state distribution, so they carry no information and
would break the 24-input accounting.

Episodes terminate on collision (ground contact, gate-plane miss, or a
pitch excursion into the Euler-kinematics guard band, which is treated as a
collision-equivalent failure) or on reaching the maximum duration. The
vectorized environment auto-resets finished episodes with a fresh sampled
initial state, as parallel on-policy data collection expects.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import dynamics_e2e as d2e
from . import dynamics_indi as din
from .mathcore import PITCH_LIMIT, wrap_angle
from .track import (
    EVENT_COLLISION,
    EVENT_GATE_PASSED,
    Track,
    detect_events_batch,
    initial_target_index,
    rewards_batch,
)

OBS_DIM_E2E = 24
OBS_DIM_INDI = 17

MODEL_KINDS = ("e2e", "indi")

TERM_NONE = 0
TERM_COLLISION = 1
TERM_TIMEOUT = 2

# Initial-state sampling intervals (uniform), shared by both models where
# applicable. Positions are offsets from the track start point.
INIT_POS_HALF = 0.5        # m
INIT_VEL_HALF = 0.5        # m/s
INIT_TILT_HALF = 2.0 * np.pi / 9.0   # rad, roll and pitch
INIT_RATE_HALF = 1.0       # rad/s
INIT_M_XY_HALF = 0.03      # N*m
INIT_M_Z_HALF = 0.01       # N*m
INIT_F_Z_HALF = 0.5        # m/s^2
INIT_THRUST_RANGE = (7.4, 7.6)  # m/s^2, rate/thrust model only


@dataclass
class EpisodeConfig:
    """Episode/stepping parameters of the MDP."""

    dt: float = 0.01
    max_duration: float = 12.0
    parallel_envs: int = 100
    gamma: float = 0.999
    model: str = "indi"

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        steps = self.max_duration / self.dt
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError("max_duration must be an integer multiple of dt")
        if self.parallel_envs < 1:
            raise ValueError("parallel_envs must be >= 1")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if self.model not in MODEL_KINDS:
            raise ValueError(f"model must be one of {MODEL_KINDS}")

    @property
    def max_steps(self) -> int:
        return int(round(self.max_duration / self.dt))


def obs_dim(model: str) -> int:
    if model == "e2e":
        return OBS_DIM_E2E
    if model == "indi":
        return OBS_DIM_INDI
    raise ValueError(f"model must be one of {MODEL_KINDS}")


def state_dim(model: str) -> int:
    return d2e.STATE_DIM if model == "e2e" else din.STATE_DIM


def action_bounds(model: str, nominal: Optional[d2e.NominalParams] = None,
                  indi: Optional[din.IndiParams] = None):
    """(low, high) action-bound arrays for the given model kind."""
    if model == "e2e":
        nominal = nominal or d2e.NominalParams()
        return (np.full(4, nominal.omega_min), np.full(4, nominal.omega_max))
    indi = indi or din.IndiParams()
    low = np.array([-indi.rate_bound] * 3 + [indi.thrust_min])
    high = np.array([indi.rate_bound] * 3 + [indi.thrust_max])
    return low, high


# ---------------------------------------------------------------------------
# Observations
# ---------------------------------------------------------------------------

def _gate_frame_parts(states, centers_t, yaws_t, centers_n, yaws_n):
    """Common gate-frame blocks for a batch of states (N, >=12)."""
    p = states[:, 0:3]
    v = states[:, 3:6]
    lam = states[:, 6:9]

    c, s = np.cos(yaws_t), np.sin(yaws_t)
    rel = p - centers_t
    p_g = np.empty_like(rel)
    p_g[:, 0] = c * rel[:, 0] + s * rel[:, 1]
    p_g[:, 1] = -s * rel[:, 0] + c * rel[:, 1]
    p_g[:, 2] = rel[:, 2]
    v_g = np.empty_like(v)
    v_g[:, 0] = c * v[:, 0] + s * v[:, 1]
    v_g[:, 1] = -s * v[:, 0] + c * v[:, 1]
    v_g[:, 2] = v[:, 2]
    lam_g = lam.copy()
    lam_g[:, 2] = wrap_angle(lam[:, 2] - yaws_t)

    rel_n = centers_n - centers_t
    p_n = np.empty_like(rel_n)
    p_n[:, 0] = c * rel_n[:, 0] + s * rel_n[:, 1]
    p_n[:, 1] = -s * rel_n[:, 0] + c * rel_n[:, 1]
    p_n[:, 2] = rel_n[:, 2]
    psi_n = wrap_angle(yaws_n - yaws_t)
    return p_g, v_g, lam_g, p_n, psi_n


def _obs_batch(model, states, track_arrays, target_idx):
    centers, yaws = track_arrays[0], track_arrays[1]
    nxt = (target_idx + 1) % len(centers)
    p_g, v_g, lam_g, p_n, psi_n = _gate_frame_parts(
        states, centers[target_idx], yaws[target_idx], centers[nxt], yaws[nxt]
    )
    Om = states[:, 9:12]
    if model == "e2e":
        return np.concatenate(
            [p_g, v_g, lam_g, Om,
             states[:, d2e.RPM], states[:, d2e.M_EXT],
             states[:, d2e.F_EXT.start + 2: d2e.F_EXT.start + 3],
             p_n, psi_n[:, None]],
            axis=1,
        )
    return np.concatenate(
        [p_g, v_g, lam_g, Om, states[:, din.THRUST: din.THRUST + 1],
         p_n, psi_n[:, None]],
        axis=1,
    )


def build_obs_e2e(x: np.ndarray, track: Track, target_idx: int) -> np.ndarray:
    """24-entry observation for the motor-command model (see module doc)."""
    arrays = track.gate_arrays()
    return _obs_batch("e2e", np.asarray(x, dtype=float)[None, :],
                      arrays, np.array([target_idx]))[0]


def build_obs_indi(x: np.ndarray, track: Track, target_idx: int) -> np.ndarray:
    """17-entry observation for the rate/thrust model (see module doc)."""
    arrays = track.gate_arrays()
    return _obs_batch("indi", np.asarray(x, dtype=float)[None, :],
                      arrays, np.array([target_idx]))[0]


def obs_normalization(model: str,
                      nominal: Optional[d2e.NominalParams] = None,
                      indi: Optional[din.IndiParams] = None):
    """Fixed per-input (offset, scale) bringing observations to O(1).

    These feed the policy/value nets' input normalization; they are plain
    physical-range constants, not running statistics, so training stays
    deterministic and saved nets are self-describing.
    """
    pos = [0.0, 0.2]
    vel = [0.0, 0.1]
    ang = [0.0, 1.0 / np.pi]
    if model == "e2e":
        nominal = nominal or d2e.NominalParams()
        mid = 0.5 * (nominal.omega_min + nominal.omega_max)
        half = 0.5 * (nominal.omega_max - nominal.omega_min)
        blocks = (
            [pos] * 3 + [vel] * 3 + [ang] * 3 + [[0.0, 0.1]] * 3
            + [[mid, 1.0 / half]] * 4
            + [[0.0, 1.0 / INIT_M_XY_HALF]] * 2 + [[0.0, 1.0 / INIT_M_Z_HALF]]
            + [[0.0, 1.0 / INIT_F_Z_HALF]]
            + [pos] * 3 + [ang]
        )
    else:
        indi = indi or din.IndiParams()
        t_mid = 0.5 * (indi.thrust_min + indi.thrust_max)
        blocks = (
            [pos] * 3 + [vel] * 3 + [ang] * 3
            + [[0.0, 1.0 / indi.rate_bound]] * 3
            + [[t_mid, 1.0 / t_mid]]
            + [pos] * 3 + [ang]
        )
    arr = np.array(blocks)
    return arr[:, 0].copy(), arr[:, 1].copy()


# ---------------------------------------------------------------------------
# Initial-state sampling
# ---------------------------------------------------------------------------

def sample_initial_state(rng: np.random.Generator, model: str,
                         track: Track) -> np.ndarray:
    """Draw one initial state from the uniform episode-start distribution.

    The draw order is fixed (position, velocity, tilt, yaw, rates, then the
    model-specific tail) so a seeded generator reproduces sequences exactly.
    """
    x = np.zeros(state_dim(model))
    x[0:3] = track.start + rng.uniform(-INIT_POS_HALF, INIT_POS_HALF, 3)
    x[3:6] = rng.uniform(-INIT_VEL_HALF, INIT_VEL_HALF, 3)
    x[6:8] = rng.uniform(-INIT_TILT_HALF, INIT_TILT_HALF, 2)
    x[8] = rng.uniform(-np.pi, np.pi)
    x[9:12] = rng.uniform(-INIT_RATE_HALF, INIT_RATE_HALF, 3)
    if model == "e2e":
        x[d2e.RPM] = rng.uniform(3000.0, 11000.0, 4)
        x[16:18] = rng.uniform(-INIT_M_XY_HALF, INIT_M_XY_HALF, 2)
        x[18] = rng.uniform(-INIT_M_Z_HALF, INIT_M_Z_HALF)
        # F_ext x, y stay identically zero
        x[21] = rng.uniform(-INIT_F_Z_HALF, INIT_F_Z_HALF)
    else:
        x[din.THRUST] = rng.uniform(*INIT_THRUST_RANGE)
    return x


# ---------------------------------------------------------------------------
# Environments
# ---------------------------------------------------------------------------

class VecRaceEnv:
    """parallel_envs independent copies of the race MDP, stepped together.

    Each environment owns a private RNG stream (spawned from the master
    seed), so trajectories are reproducible and mutually independent.
    Finished episodes auto-reset inside step(); the returned observation is
    the first one of the new episode.
    """

    def __init__(self, episode: Optional[EpisodeConfig] = None,
                 track: Optional[Track] = None,
                 nominal: Optional[d2e.NominalParams] = None,
                 residual_nets: Optional[d2e.ResidualNets] = None,
                 indi: Optional[din.IndiParams] = None,
                 master_seed: int = 0,
                 auto_reset: bool = True):
        self.episode = episode or EpisodeConfig()
        self.model = self.episode.model
        self.track = track or Track.canonical()
        self.nominal = nominal or d2e.NominalParams()
        self.residual_nets = residual_nets or d2e.ResidualNets.zeros(self.nominal)
        self.indi = indi or din.IndiParams()
        self.auto_reset = auto_reset
        self.n_envs = self.episode.parallel_envs
        self.obs_dim = obs_dim(self.model)
        self.state_dim = state_dim(self.model)
        self.act_low, self.act_high = action_bounds(self.model, self.nominal, self.indi)

        self._gate_arrays = self.track.gate_arrays()
        self._initial_target = initial_target_index(self.track)
        ss = np.random.SeedSequence(master_seed)
        self._rngs = [np.random.default_rng(s) for s in ss.spawn(self.n_envs)]

        self.states = np.zeros((self.n_envs, self.state_dim))
        self.target_idx = np.zeros(self.n_envs, dtype=int)
        self.step_counts = np.zeros(self.n_envs, dtype=int)
        self.laps = np.zeros(self.n_envs, dtype=int)
        self.gates_passed = np.zeros(self.n_envs, dtype=int)
        self.ep_return = np.zeros(self.n_envs)
        self._needs_reset = True

    def obs_normalization(self):
        """Fixed per-input (offset, scale) constants for policy/value nets."""
        return obs_normalization(self.model, self.nominal, self.indi)

    def hover_action(self) -> np.ndarray:
        """Command holding level hover (used to bias fresh policies)."""
        if self.model == "e2e":
            return np.full(4, self.nominal.hover_rpm())
        from .mathcore import GRAVITY
        return np.array([0.0, 0.0, 0.0, GRAVITY])

    def _sample_states(self, idx) -> None:
        for i in idx:
            self.states[i] = sample_initial_state(self._rngs[i], self.model,
                                                  self.track)
            self.target_idx[i] = self._initial_target
            self.step_counts[i] = 0
            self.laps[i] = 0
            self.gates_passed[i] = 0
            self.ep_return[i] = 0.0

    def reset(self) -> np.ndarray:
        self._sample_states(range(self.n_envs))
        self._needs_reset = False
        return self._obs()

    def _obs(self) -> np.ndarray:
        return _obs_batch(self.model, self.states, self._gate_arrays,
                          self.target_idx)

    def _dyn_step(self, actions: np.ndarray) -> np.ndarray:
        if self.model == "e2e":
            return d2e.step_e2e(self.states, actions, self.episode.dt,
                                self.nominal, self.residual_nets)
        return din.step_indi(self.states, actions, self.episode.dt, self.indi)

    def step(self, actions: np.ndarray):
        """Step every environment; returns (obs, rewards, dones, info).

        info is a dict of per-env arrays; episode_* entries are valid only
        where dones is set and describe the episode that just finished.
        """
        if self._needs_reset:
            raise RuntimeError("call reset() before step()")
        actions = np.asarray(actions, dtype=float)
        if actions.shape != (self.n_envs, 4):
            raise ValueError(f"actions must have shape ({self.n_envs}, 4), "
                             f"got {actions.shape}")
        if not np.all(np.isfinite(actions)):
            bad = int(np.flatnonzero(~np.isfinite(actions).all(axis=1))[0])
            raise ValueError(f"non-finite action for env {bad}")

        p_prev = self.states[:, 0:3].copy()
        self.states = self._dyn_step(actions)
        p_curr = self.states[:, 0:3]

        centers, yaws, normals, laterals, halves = self._gate_arrays
        t = self.target_idx
        kinds, crossing = detect_events_batch(
            p_prev, p_curr, centers[t], normals[t], laterals[t], halves[t],
            self.track.ground_z,
        )
        rewards = rewards_batch(p_prev, p_curr, centers[t], kinds, crossing)

        # A pitch excursion into the kinematics guard band ends the episode
        # as a collision-equivalent failure (overrides any gate event).
        singular = np.abs(self.states[:, 7]) >= PITCH_LIMIT
        if np.any(singular):
            kinds = kinds.copy()
            kinds[singular] = EVENT_COLLISION
            rewards[singular] = -10.0

        passed = kinds == EVENT_GATE_PASSED
        if np.any(passed):
            self.gates_passed[passed] += 1
            nxt = (self.target_idx[passed] + 1) % self.track.n_gates
            self.laps[passed] += (nxt == 0).astype(int)
            self.target_idx[passed] = nxt

        self.step_counts += 1
        self.ep_return += rewards
        collided = kinds == EVENT_COLLISION
        timed_out = (self.step_counts >= self.episode.max_steps) & ~collided
        dones = collided | timed_out

        termination = np.zeros(self.n_envs, dtype=int)
        termination[collided] = TERM_COLLISION
        termination[timed_out] = TERM_TIMEOUT

        info = {
            "event": kinds,
            "target": self.target_idx.copy(),
            "laps": self.laps.copy(),
            "gates_passed": self.gates_passed.copy(),
            "termination": termination,
            "episode_return": np.where(dones, self.ep_return, np.nan),
            "episode_length": np.where(dones, self.step_counts, 0),
            "episode_gates": np.where(dones, self.gates_passed, 0),
        }

        if self.auto_reset and np.any(dones):
            self._sample_states(np.flatnonzero(dones))
        elif np.any(dones):
            self._needs_reset = True

        return self._obs(), rewards, dones, info


class RaceEnv:
    """Single-environment view with scalar step results (no auto-reset)."""

    def __init__(self, episode: Optional[EpisodeConfig] = None,
                 track: Optional[Track] = None,
                 nominal: Optional[d2e.NominalParams] = None,
                 residual_nets: Optional[d2e.ResidualNets] = None,
                 indi: Optional[din.IndiParams] = None,
                 seed: int = 0):
        episode = episode or EpisodeConfig()
        vec_episode = EpisodeConfig(
            dt=episode.dt, max_duration=episode.max_duration,
            parallel_envs=1, gamma=episode.gamma, model=episode.model,
        )
        self._vec = VecRaceEnv(vec_episode, track, nominal, residual_nets,
                               indi, master_seed=seed, auto_reset=False)
        self._done = True

    @property
    def model(self) -> str:
        return self._vec.model

    @property
    def track(self) -> Track:
        return self._vec.track

    @property
    def episode(self) -> EpisodeConfig:
        return self._vec.episode

    @property
    def obs_dim(self) -> int:
        return self._vec.obs_dim

    @property
    def act_low(self) -> np.ndarray:
        return self._vec.act_low

    @property
    def act_high(self) -> np.ndarray:
        return self._vec.act_high

    @property
    def state(self) -> np.ndarray:
        return self._vec.states[0].copy()

    @property
    def target_idx(self) -> int:
        return int(self._vec.target_idx[0])

    def reset(self, initial_state: Optional[np.ndarray] = None) -> np.ndarray:
        obs = self._vec.reset()
        if initial_state is not None:
            initial_state = np.asarray(initial_state, dtype=float)
            if initial_state.shape != (self._vec.state_dim,):
                raise ValueError(
                    f"initial state must have shape ({self._vec.state_dim},)"
                )
            self._vec.states[0] = initial_state
            obs = self._vec._obs()
        self._done = False
        return obs[0]

    def step(self, action: np.ndarray):
        if self._done:
            raise RuntimeError("episode finished; call reset()")
        obs, rewards, dones, info = self._vec.step(
            np.asarray(action, dtype=float)[None, :]
        )
        self._done = bool(dones[0])
        scalar_info = {k: v[0] for k, v in info.items()}
        scalar_info["event"] = int(scalar_info["event"])
        return obs[0], float(rewards[0]), self._done, scalar_info
