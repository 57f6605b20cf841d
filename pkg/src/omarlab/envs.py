"""Multi-agent particle tasks: 1-D Spread (cooperative and independent) and 2-D navigation.

Observation layout for agent i with n agents and d spatial dims (d = 1 for the
spread1d variants, d = 2 for coopnav2d)::

    [ own position (d) | own velocity (d, coopnav2d only)
      | landmark_j - own position, j = 0..n-1 (n*d)
      | agent_k - own position, k != i in index order ((n-1)*d) ]

so spread1d observations have length 1 + n + (n - 1) and coopnav2d
observations have length 4 + 2n + 2(n - 1).

Rewards are computed from positions after the move. Cooperative variants share
``-sum_j min_i |agent_i - landmark_j| - penalty * (#colliding ordered pairs) / 2``;
in spread1d_independent agent i earns ``-|agent_i - landmark_i|``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

VARIANTS = ("spread1d_coop", "spread1d_independent", "coopnav2d")


@dataclass(frozen=True)
class EnvConfig:
    variant: str = "spread1d_coop"
    n_agents: int = 2
    episode_len: int = 25
    world_halfwidth: float = 1.0
    collision_radius: float = 0.1
    collision_penalty: float = 1.0
    max_speed: float = 1.0
    dt: float = 0.1
    # coopnav2d only
    damping: float = 0.25
    accel: float = 5.0
    strict_actions: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown env variant {self.variant!r}; choose from {VARIANTS}")
        if self.n_agents < 1 or self.episode_len < 1:
            raise ValueError("n_agents and episode_len must be >= 1")
        if self.collision_radius <= 0 or self.world_halfwidth <= 0:
            raise ValueError("collision_radius and world_halfwidth must be positive")

    @property
    def space_dim(self) -> int:
        return 2 if self.variant == "coopnav2d" else 1

    @property
    def act_dim(self) -> int:
        return self.space_dim

    @property
    def obs_dim(self) -> int:
        d, n = self.space_dim, self.n_agents
        own = 2 * d if self.variant == "coopnav2d" else d
        return own + n * d + (n - 1) * d

    @property
    def cooperative(self) -> bool:
        return self.variant != "spread1d_independent"


@dataclass
class EnvState:
    config: EnvConfig
    agents: np.ndarray      # (n, d)
    landmarks: np.ndarray   # (n, d)
    velocities: np.ndarray  # (n, d), zero for spread1d
    t: int = 0
    rng: np.random.Generator | None = field(default=None, repr=False, compare=False)

    def copy(self) -> EnvState:
        return replace(self, agents=self.agents.copy(), landmarks=self.landmarks.copy(),
                       velocities=self.velocities.copy())

    @property
    def done(self) -> bool:
        return self.t >= self.config.episode_len


@dataclass
class StepResult:
    observations: np.ndarray  # (n, obs_dim)
    rewards: np.ndarray       # (n,)
    done: bool


def reset(config: EnvConfig, seed) -> tuple[EnvState, np.ndarray]:
    """Start an episode with agents and landmarks uniform in the world box."""
    rng = np.random.default_rng(seed)
    n, d, w = config.n_agents, config.space_dim, config.world_halfwidth
    agents = rng.uniform(-w, w, size=(n, d))
    landmarks = rng.uniform(-w, w, size=(n, d))
    state = EnvState(config, agents, landmarks, np.zeros((n, d)), 0, rng)
    return state, observe_all(state)


def observe(state: EnvState, agent: int) -> np.ndarray:
    cfg = state.config
    if not 0 <= agent < cfg.n_agents:
        raise IndexError(f"agent index {agent} out of range")
    pos = state.agents[agent]
    parts = [pos]
    if cfg.variant == "coopnav2d":
        parts.append(state.velocities[agent])
    parts.append((state.landmarks - pos).ravel())
    others = np.delete(state.agents, agent, axis=0)
    parts.append((others - pos).ravel())
    return np.concatenate(parts)


def observe_all(state: EnvState) -> np.ndarray:
    return np.stack([observe(state, i) for i in range(state.config.n_agents)])


def rewards(state: EnvState) -> np.ndarray:
    cfg = state.config
    n = cfg.n_agents
    if not cfg.cooperative:
        return -np.linalg.norm(state.agents - state.landmarks, axis=1)
    # dist[i, j] = |agent_i - landmark_j|
    dist = np.linalg.norm(state.agents[:, None, :] - state.landmarks[None, :, :], axis=2)
    r = -dist.min(axis=0).sum()
    if n > 1:
        pair = np.linalg.norm(state.agents[:, None, :] - state.agents[None, :, :], axis=2)
        ordered = int((pair < cfg.collision_radius).sum()) - n  # drop the diagonal
        r -= cfg.collision_penalty * ordered / 2
    return np.full(n, r)


def step(state: EnvState, actions) -> tuple[EnvState, StepResult]:
    """Advance one timestep. Returns a new state; the input state is not modified."""
    cfg = state.config
    if state.done:
        raise RuntimeError("episode already finished; call reset()")
    a = np.asarray(actions, dtype=np.float64).reshape(cfg.n_agents, cfg.act_dim)
    if np.any(np.abs(a) > 1.0) or not np.all(np.isfinite(a)):
        if cfg.strict_actions:
            raise ValueError("action outside [-1, 1] with strict_actions enabled")
        a = np.clip(np.nan_to_num(a), -1.0, 1.0)
    new = state.copy()
    w = cfg.world_halfwidth
    if cfg.variant == "coopnav2d":
        v = new.velocities * (1.0 - cfg.damping) + cfg.accel * a * cfg.dt
        speed = np.linalg.norm(v, axis=1, keepdims=True)
        v = np.where(speed > cfg.max_speed, v * (cfg.max_speed / np.maximum(speed, 1e-12)), v)
        new.velocities = v
        new.agents = np.clip(new.agents + v * cfg.dt, -w, w)
    else:
        new.agents = np.clip(new.agents + cfg.dt * cfg.max_speed * a, -w, w)
    new.t += 1
    return new, StepResult(observe_all(new), rewards(new), new.t >= cfg.episode_len)
