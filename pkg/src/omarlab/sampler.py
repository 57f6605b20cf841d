"""Zeroth-order action search against a critic.

Three refinement rules share one driver: the softmax-weighted Gaussian update
(``soft``), the elite-set cross-entropy method (``cem``) and plain random
shooting. All operations are vectorized over a leading batch axis so a whole
minibatch of observations is searched at once; the single-observation entry
points are thin wrappers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

SIGMA_FLOOR = 1e-3
SAMPLER_VARIANTS = ("soft", "cem", "random_shooting")

# q_fn(obs_rows, action_rows) -> q values, one per row
QFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class SamplerConfig:
    variant: str = "soft"
    iterations: int = 3
    population: int = 10
    beta: float = 1.0
    init_mean: float = 0.0
    init_std: float = 2.0
    elite_fraction: float = 0.2
    std_mode: str = "normalized"

    def __post_init__(self):
        if self.variant not in SAMPLER_VARIANTS:
            raise ValueError(f"unknown sampler variant {self.variant!r}")
        if self.iterations < 0 or self.population < 1:
            raise ValueError("iterations must be >= 0 and population >= 1")
        if self.init_std <= 0 or self.beta < 0:
            raise ValueError("init_std must be > 0 and beta >= 0")
        if not 0.0 < self.elite_fraction <= 1.0:
            raise ValueError("elite_fraction must lie in (0, 1]")
        if self.std_mode not in ("normalized", "literal"):
            raise ValueError("std_mode must be 'normalized' or 'literal'")

    @property
    def n_elite(self) -> int:
        return max(1, math.ceil(self.elite_fraction * self.population - 1e-12))


@dataclass
class SamplerState:
    mean: np.ndarray  # (..., d)
    std: np.ndarray   # (..., d)
    iteration: int = 0

    @classmethod
    def initial(cls, cfg: SamplerConfig, shape: tuple[int, ...]) -> SamplerState:
        return cls(np.full(shape, float(cfg.init_mean)), np.full(shape, float(cfg.init_std)), 0)


def draw_population(state: SamplerState, k: int, rng: np.random.Generator) -> np.ndarray:
    """K clamped Gaussian draws; output shape (..., K, d) for state shape (..., d)."""
    mean = np.asarray(state.mean, dtype=np.float64)
    std = np.asarray(state.std, dtype=np.float64)
    noise = rng.standard_normal(mean.shape[:-1] + (k,) + mean.shape[-1:])
    samples = mean[..., None, :] + std[..., None, :] * noise
    return np.clip(samples, -1.0, 1.0)


def softmax_weights(qvalues: np.ndarray, beta: float) -> np.ndarray:
    """exp(beta * Q_k) / sum_m exp(beta * Q_m) along the last axis, max-shifted."""
    q = np.asarray(qvalues, dtype=np.float64)
    z = beta * (q - q.max(axis=-1, keepdims=True))
    w = np.exp(z)
    return w / w.sum(axis=-1, keepdims=True)


def _check_population(samples: np.ndarray, qvalues: np.ndarray):
    samples = np.asarray(samples, dtype=np.float64)
    qvalues = np.asarray(qvalues, dtype=np.float64)
    if samples.ndim < 2 or samples.shape[-2] == 0:
        raise ValueError("empty population (K = 0)")
    if qvalues.shape != samples.shape[:-1]:
        raise ValueError(f"qvalues shape {qvalues.shape} does not match samples {samples.shape}")
    return samples, qvalues


def soft_update_distribution(samples, qvalues, state: SamplerState, beta: float,
                             std_mode: str = "normalized") -> SamplerState:
    """Q-weighted mean; spread measured around the previous mean.

    ``samples`` has shape (..., K, d) and ``qvalues`` (..., K).
    """
    samples, qvalues = _check_population(samples, qvalues)
    w = softmax_weights(qvalues, beta)
    mean = np.einsum("...k,...kd->...d", w, samples)
    sq = ((samples - np.asarray(state.mean)[..., None, :]) ** 2).sum(axis=-2)
    if std_mode == "normalized":
        sq = sq / samples.shape[-2]
    std = np.maximum(np.sqrt(sq), SIGMA_FLOOR)
    return SamplerState(mean, std, state.iteration + 1)


def cem_update_distribution(samples, qvalues, state: SamplerState,
                            elite_fraction: float) -> SamplerState:
    """Mean and population std of the top ceil(elite_fraction * K) samples."""
    samples, qvalues = _check_population(samples, qvalues)
    k = samples.shape[-2]
    n_elite = max(1, math.ceil(elite_fraction * k - 1e-12))
    # stable sort on -Q: equal Q keeps the lower draw index first
    order = np.argsort(-qvalues, axis=-1, kind="stable")[..., :n_elite]
    elite = np.take_along_axis(samples, order[..., None], axis=-2)
    mean = elite.mean(axis=-2)
    std = np.maximum(elite.std(axis=-2), SIGMA_FLOOR)
    return SamplerState(mean, std, state.iteration + 1)


def search(q_fn: QFunction, obs: np.ndarray, action_dim: int, cfg: SamplerConfig,
           rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Run the refinement loop for a batch of observations.

    Returns all drawn candidates (B, J*K, d) in draw order, their Q values
    (B, J*K) and the best-so-far mean Q after each iteration.
    """
    b, d = obs.shape[0], action_dim
    k = cfg.population
    state = SamplerState.initial(cfg, (b, d))
    init = state
    cands, qs, best_trace = [], [], []
    best = np.full(b, -np.inf)
    obs_rep = np.repeat(obs, k, axis=0)
    for _ in range(cfg.iterations):
        src = init if cfg.variant == "random_shooting" else state
        pop = draw_population(src, k, rng)                      # (B, K, d)
        q = np.asarray(q_fn(obs_rep, pop.reshape(b * k, d)), dtype=np.float64).reshape(b, k)
        cands.append(pop)
        qs.append(q)
        best = np.maximum(best, q.max(axis=1))
        best_trace.append(float(best.mean()))
        if cfg.variant == "soft":
            state = soft_update_distribution(pop, q, state, cfg.beta, cfg.std_mode)
        elif cfg.variant == "cem":
            state = cem_update_distribution(pop, q, state, cfg.elite_fraction)
    if not cands:
        return np.zeros((b, 0, d)), np.zeros((b, 0)), best_trace
    return np.concatenate(cands, axis=1), np.concatenate(qs, axis=1), best_trace


def select_candidates(q_fn: QFunction, obs: np.ndarray, policy_actions: np.ndarray,
                      cfg: SamplerConfig, rng: np.random.Generator,
                      policy_q: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched candidate selection.

    The pool for each observation is the policy action followed by every
    candidate drawn in every iteration; the first maximizer wins, so ties go
    to the policy action and then to the lowest draw index.

    Returns (chosen actions (B, d), their Q values, Q of the policy actions).
    """
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    policy_actions = np.atleast_2d(np.asarray(policy_actions, dtype=np.float64))
    if policy_q is None:
        policy_q = np.asarray(q_fn(obs, policy_actions), dtype=np.float64).reshape(-1)
    cands, qs, _ = search(q_fn, obs, policy_actions.shape[1], cfg, rng)
    pool = np.concatenate([policy_actions[:, None, :], cands], axis=1)
    pool_q = np.concatenate([policy_q[:, None], qs], axis=1)
    idx = np.argmax(pool_q, axis=1)
    rows = np.arange(obs.shape[0])
    return pool[rows, idx], pool_q[rows, idx], policy_q


def select_candidate(critic: QFunction, obs, policy_action, cfg: SamplerConfig,
                     rng: np.random.Generator) -> np.ndarray:
    """Best action for a single observation among sampled candidates and the policy action."""
    chosen, _, _ = select_candidates(critic, np.asarray(obs, dtype=np.float64)[None, :],
                                     np.asarray(policy_action, dtype=np.float64)[None, :], cfg, rng)
    return chosen[0]
