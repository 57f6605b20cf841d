"""Offline and online multi-agent TD3 learners.

Every agent owns an actor, twin critics and target copies of all three. The
critic input is ``[state part | action part]``: for decentralized critics the
state part is the agent's own observation and the action part its own action;
for centralized critics the state part is the concatenation of all agents'
observations and the action part the joint action. Agent i's action always
occupies a fixed column slice of the critic input (``Batch.cols``), which is
what the actor objective and the sampler substitute into.

Actor modes:
    omar     conservative critic + rectified actor toward a sampled candidate
    macql    conservative critic + plain deterministic policy gradient
    matd3bc  conservative critic + rectified actor toward the dataset action
    online   TD3 critic without the conservative term, plain policy gradient
"""
from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset, ScoreTable, actor_spec, normalized_score
from .envs import EnvConfig, reset, step
from .nn import (AdamState, MlpParams, MlpSpec, adam_step, backward_cache, forward_cache,
                 init_params, soft_update)
from .sampler import SamplerConfig, select_candidates

ACTOR_MODES = ("omar", "macql", "matd3bc", "online")
CRITIC_MODES = ("decentralized", "centralized")
TIER_TAU = {"random": 0.5, "medium_replay": 0.5, "medium": 0.7, "expert": 0.9}
CQL_ALPHA_GRID = (0.1, 0.5, 1.0, 5.0)


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.99
    rho: float = 0.01
    batch_size: int = 1024
    lr: float = 0.01
    actor_lr: float | None = None
    actor_updates: int = 1
    alpha: float = 1.0
    tau: float = 0.5
    actor_mode: str = "omar"
    critic_mode: str = "decentralized"
    policy_noise: float = 0.2
    noise_clip: float = 0.5
    ood_samples: int = 10
    ood_noise: float = 0.2
    total_steps: int = 30_000
    eval_interval: int = 1_000
    eval_episodes: int = 10
    final_eval_episodes: int = 10
    hidden: tuple[int, ...] = (64, 64)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    # online-only knobs
    exploration_noise: float = 0.1
    buffer_capacity: int = 1_000_000
    warmup_steps: int = 2_000
    update_every: int = 1
    medium_band: tuple[float, float] = (40.0, 60.0)

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")
        if self.actor_mode not in ACTOR_MODES:
            raise ValueError(f"actor_mode must be one of {ACTOR_MODES}")
        if self.critic_mode not in CRITIC_MODES:
            raise ValueError(f"critic_mode must be one of {CRITIC_MODES}")
        if self.batch_size < 1 or self.total_steps < 0 or self.eval_interval < 1:
            raise ValueError("batch_size and eval_interval must be >= 1, total_steps >= 0")
        if isinstance(self.sampler, dict):
            object.__setattr__(self, "sampler", SamplerConfig(**self.sampler))
        object.__setattr__(self, "hidden", tuple(self.hidden))
        object.__setattr__(self, "medium_band", tuple(self.medium_band))

    @property
    def centralized(self) -> bool:
        return self.critic_mode == "centralized"

    @property
    def effective_tau(self) -> float:
        return self.tau if self.actor_mode in ("omar", "matd3bc") else 0.0

    @property
    def effective_alpha(self) -> float:
        return 0.0 if self.actor_mode == "online" else self.alpha


@dataclass
class AgentLearner:
    actor: MlpParams
    actor_target: MlpParams
    critics: list[MlpParams]
    critic_targets: list[MlpParams]
    actor_opt: AdamState
    critic_opts: list[AdamState]

    @classmethod
    def create(cls, a_spec: MlpSpec, c_spec: MlpSpec, rng: np.random.Generator) -> AgentLearner:
        actor = init_params(a_spec, rng)
        critics = [init_params(c_spec, rng) for _ in range(2)]
        return cls(actor, actor.copy(), critics, [c.copy() for c in critics],
                   AdamState.zeros(a_spec.n_params), [AdamState.zeros(c_spec.n_params) for _ in critics])

    def networks(self) -> dict[str, MlpParams]:
        return {"actor": self.actor, "actor_target": self.actor_target,
                "critic1": self.critics[0], "critic2": self.critics[1],
                "critic1_target": self.critic_targets[0], "critic2_target": self.critic_targets[1]}

    def soft_update_targets(self, rho: float):
        soft_update(self.actor_target, self.actor, rho)
        for tgt, src in zip(self.critic_targets, self.critics):
            soft_update(tgt, src, rho)


def critic_spec(obs_dim: int, act_dim: int, n_agents: int, centralized: bool, hidden) -> MlpSpec:
    k = n_agents if centralized else 1
    return MlpSpec(k * (obs_dim + act_dim), tuple(hidden), 1, "relu", "identity")


def make_learners(n_agents: int, obs_dim: int, act_dim: int, cfg: TrainConfig,
                  rng: np.random.Generator) -> list[AgentLearner]:
    a_spec = MlpSpec(obs_dim, cfg.hidden, act_dim, "relu", "tanh")
    c_spec = critic_spec(obs_dim, act_dim, n_agents, cfg.centralized, cfg.hidden)
    return [AgentLearner.create(a_spec, c_spec, rng) for _ in range(n_agents)]


# ---------------------------------------------------------------- batches

@dataclass
class Batch:
    """Minibatch for one agent, already laid out for that agent's critic."""
    o: np.ndarray          # (B, obs_dim) own observations
    a: np.ndarray          # (B, act_dim) own dataset actions
    r: np.ndarray          # (B,)
    o2: np.ndarray         # (B, obs_dim)
    x: np.ndarray          # (B, critic_in) critic input at dataset actions
    s2: np.ndarray         # (B, state_dim) next state part of the critic input
    o2_all: np.ndarray     # (B, n, obs_dim) next observations of all agents (centralized)
    cols: slice            # agent's action columns inside the critic input
    agent: int = 0

    def __len__(self):
        return len(self.r)

    def with_actions(self, acts: np.ndarray, repeat: int = 1) -> np.ndarray:
        """Critic inputs with the agent's action replaced; rows repeated ``repeat`` times."""
        x = np.repeat(self.x, repeat, axis=0) if repeat > 1 else self.x.copy()
        x[:, self.cols] = acts
        return x


def make_batch(data: Dataset, idx: np.ndarray, agent: int, centralized: bool) -> Batch:
    o = data.obs[idx, agent]
    a = data.actions[idx, agent]
    r = data.rewards[idx, agent]
    o2 = data.next_obs[idx, agent]
    ad = data.act_dim
    if centralized:
        b = len(idx)
        s = data.obs[idx].reshape(b, -1)
        x = np.concatenate([s, data.actions[idx].reshape(b, -1)], axis=1)
        s2 = data.next_obs[idx].reshape(b, -1)
        start = s.shape[1] + agent * ad
        o2_all = data.next_obs[idx]
    else:
        x = np.concatenate([o, a], axis=1)
        s2, start, o2_all = o2, o.shape[1], None
    return Batch(o, a, r, o2, x, s2, o2_all, slice(start, start + ad), agent)


def _q(critic: MlpParams, x: np.ndarray) -> np.ndarray:
    return forward_cache(critic, x)[0][:, 0]


def _smoothed_target_action(actor_target: MlpParams, o2: np.ndarray, cfg: TrainConfig,
                            rng: np.random.Generator) -> np.ndarray:
    a2 = forward_cache(actor_target, o2)[0]
    eps = np.clip(cfg.policy_noise * rng.standard_normal(a2.shape), -cfg.noise_clip, cfg.noise_clip)
    return np.clip(a2 + eps, -1.0, 1.0)


def td3_target(batch: Batch, learner: AgentLearner, cfg: TrainConfig, rng: np.random.Generator,
               target_actors: list[MlpParams] | None = None) -> np.ndarray:
    """y = r + gamma * min_k Qbar_k(s', a'), with clipped Gaussian smoothing on a'.

    Decentralized: a' is the agent's own smoothed target action at o'.
    Centralized: a' is the joint action of every agent's smoothed target policy,
    which needs ``target_actors`` (one per agent, in agent order). Episodes end
    only by time limit, so the bootstrap term is never masked.
    """
    if cfg.centralized:
        if target_actors is None:
            raise ValueError("centralized targets need every agent's target actor")
        joint = np.concatenate([_smoothed_target_action(p, batch.o2_all[:, j], cfg, rng)
                                for j, p in enumerate(target_actors)], axis=1)
        x2 = np.concatenate([batch.s2, joint], axis=1)
    else:
        x2 = np.concatenate([batch.s2, _smoothed_target_action(learner.actor_target, batch.o2, cfg, rng)],
                            axis=1)
    q = np.minimum(_q(learner.critic_targets[0], x2), _q(learner.critic_targets[1], x2))
    return batch.r + cfg.gamma * q


centralized_td3_target = td3_target


def centralized_critic_inputs(data: Dataset, idx: np.ndarray, agent: int) -> Batch:
    """Batch whose critic input is all observations plus the joint action."""
    if not data.joint:
        raise ValueError("centralized critics need a dataset with joint actions")
    return make_batch(data, idx, agent, centralized=True)


def sample_ood_actions(batch: Batch, learner: AgentLearner, cfg: TrainConfig,
                       rng: np.random.Generator) -> np.ndarray:
    """(B, 3M, d): M uniform, M around pi(o), M around pi(o'), all clamped to [-1, 1]."""
    b, d, m = len(batch), batch.a.shape[1], cfg.ood_samples
    uni = rng.uniform(-1.0, 1.0, size=(b, m, d))
    pi = forward_cache(learner.actor, batch.o)[0]
    pi2 = forward_cache(learner.actor, batch.o2)[0]
    cur = pi[:, None, :] + cfg.ood_noise * rng.standard_normal((b, m, d))
    nxt = pi2[:, None, :] + cfg.ood_noise * rng.standard_normal((b, m, d))
    return np.clip(np.concatenate([uni, cur, nxt], axis=1), -1.0, 1.0)


@dataclass
class CriticLoss:
    loss: float
    td_loss: float
    penalty: float
    grads: MlpParams


def cql_critic_loss(batch: Batch, learner: AgentLearner, cfg: TrainConfig, y: np.ndarray,
                    ood: np.ndarray | None = None) -> list[CriticLoss]:
    """TD loss plus alpha * mean(logsumexp_ood Q(o, .) - Q(o, a_data)) for each twin.

    ``ood`` has shape (B, n_ood, d); it is ignored when the effective alpha is 0.
    """
    b = len(batch)
    alpha = cfg.effective_alpha
    use_pen = alpha > 0 and ood is not None and ood.shape[1] > 0
    if use_pen:
        n_ood = ood.shape[1]
        x_all = np.concatenate([batch.x, batch.with_actions(ood.reshape(b * n_ood, -1), repeat=n_ood)])
    else:
        x_all = batch.x
    out = []
    for critic in learner.critics:
        q_all, cache = forward_cache(critic, x_all)
        q = q_all[:b, 0]
        diff = q - y
        td = 0.5 * float(np.mean(diff * diff))
        dq = np.empty_like(q_all)
        dq[:b, 0] = diff / b
        pen = 0.0
        if use_pen:
            q_ood = q_all[b:, 0].reshape(b, n_ood)
            mx = q_ood.max(axis=1, keepdims=True)
            e = np.exp(q_ood - mx)
            s = e.sum(axis=1, keepdims=True)
            lse = (mx + np.log(s))[:, 0]
            pen = float(np.mean(lse - q))
            dq[:b, 0] -= alpha / b
            dq[b:, 0] = (alpha / b) * (e / s).ravel()
        grads, _ = backward_cache(critic, cache, q_all, dq, need_input_grad=False)
        out.append(CriticLoss(td + alpha * pen, td, pen, grads))
    return out


@dataclass
class ActorLoss:
    loss: float
    grads: MlpParams
    target: np.ndarray | None = None
    rect_dist: float = float("nan")
    improvement: float = float("nan")
    min_improvement: float = float("nan")


def rectified_actor_loss(batch: Batch, learner: AgentLearner, tau: float,
                         target_actions: np.ndarray | None) -> ActorLoss:
    """mean[-(1 - tau) * Q1(o, pi(o)) + tau * |pi(o) - target|^2].

    ``target_actions`` is held constant. With tau = 0 the target is unused and
    may be None.
    """
    b = len(batch)
    pi, a_cache = forward_cache(learner.actor, batch.o)
    x = batch.with_actions(pi)
    critic = learner.critics[0]
    q, c_cache = forward_cache(critic, x)
    _, dx = backward_cache(critic, c_cache, q, np.ones_like(q), need_param_grads=False)
    dq_da = dx[:, batch.cols]
    q = q[:, 0]
    if tau > 0.0:
        delta = pi - target_actions
        sq = (delta * delta).sum(axis=1)
        loss = float(np.mean(-(1.0 - tau) * q + tau * sq))
        dpi = (-(1.0 - tau) * dq_da + 2.0 * tau * delta) / b
    else:
        loss = float(np.mean(-q))
        dpi = -dq_da / b
    grads, _ = backward_cache(learner.actor, a_cache, pi, dpi, need_input_grad=False)
    return ActorLoss(loss, grads, target_actions)


def critic_q_fn(critic: MlpParams, cols: slice):
    """Q evaluator for the sampler: contexts are critic inputs whose action
    columns get overwritten by the candidate actions."""
    def q_fn(ctx, acts):
        x = ctx.copy()
        x[:, cols] = acts
        return _q(critic, x)
    return q_fn


def omar_actor_loss(batch: Batch, learner: AgentLearner, sampler_cfg: SamplerConfig,
                    tau: float, rng: np.random.Generator) -> ActorLoss:
    """Rectified actor objective with the target chosen by zeroth-order search on Q1."""
    pi = forward_cache(learner.actor, batch.o)[0]
    q_fn = critic_q_fn(learner.critics[0], batch.cols)
    a_hat, q_hat, q_pi = select_candidates(q_fn, batch.x, pi, sampler_cfg, rng)
    res = rectified_actor_loss(batch, learner, tau, a_hat)
    imp = q_hat - q_pi
    res.rect_dist = float(np.mean(((pi - a_hat) ** 2).sum(axis=1)))
    res.improvement = float(np.mean(imp))
    res.min_improvement = float(np.min(imp))
    return res


def matd3bc_actor_loss(batch: Batch, learner: AgentLearner, tau: float) -> ActorLoss:
    """Rectified actor objective with the dataset action as the target."""
    res = rectified_actor_loss(batch, learner, tau, batch.a)
    if tau > 0.0:
        pi = forward_cache(learner.actor, batch.o)[0]
        res.rect_dist = float(np.mean(((pi - batch.a) ** 2).sum(axis=1)))
    return res


# ---------------------------------------------------------------- one update

@dataclass
class StepStats:
    critic_loss: float
    penalty: float
    actor_loss: float
    rect_dist: float
    improvement: float
    min_improvement: float


def update_agent(agent: int, learners: list[AgentLearner], batch: Batch, cfg: TrainConfig,
                 rngs: dict[str, np.random.Generator]) -> StepStats:
    """Critic step, candidate search, actor step and target update for one agent."""
    ln = learners[agent]
    y = td3_target(batch, ln, cfg, rngs["target"],
                   [l.actor_target for l in learners] if cfg.centralized else None)
    ood = sample_ood_actions(batch, ln, cfg, rngs["ood"]) if cfg.effective_alpha > 0 else None
    closses = cql_critic_loss(batch, ln, cfg, y, ood)
    for critic, opt, cl in zip(ln.critics, ln.critic_opts, closses):
        adam_step(critic, cl.grads, opt, cfg.lr)
    tau = cfg.effective_tau
    actor_lr = cfg.actor_lr if cfg.actor_lr is not None else cfg.lr
    al = None
    for k in range(cfg.actor_updates):
        if cfg.actor_mode == "omar" and tau > 0.0:
            # the candidate search runs once per training step
            al = (omar_actor_loss(batch, ln, cfg.sampler, tau, rngs["sampler"]) if k == 0
                  else rectified_actor_loss(batch, ln, tau, al.target))
        elif cfg.actor_mode == "matd3bc":
            al = matd3bc_actor_loss(batch, ln, tau)
        else:
            al = rectified_actor_loss(batch, ln, 0.0, None)
        adam_step(ln.actor, al.grads, ln.actor_opt, actor_lr)
    ln.soft_update_targets(cfg.rho)
    return StepStats(float(np.mean([c.loss for c in closses])), float(np.mean([c.penalty for c in closses])),
                     al.loss, al.rect_dist, al.improvement, al.min_improvement)


# ---------------------------------------------------------------- evaluation

EVAL_SALT = 0x5EED_E7A1


def eval_episode_seeds(seed: int, episodes: int) -> np.ndarray:
    return np.random.default_rng([seed, EVAL_SALT]).integers(2**63, size=episodes)


def evaluate(env: EnvConfig, actors: list[MlpParams], episodes: int, seed: int) -> np.ndarray:
    """Returns of deterministic-policy episodes (sum over time of the agent-mean reward)."""
    if len(actors) != env.n_agents:
        raise ValueError(f"{len(actors)} actors for an env with {env.n_agents} agents")
    if actors and actors[0].spec.input_dim != env.obs_dim:
        raise ValueError("actor input size does not match the environment observation size")
    rets = np.zeros(episodes)
    for e, s in enumerate(eval_episode_seeds(seed, episodes)):
        state, obs = reset(env, s)
        done = False
        while not done:
            a = np.stack([forward_cache(p, obs[i:i + 1])[0][0] for i, p in enumerate(actors)])
            state, res = step(state, a)
            rets[e] += res.rewards.mean()
            obs, done = res.observations, res.done
    return rets


# ---------------------------------------------------------------- offline training

METRIC_FIELDS = ("step", "critic_loss", "cql_penalty", "actor_loss", "rect_dist",
                 "improvement", "min_improvement", "eval_mean", "eval_std")


@dataclass
class TrainMetrics:
    rows: list[dict] = field(default_factory=list)
    ms_per_update: list[float] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=np.float64)


@dataclass
class TrainResult:
    learners: list[AgentLearner]
    metrics: TrainMetrics
    final_returns: np.ndarray
    config: TrainConfig
    seed: int

    @property
    def final_return(self) -> float:
        return float(np.mean(self.final_returns))

    @property
    def actors(self) -> list[MlpParams]:
        return [l.actor for l in self.learners]

    @property
    def mean_ms_per_update(self) -> float:
        return float(np.mean(self.metrics.ms_per_update)) if self.metrics.ms_per_update else float("nan")


def _run_rngs(seed: int) -> dict[str, np.random.Generator]:
    # independent streams so that skipping one consumer (e.g. the sampler when
    # tau = 0) leaves every other stream untouched
    names = ("init", "batch", "target", "ood", "sampler")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


def _as_agent_datasets(data) -> tuple[list[Dataset], Dataset | None]:
    if isinstance(data, Dataset):
        return [data] * data.n_agents, data
    views = list(data)
    if not views:
        raise ValueError("no datasets given")
    return views, None


def train_run(data, cfg: TrainConfig, seed: int, env: EnvConfig | None = None,
              progress=None) -> TrainResult:
    """Offline training on a joint dataset or a list of per-agent datasets.

    Each training step updates every agent in index order on its own
    minibatch. Evaluation (deterministic policies, ``cfg.eval_episodes``
    episodes) runs every ``cfg.eval_interval`` steps when an environment is
    given; a final evaluation with ``cfg.final_eval_episodes`` episodes always
    runs at the end if ``env`` is set.
    """
    if cfg.actor_mode == "online":
        raise ValueError("actor_mode 'online' is for online_train_run")
    per_agent, joint = _as_agent_datasets(data)
    n = len(per_agent)
    if cfg.centralized and joint is None:
        raise ValueError("centralized critics need a joint dataset (joint actions missing)")
    if cfg.centralized and not joint.joint:
        raise ValueError("centralized critics need a dataset with joint actions")
    sizes = [len(d) for d in per_agent]
    if cfg.batch_size > min(sizes):
        raise ValueError(f"batch size {cfg.batch_size} exceeds dataset size {min(sizes)}")
    od, ad = per_agent[0].obs_dim, per_agent[0].act_dim
    rngs = _run_rngs(seed)
    learners = make_learners(n, od, ad, cfg, rngs["init"])
    metrics = TrainMetrics()
    acc: list[StepStats] = []
    for t in range(1, cfg.total_steps + 1):
        t0 = time.perf_counter()
        for i in range(n):
            d = per_agent[i]
            idx = rngs["batch"].integers(0, len(d), size=cfg.batch_size)
            slot = i if joint is not None else 0
            batch = make_batch(d, idx, slot, cfg.centralized)
            acc.append(update_agent(i, learners, batch, cfg, rngs))
        metrics.ms_per_update.append(1e3 * (time.perf_counter() - t0))
        if t % cfg.eval_interval == 0 or t == cfg.total_steps:
            row = _summarize(t, acc)
            if env is not None:
                rets = evaluate(env, [l.actor for l in learners], cfg.eval_episodes, seed)
                row.update(eval_mean=float(rets.mean()), eval_std=float(rets.std()))
            metrics.rows.append(row)
            acc = []
            if progress is not None:
                progress(row)
    final = (evaluate(env, [l.actor for l in learners], cfg.final_eval_episodes, seed)
             if env is not None else np.zeros(0))
    return TrainResult(learners, metrics, final, cfg, seed)


def _summarize(t: int, acc: list[StepStats]) -> dict:
    def m(name):
        vals = [getattr(s, name) for s in acc]
        return float(np.mean(vals)) if vals else float("nan")
    row = {"step": t, "critic_loss": m("critic_loss"), "cql_penalty": m("penalty"),
           "actor_loss": m("actor_loss"), "rect_dist": m("rect_dist"),
           "improvement": m("improvement"),
           "min_improvement": float(np.min([s.min_improvement for s in acc])) if acc else float("nan"),
           "eval_mean": float("nan"), "eval_std": float("nan")}
    return row


# ---------------------------------------------------------------- online training

class ReplayBuffer:
    """FIFO ring buffer of joint transitions."""

    def __init__(self, capacity: int, n_agents: int, obs_dim: int, act_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.obs = np.zeros((capacity, n_agents, obs_dim))
        self.actions = np.zeros((capacity, n_agents, act_dim))
        self.rewards = np.zeros((capacity, n_agents))
        self.next_obs = np.zeros((capacity, n_agents, obs_dim))
        self.dones = np.zeros(capacity)
        self.ptr = 0
        self.size = 0
        self.inserted = 0

    def add(self, obs, actions, rewards, next_obs, done):
        k = self.ptr
        self.obs[k], self.actions[k], self.rewards[k] = obs, actions, rewards
        self.next_obs[k], self.dones[k] = next_obs, float(done)
        self.ptr = (k + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.inserted += 1

    def __len__(self):
        return self.size

    @property
    def act_dim(self) -> int:
        return self.actions.shape[2]

    def oldest_index(self) -> int:
        """Insertion counter (0-based) of the oldest transition still stored."""
        return self.inserted - self.size

    def as_dataset(self) -> Dataset:
        order = (np.arange(self.size) + (self.ptr if self.size == self.capacity else 0)) % self.capacity
        return Dataset(self.obs[order], self.actions[order], self.rewards[order],
                       self.next_obs[order], self.dones[order])


@dataclass
class EvalPoint:
    env_step: int
    mean: float
    std: float
    actors: list[MlpParams]


@dataclass
class OnlineResult:
    env: EnvConfig
    cfg: TrainConfig
    seed: int
    learners: list[AgentLearner]
    history: list[EvalPoint]
    stream: dict[str, np.ndarray] | None = None

    @property
    def random_point(self) -> EvalPoint:
        return self.history[0]

    @property
    def expert_point(self) -> EvalPoint:
        """Snapshot with the best evaluation return (first one on ties)."""
        return max(self.history, key=lambda p: p.mean)

    @property
    def score_table(self) -> ScoreTable:
        return ScoreTable(self.random_point.mean, self.expert_point.mean)

    def normalized(self, point: EvalPoint) -> float:
        return float(normalized_score(point.mean, self.random_point.mean, self.expert_point.mean))

    @property
    def medium_point(self) -> EvalPoint:
        """First snapshot whose normalized return falls inside the medium band.

        If no evaluation lands in the band, the first one above its lower edge
        is used instead.
        """
        lo, hi = self.cfg.medium_band
        scores = [self.normalized(p) for p in self.history]
        for p, s in zip(self.history, scores):
            if lo <= s <= hi:
                return p
        for p, s in zip(self.history, scores):
            if s >= lo:
                return p
        return self.expert_point

    def medium_replay_columns(self) -> tuple[dict[str, np.ndarray], dict[str, str]]:
        if self.stream is None:
            raise ValueError("online run was not recorded (record=True needed)")
        p = self.medium_point
        cols = {k: v[:p.env_step] for k, v in self.stream.items()}
        info = {"behavior": f"online replay stream up to env step {p.env_step}",
                "medium_step": str(p.env_step), "behavior_eval_return": repr(p.mean),
                "medium_normalized": repr(self.normalized(p)),
                "score_random": repr(self.random_point.mean), "score_expert": repr(self.expert_point.mean)}
        return cols, info


def online_train_run(env: EnvConfig, cfg: TrainConfig, seed: int, record: bool = False,
                     progress=None) -> OnlineResult:
    """Online ITD3 (or MATD3 with centralized critics) with a FIFO replay buffer.

    ``cfg.total_steps`` counts environment steps. Actions are uniform random
    during warm-up, then the deterministic policy plus Gaussian exploration
    noise. Policies are evaluated (and snapshotted) at step 0 and every
    ``cfg.eval_interval`` steps. With ``record=True`` every transition is kept
    in insertion order for building medium-replay datasets.
    """
    if cfg.actor_mode != "online":
        cfg = dataclasses.replace(cfg, actor_mode="online")
    rngs = _run_rngs(seed)
    explore = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    n, od, ad = env.n_agents, env.obs_dim, env.act_dim
    learners = make_learners(n, od, ad, cfg, rngs["init"])
    buf = ReplayBuffer(min(cfg.buffer_capacity, max(cfg.total_steps, 1)), n, od, ad)
    stream = {"obs": np.zeros((cfg.total_steps, n, od)), "actions": np.zeros((cfg.total_steps, n, ad)),
              "rewards": np.zeros((cfg.total_steps, n)), "next_obs": np.zeros((cfg.total_steps, n, od)),
              "dones": np.zeros(cfg.total_steps)} if record else None

    def snapshot(t):
        rets = evaluate(env, [l.actor for l in learners], cfg.eval_episodes, seed)
        point = EvalPoint(t, float(rets.mean()), float(rets.std()), [l.actor.copy() for l in learners])
        if progress is not None:
            progress(point)
        return point

    history = [snapshot(0)]
    state, obs = reset(env, explore.integers(2**63))
    for t in range(1, cfg.total_steps + 1):
        if t <= cfg.warmup_steps:
            a = explore.uniform(-1.0, 1.0, size=(n, ad))
        else:
            a = np.stack([forward_cache(l.actor, obs[i:i + 1])[0][0] for i, l in enumerate(learners)])
            a = np.clip(a + cfg.exploration_noise * explore.standard_normal(a.shape), -1.0, 1.0)
        state, res = step(state, a)
        buf.add(obs, a, res.rewards, res.observations, res.done)
        if stream is not None:
            k = t - 1
            stream["obs"][k], stream["actions"][k], stream["rewards"][k] = obs, a, res.rewards
            stream["next_obs"][k], stream["dones"][k] = res.observations, float(res.done)
        obs = res.observations
        if res.done:
            state, obs = reset(env, explore.integers(2**63))
        if t > cfg.warmup_steps and len(buf) >= cfg.batch_size and t % cfg.update_every == 0:
            for i in range(n):
                idx = rngs["batch"].integers(0, len(buf), size=cfg.batch_size)
                update_agent(i, learners, make_batch(buf, idx, i, cfg.centralized), cfg, rngs)
        if t % cfg.eval_interval == 0 or t == cfg.total_steps:
            history.append(snapshot(t))
    return OnlineResult(env, cfg, seed, learners, history, stream)
