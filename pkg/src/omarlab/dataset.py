"""Offline datasets: tiered generation, a bit-exact file format, subsampling, scoring.

Datasets are trajectory logs. Rows are environment steps; every column carries
an agent axis, so one file holds the joint data of all agents and per-agent
views are slices. Stored (o, a) pairs are not enough to re-simulate the
environment (landmark positions are only visible through observations), and
nothing here tries to.

File layout (integers little-endian)::

    magic       8 bytes  b"OMARDSET"
    version     uint32   (1)
    n_meta      uint32
    n_meta x  { key_len uint32, key utf-8, val_len uint32, val utf-8 }   sorted by key
    n_cols      uint32
    n_cols x  { name_len uint32, name utf-8, ndim uint32, shape ndim x uint64,
                data prod(shape) x float64 little-endian, C order }
    total_len   uint64   byte length of everything before this field

Columns, in order: obs (N, n, obs_dim), actions (N, n, act_dim),
rewards (N, n), next_obs (N, n, obs_dim), dones (N,) with 1.0 marking the
time-limit step that ends an episode.
"""
from __future__ import annotations

import dataclasses
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .envs import EnvConfig, reset, step
from .nn import MlpParams, MlpSpec, forward_cache, init_params

MAGIC = b"OMARDSET"
VERSION = 1
COLUMNS = ("obs", "actions", "rewards", "next_obs", "dones")
TIERS = ("random", "medium", "medium_replay", "expert")
ROLLOUT_NOISE_STD = 0.1


class DatasetError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class Transition:
    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    done: bool
    joint_action: np.ndarray | None = None


@dataclass
class Dataset:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for name in COLUMNS:
            setattr(self, name, np.ascontiguousarray(getattr(self, name), dtype=np.float64))
        n = len(self.dones)
        if any(len(getattr(self, c)) != n for c in COLUMNS):
            raise DatasetError("columns have different lengths")
        if self.obs.ndim != 3 or self.actions.ndim != 3 or self.rewards.ndim != 2:
            raise DatasetError("obs/actions must be (N, agents, dim) and rewards (N, agents)")
        self.metadata = {str(k): str(v) for k, v in self.metadata.items()}
        self.metadata["n_samples"] = str(n)
        self.metadata.setdefault("n_agents", str(self.obs.shape[1]))
        self.metadata.setdefault("joint", "1")

    def __len__(self):
        return len(self.dones)

    @property
    def n_agents(self) -> int:
        return self.obs.shape[1]

    @property
    def obs_dim(self) -> int:
        return self.obs.shape[2]

    @property
    def act_dim(self) -> int:
        return self.actions.shape[2]

    @property
    def joint(self) -> bool:
        """True when rows align across agents, i.e. joint actions are available."""
        return self.metadata.get("joint", "1") == "1"

    def transition(self, k: int, agent: int) -> Transition:
        return Transition(self.obs[k, agent], self.actions[k, agent], float(self.rewards[k, agent]),
                          self.next_obs[k, agent], bool(self.dones[k]),
                          self.actions[k].ravel() if self.joint else None)

    def agent_view(self, agent: int) -> Dataset:
        """Single-agent dataset without joint information."""
        sl = slice(agent, agent + 1)
        meta = dict(self.metadata, joint="0", agent=str(agent), n_agents="1")
        return Dataset(self.obs[:, sl], self.actions[:, sl], self.rewards[:, sl],
                       self.next_obs[:, sl], self.dones.copy(), meta)

    def env_config(self) -> EnvConfig | None:
        raw = self.metadata.get("env_config")
        return EnvConfig(**json.loads(raw)) if raw else None

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.metadata == other.metadata and all(
            np.array_equal(getattr(self, c), getattr(other, c)) for c in COLUMNS)


def episode_returns(d: Dataset) -> np.ndarray:
    """Per-episode sum over time of the agent-averaged reward, split at done flags.

    A trailing partial episode (no done flag) is dropped.
    """
    r = d.rewards.mean(axis=1)
    ends = np.flatnonzero(d.dones > 0.5)
    if len(ends) == 0:
        return np.zeros(0)
    csum = np.concatenate([[0.0], np.cumsum(r)])
    starts = np.concatenate([[0], ends[:-1] + 1])
    return csum[ends + 1] - csum[starts]


# ---------------------------------------------------------------- file format

def _u32(x):
    return struct.pack("<I", x)


def _str(s: str) -> bytes:
    b = s.encode("utf-8")
    return _u32(len(b)) + b


def encode_dataset(d: Dataset) -> bytes:
    out = bytearray(MAGIC)
    out += _u32(VERSION)
    out += _u32(len(d.metadata))
    for k in sorted(d.metadata):
        out += _str(k) + _str(d.metadata[k])
    out += _u32(len(COLUMNS))
    for name in COLUMNS:
        arr = getattr(d, name)
        out += _str(name) + _u32(arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
        out += arr.astype("<f8", copy=False).tobytes(order="C")
    out += struct.pack("<Q", len(out))
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.off = 0

    def take(self, n: int, section: str) -> bytes:
        if self.off + n > len(self.data):
            raise DatasetError(f"truncated file while reading {section}")
        b = self.data[self.off:self.off + n]
        self.off += n
        return b

    def u32(self, section):
        return struct.unpack("<I", self.take(4, section))[0]

    def u64(self, section):
        return struct.unpack("<Q", self.take(8, section))[0]

    def string(self, section):
        n = self.u32(section)
        try:
            return self.take(n, section).decode("utf-8")
        except UnicodeDecodeError:
            raise DatasetError(f"invalid utf-8 in {section}") from None


def decode_dataset(data: bytes) -> Dataset:
    rd = _Reader(data)
    if rd.take(8, "header magic") != MAGIC:
        raise DatasetError("header: bad magic, not a dataset file")
    version = rd.u32("header version")
    if version != VERSION:
        raise DatasetError(f"header: unsupported version {version}")
    meta = {}
    for _ in range(rd.u32("metadata count")):
        k = rd.string("metadata key")
        meta[k] = rd.string(f"metadata value {k!r}")
    n_cols = rd.u32("column count")
    cols = {}
    for _ in range(n_cols):
        name = rd.string("column name")
        ndim = rd.u32(f"column {name!r} shape")
        shape = struct.unpack(f"<{ndim}Q", rd.take(8 * ndim, f"column {name!r} shape"))
        count = math.prod(shape)
        raw = rd.take(8 * count, f"column {name!r} data")
        cols[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
    total = rd.u64("footer")
    if total != rd.off - 8:
        raise DatasetError("footer: length mismatch (corrupt or truncated file)")
    if rd.off != len(data):
        raise DatasetError("footer: trailing bytes after footer")
    missing = [c for c in COLUMNS if c not in cols]
    if missing:
        raise DatasetError(f"columns: missing {missing}")
    if meta.get("n_samples") not in (None, str(len(cols["dones"]))):
        raise DatasetError("header: n_samples does not match column length")
    return Dataset(**{c: cols[c] for c in COLUMNS}, metadata=meta)


def save_dataset(d: Dataset, path) -> None:
    """Write atomically (temp file then rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_dataset(d))
    tmp.replace(path)


def load_dataset(path) -> Dataset:
    return decode_dataset(Path(path).read_bytes())


# ---------------------------------------------------------------- transforms

def subsample(d: Dataset, fraction: float, seed) -> Dataset:
    """Uniform sample of round(fraction * N) rows without replacement."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    k = int(round(fraction * len(d)))
    if k < 1:
        raise ValueError("subsample would be empty")
    idx = np.random.default_rng(seed).permutation(len(d))[:k]
    meta = dict(d.metadata, subsample_fraction=repr(fraction), subsample_seed=str(seed))
    return Dataset(d.obs[idx], d.actions[idx], d.rewards[idx], d.next_obs[idx], d.dones[idx], meta)


@dataclass(frozen=True)
class ScoreTable:
    s_random: float
    s_expert: float

    def __post_init__(self):
        if self.s_expert == self.s_random:
            raise ZeroDivisionError("expert and random scores coincide")

    def normalize(self, s):
        return normalized_score(s, self.s_random, self.s_expert)


def normalized_score(s, s_random: float, s_expert: float):
    """100 * (S - S_random) / (S_expert - S_random), unclamped."""
    if s_expert == s_random:
        raise ZeroDivisionError("normalized score undefined when S_expert == S_random")
    if np.ndim(s):
        s = np.asarray(s, dtype=np.float64)
    return 100.0 * (s - s_random) / (s_expert - s_random)


# ---------------------------------------------------------------- generation

def actor_spec(env: EnvConfig, hidden=(64, 64)) -> MlpSpec:
    return MlpSpec(env.obs_dim, tuple(hidden), env.act_dim, "relu", "tanh")


def policy_actions(actors: list[MlpParams], obs: np.ndarray) -> np.ndarray:
    """Deterministic joint action for observations of shape (n_agents, obs_dim)."""
    return np.stack([forward_cache(p, obs[i:i + 1])[0][0] for i, p in enumerate(actors)])


def rollout(env: EnvConfig, actors: list[MlpParams], n_samples: int, rng: np.random.Generator,
            noise_std: float = ROLLOUT_NOISE_STD) -> dict[str, np.ndarray]:
    """Collect n_samples steps with Gaussian action noise, clamped to [-1, 1]."""
    n, od, ad = env.n_agents, env.obs_dim, env.act_dim
    cols = {"obs": np.zeros((n_samples, n, od)), "actions": np.zeros((n_samples, n, ad)),
            "rewards": np.zeros((n_samples, n)), "next_obs": np.zeros((n_samples, n, od)),
            "dones": np.zeros(n_samples)}
    state, obs = reset(env, rng.integers(2**63))
    for k in range(n_samples):
        a = policy_actions(actors, obs)
        if noise_std > 0:
            a = np.clip(a + noise_std * rng.standard_normal(a.shape), -1.0, 1.0)
        state, res = step(state, a)
        cols["obs"][k], cols["actions"][k] = obs, a
        cols["rewards"][k], cols["next_obs"][k] = res.rewards, res.observations
        cols["dones"][k] = float(res.done)
        obs = res.observations
        if res.done:
            state, obs = reset(env, rng.integers(2**63))
    return cols


def _env_meta(env: EnvConfig) -> dict[str, str]:
    return {"env_id": f"{env.variant}-n{env.n_agents}", "variant": env.variant,
            "n_agents": str(env.n_agents),
            "env_config": json.dumps(dataclasses.asdict(env), sort_keys=True)}


def random_tier_actors(env: EnvConfig, seed: int, hidden=(64, 64)) -> list[MlpParams]:
    """The untrained policies that generate_dataset rolls out for the random tier."""
    init_ss, _ = np.random.SeedSequence(seed).spawn(2)
    init_rng = np.random.default_rng(init_ss)
    return [init_params(actor_spec(env, hidden), init_rng) for _ in range(env.n_agents)]


def generate_dataset(env: EnvConfig, tier: str, n_samples: int, seed: int, behavior=None,
                     hidden=(64, 64)) -> Dataset:
    """Build one quality tier.

    ``behavior`` depends on the tier: ``None`` for random (a freshly initialized
    tanh policy is rolled out), a list of per-agent actor parameters for
    medium and expert, and a recorded online run (anything with a
    ``medium_replay_columns()`` method, see ``algos.OnlineResult``) for
    medium_replay, whose prefix up to the medium-performance step is used as is.
    """
    if tier not in TIERS:
        raise ConfigurationError(f"unknown tier {tier!r}")
    meta = _env_meta(env)
    meta.update(tier=tier, seed=str(seed))
    if tier == "medium_replay":
        if behavior is None or not hasattr(behavior, "medium_replay_columns"):
            raise ConfigurationError("medium_replay needs a recorded online training run")
        cols, info = behavior.medium_replay_columns()
        meta.update(info)
        return Dataset(**cols, metadata=meta)
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    _, roll_ss = np.random.SeedSequence(seed).spawn(2)
    if tier == "random":
        actors = random_tier_actors(env, seed, hidden)
        meta["behavior"] = f"untrained tanh MLP {tuple(hidden)} + N(0,{ROLLOUT_NOISE_STD}) noise"
    else:
        if behavior is None:
            raise ConfigurationError(f"tier {tier!r} needs a behavior policy checkpoint")
        actors = list(behavior)
        if len(actors) != env.n_agents:
            raise ConfigurationError("behavior checkpoint has the wrong number of agents")
        meta["behavior"] = f"{tier} snapshot + N(0,{ROLLOUT_NOISE_STD}) noise"
    cols = rollout(env, actors, n_samples, np.random.default_rng(roll_ss))
    return Dataset(**cols, metadata=meta)
