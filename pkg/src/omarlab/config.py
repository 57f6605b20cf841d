"""Run configuration: one YAML file with env, dataset, behavior, train, sampler,
eval, seeds and out_dir sections. Unknown keys anywhere are rejected.

Defaults (all documented by ``default_config_text()``)::

    env:       EnvConfig defaults (2-agent cooperative spread1d, 25-step episodes)
    dataset:   tier medium_replay, 100k samples for rollout tiers, full fraction
    behavior:  online ITD3 run that produces behavior policies and the replay stream
    train:     TrainConfig defaults (gamma 0.99, rho 0.01, batch 1024, lr 0.01, ...)
    sampler:   SamplerConfig defaults (soft, J=3, K=10, beta 1, mu0 0, sigma0 2)
    eval:      10 episodes per seed
    seeds:     [0, 1, 2, 3, 4]
    out_dir:   $OMARLAB_OUT or ./runs
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .algos import TrainConfig
from .dataset import TIERS
from .envs import EnvConfig
from .sampler import SamplerConfig

OUT_ENV_VAR = "OMARLAB_OUT"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSection:
    tier: str = "medium_replay"
    size: int = 100_000          # rollout tiers only; medium_replay length is set by the behavior run
    path: str | None = None      # explicit dataset file; default is under out_dir/data
    fraction: float = 1.0        # uniform subsample applied at training time
    behavior: str | None = None  # checkpoint dir with actors for medium/expert rollouts
    seed: int = 0                # generation seed (also seeds the behavior run)

    def __post_init__(self):
        if self.tier not in TIERS:
            raise ConfigError(f"dataset.tier must be one of {TIERS}, got {self.tier!r}")
        if self.size < 1:
            raise ConfigError("dataset.size must be >= 1")
        if not 0.0 < self.fraction <= 1.0:
            raise ConfigError("dataset.fraction must lie in (0, 1]")


@dataclass(frozen=True)
class BehaviorSection:
    """Online ITD3 run whose snapshots and replay stream become the datasets.

    The long uniform warm-up followed by sparse updates puts the first
    medium-band evaluation near 1e5 environment steps on 2-agent spread1d.
    """
    total_steps: int = 200_000
    warmup_steps: int = 95_000
    update_every: int = 50
    lr: float = 1e-3
    batch_size: int = 256
    eval_interval: int = 2_500
    eval_episodes: int = 10
    exploration_noise: float = 0.1
    medium_band: tuple[float, float] = (40.0, 60.0)
    critic_mode: str = "decentralized"

    def train_config(self, hidden) -> TrainConfig:
        return TrainConfig(actor_mode="online", total_steps=self.total_steps,
                           warmup_steps=self.warmup_steps, update_every=self.update_every,
                           lr=self.lr, batch_size=self.batch_size, eval_interval=self.eval_interval,
                           eval_episodes=self.eval_episodes, exploration_noise=self.exploration_noise,
                           medium_band=tuple(self.medium_band), critic_mode=self.critic_mode,
                           hidden=tuple(hidden))


@dataclass(frozen=True)
class EvalSection:
    episodes: int = 10


@dataclass(frozen=True)
class RunConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    behavior: BehaviorSection = field(default_factory=BehaviorSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalSection = field(default_factory=EvalSection)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    out_dir: str | None = None

    @property
    def sampler(self) -> SamplerConfig:
        return self.train.sampler

    def output_root(self) -> Path:
        return Path(self.out_dir or os.environ.get(OUT_ENV_VAR) or "runs")

    def replace(self, **sections) -> RunConfig:
        return dataclasses.replace(self, **sections)

    def with_train(self, **kw) -> RunConfig:
        return dataclasses.replace(self, train=dataclasses.replace(self.train, **kw))

    def with_sampler(self, **kw) -> RunConfig:
        return self.with_train(sampler=dataclasses.replace(self.train.sampler, **kw))


_SECTIONS = {"env": EnvConfig, "dataset": DatasetSection, "behavior": BehaviorSection,
             "train": TrainConfig, "sampler": SamplerConfig, "eval": EvalSection}
_TOP_LEVEL = set(_SECTIONS) | {"seeds", "out_dir"}


def _build(cls, raw, where: str):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(raw).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    if cls is TrainConfig:
        names.discard("sampler")  # lives in its own section
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}
    try:
        return cls(**kw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from None


def config_from_dict(raw: dict | None) -> RunConfig:
    raw = dict(raw or {})
    unknown = sorted(set(raw) - _TOP_LEVEL)
    if unknown:
        raise ConfigError(f"unknown top-level keys {unknown}")
    sampler = _build(SamplerConfig, raw.get("sampler"), "sampler")
    train = _build(TrainConfig, raw.get("train"), "train")
    train = dataclasses.replace(train, sampler=sampler)
    seeds = raw.get("seeds", [0, 1, 2, 3, 4])
    if isinstance(seeds, int):
        seeds = [seeds]
    if not isinstance(seeds, (list, tuple)) or not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("seeds must be a non-empty list of integers")
    return RunConfig(env=_build(EnvConfig, raw.get("env"), "env"),
                     dataset=_build(DatasetSection, raw.get("dataset"), "dataset"),
                     behavior=_build(BehaviorSection, raw.get("behavior"), "behavior"),
                     train=train, eval=_build(EvalSection, raw.get("eval"), "eval"),
                     seeds=tuple(seeds), out_dir=raw.get("out_dir"))


def load_config(path) -> RunConfig:
    text = Path(path).read_text()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML: {e}") from None
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(raw)


def _plain(obj):
    if isinstance(obj, tuple):
        return [_plain(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    return obj


def config_to_dict(cfg: RunConfig) -> dict:
    """Fully resolved config; feeding it back through config_from_dict is the identity."""
    train = dataclasses.asdict(cfg.train)
    sampler = train.pop("sampler")
    out = {"env": dataclasses.asdict(cfg.env), "dataset": dataclasses.asdict(cfg.dataset),
           "behavior": dataclasses.asdict(cfg.behavior), "train": train, "sampler": sampler,
           "eval": dataclasses.asdict(cfg.eval), "seeds": list(cfg.seeds), "out_dir": cfg.out_dir}
    return _plain(out)


def config_to_yaml(cfg: RunConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=True, default_flow_style=False)


def default_config_text() -> str:
    return config_to_yaml(RunConfig())
