"""Desk-scale replications of the Spread findings, shared by scripts and acceptance tests.

Every training run is cached as ``result.json`` inside a directory named by a
hash of its full configuration and seed. The cache root itself is keyed by a
digest of the numeric modules, so a change there starts from scratch.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import artifacts as art
from .algos import TrainConfig, evaluate, train_run
from .config import RunConfig, config_to_dict
from .dataset import Dataset, generate_dataset
from .envs import EnvConfig
from .experiments import DataBundle, generate_tiers, improvement_pct, spearman_trend, train_one


# modules whose code determines datasets and training results
_NUMERIC_MODULES = ("nn", "envs", "sampler", "dataset", "algos", "experiments", "config", "artifacts")


def source_digest() -> str:
    h = hashlib.sha256()
    for name in _NUMERIC_MODULES:
        p = Path(__file__).parent / f"{name}.py"
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:16]


@dataclass(frozen=True)
class DeskProtocol:
    """Scaled-down training setup for one CPU core.

    Batch 32 with lr 1e-3 replaces the large-batch setting (batch 1024,
    lr 0.01), whose updates cost about 0.3 s each here.

    Reported returns come from ``score_episodes`` evaluation episodes shared by
    all policies: per-episode returns vary far more than policies differ, so a
    common episode set removes that variance from every comparison.
    """
    batch_size: int = 32
    lr: float = 1e-3
    alpha: float = 1.0
    tau: float = 0.5
    main_steps: int = 30_000      # OMAR vs MA-CQL headline comparison
    ablation_steps: int = 10_000  # sampler and tau ablations
    scaling_steps: int = 10_000   # agent-count trend
    eval_points: int = 5
    eval_episodes: int = 10
    final_episodes: int = 20
    data_seed: int = 0
    # every final policy (and the behavior snapshot) is scored on one fixed episode set
    score_episodes: int = 200
    score_seed: int = 20_240_601

    def base(self, root: Path, env: EnvConfig | None = None, steps: int | None = None) -> RunConfig:
        steps = self.main_steps if steps is None else steps
        cfg = RunConfig(env=env or EnvConfig(), out_dir=str(root))
        cfg = cfg.replace(dataset=dataclasses.replace(cfg.dataset, tier="medium_replay", seed=self.data_seed),
                          eval=dataclasses.replace(cfg.eval, episodes=self.final_episodes))
        return cfg.with_train(batch_size=self.batch_size, lr=self.lr, alpha=self.alpha, tau=self.tau,
                              total_steps=steps, eval_interval=max(1, steps // self.eval_points),
                              eval_episodes=self.eval_episodes)


def default_root(base: Path) -> Path:
    return Path(base) / source_digest()


def medium_replay(cfg: RunConfig, log=print) -> DataBundle:
    return generate_tiers(cfg, ("medium_replay",), log=log)["medium_replay"]


def _run_key(cfg: RunConfig, seed: int) -> str:
    d = config_to_dict(dataclasses.replace(cfg, seeds=(seed,), out_dir=None))
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:20]


def policy_score(proto: DeskProtocol, env: EnvConfig, checkpoint: Path) -> float:
    actors = art.load_networks(checkpoint, "actor")
    return float(evaluate(env, actors, proto.score_episodes, proto.score_seed).mean())


def cached_run(cfg: RunConfig, bundle: DataBundle, seed: int, proto: DeskProtocol, log=print) -> dict:
    """Train one seed (or load its cached result) and return its summary.

    ``score`` is the protocol's common-episode evaluation of the final policy;
    ``final_return`` is the run's own evaluation on seed-specific episodes.
    """
    run_dir = cfg.output_root() / "runs" / _run_key(cfg, seed)
    res_path = run_dir / "result.json"
    if res_path.exists():
        out = json.loads(res_path.read_text())
    else:
        rec = train_one(cfg, bundle.dataset, seed, run_dir)
        out = {"seed": seed, "final_return": rec.final_return, "ms_per_update": rec.ms_per_update,
               "wall_s": rec.wall_s, "actor_mode": cfg.train.actor_mode, "tau": cfg.train.tau,
               "sampler": cfg.train.sampler.variant, "n_agents": cfg.env.n_agents, "variant": cfg.env.variant,
               "steps": cfg.train.total_steps, "eval_curve": [r["eval_mean"] for r in rec.metrics_rows]}
        log(f"[desk] {cfg.env.variant}-n{cfg.env.n_agents} {cfg.train.actor_mode} tau={cfg.train.tau} "
            f"{cfg.train.sampler.variant} seed {seed}: {rec.final_return:.3f} ({rec.wall_s:.0f}s)")
    key = f"score_{proto.score_episodes}_{proto.score_seed}"
    if key not in out:
        out[key] = policy_score(proto, cfg.env, run_dir / "checkpoint")
    art.atomic_write_text(res_path, art.dump_json(out))
    out["score"] = out[key]
    return out


def behavior_score(proto: DeskProtocol, cfg: RunConfig, bundle: DataBundle) -> float:
    """Common-episode score of the snapshot that generated the dataset."""
    ckpt = Path(bundle.manifest["behavior_checkpoint"])
    path = ckpt / f"score_{proto.score_episodes}_{proto.score_seed}.json"
    if path.exists():
        return float(json.loads(path.read_text())["score"])
    score = policy_score(proto, cfg.env, ckpt)
    art.atomic_write_text(path, art.dump_json({"score": score}))
    return score


def returns(results: list[dict]) -> np.ndarray:
    return np.array([r["score"] for r in results])


def pooled_se(a, b) -> float:
    """Standard error of the difference of two sample means."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.sqrt(a.var(ddof=1) / len(a) + b.var(ddof=1) / len(b)))


def summarize(groups: dict[str, list[dict]]) -> list[dict]:
    rows = []
    for name, res in groups.items():
        r = returns(res)
        rows.append({"group": name, "n": len(r), "mean": float(r.mean()), "std": float(r.std(ddof=1)) if len(r) > 1 else 0.0,
                     "sem": float(r.std(ddof=1) / np.sqrt(len(r))) if len(r) > 1 else 0.0,
                     "returns": " ".join(repr(float(x)) for x in r)})
    return rows


# ---------------------------------------------------------------- experiments

def omar_vs_macql(proto: DeskProtocol, root: Path, seeds=range(5), log=print) -> dict[str, list[dict]]:
    cfg = proto.base(root)
    bundle = medium_replay(cfg, log)
    return {mode: [cached_run(cfg.with_train(actor_mode=mode), bundle, s, proto, log) for s in seeds]
            for mode in ("omar", "macql")}


def sampler_comparison(proto: DeskProtocol, root: Path, seeds=range(5), log=print) -> dict[str, list[dict]]:
    cfg = proto.base(root, steps=proto.ablation_steps)
    bundle = medium_replay(cfg, log)
    return {v: [cached_run(cfg.with_sampler(variant=v), bundle, s, proto, log) for s in seeds]
            for v in ("soft", "cem", "random_shooting")}


def tau_sweep(proto: DeskProtocol, root: Path, taus=(0.0, 0.25, 0.5, 0.75, 1.0), seeds=range(3),
              log=print) -> dict[float, list[dict]]:
    cfg = proto.base(root, steps=proto.ablation_steps)
    bundle = medium_replay(cfg, log)
    return {t: [cached_run(cfg.with_train(tau=t), bundle, s, proto, log) for s in seeds] for t in taus}


def agent_scaling(proto: DeskProtocol, root: Path, variant: str, ns=(1, 2, 3, 4, 5), seeds=range(3),
                  log=print) -> dict:
    """MA-CQL improvement over the behavior policy for each agent count."""
    points = []
    for n in ns:
        cfg = proto.base(root, EnvConfig(variant=variant, n_agents=n), steps=proto.scaling_steps)
        cfg = cfg.with_train(actor_mode="macql")
        bundle = medium_replay(cfg, log)
        beh = behavior_score(proto, cfg, bundle)
        for s in seeds:
            r = cached_run(cfg, bundle, s, proto, log)
            points.append({"n_agents": n, "seed": s, "score": r["score"], "behavior_score": beh,
                           "improvement_pct": float(improvement_pct(r["score"], beh))})
    trend = spearman_trend([p["n_agents"] for p in points], [p["improvement_pct"] for p in points])
    return {"variant": variant, "points": points, "trend": trend}


def update_timing(n_updates: int = 30, repeats: int = 3, cfg: TrainConfig | None = None,
                  data: Dataset | None = None, seed: int = 0) -> dict[str, float]:
    """Mean wall-clock per update for MA-CQL and OMAR under one shared config.

    The two modes are timed in alternating blocks so that drift in machine
    load affects both alike.
    """
    cfg = cfg or TrainConfig()
    if data is None:
        data = generate_dataset(EnvConfig(), "random", max(cfg.batch_size * 4, 5000), seed)
    times = {"macql": [], "omar": []}
    for _ in range(repeats):
        for mode in ("macql", "omar"):
            c = dataclasses.replace(cfg, actor_mode=mode, total_steps=n_updates, eval_interval=n_updates)
            times[mode].extend(train_run(data, c, seed).metrics.ms_per_update)
    return {m: float(np.mean(v)) for m, v in times.items()}
